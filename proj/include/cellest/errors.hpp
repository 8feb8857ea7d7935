#pragma once

#include <stdexcept>
#include <string>

namespace cellest {

// Every failure path in the library throws Error with a code that tests and
// callers can switch on. Messages carry the numbers that triggered the failure.
enum class Errc {
    fit_failed,             // least-squares system rank-deficient / bad samples
    domain,                 // argument outside the supported domain (soc, soh band, ...)
    no_root,                // OCV inversion found no crossing in the band
    nonphysical_root,       // only decreasing-slope crossings found
    degenerate_geometry,    // three-point ratios unusable (noise dominates)
    implausible_estimate,   // identified OCV outside the cell voltage window
    window_too_short,       // relaxation window cannot cover x3 (+ filter margin)
    filter_window,          // fewer samples than the median filter needs
    regression,             // dV/dt regression impossible (coincident times)
    divergence,             // SOC/SOH iteration left the plausible SOH band
    simulation,             // CV setpoint unreachable, bad profile
    detection,              // no qualifying relaxation in the trace
    protocol,               // trace does not contain the expected segment sequence
    filter_health,          // covariance lost positive semidefiniteness
    measurement,            // non-finite / non-monotone measurement input
    input_parse,            // malformed CSV/JSON input
    precondition,           // generic precondition violation
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::fit_failed: return "fit_failed";
        case Errc::domain: return "domain";
        case Errc::no_root: return "no_root";
        case Errc::nonphysical_root: return "nonphysical_root";
        case Errc::degenerate_geometry: return "degenerate_geometry";
        case Errc::implausible_estimate: return "implausible_estimate";
        case Errc::window_too_short: return "window_too_short";
        case Errc::filter_window: return "filter_window";
        case Errc::regression: return "regression";
        case Errc::divergence: return "divergence";
        case Errc::simulation: return "simulation";
        case Errc::detection: return "detection";
        case Errc::protocol: return "protocol";
        case Errc::filter_health: return "filter_health";
        case Errc::measurement: return "measurement";
        case Errc::input_parse: return "input_parse";
        case Errc::precondition: return "precondition";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace cellest
