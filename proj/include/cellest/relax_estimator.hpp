#pragma once

// Closed-form ECM identification from one rest period plus the iterative
// SOC/SOH fixed point. A second rest separated by a charge segment gives the
// d(R1+R2)/dt compensation variant for high currents.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cellest/ecm_sim.hpp"
#include "cellest/errors.hpp"
#include "cellest/ocv_model.hpp"

namespace cellest {

struct RelaxationWindow {
    enum class Mode { after_cc, after_cv };

    double t0 = 0.0;                                   // rest onset, seconds
    std::vector<std::pair<double, double>> samples;    // (dt since t0, volts), sorted
    double i0 = 0.0;                                   // constant pre-rest current, amperes
    double delta_u = 0.0;                              // instantaneous drop at onset, volts
    std::vector<std::pair<double, double>> pre_tail;   // (t, volts) before t0
    Mode mode = Mode::after_cc;
    double di_dt = 0.0;                                // amperes/second, CV mode only

    double sample_dt() const {
        if (samples.size() < 2) throw Error(Errc::precondition, "window needs >=2 samples");
        return samples[1].first - samples[0].first;
    }

    double span() const { return samples.empty() ? 0.0 : samples.back().first; }

    void validate(double x3 = 0.0) const {
        if (samples.size() < 2) throw Error(Errc::precondition, "window needs >=2 samples");
        for (std::size_t k = 1; k < samples.size(); ++k)
            if (!(samples[k].first > samples[k - 1].first))
                throw Error(Errc::precondition, "window samples not sorted by time");
        if (mode == Mode::after_cc && i0 == 0.0)
            throw Error(Errc::precondition, "after-CC window requires i0 != 0");
        if (x3 > 0.0 && span() < x3 + 7.0 * sample_dt())
            throw Error(Errc::window_too_short,
                        "window spans " + std::to_string(span()) + " s, needs x3 + filter margin");
    }
};

struct ParamEstimate {
    double r1 = 0.0;   // ohms
    double r2 = 0.0;   // ohms
    double c = 0.0;    // farads
    double tau = 0.0;  // seconds, r2 * c
    double ocv = 0.0;  // volts at the rest SOC
};

struct SocSohEstimate {
    double soc = 0.0;
    double soh = 0.0;
    int iterations = 0;
    bool converged = false;
    double docv_dt = 0.0;   // volts/second used by the iteration
    double residual = 0.0;  // last |delta SOH|
};

// Median of the 15 samples centered on idx, window shifted inward at edges.
inline double median_filter_point(const std::vector<std::pair<double, double>>& samples,
                                  std::size_t idx) {
    constexpr std::size_t kWindow = 15;
    const std::size_t n = samples.size();
    if (n < kWindow)
        throw Error(Errc::filter_window, "median filter needs >=15 samples, got " + std::to_string(n));
    if (idx >= n) throw Error(Errc::precondition, "sample index out of range");

    std::size_t first = idx >= kWindow / 2 ? idx - kWindow / 2 : 0;
    if (first + kWindow > n) first = n - kWindow;

    std::array<double, kWindow> buf;
    for (std::size_t k = 0; k < kWindow; ++k) buf[k] = samples[first + k].second;
    std::nth_element(buf.begin(), buf.begin() + kWindow / 2, buf.end());
    return buf[kWindow / 2];
}

struct ThreePoints {
    double y1 = 0.0, y2 = 0.0, y3 = 0.0;  // filtered volts
    double x1 = 0.0, x2 = 0.0, x3 = 0.0;  // snapped sample times since onset
    double x_d = 0.0;                     // x3 - x2 == x2 - x1
};

// Median-filtered voltages at the samples nearest x1 and x3, with x2 the
// midpoint. Indices are snapped so the spacing is exactly equal; x_d is
// recomputed from the snapped times so the closed form stays exact.
inline ThreePoints pick_three_points(const RelaxationWindow& window, double x1 = 10.0,
                                     double x3 = 120.0) {
    if (!(x3 > x1))
        throw Error(Errc::window_too_short, "x3 must exceed x1 (got x1=" + std::to_string(x1) +
                                                ", x3=" + std::to_string(x3) + ")");
    window.validate();
    const double dt = window.sample_dt();

    const auto idx1 = static_cast<std::size_t>(std::max(0.0, std::round(x1 / dt)));
    const auto half = static_cast<std::size_t>(std::max(1.0, std::round((x3 - x1) / (2.0 * dt))));
    const std::size_t idx2 = idx1 + half;
    const std::size_t idx3 = idx1 + 2 * half;

    // The filter window at x3 must not be shifted inward, or y3 would be
    // biased toward earlier samples.
    if (idx3 + 8 > window.samples.size())
        throw Error(Errc::window_too_short, "window too short for x3=" + std::to_string(x3) +
                                                " at dt=" + std::to_string(dt));

    ThreePoints p;
    p.y1 = median_filter_point(window.samples, idx1);
    p.y2 = median_filter_point(window.samples, idx2);
    p.y3 = median_filter_point(window.samples, idx3);
    p.x1 = window.samples[idx1].first;
    p.x2 = window.samples[idx2].first;
    p.x3 = window.samples[idx3].first;
    p.x_d = p.x2 - p.x1;
    return p;
}

inline double estimate_r1(double delta_u, double i0) {
    if (i0 == 0.0) throw Error(Errc::precondition, "i0 must be nonzero");
    return -delta_u / i0;
}

// Closed-form (R2, C, OCV) from three equally spaced voltages. y1 is treated
// as the time origin of the decay, so the returned r2 reflects the capacitor
// amplitude at the first point; see estimate_from_relaxation for the shift
// back to the rest onset.
inline ParamEstimate solve_three_point(double y1, double y2, double y3, double x_d, double i0,
                                       std::pair<double, double> plausible_ocv = {
                                           -std::numeric_limits<double>::infinity(),
                                           std::numeric_limits<double>::infinity()}) {
    if (!(x_d > 0.0)) throw Error(Errc::precondition, "x_d must be positive");
    if (i0 == 0.0) throw Error(Errc::precondition, "i0 must be nonzero");
    if (i0 > 0.0 && !(y1 > y2 && y2 > y3))
        throw Error(Errc::degenerate_geometry, "charge-rest voltages must decrease");
    if (i0 < 0.0 && !(y1 < y2 && y2 < y3))
        throw Error(Errc::degenerate_geometry, "discharge-rest voltages must increase");

    const double ratio = (y1 - y2) / (y2 - y3);
    if (!(ratio > 0.0) || ratio == 1.0)
        throw Error(Errc::degenerate_geometry,
                    "unusable voltage ratio " + std::to_string(ratio) + " (noise dominates)");
    if (ratio < 1.0)
        throw Error(Errc::degenerate_geometry,
                    "voltage differences grow with time, not an exponential decay");

    const double tau = x_d / std::log(ratio);
    const double m = ratio;  // e^(x_d / tau) by construction

    ParamEstimate est;
    est.tau = tau;
    est.r2 = (y1 - y2) * m / (i0 * (m - 1.0));
    est.c = tau / est.r2;
    est.ocv = y1 - (y1 - y2) * m / (m - 1.0);
    if (est.ocv < plausible_ocv.first || est.ocv > plausible_ocv.second)
        throw Error(Errc::implausible_estimate,
                    "identified OCV " + std::to_string(est.ocv) + " V outside cell window");
    return est;
}

// Ordinary least-squares slope of voltage against time.
inline double fit_dv_dt(const std::vector<std::pair<double, double>>& pre_tail) {
    if (pre_tail.size() < 2) throw Error(Errc::regression, "need >=2 points for dV/dt");
    double mean_t = 0.0, mean_v = 0.0;
    for (const auto& [t, v] : pre_tail) {
        mean_t += t;
        mean_v += v;
    }
    mean_t /= static_cast<double>(pre_tail.size());
    mean_v /= static_cast<double>(pre_tail.size());

    double stt = 0.0, stv = 0.0;
    for (const auto& [t, v] : pre_tail) {
        stt += (t - mean_t) * (t - mean_t);
        stv += (t - mean_t) * (v - mean_v);
    }
    if (stt == 0.0) throw Error(Errc::regression, "all regression times coincide");
    return stv / stt;
}

// Under low current the terminal-voltage slope approximates the OCV slope.
inline double docv_dt_cc(double dv_dt) { return dv_dt; }

// During CV charging the terminal voltage is flat, so the OCV slope is read
// off the current taper.
inline double docv_dt_cv(double di_dt, double r1, double r2) { return -di_dt * (r1 + r2); }

struct IterationOptions {
    double tolerance = 1e-6;                 // on |delta SOH|
    int max_iterations = 100;
    double soh_lo = 0.5;                     // divergence band
    double soh_hi = 1.2;
    double soh0 = 1.0;
    std::pair<double, double> soc_band = {0.0, 1.0};
    std::optional<double> soc_override;      // use a known SOC instead of inversion
    bool throw_on_failure = true;            // map runs record failures in-cell instead
};

// Alternate OCV inversion and capacity update until the SOH settles.
inline SocSohEstimate iterate_soc_soh(double ocv, double docv_dt, double i, const CellSpec& spec,
                                      const OcvSurface& surface, const IterationOptions& options = {}) {
    if (docv_dt == 0.0) throw Error(Errc::precondition, "docv_dt must be nonzero");
    if (i == 0.0) throw Error(Errc::precondition, "current must be nonzero");
    spec.validate();

    SocSohEstimate est;
    est.docv_dt = docv_dt;
    double soh = options.soh0;
    est.soh = soh;
    est.residual = std::numeric_limits<double>::infinity();

    std::optional<double> last_soc;
    for (int k = 0; k < options.max_iterations; ++k) {
        double soc, soh_next;
        try {
            if (options.soc_override) {
                soc = *options.soc_override;
            } else if (last_soc) {
                // The root moves little between iterations; scan locally and
                // fall back to the full band if it escaped.
                const std::pair<double, double> local{
                    std::max(options.soc_band.first, *last_soc - 0.08),
                    std::min(options.soc_band.second, *last_soc + 0.08)};
                try {
                    soc = invert_ocv(surface, ocv, soh, local);
                } catch (const Error& e) {
                    if (e.code() != Errc::no_root && e.code() != Errc::nonphysical_root) throw;
                    soc = invert_ocv(surface, ocv, soh, options.soc_band);
                }
            } else {
                soc = invert_ocv(surface, ocv, soh, options.soc_band);
            }
            last_soc = soc;
            soh_next = (i / spec.q0_coulomb()) * eval_docv_dsoc(surface, soc, soh) / docv_dt;
        } catch (const Error&) {
            // Inversion failure, or an iterate wandered off the fitted
            // surface; report the last valid state when not throwing.
            if (options.throw_on_failure) throw;
            est.iterations = k;
            est.converged = false;
            return est;
        }

        est.soc = soc;
        est.iterations = k + 1;
        est.residual = std::abs(soh_next - soh);

        if (soh_next < options.soh_lo || soh_next > options.soh_hi) {
            est.converged = false;
            if (options.throw_on_failure)
                throw Error(Errc::divergence,
                            "SOH iterate " + std::to_string(soh_next) + " left the plausible band");
            return est;
        }
        soh = soh_next;
        est.soh = soh;
        if (est.residual <= options.tolerance) {
            est.converged = true;
            return est;
        }
    }
    est.converged = false;
    return est;
}

struct EstimateOptions {
    double x1 = 10.0;
    double x3 = 120.0;
    IterationOptions iteration;
    // Scenario toggles; all default to the plain method.
    std::optional<double> uc0_true;             // known capacitor voltage at onset
    std::optional<std::vector<double>> pre_tail_uc;  // capacitor voltage per pre-tail sample
    std::optional<double> dv_dt_override;       // externally supplied tail slope
};

struct RelaxationEstimate {
    SocSohEstimate state;
    ParamEstimate params;
    double dv_dt = 0.0;  // raw tail slope before any correction
};

namespace detail {

inline double tail_slope(const RelaxationWindow& window, const EstimateOptions& options) {
    if (options.dv_dt_override) return *options.dv_dt_override;
    if (!options.pre_tail_uc) return fit_dv_dt(window.pre_tail);
    if (options.pre_tail_uc->size() != window.pre_tail.size())
        throw Error(Errc::precondition, "pre-tail capacitor series length mismatch");
    auto corrected = window.pre_tail;
    for (std::size_t k = 0; k < corrected.size(); ++k)
        corrected[k].second -= (*options.pre_tail_uc)[k];
    return fit_dv_dt(corrected);
}

inline ParamEstimate identify_params(const RelaxationWindow& window, const CellSpec& spec,
                                     const EstimateOptions& options) {
    const ThreePoints pts = pick_three_points(window, options.x1, options.x3);
    ParamEstimate params =
        solve_three_point(pts.y1, pts.y2, pts.y3, pts.x_d, window.i0, {spec.v_min, spec.v_max});
    params.r1 = estimate_r1(window.delta_u, window.i0);

    // The solve sees the decay amplitude at x1; shift it back to the onset
    // where the capacitor voltage was i0 * r2 (or the known true value).
    if (options.uc0_true) {
        params.r2 = *options.uc0_true / window.i0;
    } else {
        params.r2 *= std::exp(pts.x1 / params.tau);
    }
    params.c = params.tau / params.r2;
    return params;
}

}  // namespace detail

// Parameter identification alone (median filter, three points, closed form,
// onset shift), without the SOC/SOH iteration.
inline ParamEstimate identify_ecm_params(const RelaxationWindow& window, const CellSpec& spec,
                                         const EstimateOptions& options = {}) {
    window.validate(options.x3);
    return detail::identify_params(window, spec, options);
}

// The full single-relaxation chain: median filter, three points, closed form,
// tail slope (or the CV variant), fixed-point iteration.
inline RelaxationEstimate estimate_from_relaxation(const RelaxationWindow& window,
                                                   const CellSpec& spec, const OcvSurface& surface,
                                                   const EstimateOptions& options = {}) {
    window.validate(options.x3);
    RelaxationEstimate out;
    out.params = detail::identify_params(window, spec, options);

    double docv_dt;
    if (window.mode == RelaxationWindow::Mode::after_cv) {
        docv_dt = docv_dt_cv(window.di_dt, out.params.r1, out.params.r2);
        out.dv_dt = 0.0;
    } else {
        out.dv_dt = detail::tail_slope(window, options);
        docv_dt = docv_dt_cc(out.dv_dt);
    }

    out.state = iterate_soc_soh(out.params.ocv, docv_dt, window.i0, spec, surface, options.iteration);
    return out;
}

struct CcGap {
    double duration_s = 0.0;
    double i = 0.0;  // equivalent constant current over the gap, amperes
};

struct DrCompensatedEstimate {
    SocSohEstimate state;        // averaged result, SOC referred to window1
    SocSohEstimate window1_state;
    SocSohEstimate window2_state;
    ParamEstimate params1;
    ParamEstimate params2;
    double d_rsum_dt = 0.0;      // ohms/second
};

// Two-relaxation variant: the (R1 + R2) drift between the windows corrects
// each tail slope before the iteration, and the two estimates are averaged.
inline DrCompensatedEstimate estimate_with_dr_compensation(
    const RelaxationWindow& window1, const RelaxationWindow& window2, const CcGap& cc_gap,
    const CellSpec& spec, const OcvSurface& surface, const EstimateOptions& options1 = {},
    const EstimateOptions& options2 = {}) {
    if (!(window2.t0 > window1.t0))
        throw Error(Errc::precondition, "windows must be in increasing time order");
    window1.validate(options1.x3);
    window2.validate(options2.x3);

    DrCompensatedEstimate out;
    try {
        out.params1 = detail::identify_params(window1, spec, options1);
    } catch (const Error& e) {
        throw Error(e.code(), std::string("window1: ") + e.what());
    }
    try {
        out.params2 = detail::identify_params(window2, spec, options2);
    } catch (const Error& e) {
        throw Error(e.code(), std::string("window2: ") + e.what());
    }

    const double dt_gap = window2.t0 - window1.t0;
    out.d_rsum_dt = ((out.params2.r1 + out.params2.r2) - (out.params1.r1 + out.params1.r2)) / dt_gap;

    auto run_window = [&](const RelaxationWindow& window, const ParamEstimate& params,
                          const EstimateOptions& options) {
        double docv_dt;
        if (window.mode == RelaxationWindow::Mode::after_cv) {
            docv_dt = docv_dt_cv(window.di_dt, params.r1, params.r2);
        } else {
            docv_dt = detail::tail_slope(window, options) - window.i0 * out.d_rsum_dt;
        }
        return iterate_soc_soh(params.ocv, docv_dt, window.i0, spec, surface, options.iteration);
    };

    try {
        out.window1_state = run_window(window1, out.params1, options1);
    } catch (const Error& e) {
        throw Error(e.code(), std::string("window1: ") + e.what());
    }
    try {
        out.window2_state = run_window(window2, out.params2, options2);
    } catch (const Error& e) {
        throw Error(e.code(), std::string("window2: ") + e.what());
    }

    const double soh = 0.5 * (out.window1_state.soh + out.window2_state.soh);
    const double delta_soc = cc_gap.duration_s * cc_gap.i / (spec.q0_coulomb() * soh);
    const double soc2_at_w1 = out.window2_state.soc - delta_soc;

    out.state.soc = 0.5 * (out.window1_state.soc + soc2_at_w1);
    out.state.soh = soh;
    out.state.iterations = std::max(out.window1_state.iterations, out.window2_state.iterations);
    out.state.converged = out.window1_state.converged && out.window2_state.converged;
    out.state.docv_dt = 0.5 * (out.window1_state.docv_dt + out.window2_state.docv_dt);
    out.state.residual = std::max(out.window1_state.residual, out.window2_state.residual);
    return out;
}

}  // namespace cellest
