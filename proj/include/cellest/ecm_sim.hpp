#pragma once

// First-order (optionally second-order) RC equivalent-circuit cell simulator.
// The capacitor update uses the exact exponential discretization for
// piecewise-constant current, so the noiseless trace carries no integration
// error that could be mistaken for estimator error.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cellest/errors.hpp"
#include "cellest/ocv_model.hpp"

namespace cellest {

struct EcmParams {
    double r1 = 0.03;  // series resistance, ohms
    double r2 = 0.04;  // RC-pair resistance, ohms
    double c = 1800.0; // RC-pair capacitance, farads

    double tau() const { return r2 * c; }

    void validate() const {
        if (!(r1 >= 0.0) || !(r2 > 0.0) || !(c > 0.0) || !std::isfinite(tau()))
            throw Error(Errc::precondition, "ECM parameters out of range");
    }
};

// Parameters either fixed or affine in SOC: value(soc) = base + slope * soc.
struct ParamSchedule {
    enum class Mode { constant, soc_linear };

    Mode mode = Mode::constant;
    EcmParams base;
    EcmParams slope_per_soc{0.0, 0.0, 0.0};

    EcmParams at(double soc) const {
        if (mode == Mode::constant) return base;
        EcmParams p;
        p.r1 = base.r1 + slope_per_soc.r1 * soc;
        p.r2 = base.r2 + slope_per_soc.r2 * soc;
        p.c = base.c + slope_per_soc.c * soc;
        return p;
    }

    void validate() const {
        at(0.0).validate();
        at(1.0).validate();
    }
};

struct CellState {
    double soc = 0.0;  // fraction
    double uc = 0.0;   // capacitor voltage, volts
    double uc2 = 0.0;  // second RC pair, 2RC mode only
};

struct NoiseModel {
    double sigma_v = 0.0;     // volts
    double sigma_i = 0.0;     // amperes
    std::uint64_t seed = 0;

    void validate() const {
        if (sigma_v < 0.0 || sigma_i < 0.0) throw Error(Errc::precondition, "noise sigmas must be >= 0");
    }
};

// Measured channels plus noise-free ground truth at the same sample times.
struct CellTrace {
    std::vector<double> t;     // seconds, strictly increasing
    std::vector<double> i;     // amperes, + = charge (measured)
    std::vector<double> v;     // volts (measured)
    std::vector<double> temp;  // degrees C

    std::vector<double> truth_soc;
    std::vector<double> truth_uc;   // total capacitor voltage (uc + uc2)
    std::vector<double> truth_soh;

    bool saturation_flagged = false;  // soc left [0, 1] at some sample

    std::size_t size() const { return t.size(); }

    void validate() const {
        const std::size_t n = t.size();
        if (i.size() != n || v.size() != n || temp.size() != n || truth_soc.size() != n ||
            truth_uc.size() != n || truth_soh.size() != n)
            throw Error(Errc::precondition, "trace channel lengths differ");
        for (std::size_t k = 1; k < n; ++k)
            if (!(t[k] > t[k - 1])) throw Error(Errc::precondition, "trace times not strictly increasing");
    }
};

// One exact-discretization step under constant current i over dt.
inline CellState step(const CellState& state, const EcmParams& params, double i, double dt, double q_ah) {
    if (!(dt > 0.0)) throw Error(Errc::precondition, "dt must be positive");
    if (!(q_ah > 0.0)) throw Error(Errc::precondition, "capacity must be positive");
    const double decay = std::exp(-dt / params.tau());
    CellState next = state;
    next.soc = state.soc + i * dt / (q_ah * 3600.0);
    next.uc = state.uc * decay + params.r2 * (1.0 - decay) * i;
    return next;
}

inline double terminal_voltage(const CellState& state, const EcmParams& params, double i,
                               const OcvSurface& surface, double soh) {
    return eval_ocv(surface, state.soc, soh) + state.uc + state.uc2 + params.r1 * i;
}

struct ProfileSegment {
    enum class Kind { cc, rest, cv };

    Kind kind = Kind::rest;
    double duration_s = 0.0;
    double value = 0.0;  // amperes for cc, volts for cv, unused for rest

    static ProfileSegment constant_current(double duration_s, double amps) {
        return {Kind::cc, duration_s, amps};
    }
    static ProfileSegment rest(double duration_s) { return {Kind::rest, duration_s, 0.0}; }
    static ProfileSegment constant_voltage(double duration_s, double volts) {
        return {Kind::cv, duration_s, volts};
    }
};

using Profile = std::vector<ProfileSegment>;

struct SimOptions {
    bool two_rc = false;
    double r2_fraction = 0.7;   // share of r2 on the first pair in 2RC mode
    double tau_fraction = 0.7;  // share of tau on the first pair in 2RC mode
    double i_limit = 10.0;      // amperes, CV regulation bound
    double temperature_c = 25.0;
    double start_soc = 0.0;
    double start_uc = 0.0;
};

namespace detail {

struct RcPair {
    double r = 0.0;
    double tau = 0.0;
};

inline double rc_step(double uc, const RcPair& pair, double i, double dt) {
    if (pair.r <= 0.0 || pair.tau <= 0.0) return 0.0;
    const double decay = std::exp(-dt / pair.tau);
    return uc * decay + pair.r * (1.0 - decay) * i;
}

inline double clamped_ocv(const OcvSurface& surface, double soc, double soh) {
    return eval_ocv(surface, std::clamp(soc, 0.0, 1.0), soh);
}

}  // namespace detail

// Simulate a segment profile sampled at sample_dt. Measurement noise is added
// after the truth channels are recorded; CV segments regulate the current each
// step so the algebraic output equation holds at the setpoint.
inline CellTrace simulate_profile(const Profile& profile, const CellSpec& spec,
                                  const ParamSchedule& schedule, const OcvSurface& surface,
                                  double soh_true, const NoiseModel& noise, double sample_dt,
                                  const SimOptions& options = {}) {
    if (!(sample_dt > 0.0)) throw Error(Errc::precondition, "sample_dt must be positive");
    if (profile.empty()) throw Error(Errc::precondition, "profile must be non-empty");
    spec.validate();
    schedule.validate();
    noise.validate();

    std::mt19937_64 rng(noise.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const double q_ah = spec.q0_ah * soh_true;

    CellTrace trace;
    CellState state;
    state.soc = options.start_soc;
    state.uc = options.start_uc;

    double t = 0.0;
    for (const auto& segment : profile) {
        // Segment boundaries land on the sample grid.
        auto steps = static_cast<std::int64_t>(std::llround(segment.duration_s / sample_dt));
        if (steps < 1) steps = 1;

        for (std::int64_t k = 0; k < steps; ++k) {
            const EcmParams params = schedule.at(state.soc);
            params.validate();

            double i = 0.0;
            switch (segment.kind) {
                case ProfileSegment::Kind::cc:
                    i = segment.value;
                    break;
                case ProfileSegment::Kind::rest:
                    i = 0.0;
                    break;
                case ProfileSegment::Kind::cv: {
                    if (params.r1 <= 0.0)
                        throw Error(Errc::simulation, "CV regulation requires r1 > 0");
                    const double ocv = detail::clamped_ocv(surface, state.soc, soh_true);
                    i = (segment.value - ocv - state.uc - state.uc2) / params.r1;
                    if (std::abs(i) > options.i_limit)
                        throw Error(Errc::simulation,
                                    "CV setpoint needs " + std::to_string(i) + " A, beyond limit");
                    break;
                }
            }

            const double ocv = detail::clamped_ocv(surface, state.soc, soh_true);
            const double v_true = ocv + state.uc + state.uc2 + params.r1 * i;

            trace.t.push_back(t);
            trace.truth_soc.push_back(state.soc);
            trace.truth_uc.push_back(state.uc + state.uc2);
            trace.truth_soh.push_back(soh_true);
            trace.v.push_back(v_true + (noise.sigma_v > 0.0 ? noise.sigma_v * gauss(rng) : 0.0));
            trace.i.push_back(i + (noise.sigma_i > 0.0 ? noise.sigma_i * gauss(rng) : 0.0));
            trace.temp.push_back(options.temperature_c);

            if (state.soc < 0.0 || state.soc > 1.0) trace.saturation_flagged = true;

            // Advance state over [t, t + dt).
            state.soc += i * sample_dt / (q_ah * 3600.0);
            if (options.two_rc) {
                const detail::RcPair pair1{params.r2 * options.r2_fraction,
                                           params.tau() * options.tau_fraction};
                const detail::RcPair pair2{params.r2 * (1.0 - options.r2_fraction),
                                           params.tau() * (1.0 - options.tau_fraction)};
                state.uc = detail::rc_step(state.uc, pair1, i, sample_dt);
                state.uc2 = detail::rc_step(state.uc2, pair2, i, sample_dt);
            } else {
                state.uc = detail::rc_step(state.uc, {params.r2, params.tau()}, i, sample_dt);
            }
            t += sample_dt;
        }
    }
    trace.validate();
    return trace;
}

struct PulseSpec {
    double i = -2.2;        // amperes, opposite sign to charge
    double duration_s = 10.0;
};

// Charging profile of the incremental-capacity kind: CC raising SOC by
// soc_step, rest, short discharge pulse, rest, repeated to full charge and
// finished with a CV segment. capacity_scale shortens the CC segments for an
// aged cell so the last segment still ends below full.
inline Profile build_incremental_capacity_profile(double c_rate, const CellSpec& spec,
                                                  double rest_s = 180.0, PulseSpec pulse = {},
                                                  double soc_step = 0.05, double start_soc = 0.0,
                                                  double capacity_scale = 1.0,
                                                  double cv_duration_s = 600.0) {
    if (!(c_rate > 0.0)) throw Error(Errc::precondition, "c_rate must be positive");
    spec.validate();
    if (pulse.i == 0.0) pulse.i = -spec.q0_ah;  // 1 C discharge by default

    const double i_charge = c_rate * spec.q0_ah;
    const double cc_duration = soc_step * 3600.0 / c_rate * capacity_scale;
    const auto n_steps = static_cast<int>(std::floor((1.0 - start_soc) / soc_step + 1e-9));

    Profile profile;
    for (int k = 0; k < n_steps; ++k) {
        profile.push_back(ProfileSegment::constant_current(cc_duration, i_charge));
        profile.push_back(ProfileSegment::rest(rest_s));
        profile.push_back(ProfileSegment::constant_current(pulse.duration_s, pulse.i));
        profile.push_back(ProfileSegment::rest(rest_s));
    }
    profile.push_back(ProfileSegment::constant_voltage(cv_duration_s, spec.v_max));
    return profile;
}

}  // namespace cellest
