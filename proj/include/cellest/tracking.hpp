#pragma once

// Two-state EKF (SOC, capacitor voltage) tracking one reference cell, plus
// the SOH-ratio propagation of SOC deltas across a series string. Resistance
// stays a fixed parameter: adding it as a state would cost observability.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cellest/errors.hpp"
#include "cellest/ocv_model.hpp"
#include "cellest/relax_estimator.hpp"

namespace cellest {

struct Measurement {
    double i = 0.0;       // amperes
    double v = 0.0;       // volts
    double temp_c = 25.0;
    double t = 0.0;       // seconds
};

struct EkfState {
    Eigen::Vector2d x = Eigen::Vector2d::Zero();   // (soc, uc)
    Eigen::Matrix2d p = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d q_process = Eigen::Matrix2d::Zero();  // per second
    double r_meas = 1.0225e-6;                     // volts^2
    double last_t = 0.0;

    double soc() const { return x(0); }
    double uc() const { return x(1); }
};

// Measurement floor from a 0.15 mV voltmeter plus 1 mV of model-mismatch
// headroom; process noise keeps SOC nearly deterministic between updates.
inline EkfState make_default_ekf(double soc0, double uc0, double t0,
                                 double soc_sigma0 = 0.05, double uc_sigma0 = 0.01) {
    EkfState state;
    state.x << soc0, uc0;
    state.p << soc_sigma0 * soc_sigma0, 0.0, 0.0, uc_sigma0 * uc_sigma0;
    state.q_process << 1e-10, 0.0, 0.0, 1e-8;
    state.r_meas = 0.15e-3 * 0.15e-3 + 1e-3 * 1e-3;
    state.last_t = t0;
    return state;
}

namespace detail {

inline void check_psd_2x2(const Eigen::Matrix2d& p) {
    const double tr = p.trace();
    const double det = p.determinant();
    const double disc = std::sqrt(std::max(0.0, tr * tr - 4.0 * det));
    const double lambda_min = 0.5 * (tr - disc);
    if (lambda_min < -1e-12)
        throw Error(Errc::filter_health,
                    "covariance eigenvalue " + std::to_string(lambda_min) + " below tolerance");
}

}  // namespace detail

inline EkfState ekf_step(const EkfState& state, const Measurement& meas, const ParamEstimate& params,
                         double soh_i, const CellSpec& spec, const OcvSurface& surface) {
    if (!std::isfinite(meas.i) || !std::isfinite(meas.v) || !std::isfinite(meas.t))
        throw Error(Errc::measurement, "non-finite measurement");
    const double dt = meas.t - state.last_t;
    if (!(dt > 0.0)) throw Error(Errc::precondition, "measurement time must increase");
    if (!(soh_i > 0.0)) throw Error(Errc::precondition, "reference soh must be positive");

    const double decay = std::exp(-dt / (params.r2 * params.c));

    EkfState next = state;
    next.last_t = meas.t;

    Eigen::Matrix2d f;
    f << 1.0, 0.0, 0.0, decay;
    Eigen::Vector2d b;
    b << dt / (spec.q0_coulomb() * soh_i), params.r2 * (1.0 - decay);

    next.x = f * state.x + b * meas.i;
    next.p = f * state.p * f.transpose() + state.q_process * dt;

    // Out-of-range SOC excursions are evaluated at the curve edge; the update
    // pulls the state back inside.
    const double soc_eval = std::clamp(next.x(0), 0.0, 1.0);
    const double innovation =
        meas.v - (eval_ocv(surface, soc_eval, soh_i) + next.x(1) + params.r1 * meas.i);

    Eigen::RowVector2d h;
    h << eval_docv_dsoc(surface, soc_eval, soh_i), 1.0;

    const double s = (h * next.p * h.transpose())(0) + state.r_meas;
    const Eigen::Vector2d k = next.p * h.transpose() / s;

    next.x += k * innovation;
    next.p = (Eigen::Matrix2d::Identity() - k * h) * next.p;
    next.p = 0.5 * (next.p + next.p.transpose()).eval();
    detail::check_psd_2x2(next.p);
    return next;
}

struct PackSnapshot {
    std::vector<double> soc0;  // per-cell SOC at the anchor time
    std::vector<double> soh;   // per-cell SOH
    std::size_t reference_index = 0;

    void validate() const {
        if (soc0.size() != soh.size()) throw Error(Errc::precondition, "pack vectors differ in length");
        if (soc0.empty()) throw Error(Errc::precondition, "pack must have >=1 cell");
        if (reference_index >= soc0.size())
            throw Error(Errc::precondition, "reference index out of range");
        for (double s : soh)
            if (!(s > 0.0) || s > 1.2) throw Error(Errc::domain, "cell soh outside (0, 1.2]");
    }
};

// Same charge flows through every series cell, so SOC deltas scale with the
// SOH ratio.
inline std::vector<double> propagate_pack(const PackSnapshot& snapshot, double soc_i_now) {
    snapshot.validate();
    const double soh_i = snapshot.soh[snapshot.reference_index];
    const double delta_i = soc_i_now - snapshot.soc0[snapshot.reference_index];

    std::vector<double> soc(snapshot.soc0.size());
    for (std::size_t j = 0; j < soc.size(); ++j)
        soc[j] = snapshot.soc0[j] + delta_i * soh_i / snapshot.soh[j];
    return soc;
}

}  // namespace cellest
