#pragma once

// Three-state UKF baseline over (remaining charge, capacitor voltage, present
// capacity). The state transition is linear; only the output map goes through
// the unscented transform.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cellest/detect.hpp"
#include "cellest/errors.hpp"
#include "cellest/ocv_model.hpp"
#include "cellest/relax_estimator.hpp"
#include "cellest/tracking.hpp"

namespace cellest {

struct SigmaConfig {
    double alpha = 1e-3;
    double beta = 2.0;
    double kappa = 0.0;
};

struct SigmaWeights {
    Eigen::VectorXd wm;
    Eigen::VectorXd wc;
    double gamma = 0.0;  // sigma-point spread sqrt(n + lambda)
};

inline SigmaWeights sigma_weights(const SigmaConfig& config, int n) {
    const double lambda = config.alpha * config.alpha * (n + config.kappa) - n;
    if (!(n + lambda > 0.0)) throw Error(Errc::precondition, "sigma config gives n + lambda <= 0");

    SigmaWeights w;
    w.wm.resize(2 * n + 1);
    w.wc.resize(2 * n + 1);
    w.wm(0) = lambda / (n + lambda);
    w.wc(0) = w.wm(0) + 1.0 - config.alpha * config.alpha + config.beta;
    for (int j = 1; j <= 2 * n; ++j) {
        w.wm(j) = 1.0 / (2.0 * (n + lambda));
        w.wc(j) = w.wm(j);
    }
    w.gamma = std::sqrt(n + lambda);
    return w;
}

struct UkfState {
    Eigen::VectorXd x;      // (q_r [A s], uc [V], q [A s])
    Eigen::MatrixXd p;
    Eigen::MatrixXd q_process;  // per step
    double r_meas = 2.25e-8;    // volts^2
    SigmaConfig sigma_cfg;
    double last_t = 0.0;

    double soc() const { return x(0) / x(2); }
    double q_as() const { return x(2); }
};

inline UkfState make_default_ukf(double soc0, const CellSpec& spec, double t0) {
    const double q0 = spec.q0_coulomb();
    UkfState state;
    state.x.resize(3);
    state.x << soc0 * q0, 0.0, q0;
    state.p = Eigen::MatrixXd::Zero(3, 3);
    state.p(0, 0) = std::pow(0.02 * q0, 2);
    state.p(1, 1) = std::pow(10e-3, 2);
    state.p(2, 2) = std::pow(0.05 * q0, 2);
    state.q_process = Eigen::MatrixXd::Zero(3, 3);
    state.q_process(0, 0) = 1e-6 * q0 * q0;
    state.q_process(1, 1) = 1e-8;
    state.q_process(2, 2) = 1e-8 * q0 * q0;
    state.r_meas = 0.15e-3 * 0.15e-3;
    state.last_t = t0;
    return state;
}

namespace detail {

inline Eigen::MatrixXd covariance_sqrt(Eigen::MatrixXd p) {
    Eigen::LLT<Eigen::MatrixXd> llt(p);
    if (llt.info() != Eigen::Success) {
        p = 0.5 * (p + p.transpose().eval());
        llt.compute(p);
        if (llt.info() != Eigen::Success)
            throw Error(Errc::filter_health, "covariance square root failed after re-symmetrization");
    }
    return llt.matrixL();
}

}  // namespace detail

// Generic unscented measurement update of (x, p) against a scalar output.
inline void unscented_update(Eigen::VectorXd& x, Eigen::MatrixXd& p, const SigmaConfig& config,
                             const std::function<double(const Eigen::VectorXd&)>& output,
                             double z, double r_meas) {
    const auto n = static_cast<int>(x.size());
    const SigmaWeights w = sigma_weights(config, n);
    const Eigen::MatrixXd root = detail::covariance_sqrt(p);

    const int n_sigma = 2 * n + 1;
    Eigen::MatrixXd chi(n, n_sigma);
    chi.col(0) = x;
    for (int j = 0; j < n; ++j) {
        chi.col(1 + j) = x + w.gamma * root.col(j);
        chi.col(1 + n + j) = x - w.gamma * root.col(j);
    }

    Eigen::VectorXd zs(n_sigma);
    for (int j = 0; j < n_sigma; ++j) zs(j) = output(chi.col(j));

    const double z_hat = w.wm.dot(zs);
    double s = r_meas;
    Eigen::VectorXd cross = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < n_sigma; ++j) {
        const double dz = zs(j) - z_hat;
        s += w.wc(j) * dz * dz;
        cross += w.wc(j) * (chi.col(j) - x) * dz;
    }

    const Eigen::VectorXd gain = cross / s;
    x += gain * (z - z_hat);
    p -= gain * s * gain.transpose();
    p = 0.5 * (p + p.transpose().eval());
}

inline UkfState ukf_step(const UkfState& state, const Measurement& meas, const ParamEstimate& params,
                         const CellSpec& spec, const OcvSurface& surface) {
    const double dt = meas.t - state.last_t;
    if (!(dt > 0.0)) throw Error(Errc::precondition, "measurement time must increase");
    if (!std::isfinite(meas.i) || !std::isfinite(meas.v))
        throw Error(Errc::measurement, "non-finite measurement");

    const double decay = std::exp(-dt / (params.r2 * params.c));
    Eigen::MatrixXd f = Eigen::MatrixXd::Identity(3, 3);
    f(1, 1) = decay;
    Eigen::VectorXd b(3);
    b << dt, params.r2 * (1.0 - decay), 0.0;

    UkfState next = state;
    next.last_t = meas.t;
    next.x = f * state.x + b * meas.i;
    next.p = f * state.p * f.transpose() + state.q_process;

    const double q0 = spec.q0_coulomb();
    const double soh_lo = surface.soh_min() - kSohExtrapolationBand;
    const double soh_hi = surface.soh_max() + kSohExtrapolationBand;
    const auto output = [&](const Eigen::VectorXd& xs) {
        const double q = std::max(xs(2), 1e-6 * q0);
        const double soc = std::clamp(xs(0) / q, 0.0, 1.0);
        const double soh = std::clamp(q / q0, soh_lo, soh_hi);
        return eval_ocv(surface, soc, soh) + xs(1) + params.r1 * meas.i;
    };

    unscented_update(next.x, next.p, next.sigma_cfg, output, meas.v, next.r_meas);
    return next;
}

struct UkfProtocolResult {
    double soc = 0.0;
    double soh = 0.0;
    double runtime_ms = 0.0;  // filter loop only
    std::size_t end_index = 0;
    std::size_t steps = 0;
};

struct UkfProtocolSetup {
    ParamEstimate params;
    UkfState init;
    std::size_t pulse_index = 0;
    std::size_t end_index = 0;  // one past the last processed sample
};

// Locate the (rest, pulse, rest, CC, rest) sequence, identify the ECM from
// the first rest, and initialize the filter at SOH 100% with the SOC read off
// the identified OCV.
inline UkfProtocolSetup prepare_ukf_protocol(const CellTrace& trace, const CellSpec& spec,
                                             const OcvSurface& surface,
                                             const DetectionConfig& detection = {},
                                             const EstimateOptions& estimate_options = {}) {
    const auto windows = detect_relaxations(trace, detection);
    const DetectedWindow* w1 = nullptr;
    const DetectedWindow* w2 = nullptr;
    try {
        auto pair = first_charge_pair(windows);
        w1 = pair.first;
        w2 = pair.second;
    } catch (const Error& e) {
        throw Error(Errc::protocol, std::string("segment sequence not found: ") + e.what());
    }

    UkfProtocolSetup setup;
    setup.params = identify_ecm_params(w1->window, spec, estimate_options);

    std::size_t pulse = w1->end_index;
    while (pulse < w2->onset_index && trace.i[pulse] >= -detection.i_zero_band) ++pulse;
    if (pulse >= w2->onset_index)
        throw Error(Errc::protocol, "trace has no discharge pulse between the rests");
    setup.pulse_index = pulse;

    bool has_cc = false;
    for (std::size_t j = pulse; j < w2->onset_index; ++j)
        if (trace.i[j] > detection.i_zero_band) has_cc = true;
    if (!has_cc) throw Error(Errc::protocol, "trace has no charge segment before the final rest");

    setup.end_index = w2->end_index;
    const double soc0 = invert_ocv(surface, setup.params.ocv, 1.0);
    setup.init = make_default_ukf(soc0, spec, trace.t[pulse - 1]);
    return setup;
}

inline UkfProtocolResult run_prepared_ukf(const UkfProtocolSetup& setup, const CellTrace& trace,
                                          const CellSpec& spec, const OcvSurface& surface) {
    UkfState state = setup.init;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t j = setup.pulse_index; j < setup.end_index; ++j) {
        Measurement meas;
        meas.t = trace.t[j];
        meas.i = trace.i[j];
        meas.v = trace.v[j];
        meas.temp_c = trace.temp[j];
        state = ukf_step(state, meas, setup.params, spec, surface);
    }
    const auto stop = std::chrono::steady_clock::now();

    UkfProtocolResult result;
    result.soc = state.soc();
    result.soh = state.q_as() / spec.q0_coulomb();
    result.runtime_ms = std::chrono::duration<double, std::milli>(stop - start).count();
    result.end_index = setup.end_index - 1;
    result.steps = setup.end_index - setup.pulse_index;
    return result;
}

inline UkfProtocolResult run_ukf_protocol(const CellTrace& trace, const CellSpec& spec,
                                          const OcvSurface& surface,
                                          const DetectionConfig& detection = {},
                                          const EstimateOptions& estimate_options = {}) {
    const UkfProtocolSetup setup = prepare_ukf_protocol(trace, spec, surface, detection, estimate_options);
    return run_prepared_ukf(setup, trace, spec, surface);
}

}  // namespace cellest
