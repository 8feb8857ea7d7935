#pragma once

// Rest-period detection on sampled traces: find zero-current runs long enough
// for the three-point method, classify what preceded them (CC or CV tail),
// and extract the onset quantities the estimator needs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cellest/ecm_sim.hpp"
#include "cellest/errors.hpp"
#include "cellest/relax_estimator.hpp"

namespace cellest {

struct DetectionConfig {
    double v_threshold = 3.9;   // volts, onset voltage gate
    double i_zero_band = 0.01;  // amperes, |i| below this counts as rest
    double x3 = 120.0;          // seconds the window must cover (plus margin)
    int pre_tail_samples = 50;  // constant-sign samples required before onset
};

struct DetectedWindow {
    RelaxationWindow window;
    std::size_t onset_index = 0;  // trace index of the first rest sample
    std::size_t end_index = 0;    // trace index one past the last rest sample
};

namespace detail {

// Straight-line extrapolation of the pre-rest tail to the onset time removes
// the OCV drift from the instantaneous-drop estimate.
inline double extrapolate_tail(const std::vector<std::pair<double, double>>& tail, double t) {
    const double slope = fit_dv_dt(tail);
    double mean_t = 0.0, mean_v = 0.0;
    for (const auto& [tt, vv] : tail) {
        mean_t += tt;
        mean_v += vv;
    }
    mean_t /= static_cast<double>(tail.size());
    mean_v /= static_cast<double>(tail.size());
    return mean_v + slope * (t - mean_t);
}

}  // namespace detail

// Assumes a uniformly sampled trace; the window lengths below are counted in
// samples of the leading period.
inline std::vector<DetectedWindow> detect_relaxations(const CellTrace& trace,
                                                      const DetectionConfig& config = {}) {
    trace.validate();
    if (trace.size() < 2) throw Error(Errc::detection, "trace too short");
    const double dt = trace.t[1] - trace.t[0];
    const auto min_rest_samples =
        static_cast<std::size_t>(std::ceil(config.x3 / dt)) + 15;
    const auto tail_n = static_cast<std::size_t>(config.pre_tail_samples);

    std::vector<DetectedWindow> windows;
    const std::size_t n = trace.size();
    std::size_t k = 0;
    while (k < n) {
        if (std::abs(trace.i[k]) > config.i_zero_band) {
            ++k;
            continue;
        }
        std::size_t end = k;
        while (end < n && std::abs(trace.i[end]) <= config.i_zero_band) ++end;

        const std::size_t onset = k;
        k = end;  // resume scan after this rest either way

        if (end - onset < min_rest_samples) continue;
        if (onset < tail_n) continue;
        if (!(trace.v[onset] > config.v_threshold)) continue;

        // Classify the tail: constant current (CC) or a drifting CV taper.
        double i_sum = 0.0, i_min = std::numeric_limits<double>::infinity();
        double i_max = -std::numeric_limits<double>::infinity();
        bool sign_ok = true;
        const double sign = trace.i[onset - 1] >= 0.0 ? 1.0 : -1.0;
        for (std::size_t j = onset - tail_n; j < onset; ++j) {
            const double i = trace.i[j];
            if (std::abs(i) <= config.i_zero_band || i * sign < 0.0) sign_ok = false;
            i_sum += i;
            i_min = std::min(i_min, i);
            i_max = std::max(i_max, i);
        }
        if (!sign_ok) continue;
        const double i_mean = i_sum / static_cast<double>(tail_n);
        const double i_spread = i_max - i_min;
        // CC tail: spread at the noise scale; CV taper: steady decline well
        // above it. The zero band doubles as the noise proxy.
        const bool constant_current =
            i_spread <= std::max(0.5 * config.i_zero_band, 0.02 * std::abs(i_mean));

        DetectedWindow detected;
        detected.onset_index = onset;
        detected.end_index = end;

        RelaxationWindow& w = detected.window;
        w.t0 = trace.t[onset];
        w.samples.reserve(end - onset);
        for (std::size_t j = onset; j < end; ++j) w.samples.emplace_back(trace.t[j] - w.t0, trace.v[j]);
        w.pre_tail.reserve(tail_n);
        for (std::size_t j = onset - tail_n; j < onset; ++j)
            w.pre_tail.emplace_back(trace.t[j], trace.v[j]);
        w.i0 = i_mean;
        w.delta_u = trace.v[onset] - detail::extrapolate_tail(w.pre_tail, w.t0);

        if (constant_current) {
            w.mode = RelaxationWindow::Mode::after_cc;
        } else {
            w.mode = RelaxationWindow::Mode::after_cv;
            std::vector<std::pair<double, double>> current_tail;
            current_tail.reserve(tail_n);
            for (std::size_t j = onset - tail_n; j < onset; ++j)
                current_tail.emplace_back(trace.t[j], trace.i[j]);
            w.di_dt = fit_dv_dt(current_tail);
        }
        windows.push_back(std::move(detected));
    }

    if (windows.empty())
        throw Error(Errc::detection, "no qualifying relaxation (threshold " +
                                         std::to_string(config.v_threshold) + " V, band " +
                                         std::to_string(config.i_zero_band) + " A)");
    return windows;
}

// The first two charge-side windows, as paired for dR compensation.
inline std::pair<const DetectedWindow*, const DetectedWindow*> first_charge_pair(
    const std::vector<DetectedWindow>& windows) {
    const DetectedWindow* first = nullptr;
    for (const auto& w : windows) {
        if (w.window.mode != RelaxationWindow::Mode::after_cc || w.window.i0 <= 0.0) continue;
        if (!first) {
            first = &w;
        } else {
            return {first, &w};
        }
    }
    throw Error(Errc::detection, "need two charge-side relaxations for pairing");
}

// Coulomb-counted charge between the two window onsets, as an equivalent
// constant-current gap.
inline CcGap gap_between(const CellTrace& trace, const DetectedWindow& w1,
                         const DetectedWindow& w2) {
    if (w2.onset_index <= w1.onset_index)
        throw Error(Errc::precondition, "windows must be ordered in time");
    CcGap gap;
    gap.duration_s = trace.t[w2.onset_index] - trace.t[w1.onset_index];
    double charge = 0.0;
    for (std::size_t j = w1.onset_index; j < w2.onset_index; ++j) {
        const double dt = trace.t[j + 1] - trace.t[j];
        charge += trace.i[j] * dt;
    }
    gap.i = charge / gap.duration_s;
    return gap;
}

}  // namespace cellest
