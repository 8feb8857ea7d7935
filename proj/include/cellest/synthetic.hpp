#pragma once

// Built-in reference cell: an NMC-like 2.2 Ah charge OCV curve with a mid-SOC
// plateau, an aging correction that couples the curve shape to SOH, and RC
// parameter schedules. Simulation scenarios, maps, and the CLI demos all draw
// from here so results are reproducible without lab data.

#include <cmath>
#include <vector>

#include "cellest/ecm_sim.hpp"
#include "cellest/ocv_model.hpp"

namespace cellest {

// Degree-9 coefficients of the new-cell (SOH = 1) charge OCV curve, frozen
// from a least-squares fit of a hand-shaped curve: steep below 10% SOC, a
// slope dip (plateau) near 50%, ~0.7 V/SOC through the 55-80% estimation
// region, 4.17 V at full charge.
inline const PolyCoeffs& reference_base_curve() {
    static const PolyCoeffs coeffs{{3.26718596327, 3.14744322313, -11.9456636134, -7.45798107737,
                                    303.029195469, -1260.325633, 2496.89483628, -2664.03554229,
                                    1473.74348119, -332.146186673}};
    return coeffs;
}

// Aging correction k(soc): OCV(soc, soh) = base(soc) + (1 - soh) * k(soc).
// Shaped like a derivative-of-Gaussian centered on the plateau: zero at 50%
// SOC with its steepest slope there, fading out by +-30% SOC. Aging flattens
// the plateau, which is what makes the SOH iteration lose contraction around
// 50% SOC while barely moving the curve elsewhere.
inline const PolyCoeffs& reference_soh_coupling() {
    static const PolyCoeffs coeffs{{0.005593630017, -0.595322105473, 20.1923742982, -248.202192974,
                                    1460.37029572, -4600.38701885, 8201.37313489, -8302.46700745,
                                    4453.37407451, -983.667399156}};
    return coeffs;
}

inline double reference_ocv(double soc, double soh) {
    return reference_base_curve().eval(soc) + (1.0 - soh) * reference_soh_coupling().eval(soc);
}

inline CellSpec reference_cell_spec() {
    CellSpec spec;
    spec.q0_ah = 2.2;
    spec.v_min = 2.75;
    spec.v_max = 4.17;  // just below the fitted curve's full-charge voltage
    return spec;
}

inline std::vector<double> reference_soh_levels() { return {0.5, 0.6, 0.7, 0.8, 0.9, 1.0}; }

// Sample the analytic curve and fit one polynomial per SOH level, the same
// path measured OCV data would take.
inline OcvSurface make_reference_surface(double temperature_c = 25.0,
                                         std::vector<double> soh_levels = reference_soh_levels(),
                                         int samples_per_level = 121) {
    OcvSurface surface;
    surface.temperature_c = temperature_c;
    for (double soh : soh_levels) {
        std::vector<std::pair<double, double>> samples;
        samples.reserve(static_cast<std::size_t>(samples_per_level));
        for (int k = 0; k < samples_per_level; ++k) {
            const double soc = static_cast<double>(k) / (samples_per_level - 1);
            samples.emplace_back(soc, reference_ocv(soc, soh));
        }
        surface.grid.push_back({soh, fit_ocv_poly(samples).coeffs});
    }
    surface.validate();
    return surface;
}

// Surface frozen at one SOH, for runs where the curve must not move as the
// SOH estimate updates. The same coefficients sit on both edges of the grid
// span, so any queried SOH sees the identical curve.
inline OcvSurface fixed_surface_at(const OcvSurface& surface, double soh) {
    const PolyCoeffs coeffs = detail::interpolate_coeffs(surface, soh);
    OcvSurface fixed;
    fixed.temperature_c = surface.temperature_c;
    fixed.grid.push_back({surface.soh_min(), coeffs});
    fixed.grid.push_back({surface.soh_max(), coeffs});
    return fixed;
}

// RC parameters drifting linearly with SOC; the constant variant freezes them
// at mid-range.
inline ParamSchedule reference_schedule(bool constant = false) {
    ParamSchedule schedule;
    schedule.mode = constant ? ParamSchedule::Mode::constant : ParamSchedule::Mode::soc_linear;
    if (constant) {
        schedule.base = EcmParams{0.0292, 0.0212, 3430.0};
        schedule.slope_per_soc = EcmParams{0.0, 0.0, 0.0};
    } else {
        schedule.base = EcmParams{0.024, 0.016, 3300.0};
        schedule.slope_per_soc = EcmParams{0.008, 0.008, 200.0};
    }
    return schedule;
}

}  // namespace cellest
