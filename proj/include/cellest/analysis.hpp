#pragma once

// Executable noise-amplification and convergence analysis: how voltage noise
// propagates through the three-point solve, and where the SOC/SOH fixed point
// is locally contractive.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cellest/errors.hpp"
#include "cellest/ocv_model.hpp"
#include "cellest/relax_estimator.hpp"

namespace cellest {

struct SensitivityTerms {
    double a1 = 0.0;  // (x2 - x1) e^((x3 - x2)/tau), seconds
    double a2 = 0.0;  // (x3 - x2) e^((x1 - x2)/tau), seconds
    double a3 = 0.0;  // x3 - x1, seconds
    double a = 0.0;   // r2 * i0, volts
    double b = 0.0;   // -1 / tau, 1/seconds
    double m = 0.0;   // e^(x_d / tau) at midpoint spacing
};

inline SensitivityTerms sensitivity_terms(double x1, double x2, double x3, double tau,
                                          double r2 = 0.0, double i0 = 0.0) {
    if (!(x1 < x2 && x2 < x3)) throw Error(Errc::precondition, "need x1 < x2 < x3");
    if (!(tau > 0.0)) throw Error(Errc::precondition, "tau must be positive");
    SensitivityTerms t;
    t.a1 = (x2 - x1) * std::exp((x3 - x2) / tau);
    t.a2 = (x3 - x2) * std::exp((x1 - x2) / tau);
    t.a3 = x3 - x1;
    t.a = r2 * i0;
    t.b = -1.0 / tau;
    t.m = std::exp(0.5 * (x3 - x1) / tau);
    return t;
}

namespace detail {

// A1 + A2 - A3 with the cancellation removed:
// (x2-x1)(e^v - 1) + (x3-x2)(e^-w - 1), v = (x3-x2)/tau, w = (x2-x1)/tau.
inline double stable_denominator(double x1, double x2, double x3, double tau) {
    return (x2 - x1) * std::expm1((x3 - x2) / tau) + (x3 - x2) * std::expm1(-(x2 - x1) / tau);
}

}  // namespace detail

// f = sigma^2_OCV / sigma^2_y = (A1^2 + A2^2 + A3^2) / (A1 + A2 - A3)^2.
inline double noise_amplification_f(double x1, double x2, double x3, double tau) {
    const SensitivityTerms t = sensitivity_terms(x1, x2, x3, tau);
    const double denom = detail::stable_denominator(x1, x2, x3, tau);
    if (denom == 0.0) throw Error(Errc::degenerate_geometry, "singular three-point geometry");
    return (t.a1 * t.a1 + t.a2 * t.a2 + t.a3 * t.a3) / (denom * denom);
}

// Midpoint closed form f = (m^4 + 4 m^2 + 1) / (m - 1)^4 with m = e^(x_d/tau).
inline double f_symmetric(double x_d, double tau) {
    if (!(x_d > 0.0)) throw Error(Errc::precondition, "x_d must be positive");
    if (!(tau > 0.0)) throw Error(Errc::precondition, "tau must be positive");
    const double u = x_d / tau;
    const double m = std::exp(u);
    const double em1 = std::expm1(u);
    const double m2 = m * m;
    const double em1_2 = em1 * em1;
    return (m2 * m2 + 4.0 * m2 + 1.0) / (em1_2 * em1_2);
}

// Jacobian of the relative parameter errors [dR2/R2, dC/C, dOCV/OCV] with
// respect to the three measured voltages.
inline Eigen::Matrix3d sensitivity_matrix(double x1, double x2, double x3,
                                          const ParamEstimate& params, double i0) {
    if (!(params.r2 > 0.0) || !(params.tau > 0.0))
        throw Error(Errc::precondition, "sensitivity needs r2 > 0 and tau > 0");
    if (i0 == 0.0) throw Error(Errc::precondition, "i0 must be nonzero");
    if (params.ocv == 0.0) throw Error(Errc::precondition, "ocv must be nonzero");

    const SensitivityTerms t = sensitivity_terms(x1, x2, x3, params.tau, params.r2, i0);
    const double denom = detail::stable_denominator(x1, x2, x3, params.tau);
    if (denom == 0.0) throw Error(Errc::degenerate_geometry, "singular three-point geometry");

    const double b = t.b;
    const double e1 = std::exp(b * x1);
    const double e2 = std::exp(b * x2);
    const double e3 = std::exp(b * x3);

    // The dR2/R2 and dC/C rows need a common -e^(-b(x1+x3)) rescale for the
    // matrix to be the actual Jacobian of the three-point solve; the rows
    // here are normalized against central finite differences of that solve.
    // The dOCV/OCV row needs none, which is also why the f formula matches
    // the Monte-Carlo OCV spread as printed.
    const double scale = -std::exp(-b * (x1 + x3));

    Eigen::Matrix3d j;
    j(0, 0) = scale * (x3 * e3 - x2 * e2) / (t.a * denom);
    j(0, 1) = scale * (x1 * e1 - x3 * e3) / (t.a * denom);
    j(0, 2) = scale * (x2 * e2 - x1 * e1) / (t.a * denom);

    const double b1 = b * x1 - 1.0;
    const double b2 = b * x2 - 1.0;
    const double b3 = b * x3 - 1.0;
    j(1, 0) = scale * (b2 * e2 - b3 * e3) / (t.a * b * denom);
    j(1, 1) = scale * (b3 * e3 - b1 * e1) / (t.a * b * denom);
    j(1, 2) = scale * (b1 * e1 - b2 * e2) / (t.a * b * denom);

    j(2, 0) = t.a2 / (params.ocv * denom);
    j(2, 1) = -t.a3 / (params.ocv * denom);
    j(2, 2) = t.a1 / (params.ocv * denom);
    return j;
}

struct OptimalX2 {
    double x2_star = 0.0;
    double f_star = 0.0;
    double f_mid = 0.0;
};

// Grid search for the f-minimizing second point, reported against the
// midpoint choice the closed form relies on.
inline OptimalX2 optimal_x2_gap(double x1, double x3, double tau, int grid_points = 1000) {
    if (!(x1 < x3)) throw Error(Errc::precondition, "need x1 < x3");
    if (grid_points < 3) throw Error(Errc::precondition, "need >=3 grid points");

    OptimalX2 out;
    out.f_star = std::numeric_limits<double>::infinity();
    const double span = x3 - x1;
    for (int k = 1; k <= grid_points; ++k) {
        const double x2 = x1 + span * static_cast<double>(k) / static_cast<double>(grid_points + 1);
        const double f = noise_amplification_f(x1, x2, x3, tau);
        if (f < out.f_star) {
            out.f_star = f;
            out.x2_star = x2;
        }
    }
    out.f_mid = noise_amplification_f(x1, 0.5 * (x1 + x3), x3, tau);
    return out;
}

// Derivative of the SOH iteration map at the true point; |L| < 1 means the
// fixed point is locally attracting.
inline double local_convergence_l(const OcvSurface& surface, double soc_true, double soh_true,
                                  double fd_step = 1e-4) {
    const double docv_dsoc = eval_docv_dsoc(surface, soc_true, soh_true);
    if (std::abs(docv_dsoc) < 1e-9)
        throw Error(Errc::domain, "flat OCV curve at soc=" + std::to_string(soc_true));

    const double ocv = eval_ocv(surface, soc_true, soh_true);
    const double h = fd_step;
    const std::pair<double, double> band{std::max(0.0, soc_true - 0.1),
                                         std::min(1.0, soc_true + 0.1)};

    const double soc_hi = invert_ocv(surface, ocv, soh_true + h, band);
    const double soc_lo = invert_ocv(surface, ocv, soh_true - h, band);
    const double dsoc_dsoh = (soc_hi - soc_lo) / (2.0 * h);

    const double mixed = (eval_docv_dsoc(surface, soc_true, soh_true + h) -
                          eval_docv_dsoc(surface, soc_true, soh_true - h)) /
                         (2.0 * h);
    const double d2 = eval_d2ocv_dsoc2(surface, soc_true, soh_true);

    return soh_true * (d2 * dsoc_dsoh + mixed) / docv_dsoc;
}

struct ConvergenceCell {
    double soc_true = 0.0;
    double soh_true = 0.0;
    double l_abs = 1.0;       // |L| clipped at 1 for maps
    double soc_rmse = 0.0;    // |soc error| of the iteration started at SOH0 = 1
    double soh_rmse = 0.0;
    bool iteration_converged = false;
    std::string note;         // per-cell failure, recorded instead of raised
};

// Evaluate |L| and run the full iteration from SOH0 = 1 on manufactured
// inputs over the (soc, soh) grid.
inline std::vector<ConvergenceCell> convergence_map(const OcvSurface& surface,
                                                    const std::vector<double>& soc_grid,
                                                    const std::vector<double>& soh_grid) {
    CellSpec spec;  // cancels out of the manufactured iteration
    std::vector<ConvergenceCell> cells;
    cells.reserve(soc_grid.size() * soh_grid.size());

    for (double soc_true : soc_grid) {
        for (double soh_true : soh_grid) {
            ConvergenceCell cell;
            cell.soc_true = soc_true;
            cell.soh_true = soh_true;

            try {
                cell.l_abs = std::min(std::abs(local_convergence_l(surface, soc_true, soh_true)), 1.0);
            } catch (const Error& e) {
                cell.l_abs = 1.0;
                cell.note = e.what();
            }

            try {
                const double ocv = eval_ocv(surface, soc_true, soh_true);
                const double docv_dsoc = eval_docv_dsoc(surface, soc_true, soh_true);
                const double i = 1.0;
                const double docv_dt = i * docv_dsoc / (spec.q0_coulomb() * soh_true);

                IterationOptions options;
                options.throw_on_failure = false;
                const SocSohEstimate est = iterate_soc_soh(ocv, docv_dt, i, spec, surface, options);
                if (est.iterations == 0 && !est.converged) {
                    // Not even a first SOC came out; there is no estimate to score.
                    cell.soc_rmse = std::numeric_limits<double>::quiet_NaN();
                    cell.soh_rmse = std::numeric_limits<double>::quiet_NaN();
                    cell.note = "no estimate (first inversion failed)";
                } else {
                    cell.soc_rmse = std::abs(est.soc - soc_true);
                    cell.soh_rmse = std::abs(est.soh - soh_true);
                }
                cell.iteration_converged = est.converged;
            } catch (const Error& e) {
                cell.soc_rmse = std::numeric_limits<double>::quiet_NaN();
                cell.soh_rmse = std::numeric_limits<double>::quiet_NaN();
                cell.iteration_converged = false;
                cell.note = e.what();
            }
            cells.push_back(cell);
        }
    }
    return cells;
}

}  // namespace cellest
