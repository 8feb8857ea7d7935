#pragma once

// OCV surface model: OCV = f(SOC, SOH, T) as a family of degree-9 SOC
// polynomials, one set of coefficients per SOH grid level, one surface per
// temperature. Coefficients are interpolated linearly between SOH levels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cellest/errors.hpp"

namespace cellest {

inline constexpr int kOcvPolyDegree = 9;
inline constexpr std::size_t kOcvPolyCoeffs = kOcvPolyDegree + 1;

// How far beyond the fitted SOH grid the surface may be queried (clamped).
inline constexpr double kSohExtrapolationBand = 0.05;

struct PolyCoeffs {
    std::array<double, kOcvPolyCoeffs> a{};  // a[i] multiplies soc^i, volts

    double eval(double soc) const {
        double v = 0.0;
        for (int i = kOcvPolyDegree; i >= 0; --i) v = v * soc + a[static_cast<std::size_t>(i)];
        return v;
    }
    double eval_d1(double soc) const {
        double v = 0.0;
        for (int i = kOcvPolyDegree; i >= 1; --i) v = v * soc + i * a[static_cast<std::size_t>(i)];
        return v;
    }
    double eval_d2(double soc) const {
        double v = 0.0;
        for (int i = kOcvPolyDegree; i >= 2; --i)
            v = v * soc + i * (i - 1) * a[static_cast<std::size_t>(i)];
        return v;
    }
    bool finite() const {
        for (double c : a)
            if (!std::isfinite(c)) return false;
        return true;
    }
};

struct SohLevel {
    double soh = 1.0;   // fraction in (0, 1]
    PolyCoeffs coeffs;
};

struct OcvSurface {
    double temperature_c = 25.0;
    std::vector<SohLevel> grid;  // sorted ascending by soh

    void validate() const {
        if (grid.empty()) throw Error(Errc::precondition, "OcvSurface needs >=1 grid entry");
        for (std::size_t k = 0; k < grid.size(); ++k) {
            if (!grid[k].coeffs.finite())
                throw Error(Errc::precondition, "non-finite polynomial coefficients");
            if (k > 0 && !(grid[k].soh > grid[k - 1].soh))
                throw Error(Errc::precondition, "soh levels must be strictly increasing");
        }
    }

    double soh_min() const { return grid.front().soh; }
    double soh_max() const { return grid.back().soh; }
};

struct CellSpec {
    double q0_ah = 2.2;          // maximum capacity of a new cell, ampere-hours
    double v_min = 2.75;         // nominal voltage window, volts
    double v_max = 4.25;

    double q0_coulomb() const { return q0_ah * 3600.0; }

    void validate() const {
        if (!(q0_ah > 0.0)) throw Error(Errc::precondition, "q0 must be positive");
        if (!(v_min < v_max)) throw Error(Errc::precondition, "v_min must be below v_max");
    }
};

struct OcvFit {
    PolyCoeffs coeffs;
    double residual_rms = 0.0;  // volts
};

// Least-squares degree-9 fit of (soc, ocv) samples.
inline OcvFit fit_ocv_poly(const std::vector<std::pair<double, double>>& samples) {
    if (samples.size() < 20)
        throw Error(Errc::fit_failed, "need >=20 samples, got " + std::to_string(samples.size()));

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& [soc, ocv] : samples) {
        if (!std::isfinite(soc) || !std::isfinite(ocv))
            throw Error(Errc::fit_failed, "non-finite sample");
        lo = std::min(lo, soc);
        hi = std::max(hi, soc);
    }
    if (hi - lo < 0.5)
        throw Error(Errc::fit_failed, "soc span " + std::to_string(hi - lo) + " below 0.5");

    std::vector<double> socs;
    socs.reserve(samples.size());
    for (const auto& s : samples) socs.push_back(s.first);
    std::sort(socs.begin(), socs.end());
    for (std::size_t k = 1; k < socs.size(); ++k)
        if (socs[k] - socs[k - 1] < 1e-9)
            throw Error(Errc::fit_failed, "duplicate soc value " + std::to_string(socs[k]));

    const auto n = static_cast<Eigen::Index>(samples.size());
    Eigen::MatrixXd vand(n, kOcvPolyCoeffs);
    Eigen::VectorXd rhs(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double soc = samples[static_cast<std::size_t>(r)].first;
        double p = 1.0;
        for (std::size_t c = 0; c < kOcvPolyCoeffs; ++c) {
            vand(r, static_cast<Eigen::Index>(c)) = p;
            p *= soc;
        }
        rhs(r) = samples[static_cast<std::size_t>(r)].second;
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(vand);
    qr.setThreshold(1e-10);
    if (qr.rank() < static_cast<Eigen::Index>(kOcvPolyCoeffs))
        throw Error(Errc::fit_failed, "rank-deficient system, samples too clustered");
    Eigen::VectorXd sol = qr.solve(rhs);

    OcvFit fit;
    for (std::size_t c = 0; c < kOcvPolyCoeffs; ++c) fit.coeffs.a[c] = sol(static_cast<Eigen::Index>(c));
    fit.residual_rms = std::sqrt((vand * sol - rhs).squaredNorm() / static_cast<double>(n));
    return fit;
}

namespace detail {

// Per-coefficient linear interpolation between the bracketing SOH levels,
// clamped at the grid edges; queries outside the +-0.05 band are rejected.
inline PolyCoeffs interpolate_coeffs(const OcvSurface& surface, double soh) {
    surface.validate();
    if (!std::isfinite(soh) || soh < surface.soh_min() - kSohExtrapolationBand ||
        soh > surface.soh_max() + kSohExtrapolationBand)
        throw Error(Errc::domain, "soh " + std::to_string(soh) + " outside surface band [" +
                                      std::to_string(surface.soh_min() - kSohExtrapolationBand) + ", " +
                                      std::to_string(surface.soh_max() + kSohExtrapolationBand) + "]");

    const auto& grid = surface.grid;
    if (grid.size() == 1 || soh <= grid.front().soh) return grid.front().coeffs;
    if (soh >= grid.back().soh) return grid.back().coeffs;

    std::size_t hi = 1;
    while (grid[hi].soh < soh) ++hi;
    const auto& lo = grid[hi - 1];
    const double w = (soh - lo.soh) / (grid[hi].soh - lo.soh);

    PolyCoeffs out;
    for (std::size_t c = 0; c < kOcvPolyCoeffs; ++c)
        out.a[c] = (1.0 - w) * lo.coeffs.a[c] + w * grid[hi].coeffs.a[c];
    return out;
}

inline void check_soc(double soc) {
    if (!std::isfinite(soc) || soc < 0.0 || soc > 1.0)
        throw Error(Errc::domain, "soc " + std::to_string(soc) + " outside [0,1]");
}

}  // namespace detail

inline double eval_ocv(const OcvSurface& surface, double soc, double soh) {
    detail::check_soc(soc);
    return detail::interpolate_coeffs(surface, soh).eval(soc);
}

inline double eval_docv_dsoc(const OcvSurface& surface, double soc, double soh) {
    detail::check_soc(soc);
    return detail::interpolate_coeffs(surface, soh).eval_d1(soc);
}

inline double eval_d2ocv_dsoc2(const OcvSurface& surface, double soc, double soh) {
    detail::check_soc(soc);
    return detail::interpolate_coeffs(surface, soh).eval_d2(soc);
}

// SOC from OCV at fixed SOH: sign-change scan on a 1e-3 grid over the band,
// bisection to |f(soc) - ocv| <= 1e-9 V. Among candidate roots the ones on a
// rising segment win (the physical OCV increases with SOC); ties go to the
// root nearest the band center.
inline double invert_ocv(const OcvSurface& surface, double ocv, double soh,
                         std::pair<double, double> soc_band = {0.0, 1.0}) {
    const auto [band_lo, band_hi] = soc_band;
    if (!(band_lo >= 0.0 && band_hi <= 1.0 && band_lo < band_hi))
        throw Error(Errc::precondition, "soc band must be a subinterval of [0,1]");

    const PolyCoeffs poly = detail::interpolate_coeffs(surface, soh);
    const auto g = [&](double s) { return poly.eval(s) - ocv; };

    constexpr double kScanStep = 1e-3;
    constexpr double kTolV = 1e-9;

    struct Root {
        double soc;
        double slope;
    };
    std::vector<Root> roots;

    auto bisect = [&](double lo, double hi, double glo) {
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double gm = g(mid);
            if (std::abs(gm) <= kTolV) return mid;
            if ((gm > 0.0) == (glo > 0.0)) {
                lo = mid;
                glo = gm;
            } else {
                hi = mid;
            }
        }
        return 0.5 * (lo + hi);
    };

    double prev_s = band_lo;
    double prev_g = g(prev_s);
    if (prev_g == 0.0) roots.push_back({prev_s, poly.eval_d1(prev_s)});
    for (double s = band_lo + kScanStep; s < band_hi + 0.5 * kScanStep; s += kScanStep) {
        const double cur_s = std::min(s, band_hi);
        const double cur_g = g(cur_s);
        if (cur_g == 0.0) {
            roots.push_back({cur_s, poly.eval_d1(cur_s)});
        } else if ((cur_g > 0.0) != (prev_g > 0.0)) {
            const double root = bisect(prev_s, cur_s, prev_g);
            roots.push_back({root, poly.eval_d1(root)});
        }
        prev_s = cur_s;
        prev_g = cur_g;
    }

    if (roots.empty())
        throw Error(Errc::no_root, "no OCV crossing for " + std::to_string(ocv) + " V in band [" +
                                       std::to_string(band_lo) + ", " + std::to_string(band_hi) + "]");

    std::vector<Root> rising;
    for (const auto& r : roots)
        if (r.slope > 0.0) rising.push_back(r);
    if (rising.empty())
        throw Error(Errc::nonphysical_root, "all crossings lie on decreasing segments");

    const double center = 0.5 * (band_lo + band_hi);
    const auto best = std::min_element(rising.begin(), rising.end(), [&](const Root& a, const Root& b) {
        return std::abs(a.soc - center) < std::abs(b.soc - center);
    });
    return best->soc;
}

}  // namespace cellest
