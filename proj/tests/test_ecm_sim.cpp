#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cellest/ecm_sim.hpp"
#include "cellest/synthetic.hpp"

using namespace cellest;

namespace {

OcvSurface flat_surface(double volts) {
    PolyCoeffs p;
    p.a = {volts, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    OcvSurface s;
    s.grid.push_back({1.0, p});
    return s;
}

}  // namespace

TEST_CASE("step relaxes the capacitor by one time constant") {
    EcmParams params{0.03, 0.04, 2500.0};
    CellState state;
    state.soc = 0.5;
    state.uc = 0.1;
    const CellState next = step(state, params, 0.0, params.tau(), 2.2);
    REQUIRE(next.uc == Catch::Approx(0.1 / std::exp(1.0)).epsilon(1e-12));
    REQUIRE(next.soc == 0.5);
}

TEST_CASE("step reaches the resistive steady state under held current") {
    EcmParams params{0.03, 0.04, 2500.0};
    CellState state;
    const double i = 1.1;
    state = step(state, params, i, 6.0 * params.tau(), 2.2);
    REQUIRE(state.uc == Catch::Approx(i * params.r2).epsilon(0.01));
}

TEST_CASE("step coulomb-counts") {
    EcmParams params{0.03, 0.04, 2500.0};
    CellState state;
    const CellState next = step(state, params, 1.0, 36.0, 1.0);
    REQUIRE(next.soc == Catch::Approx(0.01).epsilon(1e-12));
    REQUIRE_THROWS_AS(step(state, params, 1.0, 0.0, 1.0), Error);
    REQUIRE_THROWS_AS(step(state, params, 1.0, 1.0, 0.0), Error);
}

TEST_CASE("terminal voltage composes ocv, capacitor, and ohmic drop") {
    const auto surface = make_reference_surface();
    EcmParams params{0.03, 0.04, 2500.0};
    CellState state;
    state.soc = 0.6;

    SECTION("rest with empty capacitor reads the ocv") {
        REQUIRE(terminal_voltage(state, params, 0.0, surface, 1.0) ==
                Catch::Approx(eval_ocv(surface, 0.6, 1.0)).epsilon(1e-14));
    }
    SECTION("current step to zero jumps by -i0 r1") {
        const double v_loaded = terminal_voltage(state, params, 2.2, surface, 1.0);
        const double v_rest = terminal_voltage(state, params, 0.0, surface, 1.0);
        REQUIRE(v_rest - v_loaded == Catch::Approx(-2.2 * params.r1).epsilon(1e-12));
    }
    SECTION("voltage is linear in current at fixed state") {
        for (double i : {-2.0, -0.5, 0.7, 3.0}) {
            const double dv = terminal_voltage(state, params, i, surface, 1.0) -
                              terminal_voltage(state, params, 0.0, surface, 1.0);
            REQUIRE(dv == Catch::Approx(params.r1 * i).epsilon(1e-12));
        }
    }
}

TEST_CASE("rest segment matches the closed-form decay") {
    // Flat ocv isolates the capacitor: v(t) = ocv + uc0 e^(-t/tau)
    const auto surface = flat_surface(3.8);
    ParamSchedule schedule;
    schedule.base = EcmParams{0.03, 0.05, 1200.0};
    const double tau = schedule.base.tau();

    Profile profile{ProfileSegment::rest(300.0)};
    SimOptions options;
    options.start_soc = 0.5;
    options.start_uc = 0.044;
    const auto trace =
        simulate_profile(profile, reference_cell_spec(), schedule, surface, 1.0, {}, 1.0, options);

    for (std::size_t k = 0; k < trace.size(); ++k) {
        const double expected = 3.8 + 0.044 * std::exp(-trace.t[k] / tau);
        REQUIRE(trace.v[k] == Catch::Approx(expected).margin(1e-12));
    }
}

TEST_CASE("noise lands at the configured level and truth stays clean") {
    const auto surface = flat_surface(3.8);
    ParamSchedule schedule;
    Profile profile{ProfileSegment::rest(12000.0)};
    NoiseModel noise;
    noise.sigma_v = 0.15e-3;
    noise.seed = 99;

    const auto trace =
        simulate_profile(profile, reference_cell_spec(), schedule, surface, 1.0, noise, 1.0);
    REQUIRE(trace.size() >= 10000);

    double sq = 0.0;
    for (std::size_t k = 0; k < trace.size(); ++k) {
        const double resid = trace.v[k] - 3.8;  // uc = 0 throughout
        sq += resid * resid;
    }
    const double rms = std::sqrt(sq / static_cast<double>(trace.size()));
    REQUIRE(rms > 0.13e-3);
    REQUIRE(rms < 0.17e-3);

    const auto again =
        simulate_profile(profile, reference_cell_spec(), schedule, surface, 1.0, noise, 1.0);
    REQUIRE(std::equal(trace.v.begin(), trace.v.end(), again.v.begin()));
    for (double uc : trace.truth_uc) REQUIRE(uc == 0.0);
}

TEST_CASE("degenerate second pair reproduces the 1rc trace") {
    const auto surface = make_reference_surface();
    ParamSchedule schedule = reference_schedule(true);
    Profile profile{ProfileSegment::constant_current(400.0, 1.1), ProfileSegment::rest(200.0)};

    SimOptions one_rc;
    one_rc.start_soc = 0.5;
    SimOptions degenerate = one_rc;
    degenerate.two_rc = true;
    degenerate.r2_fraction = 1.0;   // second pair gets r = 0
    degenerate.tau_fraction = 1.0;

    const auto spec = reference_cell_spec();
    const auto a = simulate_profile(profile, spec, schedule, surface, 1.0, {}, 1.0, one_rc);
    const auto b = simulate_profile(profile, spec, schedule, surface, 1.0, {}, 1.0, degenerate);
    for (std::size_t k = 0; k < a.size(); ++k) REQUIRE(a.v[k] == Catch::Approx(b.v[k]).margin(1e-14));
}

TEST_CASE("rest keeps soc frozen and uc strictly decaying") {
    const auto surface = make_reference_surface();
    ParamSchedule schedule = reference_schedule(false);
    Profile profile{ProfileSegment::constant_current(600.0, 2.2), ProfileSegment::rest(400.0)};
    SimOptions options;
    options.start_soc = 0.5;

    const auto trace =
        simulate_profile(profile, reference_cell_spec(), schedule, surface, 0.9, {}, 1.0, options);
    bool in_rest = false;
    double rest_soc = 0.0, prev_uc = 0.0;
    for (std::size_t k = 0; k < trace.size(); ++k) {
        if (trace.i[k] == 0.0) {
            if (!in_rest) {
                in_rest = true;
                rest_soc = trace.truth_soc[k];
                prev_uc = trace.truth_uc[k];
                continue;
            }
            REQUIRE(trace.truth_soc[k] == rest_soc);
            REQUIRE(trace.truth_uc[k] < prev_uc);
            prev_uc = trace.truth_uc[k];
        }
    }
    REQUIRE(in_rest);
}

TEST_CASE("halving the sample step leaves the noiseless trace unchanged") {
    const auto surface = make_reference_surface();
    ParamSchedule schedule = reference_schedule(true);  // exactness needs constant params
    Profile profile{ProfileSegment::constant_current(300.0, 1.1), ProfileSegment::rest(150.0)};
    SimOptions options;
    options.start_soc = 0.55;

    const auto spec = reference_cell_spec();
    const auto coarse = simulate_profile(profile, spec, schedule, surface, 1.0, {}, 1.0, options);
    const auto fine = simulate_profile(profile, spec, schedule, surface, 1.0, {}, 0.5, options);
    for (std::size_t k = 0; k < coarse.size(); ++k) {
        REQUIRE(fine.t[2 * k] == coarse.t[k]);
        REQUIRE(std::abs(fine.v[2 * k] - coarse.v[k]) < 1e-9);
    }
}

TEST_CASE("cv segment holds the setpoint") {
    const auto surface = make_reference_surface();
    ParamSchedule schedule = reference_schedule(true);
    Profile profile{ProfileSegment::constant_voltage(400.0, 4.0)};
    SimOptions options;
    options.start_soc = 0.75;

    const auto trace =
        simulate_profile(profile, reference_cell_spec(), schedule, surface, 1.0, {}, 1.0, options);
    for (std::size_t k = 0; k < trace.size(); ++k)
        REQUIRE(trace.v[k] == Catch::Approx(4.0).margin(1e-9));
    // taper: current decreases as the cell fills
    REQUIRE(trace.i.back() < trace.i.front());

    SECTION("unreachable setpoint is an error") {
        Profile bad{ProfileSegment::constant_voltage(10.0, 5.5)};
        REQUIRE_THROWS_MATCHES(
            simulate_profile(bad, reference_cell_spec(), schedule, surface, 1.0, {}, 1.0, options),
            Error, Catch::Matchers::Predicate<Error>(
                       [](const Error& e) { return e.code() == Errc::simulation; }));
    }
}

TEST_CASE("incremental capacity profile layout") {
    const auto spec = reference_cell_spec();
    const auto profile = build_incremental_capacity_profile(0.5, spec);

    SECTION("cc segments last soc_step * 3600 / c_rate seconds") {
        REQUIRE(profile.front().kind == ProfileSegment::Kind::cc);
        REQUIRE(profile.front().duration_s == Catch::Approx(0.05 * 3600.0 / 0.5));
        REQUIRE(profile.front().value == Catch::Approx(0.5 * spec.q0_ah));
    }
    SECTION("pulses are 10 s of opposite sign") {
        int pulses = 0;
        for (const auto& seg : profile) {
            if (seg.kind == ProfileSegment::Kind::cc && seg.value < 0.0) {
                ++pulses;
                REQUIRE(seg.duration_s == 10.0);
            }
        }
        REQUIRE(pulses == 20);
    }
    SECTION("ends with a cv segment") {
        REQUIRE(profile.back().kind == ProfileSegment::Kind::cv);
    }
    SECTION("at least two rests fall between 55% and 77% soc") {
        // simulate and count rest onsets inside the band
        const auto surface = make_reference_surface();
        const auto schedule = reference_schedule(false);
        SimOptions options;
        options.start_soc = 0.0;
        const auto trace = simulate_profile(profile, spec, schedule, surface, 1.0, {}, 1.0, options);
        int rests_in_band = 0;
        for (std::size_t k = 1; k < trace.size(); ++k)
            if (trace.i[k] == 0.0 && trace.i[k - 1] != 0.0 && trace.truth_soc[k] >= 0.55 &&
                trace.truth_soc[k] <= 0.77)
                ++rests_in_band;
        REQUIRE(rests_in_band >= 2);
    }
}
