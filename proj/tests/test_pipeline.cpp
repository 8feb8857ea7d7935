#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cellest/io.hpp"
#include "cellest/pipeline.hpp"

using namespace cellest;

namespace {

CellTrace half_charge_trace(double c_rate, double soh_true, double sigma_v, std::uint64_t seed) {
    const auto spec = reference_cell_spec();
    const auto profile = build_incremental_capacity_profile(
        c_rate, spec, 180.0, PulseSpec{-spec.q0_ah, 10.0}, 0.05, 0.05, soh_true);
    NoiseModel noise;
    noise.sigma_v = sigma_v;
    noise.sigma_i = 0.1e-3;
    noise.seed = seed;
    SimOptions options;
    options.start_soc = 0.05;
    return simulate_profile(profile, spec, reference_schedule(false), make_reference_surface(),
                            soh_true, noise, 1.0, options);
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("detection finds in-band charge windows on the standard profile") {
    const auto trace = half_charge_trace(0.5, 0.9, 0.15e-3, 3);
    const auto windows = detect_relaxations(trace, {});
    REQUIRE(windows.size() >= 2);

    const auto [w1, w2] = first_charge_pair(windows);
    for (const auto* w : {w1, w2}) {
        const double soc = trace.truth_soc[w->onset_index];
        REQUIRE(soc >= 0.55);
        REQUIRE(soc <= 0.77);
    }
}

TEST_CASE("detection soundness: every window satisfies its predicates on the raw trace") {
    const auto trace = half_charge_trace(0.5, 0.95, 0.15e-3, 9);
    DetectionConfig config;
    const auto windows = detect_relaxations(trace, config);
    for (const auto& w : windows) {
        REQUIRE(trace.v[w.onset_index] > config.v_threshold);
        for (std::size_t k = w.onset_index; k < w.end_index; ++k)
            REQUIRE(std::abs(trace.i[k]) <= config.i_zero_band);
        REQUIRE(w.window.span() >= config.x3);
        // 50 pre-onset samples of same-sign current beyond the zero band
        for (std::size_t k = w.onset_index - 50; k < w.onset_index; ++k) {
            REQUIRE(std::abs(trace.i[k]) > config.i_zero_band);
            REQUIRE(trace.i[k] * trace.i[w.onset_index - 1] > 0.0);
        }
    }
}

TEST_CASE("detection failure modes") {
    SECTION("trace never crossing the voltage gate") {
        const auto spec = reference_cell_spec();
        Profile profile{ProfileSegment::constant_current(900.0, 1.1), ProfileSegment::rest(300.0)};
        SimOptions options;
        options.start_soc = 0.10;  // stays well below 3.9 V
        const auto trace = simulate_profile(profile, spec, reference_schedule(false),
                                            make_reference_surface(), 1.0, {}, 1.0, options);
        REQUIRE_THROWS_MATCHES(detect_relaxations(trace, {}), Error,
                               Catch::Matchers::Predicate<Error>([](const Error& e) {
                                   return e.code() == Errc::detection;
                               }));
    }
    SECTION("zero current band finds nothing in noisy current") {
        const auto trace = half_charge_trace(0.5, 0.9, 0.15e-3, 5);
        DetectionConfig config;
        config.i_zero_band = 0.0;  // noise floor leaves no exact zeros
        REQUIRE_THROWS_AS(detect_relaxations(trace, config), Error);
    }
}

TEST_CASE("scenario reports are deterministic for a fixed seed") {
    ScenarioSpec spec;
    spec.data_source = DataSource::sim_1rc;
    spec.c_rate = 0.5;
    spec.seed = 77;
    RunConfig config;
    config.start_soc = 0.05;

    const auto a = run_scenario(spec, 2, 2, config);
    const auto b = run_scenario(spec, 2, 2, config);
    REQUIRE(report_to_json(a, false).dump() == report_to_json(b, false).dump());
}

TEST_CASE("scenario toggles reproduce the exact-recovery rows quickly") {
    ScenarioSpec spec;
    spec.data_source = DataSource::sim_1rc;
    spec.c_rate = 0.2;
    spec.seed = 1;
    spec.toggles.no_voltage_noise = true;
    spec.toggles.fixed_rc_parameters = true;
    spec.toggles.known_capacitor_voltage = true;
    spec.toggles.accurate_dv_dt = true;
    spec.toggles.fixed_ocv_curve = true;

    RunConfig config;
    config.start_soc = 0.55;
    config.sample_dt = 0.1;
    config.sigma_i = 0.0;
    config.soh_lo = 0.9;
    config.soh_hi = 1.0;
    config.detection.v_threshold = 3.93;

    const auto report = run_scenario(spec, 1, 2, config);
    REQUIRE(report.failures == 0);
    REQUIRE(report.soc_rmse < 1e-4);
    REQUIRE(report.soh_rmse < 1e-4);
}

TEST_CASE("experiment scenarios reject simulation-only toggles") {
    ScenarioSpec spec;
    spec.data_source = DataSource::experiment_csv;
    spec.trace_csv = "unused.csv";
    spec.toggles.no_voltage_noise = true;
    REQUIRE_THROWS_AS(run_scenario(spec, 1, 1, {}), Error);

    SECTION("truth-dependent toggles need the sidecar") {
        ScenarioSpec known;
        known.data_source = DataSource::experiment_csv;
        known.trace_csv = "unused.csv";
        known.toggles.known_soc = true;
        REQUIRE_THROWS_AS(run_scenario(known, 1, 1, {}), Error);
    }
}

TEST_CASE("trace csv round trip and ingestion") {
    const auto trace = half_charge_trace(1.0, 0.9, 0.15e-3, 13);
    const auto trace_path = temp_file("cellest_trace.csv");
    const auto truth_path = temp_file("cellest_truth.csv");
    write_trace_csv(trace, trace_path.string());
    write_truth_csv(trace, truth_path.string());

    const auto loaded = read_trace_csv(trace_path.string(), truth_path.string());
    REQUIRE(loaded.size() == trace.size());
    REQUIRE(loaded.v == trace.v);
    REQUIRE(loaded.truth_soc == trace.truth_soc);

    SECTION("experiment scenario runs on the saved files") {
        ScenarioSpec spec;
        spec.data_source = DataSource::experiment_csv;
        spec.trace_csv = trace_path.string();
        spec.truth_csv = truth_path.string();
        const auto report = run_scenario(spec, 1, 1, {});
        REQUIRE(report.failures == 0);
        REQUIRE(report.records.size() == 1);
        REQUIRE(std::abs(report.records[0].soh_error) < 0.4);
    }
}

TEST_CASE("malformed csv reports row and field") {
    const auto path = temp_file("cellest_bad.csv");
    {
        std::ofstream out(path);
        out << "t_s,i_a,v_v,temp_c\n";
        out << "0,1.0,3.8,25\n";
        out << "1,1.0,oops,25\n";
    }
    try {
        read_trace_csv(path.string());
        FAIL("expected parse error");
    } catch (const Error& e) {
        REQUIRE(e.code() == Errc::input_parse);
        REQUIRE(std::string(e.what()).find("row 3") != std::string::npos);
        REQUIRE(std::string(e.what()).find("field 3") != std::string::npos);
    }

    SECTION("wrong column count") {
        std::ofstream out(path);
        out << "t_s,i_a,v_v,temp_c\n";
        out << "0,1.0,3.8\n";
        out.close();
        REQUIRE_THROWS_AS(read_trace_csv(path.string()), Error);
    }
}

TEST_CASE("ocv sample csv feeds the polynomial fit") {
    const auto path = temp_file("cellest_ocv_samples.csv");
    {
        std::ofstream out(path);
        out.precision(17);
        out << "soc,ocv_volts\n";
        for (int k = 0; k <= 40; ++k) {
            const double soc = k / 40.0;
            out << soc << ',' << reference_ocv(soc, 0.9) << "\n";
        }
    }
    const auto samples = read_ocv_samples_csv(path.string());
    REQUIRE(samples.size() == 41);
    const auto fit = fit_ocv_poly(samples);
    REQUIRE(fit.residual_rms < 1e-9);  // the reference curve is a degree-9 polynomial
    REQUIRE(fit.coeffs.eval(0.65) == Catch::Approx(reference_ocv(0.65, 0.9)).margin(1e-7));
}

TEST_CASE("worker threads leave the report identical") {
    ScenarioSpec spec;
    spec.data_source = DataSource::sim_1rc;
    spec.c_rate = 1.0;
    spec.seed = 55;
    RunConfig config;
    config.start_soc = 0.05;

    const auto serial = run_scenario(spec, 2, 2, config);
    setenv("CELLEST_THREADS", "4", 1);
    const auto parallel = run_scenario(spec, 2, 2, config);
    unsetenv("CELLEST_THREADS");
    REQUIRE(report_to_json(serial, false).dump() == report_to_json(parallel, false).dump());
}

TEST_CASE("surface json round trip") {
    const auto surface = make_reference_surface();
    const auto path = temp_file("cellest_surface.json");
    write_surface_json(surface, path.string());
    const auto loaded = read_surface_json(path.string());
    REQUIRE(loaded.grid.size() == surface.grid.size());
    for (std::size_t k = 0; k < surface.grid.size(); ++k) {
        REQUIRE(loaded.grid[k].soh == surface.grid[k].soh);
        REQUIRE(loaded.grid[k].coeffs.a == surface.grid[k].coeffs.a);
    }
}

TEST_CASE("estimate record carries the contract fields") {
    SocSohEstimate state;
    state.soc = 0.66;
    state.soh = 0.91;
    state.converged = true;
    state.iterations = 7;
    state.docv_dt = 5.5e-5;
    ParamEstimate params;
    params.r1 = 0.0292;
    params.r2 = 0.0212;
    params.c = 3430.0;
    params.ocv = 3.91;

    const Json rec = estimate_record_json("cell-3", 1234.0, state, params, "dr_comp");
    for (const char* key : {"cell_id", "t0_s", "soc", "soh", "r1_ohm", "r2_ohm", "c_f", "ocv_v",
                            "docv_dt_vps", "iterations", "converged", "method"})
        REQUIRE(rec.contains(key));
    REQUIRE(rec["method"] == "dr_comp");
}

TEST_CASE("cumulative simplifications never raise the soh error beyond jitter") {
    RunConfig config;
    config.start_soc = 0.05;
    ScenarioToggles toggles;
    const std::vector<void (*)(ScenarioToggles&)> ladder = {
        [](ScenarioToggles&) {},
        [](ScenarioToggles& t) { t.known_capacitor_voltage = true; },
        [](ScenarioToggles& t) { t.no_voltage_noise = true; },
        [](ScenarioToggles& t) { t.fixed_rc_parameters = true; },
        [](ScenarioToggles& t) { t.accurate_dv_dt = true; },
        [](ScenarioToggles& t) { t.fixed_ocv_curve = true; },
        [](ScenarioToggles& t) { t.known_soc = true; },
    };
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& apply : ladder) {
        apply(toggles);
        ScenarioSpec spec;
        spec.data_source = DataSource::sim_1rc;
        spec.c_rate = 0.5;
        spec.seed = 1234;  // paired seeds across the ladder
        spec.toggles = toggles;
        const auto report = run_scenario(spec, 4, 3, config);
        REQUIRE(report.failures == 0);
        REQUIRE(report.soh_rmse <= prev * 1.3 + 2e-4);
        prev = report.soh_rmse;
    }
    REQUIRE(prev < 1e-3);  // the fully simplified row is near exact
}

TEST_CASE("scenario specs load from json") {
    const Json j = {{"data_source", "sim_2rc"},
                    {"c_rate", 1.0},
                    {"seed", 9},
                    {"toggles", {{"known_capacitor_voltage", true}, {"no_voltage_noise", true}}}};
    const auto spec = scenario_spec_from_json(j);
    REQUIRE(spec.data_source == DataSource::sim_2rc);
    REQUIRE(spec.c_rate == 1.0);
    REQUIRE(spec.toggles.known_capacitor_voltage);
    REQUIRE(spec.toggles.no_voltage_noise);
    REQUIRE_FALSE(spec.toggles.known_soc);

    REQUIRE_THROWS_AS(scenario_spec_from_json(Json{{"data_source", "valve"}}), Error);
}

TEST_CASE("benchmark reports a unit ratio for a single method") {
    const auto trace = half_charge_trace(0.5, 0.9, 0.15e-3, 21);
    BenchmarkConfig config;
    config.repetitions = 100;
    config.warmup = 5;
    const auto rows = benchmark({Method::plain}, {trace}, reference_cell_spec(),
                                make_reference_surface(), config);
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].ratio == 1.0);
    REQUIRE(rows[0].median_ms > 0.0);

    SECTION("too few repetitions fail the precondition") {
        BenchmarkConfig thin;
        thin.repetitions = 10;
        REQUIRE_THROWS_AS(benchmark({Method::plain}, {trace}, reference_cell_spec(),
                                    make_reference_surface(), thin),
                          Error);
    }
}
