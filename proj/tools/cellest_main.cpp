// Command-line front end: simulation, detection, estimation, tracking, the
// UKF comparison, scenario tables, sensitivity sweeps, convergence maps, and
// the benchmark harness.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cellest/baseline_ukf.hpp"
#include "cellest/io.hpp"
#include "cellest/pipeline.hpp"
#include "cellest/synthetic.hpp"
#include "cellest/tracking.hpp"

using namespace cellest;

namespace {

OcvSurface load_surface_or_reference(const std::string& path, double temperature_c) {
    return path.empty() ? make_reference_surface(temperature_c) : read_surface_json(path);
}

std::vector<double> parse_list(const std::string& csv) {
    std::vector<double> values;
    std::stringstream stream(csv);
    std::string item;
    while (std::getline(stream, item, ',')) values.push_back(std::stod(item));
    return values;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw Error(Errc::input_parse, "cannot open " + path + " for writing");
    out << text;
}

struct SimulateArgs {
    double c_rate = 0.5;
    double soh = 1.0;
    double temperature_c = 25.0;
    double sample_dt = 1.0;
    double start_soc = 0.05;
    double sigma_v = 0.15e-3;
    double sigma_i = 0.1e-3;
    std::uint64_t seed = 1;
    bool two_rc = false;
    bool constant_params = false;
    std::string surface_path;
    std::string out = "trace.csv";
    std::string truth_out;
};

int cmd_simulate(const SimulateArgs& args) {
    const auto spec = reference_cell_spec();
    const auto surface = load_surface_or_reference(args.surface_path, args.temperature_c);
    const auto profile = build_incremental_capacity_profile(
        args.c_rate, spec, 180.0, PulseSpec{-spec.q0_ah, 10.0}, 0.05, args.start_soc, args.soh);

    NoiseModel noise;
    noise.sigma_v = args.sigma_v;
    noise.sigma_i = args.sigma_i;
    noise.seed = args.seed;

    SimOptions options;
    options.two_rc = args.two_rc;
    options.temperature_c = args.temperature_c;
    options.start_soc = args.start_soc;

    const auto trace = simulate_profile(profile, spec, reference_schedule(args.constant_params),
                                        surface, args.soh, noise, args.sample_dt, options);
    write_trace_csv(trace, args.out);
    if (!args.truth_out.empty()) write_truth_csv(trace, args.truth_out);
    std::fprintf(stderr, "simulate: %zu samples -> %s\n", trace.size(), args.out.c_str());
    return 0;
}

struct FitSurfaceArgs {
    std::vector<std::string> samples;  // path@soh entries
    double temperature_c = 25.0;
    std::string out = "surface.json";
};

int cmd_fit_surface(const FitSurfaceArgs& args) {
    if (args.samples.empty()) throw Error(Errc::precondition, "need at least one --samples path@soh");
    OcvSurface surface;
    surface.temperature_c = args.temperature_c;

    std::vector<std::pair<double, PolyCoeffs>> levels;
    for (const auto& entry : args.samples) {
        const auto at = entry.rfind('@');
        if (at == std::string::npos)
            throw Error(Errc::precondition, "--samples expects path@soh, got " + entry);
        const std::string path = entry.substr(0, at);
        const double soh = std::stod(entry.substr(at + 1));
        const auto fit = fit_ocv_poly(read_ocv_samples_csv(path));
        std::fprintf(stderr, "fit-surface: %s soh %.3f residual rms %.3g V\n", path.c_str(), soh,
                     fit.residual_rms);
        levels.emplace_back(soh, fit.coeffs);
    }
    std::sort(levels.begin(), levels.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [soh, coeffs] : levels) surface.grid.push_back({soh, coeffs});
    surface.validate();
    write_surface_json(surface, args.out);
    return 0;
}

struct DetectArgs {
    std::string trace;
    double v_threshold = 3.9;
    double i_zero_band = 0.01;
    double x3 = 120.0;
    std::string out;
};

int cmd_detect(const DetectArgs& args) {
    const auto trace = read_trace_csv(args.trace);
    DetectionConfig config;
    config.v_threshold = args.v_threshold;
    config.i_zero_band = args.i_zero_band;
    config.x3 = args.x3;

    const auto windows = detect_relaxations(trace, config);
    Json out = Json::array();
    for (const auto& w : windows)
        out.push_back({{"t0_s", w.window.t0},
                       {"i0_a", w.window.i0},
                       {"delta_u_v", w.window.delta_u},
                       {"mode", w.window.mode == RelaxationWindow::Mode::after_cc ? "after_cc"
                                                                                  : "after_cv"},
                       {"samples", w.window.samples.size()},
                       {"onset_index", w.onset_index}});
    write_text(args.out, out.dump(2) + "\n");
    return 0;
}

struct EstimateArgs {
    std::string trace;
    std::string surface_path;
    std::string cell_id = "cell";
    double x1 = 10.0;
    double x3 = 120.0;
    double v_threshold = 3.9;
    bool dr_comp = false;
    std::string out;
};

int cmd_estimate(const EstimateArgs& args) {
    const auto trace = read_trace_csv(args.trace);
    const auto spec = reference_cell_spec();
    const auto surface = load_surface_or_reference(args.surface_path, 25.0);

    DetectionConfig detection;
    detection.x3 = args.x3;
    detection.v_threshold = args.v_threshold;
    const auto windows = detect_relaxations(trace, detection);

    EstimateOptions options;
    options.x1 = args.x1;
    options.x3 = args.x3;

    Json record;
    if (args.dr_comp) {
        const auto [w1, w2] = first_charge_pair(windows);
        const auto result = estimate_with_dr_compensation(
            w1->window, w2->window, gap_between(trace, *w1, *w2), spec, surface, options, options);
        record = estimate_record_json(args.cell_id, w1->window.t0, result.state, result.params1,
                                      "dr_comp");
        record["d_rsum_dt_ohm_per_s"] = result.d_rsum_dt;
    } else {
        const DetectedWindow* w1 = nullptr;
        for (const auto& w : windows)
            if (w.window.i0 > 0.0) {  // charge-side, CC or CV tail
                w1 = &w;
                break;
            }
        if (!w1) throw Error(Errc::detection, "no charge-side relaxation found");
        const auto result = estimate_from_relaxation(w1->window, spec, surface, options);
        record = estimate_record_json(args.cell_id, w1->window.t0, result.state, result.params,
                                      "plain");
    }
    write_text(args.out, record.dump(2) + "\n");
    return 0;
}

struct TrackArgs {
    std::string trace;
    std::string surface_path;
    std::string estimate_path;  // JSON estimate record for the reference cell
    std::string soh_list = "1.0";
    std::string soc0_list;
    std::size_t reference_index = 0;
    std::string out = "track.csv";
};

int cmd_track(const TrackArgs& args) {
    const auto trace = read_trace_csv(args.trace);
    const auto spec = reference_cell_spec();
    const auto surface = load_surface_or_reference(args.surface_path, 25.0);

    std::ifstream est_in(args.estimate_path);
    if (!est_in) throw Error(Errc::input_parse, "cannot open " + args.estimate_path);
    Json est;
    est_in >> est;

    ParamEstimate params;
    params.r1 = est.at("r1_ohm").get<double>();
    params.r2 = est.at("r2_ohm").get<double>();
    params.c = est.at("c_f").get<double>();
    params.tau = params.r2 * params.c;

    PackSnapshot snapshot;
    snapshot.soh = parse_list(args.soh_list);
    snapshot.soc0 = args.soc0_list.empty()
                        ? std::vector<double>(snapshot.soh.size(), est.at("soc").get<double>())
                        : parse_list(args.soc0_list);
    snapshot.reference_index = args.reference_index;
    snapshot.validate();
    const double soh_ref = snapshot.soh[snapshot.reference_index];

    EkfState state = make_default_ekf(snapshot.soc0[snapshot.reference_index], 0.0, trace.t[0]);

    std::ofstream out(args.out);
    if (!out) throw Error(Errc::input_parse, "cannot open " + args.out + " for writing");
    out << "t_s,soc_ref";
    for (std::size_t j = 0; j < snapshot.soh.size(); ++j) out << ",soc_cell_" << j + 1;
    out << "\n";

    for (std::size_t k = 1; k < trace.size(); ++k) {
        Measurement meas{trace.i[k], trace.v[k], trace.temp[k], trace.t[k]};
        state = ekf_step(state, meas, params, soh_ref, spec, surface);
        const auto pack = propagate_pack(snapshot, state.soc());
        out << trace.t[k] << ',' << state.soc();
        for (double soc : pack) out << ',' << soc;
        out << "\n";
    }
    std::fprintf(stderr, "track: %zu steps -> %s\n", trace.size() - 1, args.out.c_str());
    return 0;
}

struct CompareUkfArgs {
    std::string trace;
    std::string truth;
    std::string surface_path;
    std::string q_scales = "0.1,1.0,10.0";
    std::string out;
};

int cmd_compare_ukf(const CompareUkfArgs& args) {
    const auto trace = read_trace_csv(args.trace, args.truth);
    const auto spec = reference_cell_spec();
    const auto surface = load_surface_or_reference(args.surface_path, 25.0);

    const auto windows = detect_relaxations(trace, {});
    const auto [w1, w2] = first_charge_pair(windows);

    const auto t_start = std::chrono::steady_clock::now();
    const auto proposed = estimate_with_dr_compensation(
        w1->window, w2->window, gap_between(trace, *w1, *w2), spec, surface);
    const double proposed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
            .count();

    Json ukf_runs = Json::array();
    const auto setup = prepare_ukf_protocol(trace, spec, surface);
    for (double scale : parse_list(args.q_scales)) {
        UkfProtocolSetup scaled = setup;
        scaled.init.q_process *= scale;
        const auto result = run_prepared_ukf(scaled, trace, spec, surface);
        Json run{{"q_scale", scale},
                 {"soc", result.soc},
                 {"soh", result.soh},
                 {"runtime_ms", result.runtime_ms},
                 {"steps", result.steps}};
        if (!args.truth.empty()) {
            run["soc_error"] = result.soc - trace.truth_soc[result.end_index];
            run["soh_error"] = result.soh - trace.truth_soh[result.end_index];
        }
        ukf_runs.push_back(run);
    }

    Json out{{"proposed",
              {{"soc", proposed.state.soc},
               {"soh", proposed.state.soh},
               {"runtime_ms", proposed_ms},
               {"method", "dr_comp"}}},
             {"ukf", ukf_runs}};
    if (!args.truth.empty()) {
        out["proposed"]["soc_error"] = proposed.state.soc - trace.truth_soc[w1->onset_index];
        out["proposed"]["soh_error"] = proposed.state.soh - trace.truth_soh[w1->onset_index];
    }
    write_text(args.out, out.dump(2) + "\n");
    return 0;
}

struct ScenariosArgs {
    std::string config_path;  // single-scenario JSON mode
    std::string group = "1rc";
    std::string rates = "0.2,0.5,1.0";
    std::size_t cells = 6;
    std::size_t soh_levels = 5;
    std::uint64_t seed = 42;
    double sample_dt = 1.0;
    std::string out;
};

int cmd_scenarios(const ScenariosArgs& args) {
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) throw Error(Errc::input_parse, "cannot open " + args.config_path);
        Json j;
        in >> j;
        const auto spec = scenario_spec_from_json(j);
        RunConfig config;
        config.start_soc = 0.05;
        config.sample_dt = args.sample_dt;
        const auto report = run_scenario(spec, args.cells, args.soh_levels, config);
        write_text(args.out, report_to_json(report).dump(2) + "\n");
        return 0;
    }

    DataSource source;
    if (args.group == "1rc") {
        source = DataSource::sim_1rc;
    } else if (args.group == "2rc") {
        source = DataSource::sim_2rc;
    } else {
        throw Error(Errc::precondition, "scenario group must be 1rc or 2rc");
    }

    // Cumulative simplification ladder, top to bottom easier.
    struct Row {
        const char* name;
        void (*apply)(ScenarioToggles&);
    };
    const std::vector<Row> ladder = {
        {"default", [](ScenarioToggles&) {}},
        {"known_capacitor_voltage", [](ScenarioToggles& t) { t.known_capacitor_voltage = true; }},
        {"no_voltage_noise", [](ScenarioToggles& t) { t.no_voltage_noise = true; }},
        {"fixed_rc_parameters", [](ScenarioToggles& t) { t.fixed_rc_parameters = true; }},
        {"accurate_dv_dt", [](ScenarioToggles& t) { t.accurate_dv_dt = true; }},
        {"fixed_ocv_curve", [](ScenarioToggles& t) { t.fixed_ocv_curve = true; }},
        {"known_soc", [](ScenarioToggles& t) { t.known_soc = true; }},
    };

    const auto rates = parse_list(args.rates);
    std::ostringstream csv;
    csv << "scenario";
    for (double rate : rates) csv << ",soc_rmse_" << rate << "c,soh_rmse_" << rate << "c";
    csv << "\n";

    ScenarioToggles toggles;
    for (const auto& row : ladder) {
        row.apply(toggles);
        csv << row.name;
        for (double rate : rates) {
            ScenarioSpec spec;
            spec.data_source = source;
            spec.c_rate = rate;
            spec.seed = args.seed;
            spec.toggles = toggles;
            RunConfig config;
            config.start_soc = 0.05;
            config.sample_dt = args.sample_dt;
            const auto report = run_scenario(spec, args.cells, args.soh_levels, config);
            csv << ',' << report.soc_rmse << ',' << report.soh_rmse;
            std::fprintf(stderr, "scenarios: %s %.1fC soc=%.4f soh=%.4f (failures %zu)\n", row.name,
                         rate, report.soc_rmse, report.soh_rmse, report.failures);
        }
        csv << "\n";
    }
    write_text(args.out, csv.str());
    return 0;
}

struct SensitivityArgs {
    double tau = 72.0;
    double x1 = 10.0;
    double x3_min = 30.0;
    double x3_max = 720.0;
    int points = 50;
    std::string out;
};

int cmd_sensitivity(const SensitivityArgs& args) {
    std::vector<SensitivitySweepRow> rows;
    for (int k = 0; k < args.points; ++k) {
        SensitivitySweepRow row;
        row.x1 = args.x1;
        row.x3 = args.x3_min + (args.x3_max - args.x3_min) * k / std::max(1, args.points - 1);
        row.x2 = 0.5 * (row.x1 + row.x3);
        row.tau = args.tau;
        row.f = noise_amplification_f(row.x1, row.x2, row.x3, row.tau);
        rows.push_back(row);
    }
    if (args.out.empty()) {
        std::printf("x1,x2,x3,tau,f,sqrt_f\n");
        for (const auto& r : rows)
            std::printf("%g,%g,%g,%g,%g,%g\n", r.x1, r.x2, r.x3, r.tau, r.f, std::sqrt(r.f));
    } else {
        write_sensitivity_csv(rows, args.out);
    }
    return 0;
}

struct MapArgs {
    std::string surface_path;
    int soc_points = 101;
    double soh_min = 0.8;
    double soh_max = 1.0;
    int soh_points = 21;
    std::string out = "map.csv";
};

int cmd_convergence_map(const MapArgs& args) {
    const auto surface = load_surface_or_reference(args.surface_path, 25.0);
    std::vector<double> soc_grid, soh_grid;
    for (int k = 0; k < args.soc_points; ++k)
        soc_grid.push_back(static_cast<double>(k) / (args.soc_points - 1));
    for (int k = 0; k < args.soh_points; ++k)
        soh_grid.push_back(args.soh_min +
                           (args.soh_max - args.soh_min) * k / std::max(1, args.soh_points - 1));

    const auto cells = convergence_map(surface, soc_grid, soh_grid);
    write_convergence_map_csv(cells, args.out);
    std::fprintf(stderr, "convergence-map: %zu cells -> %s\n", cells.size(), args.out.c_str());
    return 0;
}

struct BenchmarkArgs {
    std::string methods = "plain,dr_comp,ukf";
    int repetitions = 120;
    int traces = 3;
    double c_rate = 0.5;
    double sample_dt = 0.25;  // cycler rate changes the UKF's workload
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_benchmark(const BenchmarkArgs& args) {
    const auto spec = reference_cell_spec();
    const auto surface = make_reference_surface();
    const auto schedule = reference_schedule(false);

    std::vector<CellTrace> traces;
    for (int k = 0; k < args.traces; ++k) {
        const double soh = 0.85 + 0.05 * k;
        const auto profile = build_incremental_capacity_profile(
            args.c_rate, spec, 180.0, PulseSpec{-spec.q0_ah, 10.0}, 0.05, 0.05, soh);
        NoiseModel noise;
        noise.sigma_v = 0.15e-3;
        noise.sigma_i = 0.1e-3;
        noise.seed = args.seed + static_cast<std::uint64_t>(k);
        SimOptions options;
        options.start_soc = 0.05;
        traces.push_back(
            simulate_profile(profile, spec, schedule, surface, soh, noise, args.sample_dt, options));
    }

    std::vector<Method> methods;
    std::stringstream stream(args.methods);
    std::string item;
    while (std::getline(stream, item, ',')) {
        if (item == "plain") methods.push_back(Method::plain);
        else if (item == "dr_comp") methods.push_back(Method::dr_comp);
        else if (item == "ukf") methods.push_back(Method::ukf);
        else throw Error(Errc::precondition, "unknown method " + item);
    }

    BenchmarkConfig config;
    config.repetitions = args.repetitions;
    const auto rows = benchmark(methods, traces, spec, surface, config);

    std::ostringstream csv;
    csv << "method,median_ms,ratio\n";
    for (const auto& row : rows)
        csv << row.method << ',' << row.median_ms << ',' << row.ratio << "\n";
    write_text(args.out, csv.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"battery SOC/SOH estimation toolkit"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "simulate an incremental-capacity charge");
    simulate->add_option("--c-rate", sim.c_rate);
    simulate->add_option("--soh", sim.soh);
    simulate->add_option("--temperature", sim.temperature_c);
    simulate->add_option("--sample-dt", sim.sample_dt);
    simulate->add_option("--start-soc", sim.start_soc);
    simulate->add_option("--sigma-v", sim.sigma_v);
    simulate->add_option("--sigma-i", sim.sigma_i);
    simulate->add_option("--seed", sim.seed);
    simulate->add_flag("--two-rc", sim.two_rc);
    simulate->add_flag("--constant-params", sim.constant_params);
    simulate->add_option("--surface", sim.surface_path);
    simulate->add_option("--out", sim.out);
    simulate->add_option("--truth-out", sim.truth_out);

    FitSurfaceArgs fit;
    auto* fit_surface = app.add_subcommand("fit-surface", "fit degree-9 OCV polynomials per SOH level");
    fit_surface->add_option("--samples", fit.samples, "ocv sample csv as path@soh (repeatable)");
    fit_surface->add_option("--temperature", fit.temperature_c);
    fit_surface->add_option("--out", fit.out);

    DetectArgs det;
    auto* detect = app.add_subcommand("detect", "list qualifying relaxations in a trace");
    detect->add_option("--trace", det.trace)->required();
    detect->add_option("--v-threshold", det.v_threshold);
    detect->add_option("--i-zero-band", det.i_zero_band);
    detect->add_option("--x3", det.x3);
    detect->add_option("--out", det.out);

    EstimateArgs est;
    auto* estimate = app.add_subcommand("estimate", "SOC/SOH estimate from a trace");
    estimate->add_option("--trace", est.trace)->required();
    estimate->add_option("--surface", est.surface_path);
    estimate->add_option("--cell-id", est.cell_id);
    estimate->add_option("--x1", est.x1);
    estimate->add_option("--x3", est.x3);
    estimate->add_option("--v-threshold", est.v_threshold);
    estimate->add_flag("--dr-comp", est.dr_comp);
    estimate->add_option("--out", est.out);

    TrackArgs trk;
    auto* track = app.add_subcommand("track", "EKF SOC tracking with pack propagation");
    track->add_option("--trace", trk.trace)->required();
    track->add_option("--surface", trk.surface_path);
    track->add_option("--estimate", trk.estimate_path)->required();
    track->add_option("--soh-list", trk.soh_list);
    track->add_option("--soc0-list", trk.soc0_list);
    track->add_option("--reference-index", trk.reference_index);
    track->add_option("--out", trk.out);

    CompareUkfArgs cmp;
    auto* compare = app.add_subcommand("compare-ukf", "proposed estimator vs UKF on one trace");
    compare->add_option("--trace", cmp.trace)->required();
    compare->add_option("--truth", cmp.truth);
    compare->add_option("--surface", cmp.surface_path);
    compare->add_option("--q-scales", cmp.q_scales);
    compare->add_option("--out", cmp.out);

    ScenariosArgs scn;
    auto* scenarios = app.add_subcommand("scenarios", "simplification-ladder error table");
    scenarios->add_option("--config", scn.config_path, "single scenario spec json");
    scenarios->add_option("--group", scn.group);
    scenarios->add_option("--rates", scn.rates);
    scenarios->add_option("--cells", scn.cells);
    scenarios->add_option("--soh-levels", scn.soh_levels);
    scenarios->add_option("--seed", scn.seed);
    scenarios->add_option("--sample-dt", scn.sample_dt);
    scenarios->add_option("--out", scn.out);

    SensitivityArgs sens;
    auto* sensitivity = app.add_subcommand("sensitivity", "noise amplification sweep");
    sensitivity->add_option("--tau", sens.tau);
    sensitivity->add_option("--x1", sens.x1);
    sensitivity->add_option("--x3-min", sens.x3_min);
    sensitivity->add_option("--x3-max", sens.x3_max);
    sensitivity->add_option("--points", sens.points);
    sensitivity->add_option("--out", sens.out);

    MapArgs map;
    auto* convergence = app.add_subcommand("convergence-map", "|L| and iteration error grid");
    convergence->add_option("--surface", map.surface_path);
    convergence->add_option("--soc-points", map.soc_points);
    convergence->add_option("--soh-min", map.soh_min);
    convergence->add_option("--soh-max", map.soh_max);
    convergence->add_option("--soh-points", map.soh_points);
    convergence->add_option("--out", map.out);

    BenchmarkArgs bench;
    auto* benchmark_cmd = app.add_subcommand("benchmark", "method runtime comparison");
    benchmark_cmd->add_option("--methods", bench.methods);
    benchmark_cmd->add_option("--reps", bench.repetitions);
    benchmark_cmd->add_option("--traces", bench.traces);
    benchmark_cmd->add_option("--c-rate", bench.c_rate);
    benchmark_cmd->add_option("--sample-dt", bench.sample_dt);
    benchmark_cmd->add_option("--seed", bench.seed);
    benchmark_cmd->add_option("--out", bench.out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return cmd_simulate(sim);
        if (fit_surface->parsed()) return cmd_fit_surface(fit);
        if (detect->parsed()) return cmd_detect(det);
        if (estimate->parsed()) return cmd_estimate(est);
        if (track->parsed()) return cmd_track(trk);
        if (compare->parsed()) return cmd_compare_ukf(cmp);
        if (scenarios->parsed()) return cmd_scenarios(scn);
        if (sensitivity->parsed()) return cmd_sensitivity(sens);
        if (convergence->parsed()) return cmd_convergence_map(map);
        if (benchmark_cmd->parsed()) return cmd_benchmark(bench);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
