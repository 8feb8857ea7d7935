#pragma once

// Scenario/ablation runner over simulated (or ingested) incremental-capacity
// charge data, plus the wall-clock benchmark harness.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cellest/baseline_ukf.hpp"
#include "cellest/detect.hpp"
#include "cellest/ecm_sim.hpp"
#include "cellest/errors.hpp"
#include "cellest/io.hpp"
#include "cellest/relax_estimator.hpp"
#include "cellest/synthetic.hpp"

namespace cellest {

enum class DataSource { experiment_csv, sim_1rc, sim_2rc };

inline const char* data_source_name(DataSource s) {
    switch (s) {
        case DataSource::experiment_csv: return "experiment_csv";
        case DataSource::sim_1rc: return "sim_1rc";
        case DataSource::sim_2rc: return "sim_2rc";
    }
    return "unknown";
}

struct ScenarioToggles {
    bool known_capacitor_voltage = false;
    bool no_voltage_noise = false;
    bool fixed_rc_parameters = false;
    bool accurate_dv_dt = false;
    bool fixed_ocv_curve = false;
    bool known_soc = false;
};

struct ScenarioSpec {
    DataSource data_source = DataSource::sim_1rc;
    double c_rate = 0.5;
    double temperature_c = 25.0;
    ScenarioToggles toggles;
    std::uint64_t seed = 1;
    std::string trace_csv;  // experiment_csv source only
    std::string truth_csv;

    void validate() const {
        if (!(c_rate > 0.0)) throw Error(Errc::precondition, "c_rate must be positive");
        if (data_source == DataSource::experiment_csv &&
            (toggles.known_capacitor_voltage || toggles.no_voltage_noise ||
             toggles.fixed_rc_parameters || toggles.accurate_dv_dt))
            throw Error(Errc::precondition,
                        "simulation-only toggle set on an experiment_csv scenario");
        if (data_source == DataSource::experiment_csv && trace_csv.empty())
            throw Error(Errc::precondition, "experiment_csv scenario needs a trace path");
        if (data_source == DataSource::experiment_csv && truth_csv.empty() &&
            (toggles.fixed_ocv_curve || toggles.known_soc))
            throw Error(Errc::precondition,
                        "fixed_ocv_curve/known_soc on csv data need the truth sidecar");
    }
};

struct RunConfig {
    double sample_dt = 1.0;
    double x1 = 10.0;
    double x3 = 120.0;
    double start_soc = 0.0;
    double soh_lo = 0.8;
    double soh_hi = 1.0;
    bool dr_compensation = true;
    double sigma_v = 0.15e-3;  // volts, the cycler's voltmeter floor
    double sigma_i = 0.1e-3;   // amperes
    DetectionConfig detection;
    // The iteration may not query the surface beyond its fitted band.
    double iteration_soh_cap = 1.05 - 1e-9;
    std::optional<OcvSurface> surface;  // defaults to the built-in reference
};

struct RunRecord {
    std::string cell_id;
    double t0_s = 0.0;
    double soh_true = 0.0;
    double soc_true = 0.0;
    SocSohEstimate state;
    ParamEstimate params;
    double soc_error = 0.0;
    double soh_error = 0.0;
    double runtime_ms = 0.0;
    std::string method = "plain";
    bool ok = false;
    std::string note;
};

struct RunReport {
    std::vector<RunRecord> records;
    double soc_rmse = 0.0;
    double soh_rmse = 0.0;
    double mean_runtime_ms = 0.0;
    std::size_t failures = 0;
    Json config_echo;
};

namespace detail {

inline std::uint64_t run_seed(std::uint64_t base, std::size_t level, std::size_t cell) {
    std::uint64_t h = base ^ 0x9e3779b97f4a7c15ull;
    h = (h ^ (level + 1)) * 0xff51afd7ed558ccdull;
    h = (h ^ (cell + 1)) * 0xc4ceb9fe1a85ec53ull;
    return h;
}

// CELLEST_THREADS chooses the worker count; runs are pure, so records land in
// index order regardless.
inline std::size_t scenario_threads() {
    if (const char* env = std::getenv("CELLEST_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n > 0) return static_cast<std::size_t>(n);
    }
    return 1;
}

// Noiseless terminal voltage reconstructed from the truth channels.
inline double truth_terminal_voltage(const CellTrace& trace, const OcvSurface& gen_surface,
                                     const ParamSchedule& schedule, double i_true, std::size_t j,
                                     bool include_uc) {
    const double soc = std::clamp(trace.truth_soc[j], 0.0, 1.0);
    const double v = eval_ocv(gen_surface, soc, trace.truth_soh[j]) +
                     schedule.at(trace.truth_soc[j]).r1 * i_true;
    return include_uc ? v + trace.truth_uc[j] : v;
}

inline EstimateOptions make_window_options(const ScenarioSpec& spec, const RunConfig& config,
                                           const CellTrace& trace, const OcvSurface& gen_surface,
                                           const ParamSchedule& schedule, const DetectedWindow& w,
                                           double i_charge) {
    EstimateOptions options;
    options.x1 = config.x1;
    options.x3 = config.x3;
    options.iteration.soh_hi = config.iteration_soh_cap;
    options.iteration.throw_on_failure = false;

    const std::size_t onset = w.onset_index;
    const auto tail_n = w.window.pre_tail.size();

    if (spec.toggles.known_capacitor_voltage) {
        options.uc0_true = trace.truth_uc[onset];
        std::vector<double> tail_uc(tail_n);
        for (std::size_t k = 0; k < tail_n; ++k) tail_uc[k] = trace.truth_uc[onset - tail_n + k];
        options.pre_tail_uc = std::move(tail_uc);
    }
    if (spec.toggles.accurate_dv_dt) {
        const bool include_uc = !spec.toggles.known_capacitor_voltage;
        const double v_a =
            truth_terminal_voltage(trace, gen_surface, schedule, i_charge, onset - 2, include_uc);
        const double v_b =
            truth_terminal_voltage(trace, gen_surface, schedule, i_charge, onset - 1, include_uc);
        options.dv_dt_override = (v_b - v_a) / (trace.t[onset - 1] - trace.t[onset - 2]);
    }
    if (spec.toggles.known_soc) options.iteration.soc_override = trace.truth_soc[onset];
    return options;
}

}  // namespace detail

// One scenario run: build (or load) the trace, detect the relaxation pair,
// estimate with the configured toggles, and score against the truth channels.
inline RunReport run_scenario(const ScenarioSpec& spec, std::size_t n_cells,
                              std::size_t n_soh_levels, const RunConfig& config = {}) {
    spec.validate();
    if (n_cells == 0 || n_soh_levels == 0)
        throw Error(Errc::precondition, "need at least one cell and one soh level");

    const CellSpec cell_spec = reference_cell_spec();
    const OcvSurface surface =
        config.surface ? *config.surface : make_reference_surface(spec.temperature_c);
    DetectionConfig detection = config.detection;
    detection.x3 = config.x3;

    RunReport report;
    report.config_echo = Json{{"data_source", data_source_name(spec.data_source)},
                              {"c_rate", spec.c_rate},
                              {"temperature_c", spec.temperature_c},
                              {"seed", spec.seed},
                              {"n_cells", n_cells},
                              {"n_soh_levels", n_soh_levels},
                              {"sample_dt", config.sample_dt},
                              {"x1", config.x1},
                              {"x3", config.x3},
                              {"start_soc", config.start_soc},
                              {"dr_compensation", config.dr_compensation},
                              {"sigma_v", spec.toggles.no_voltage_noise ? 0.0 : config.sigma_v},
                              {"sigma_i", config.sigma_i},
                              {"v_threshold", detection.v_threshold},
                              {"i_zero_band", detection.i_zero_band},
                              {"toggles",
                               Json{{"known_capacitor_voltage", spec.toggles.known_capacitor_voltage},
                                    {"no_voltage_noise", spec.toggles.no_voltage_noise},
                                    {"fixed_rc_parameters", spec.toggles.fixed_rc_parameters},
                                    {"accurate_dv_dt", spec.toggles.accurate_dv_dt},
                                    {"fixed_ocv_curve", spec.toggles.fixed_ocv_curve},
                                    {"known_soc", spec.toggles.known_soc}}}};

    const ParamSchedule schedule = reference_schedule(spec.toggles.fixed_rc_parameters);

    auto run_one = [&](const CellTrace& trace, const std::string& cell_id,
                       double soh_true) -> RunRecord {
        RunRecord record;
        record.cell_id = cell_id;
        record.soh_true = soh_true;
        record.method = config.dr_compensation ? "dr_comp" : "plain";
        try {
            const auto windows = detect_relaxations(trace, detection);
            const auto [w1, w2] = first_charge_pair(windows);
            record.t0_s = w1->window.t0;
            record.soc_true = trace.truth_soc[w1->onset_index];

            const OcvSurface est_surface =
                spec.toggles.fixed_ocv_curve ? fixed_surface_at(surface, soh_true) : surface;
            const double i_charge = spec.c_rate * cell_spec.q0_ah;
            const EstimateOptions opt1 = detail::make_window_options(spec, config, trace, surface,
                                                                     schedule, *w1, i_charge);

            const auto start = std::chrono::steady_clock::now();
            if (config.dr_compensation) {
                const EstimateOptions opt2 = detail::make_window_options(spec, config, trace, surface,
                                                                         schedule, *w2, i_charge);
                const auto result =
                    estimate_with_dr_compensation(w1->window, w2->window, gap_between(trace, *w1, *w2),
                                                  cell_spec, est_surface, opt1, opt2);
                record.state = result.state;
                record.params = result.params1;
            } else {
                const auto result = estimate_from_relaxation(w1->window, cell_spec, est_surface, opt1);
                record.state = result.state;
                record.params = result.params;
            }
            const auto stop = std::chrono::steady_clock::now();
            record.runtime_ms = std::chrono::duration<double, std::milli>(stop - start).count();

            record.soc_error = record.state.soc - record.soc_true;
            record.soh_error = record.state.soh - record.soh_true;
            record.ok = true;
        } catch (const Error& e) {
            record.ok = false;
            record.note = e.what();
        }
        return record;
    };

    if (spec.data_source == DataSource::experiment_csv) {
        const CellTrace trace = read_trace_csv(spec.trace_csv, spec.truth_csv);
        const double soh_true = spec.truth_csv.empty() ? 1.0 : trace.truth_soh.front();
        report.records.push_back(run_one(trace, "csv", soh_true));
    } else {
        struct Job {
            std::size_t level;
            std::size_t cell;
            double soh_true;
        };
        std::vector<Job> jobs;
        for (std::size_t level = 0; level < n_soh_levels; ++level) {
            const double soh_true =
                n_soh_levels == 1
                    ? 0.5 * (config.soh_lo + config.soh_hi)
                    : config.soh_lo + (config.soh_hi - config.soh_lo) * static_cast<double>(level) /
                                          static_cast<double>(n_soh_levels - 1);
            for (std::size_t cell = 0; cell < n_cells; ++cell) jobs.push_back({level, cell, soh_true});
        }
        report.records.resize(jobs.size());

        auto worker = [&](std::size_t first, std::size_t stride) {
            for (std::size_t idx = first; idx < jobs.size(); idx += stride) {
                const Job& job = jobs[idx];
                const std::string cell_id =
                    "sim-" + std::to_string(job.level) + "-" + std::to_string(job.cell);
                RunRecord record;
                try {
                    const Profile profile = build_incremental_capacity_profile(
                        spec.c_rate, cell_spec, 180.0, PulseSpec{-cell_spec.q0_ah, 10.0}, 0.05,
                        config.start_soc, job.soh_true);

                    NoiseModel noise;
                    noise.sigma_v = spec.toggles.no_voltage_noise ? 0.0 : config.sigma_v;
                    noise.sigma_i = config.sigma_i;
                    noise.seed = detail::run_seed(spec.seed, job.level, job.cell);

                    SimOptions sim;
                    sim.two_rc = spec.data_source == DataSource::sim_2rc;
                    sim.temperature_c = spec.temperature_c;
                    sim.start_soc = config.start_soc;

                    const CellTrace trace = simulate_profile(profile, cell_spec, schedule, surface,
                                                             job.soh_true, noise, config.sample_dt,
                                                             sim);
                    record = run_one(trace, cell_id, job.soh_true);
                } catch (const Error& e) {
                    record.cell_id = cell_id;
                    record.soh_true = job.soh_true;
                    record.ok = false;
                    record.note = e.what();
                }
                report.records[idx] = std::move(record);
            }
        };

        const std::size_t n_threads = std::min(detail::scenario_threads(), jobs.size());
        if (n_threads <= 1) {
            worker(0, 1);
        } else {
            std::vector<std::thread> pool;
            pool.reserve(n_threads);
            for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker, t, n_threads);
            for (auto& thread : pool) thread.join();
        }
    }

    double soc_sq = 0.0, soh_sq = 0.0, ms = 0.0;
    std::size_t ok_count = 0;
    for (const auto& r : report.records) {
        if (!r.ok) {
            ++report.failures;
            continue;
        }
        soc_sq += r.soc_error * r.soc_error;
        soh_sq += r.soh_error * r.soh_error;
        ms += r.runtime_ms;
        ++ok_count;
    }
    if (ok_count > 0) {
        report.soc_rmse = std::sqrt(soc_sq / static_cast<double>(ok_count));
        report.soh_rmse = std::sqrt(soh_sq / static_cast<double>(ok_count));
        report.mean_runtime_ms = ms / static_cast<double>(ok_count);
    }
    return report;
}

inline ScenarioSpec scenario_spec_from_json(const Json& j) {
    ScenarioSpec spec;
    try {
        const std::string source = j.at("data_source").get<std::string>();
        if (source == "experiment_csv") spec.data_source = DataSource::experiment_csv;
        else if (source == "sim_1rc") spec.data_source = DataSource::sim_1rc;
        else if (source == "sim_2rc") spec.data_source = DataSource::sim_2rc;
        else throw Error(Errc::input_parse, "unknown data_source " + source);

        if (j.contains("c_rate")) spec.c_rate = j.at("c_rate").get<double>();
        if (j.contains("temperature_c")) spec.temperature_c = j.at("temperature_c").get<double>();
        if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("trace_csv")) spec.trace_csv = j.at("trace_csv").get<std::string>();
        if (j.contains("truth_csv")) spec.truth_csv = j.at("truth_csv").get<std::string>();
        if (j.contains("toggles")) {
            const auto& t = j.at("toggles");
            auto flag = [&](const char* key) { return t.contains(key) && t.at(key).get<bool>(); };
            spec.toggles.known_capacitor_voltage = flag("known_capacitor_voltage");
            spec.toggles.no_voltage_noise = flag("no_voltage_noise");
            spec.toggles.fixed_rc_parameters = flag("fixed_rc_parameters");
            spec.toggles.accurate_dv_dt = flag("accurate_dv_dt");
            spec.toggles.fixed_ocv_curve = flag("fixed_ocv_curve");
            spec.toggles.known_soc = flag("known_soc");
        }
    } catch (const Json::exception& e) {
        throw Error(Errc::input_parse, std::string("scenario json: ") + e.what());
    }
    spec.validate();
    return spec;
}

inline Json report_to_json(const RunReport& report, bool include_runtimes = true) {
    Json records = Json::array();
    for (const auto& r : report.records) {
        Json rec = estimate_record_json(r.cell_id, r.t0_s, r.state, r.params, r.method);
        rec["soh_true"] = r.soh_true;
        rec["soc_true"] = r.soc_true;
        rec["soc_error"] = r.soc_error;
        rec["soh_error"] = r.soh_error;
        rec["ok"] = r.ok;
        if (!r.note.empty()) rec["note"] = r.note;
        if (include_runtimes) rec["runtime_ms"] = r.runtime_ms;
        records.push_back(rec);
    }
    Json j{{"config", report.config_echo},
           {"records", records},
           {"soc_rmse", report.soc_rmse},
           {"soh_rmse", report.soh_rmse},
           {"failures", report.failures}};
    if (include_runtimes) j["mean_runtime_ms"] = report.mean_runtime_ms;
    return j;
}

enum class Method { plain, dr_comp, ukf };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::plain: return "plain";
        case Method::dr_comp: return "dr_comp";
        case Method::ukf: return "ukf";
    }
    return "unknown";
}

struct BenchmarkRow {
    std::string method;
    double median_ms = 0.0;
    double ratio = 1.0;  // relative to the plain estimator
};

struct BenchmarkConfig {
    int repetitions = 100;
    int warmup = 10;
    DetectionConfig detection;
    EstimateOptions estimate;
};

// Median per-estimate wall time over prepared traces; detection and setup are
// done once up front so only the estimators are timed.
inline std::vector<BenchmarkRow> benchmark(const std::vector<Method>& methods,
                                           const std::vector<CellTrace>& traces,
                                           const CellSpec& spec, const OcvSurface& surface,
                                           const BenchmarkConfig& config = {}) {
    if (config.repetitions < 100)
        throw Error(Errc::precondition, "benchmark needs >=100 repetitions");
    if (methods.empty() || traces.empty())
        throw Error(Errc::precondition, "benchmark needs methods and traces");

    struct Prepared {
        const CellTrace* trace;
        RelaxationWindow w1, w2;
        CcGap gap;
        UkfProtocolSetup ukf;
    };
    std::vector<Prepared> prepared;
    const bool wants_ukf =
        std::find(methods.begin(), methods.end(), Method::ukf) != methods.end();
    for (const auto& trace : traces) {
        Prepared p;
        p.trace = &trace;
        const auto windows = detect_relaxations(trace, config.detection);
        const auto [w1, w2] = first_charge_pair(windows);
        p.w1 = w1->window;
        p.w2 = w2->window;
        p.gap = gap_between(trace, *w1, *w2);
        if (wants_ukf)
            p.ukf = prepare_ukf_protocol(trace, spec, surface, config.detection, config.estimate);
        prepared.push_back(std::move(p));
    }

    auto median = [](std::vector<double>& samples) {
        std::sort(samples.begin(), samples.end());
        const std::size_t n = samples.size();
        return n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
    };

    std::vector<BenchmarkRow> rows;
    double plain_median = 0.0;
    for (Method method : methods) {
        std::vector<double> samples;
        samples.reserve(static_cast<std::size_t>(config.repetitions) * prepared.size());
        for (int rep = 0; rep < config.warmup + config.repetitions; ++rep) {
            for (const auto& p : prepared) {
                const auto start = std::chrono::steady_clock::now();
                switch (method) {
                    case Method::plain:
                        estimate_from_relaxation(p.w1, spec, surface, config.estimate);
                        break;
                    case Method::dr_comp:
                        estimate_with_dr_compensation(p.w1, p.w2, p.gap, spec, surface,
                                                      config.estimate, config.estimate);
                        break;
                    case Method::ukf:
                        run_prepared_ukf(p.ukf, *p.trace, spec, surface);
                        break;
                }
                const auto stop = std::chrono::steady_clock::now();
                if (rep >= config.warmup)
                    samples.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
            }
        }
        BenchmarkRow row;
        row.method = method_name(method);
        row.median_ms = median(samples);
        if (method == Method::plain) plain_median = row.median_ms;
        rows.push_back(row);
    }

    const double base = plain_median > 0.0 ? plain_median : rows.front().median_ms;
    for (auto& row : rows) row.ratio = row.median_ms / base;
    return rows;
}

}  // namespace cellest
