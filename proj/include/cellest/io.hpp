#pragma once

// File formats: trace and truth CSV, OCV sample CSV, surface JSON, estimate
// record JSON, and the report tables the CLI writes.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cellest/analysis.hpp"
#include "cellest/ecm_sim.hpp"
#include "cellest/errors.hpp"
#include "cellest/ocv_model.hpp"
#include "cellest/relax_estimator.hpp"

namespace cellest {

using Json = nlohmann::json;

namespace detail {

// Shortest representation that round-trips the exact double.
inline std::string format_double(double v) {
    char buf[32];
    const auto result = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, result.ptr);
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream stream(line);
    while (std::getline(stream, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

inline double parse_field(const std::string& text, std::size_t row, std::size_t col) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw Error(Errc::input_parse, "row " + std::to_string(row) + " field " +
                                           std::to_string(col + 1) + ": cannot parse '" + text + "'");
    }
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::input_parse, "cannot open " + path);
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(Errc::input_parse, "cannot open " + path + " for writing");
    return out;
}

}  // namespace detail

inline void write_trace_csv(const CellTrace& trace, const std::string& path) {
    auto out = detail::open_output(path);
    out << "t_s,i_a,v_v,temp_c\n";
    for (std::size_t k = 0; k < trace.size(); ++k)
        out << detail::format_double(trace.t[k]) << ',' << detail::format_double(trace.i[k]) << ','
            << detail::format_double(trace.v[k]) << ',' << detail::format_double(trace.temp[k])
            << '\n';
}

inline void write_truth_csv(const CellTrace& trace, const std::string& path) {
    auto out = detail::open_output(path);
    out << "t_s,soc,uc_v,soh\n";
    for (std::size_t k = 0; k < trace.size(); ++k)
        out << detail::format_double(trace.t[k]) << ',' << detail::format_double(trace.truth_soc[k])
            << ',' << detail::format_double(trace.truth_uc[k]) << ','
            << detail::format_double(trace.truth_soh[k]) << '\n';
}

inline CellTrace read_trace_csv(const std::string& path, const std::string& truth_path = "") {
    auto in = detail::open_input(path);
    std::string line;
    if (!std::getline(in, line) || detail::split_csv_row(line) !=
                                       std::vector<std::string>{"t_s", "i_a", "v_v", "temp_c"})
        throw Error(Errc::input_parse, path + ": expected header t_s,i_a,v_v,temp_c");

    CellTrace trace;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto fields = detail::split_csv_row(line);
        if (fields.size() != 4)
            throw Error(Errc::input_parse,
                        path + ": row " + std::to_string(row) + " has " +
                            std::to_string(fields.size()) + " fields, expected 4");
        trace.t.push_back(detail::parse_field(fields[0], row, 0));
        trace.i.push_back(detail::parse_field(fields[1], row, 1));
        trace.v.push_back(detail::parse_field(fields[2], row, 2));
        trace.temp.push_back(detail::parse_field(fields[3], row, 3));
    }

    if (!truth_path.empty()) {
        auto tin = detail::open_input(truth_path);
        if (!std::getline(tin, line) || detail::split_csv_row(line) !=
                                            std::vector<std::string>{"t_s", "soc", "uc_v", "soh"})
            throw Error(Errc::input_parse, truth_path + ": expected header t_s,soc,uc_v,soh");
        std::size_t trow = 1;
        while (std::getline(tin, line)) {
            ++trow;
            if (line.empty()) continue;
            const auto fields = detail::split_csv_row(line);
            if (fields.size() != 4)
                throw Error(Errc::input_parse, truth_path + ": row " + std::to_string(trow) +
                                                   " has " + std::to_string(fields.size()) +
                                                   " fields, expected 4");
            trace.truth_soc.push_back(detail::parse_field(fields[1], trow, 1));
            trace.truth_uc.push_back(detail::parse_field(fields[2], trow, 2));
            trace.truth_soh.push_back(detail::parse_field(fields[3], trow, 3));
        }
        if (trace.truth_soc.size() != trace.t.size())
            throw Error(Errc::input_parse, "truth rows do not match trace rows");
    } else {
        trace.truth_soc.assign(trace.size(), 0.0);
        trace.truth_uc.assign(trace.size(), 0.0);
        trace.truth_soh.assign(trace.size(), 0.0);
    }
    trace.validate();
    return trace;
}

inline std::vector<std::pair<double, double>> read_ocv_samples_csv(const std::string& path) {
    auto in = detail::open_input(path);
    std::string line;
    if (!std::getline(in, line) ||
        detail::split_csv_row(line) != std::vector<std::string>{"soc", "ocv_volts"})
        throw Error(Errc::input_parse, path + ": expected header soc,ocv_volts");

    std::vector<std::pair<double, double>> samples;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto fields = detail::split_csv_row(line);
        if (fields.size() != 2)
            throw Error(Errc::input_parse, path + ": row " + std::to_string(row) + " has " +
                                               std::to_string(fields.size()) + " fields, expected 2");
        samples.emplace_back(detail::parse_field(fields[0], row, 0),
                             detail::parse_field(fields[1], row, 1));
    }
    return samples;
}

inline Json surface_to_json(const OcvSurface& surface) {
    Json grid = Json::array();
    for (const auto& level : surface.grid) {
        Json coeffs = Json::array();
        for (double a : level.coeffs.a) coeffs.push_back(a);
        grid.push_back({{"soh", level.soh}, {"coeffs", coeffs}});
    }
    return Json{{"temperature_c", surface.temperature_c}, {"grid", grid}};
}

inline OcvSurface surface_from_json(const Json& j) {
    OcvSurface surface;
    try {
        surface.temperature_c = j.at("temperature_c").get<double>();
        for (const auto& level : j.at("grid")) {
            SohLevel entry;
            entry.soh = level.at("soh").get<double>();
            const auto& coeffs = level.at("coeffs");
            if (coeffs.size() != kOcvPolyCoeffs)
                throw Error(Errc::input_parse, "surface level needs exactly 10 coefficients");
            for (std::size_t k = 0; k < kOcvPolyCoeffs; ++k)
                entry.coeffs.a[k] = coeffs.at(k).get<double>();
            surface.grid.push_back(entry);
        }
    } catch (const Json::exception& e) {
        throw Error(Errc::input_parse, std::string("surface json: ") + e.what());
    }
    surface.validate();
    return surface;
}

inline void write_surface_json(const OcvSurface& surface, const std::string& path) {
    auto out = detail::open_output(path);
    out << surface_to_json(surface).dump(2) << '\n';
}

inline OcvSurface read_surface_json(const std::string& path) {
    auto in = detail::open_input(path);
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw Error(Errc::input_parse, path + ": " + e.what());
    }
    return surface_from_json(j);
}

inline Json estimate_record_json(const std::string& cell_id, double t0_s,
                                 const SocSohEstimate& state, const ParamEstimate& params,
                                 const std::string& method) {
    return Json{{"cell_id", cell_id},
                {"t0_s", t0_s},
                {"soc", state.soc},
                {"soh", state.soh},
                {"r1_ohm", params.r1},
                {"r2_ohm", params.r2},
                {"c_f", params.c},
                {"ocv_v", params.ocv},
                {"docv_dt_vps", state.docv_dt},
                {"iterations", state.iterations},
                {"converged", state.converged},
                {"method", method}};
}

inline void write_convergence_map_csv(const std::vector<ConvergenceCell>& cells,
                                      const std::string& path) {
    auto out = detail::open_output(path);
    out << "soc,soh,l_abs,soc_rmse,soh_rmse\n";
    for (const auto& cell : cells)
        out << detail::format_double(cell.soc_true) << ',' << detail::format_double(cell.soh_true)
            << ',' << detail::format_double(cell.l_abs) << ','
            << detail::format_double(cell.soc_rmse) << ',' << detail::format_double(cell.soh_rmse)
            << '\n';
}

struct SensitivitySweepRow {
    double x1 = 0.0, x2 = 0.0, x3 = 0.0, tau = 0.0, f = 0.0;
};

inline void write_sensitivity_csv(const std::vector<SensitivitySweepRow>& rows,
                                  const std::string& path) {
    auto out = detail::open_output(path);
    out << "x1,x2,x3,tau,f\n";
    for (const auto& r : rows)
        out << detail::format_double(r.x1) << ',' << detail::format_double(r.x2) << ','
            << detail::format_double(r.x3) << ',' << detail::format_double(r.tau) << ','
            << detail::format_double(r.f) << '\n';
}

}  // namespace cellest
