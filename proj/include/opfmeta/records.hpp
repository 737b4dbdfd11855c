#pragma once

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opfmeta/dataset.hpp"
#include "opfmeta/dc_model.hpp"
#include "opfmeta/errors.hpp"
#include "opfmeta/feasibility.hpp"
#include "opfmeta/qp_ipm.hpp"
#include "opfmeta/scenario.hpp"

// Line-oriented JSON records. Wall-clock fields are written only when
// `timing` is set so that work-unit runs produce byte-identical files.

namespace opfmeta {

using json = nlohmann::json;

inline constexpr int kRecordVersion = 1;

inline json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vec json_vec(const json& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// +inf and NaN are not JSON numbers
inline json number_json(double x)
{
    if (std::isnan(x))
        return nullptr;
    if (std::isinf(x))
        return x > 0 ? "inf" : "-inf";
    return x;
}

inline double json_number(const json& j)
{
    if (j.is_null())
        return std::numeric_limits<double>::quiet_NaN();
    if (j.is_string())
        return j.get<std::string>() == "-inf" ? -std::numeric_limits<double>::infinity()
                                              : std::numeric_limits<double>::infinity();
    return j.get<double>();
}

inline json to_json(const Scenario& s)
{
    return {{"seed", s.seed},
            {"load_scale", s.load_scale},
            {"pmax_scale", s.pmax_scale},
            {"rate_scale", s.rate_scale},
            {"x_scale", s.x_scale}};
}

inline Scenario scenario_from_json(const json& j)
{
    Scenario s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.load_scale = j.at("load_scale").get<std::vector<double>>();
    s.pmax_scale = j.at("pmax_scale").get<std::vector<double>>();
    s.rate_scale = j.at("rate_scale").get<std::vector<double>>();
    s.x_scale = j.at("x_scale").get<std::vector<double>>();
    return s;
}

inline EntityKind entity_kind_from_string(const std::string& s)
{
    for (auto k : {EntityKind::Load, EntityKind::GenPmax, EntityKind::BranchRate, EntityKind::BranchReactance})
        if (s == to_string(k))
            return k;
    throw ParseError("unknown entity kind '" + s + "'");
}

inline json to_json(const std::vector<PhiEntry>& layout)
{
    json arr = json::array();
    for (const auto& e : layout)
        arr.push_back({to_string(e.kind), e.index});
    return arr;
}

inline std::vector<PhiEntry> layout_from_json(const json& j)
{
    std::vector<PhiEntry> out;
    for (const auto& e : j)
        out.push_back({entity_kind_from_string(e.at(0).get<std::string>()), e.at(1).get<std::size_t>()});
    return out;
}

inline json to_json(const PhiVector& phi) { return {{"values", phi.values}, {"layout", to_json(phi.layout)}}; }

inline PhiVector phi_from_json(const json& j)
{
    return {j.at("values").get<std::vector<double>>(), layout_from_json(j.at("layout"))};
}

inline json to_json(const ActiveSet& a) { return a.to_string(); }

inline SolveStatus status_from_string(const std::string& s)
{
    for (auto st : {SolveStatus::Optimal, SolveStatus::MaxIters, SolveStatus::NumericalFailure, SolveStatus::Unbounded})
        if (s == to_string(st))
            return st;
    throw ParseError("unknown solve status '" + s + "'");
}

inline json to_json(const SolveReport& r, bool timing = false, bool vectors = true)
{
    json j{{"status", to_string(r.status)},
           {"objective", number_json(r.objective)},
           {"iterations", r.iterations},
           {"work_units", r.work_units},
           {"message", r.message}};
    if (vectors) {
        j["primal"] = vec_json(r.primal);
        j["dual_eq"] = vec_json(r.dual_eq);
        j["dual_ineq"] = vec_json(r.dual_ineq);
    }
    if (timing)
        j["wall_time"] = r.wall_time;
    return j;
}

inline SolveReport solve_report_from_json(const json& j)
{
    SolveReport r;
    r.status = status_from_string(j.at("status").get<std::string>());
    r.objective = json_number(j.at("objective"));
    r.iterations = j.at("iterations").get<int>();
    r.work_units = j.at("work_units").get<double>();
    r.message = j.value("message", "");
    if (j.contains("primal")) {
        r.primal = json_vec(j.at("primal"));
        r.dual_eq = json_vec(j.at("dual_eq"));
        r.dual_ineq = json_vec(j.at("dual_ineq"));
    }
    r.wall_time = j.value("wall_time", 0.0);
    return r;
}

inline json to_json(const FeasibilityReport& r, bool timing = false)
{
    json its = json::array();
    for (const auto& it : r.iterations) {
        json e{{"active_count", it.active_count},
               {"violations", it.violated},
               {"solve", to_json(it.report, timing, false)}};
        its.push_back(e);
    }
    json j{{"K", r.K()},
           {"objective", number_json(r.objective)},
           {"total_work_units", r.total_work_units},
           {"final_set", to_json(r.final_set)},
           {"iterations", its}};
    if (timing) {
        j["total_wall_time"] = r.total_wall_time;
        j["build_time"] = r.build_time;
    }
    return j;
}

inline json to_json(const Sample& s, bool timing = false)
{
    json j{{"record", "sample"},
           {"scenario", to_json(s.scenario)},
           {"phi", s.phi},
           {"label", to_json(s.label)},
           {"objective", s.objective},
           {"primal", s.primal},
           {"iterations", s.iterations},
           {"work_units", s.work_units}};
    if (timing)
        j["wall_time"] = s.wall_time;
    return j;
}

inline Sample sample_from_json(const json& j)
{
    Sample s;
    s.scenario = scenario_from_json(j.at("scenario"));
    s.phi = j.at("phi").get<std::vector<double>>();
    s.label = ActiveSet::from_string(j.at("label").get<std::string>());
    s.objective = j.at("objective").get<double>();
    s.primal = j.at("primal").get<std::vector<double>>();
    s.iterations = j.at("iterations").get<int>();
    s.work_units = j.at("work_units").get<double>();
    s.wall_time = j.value("wall_time", 0.0);
    return s;
}

/// Header line followed by one line per sample.
inline void write_dataset(std::ostream& os, const Dataset& d, bool timing = false)
{
    json head{{"record", "dataset"},
              {"version", kRecordVersion},
              {"case", d.case_name},
              {"catalog_size", d.catalog_size},
              {"layout", to_json(d.layout)},
              {"split", {{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}}},
              {"feature_mean", vec_json(d.feature_mean)},
              {"feature_std", vec_json(d.feature_std)}};
    os << head.dump() << '\n';
    for (const auto& s : d.samples)
        os << to_json(s, timing).dump() << '\n';
}

inline Dataset read_dataset(std::istream& is)
{
    Dataset d;
    std::string line;
    bool have_head = false;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("bad dataset record: ") + e.what());
        }
        const auto kind = j.value("record", "");
        try {
            if (kind == "dataset") {
                if (j.value("version", 0) != kRecordVersion)
                    throw ParseError("unsupported dataset version");
                d.case_name = j.value("case", "");
                d.catalog_size = j.at("catalog_size").get<std::size_t>();
                d.layout = layout_from_json(j.at("layout"));
                d.split.train = j.at("split").at("train").get<std::vector<std::size_t>>();
                d.split.val = j.at("split").at("val").get<std::vector<std::size_t>>();
                d.split.test = j.at("split").at("test").get<std::vector<std::size_t>>();
                d.feature_mean = json_vec(j.at("feature_mean"));
                d.feature_std = json_vec(j.at("feature_std"));
                have_head = true;
            } else if (kind == "sample") {
                d.samples.push_back(sample_from_json(j));
            } else {
                throw ParseError("unknown record kind '" + kind + "'");
            }
        } catch (const json::exception& e) {
            throw ParseError("malformed " + kind + " record: " + e.what());
        }
    }
    if (!have_head)
        throw ParseError("dataset header missing");
    return d;
}

inline void save_dataset(const std::string& path, const Dataset& d, bool timing = false)
{
    std::ofstream os(path);
    if (!os)
        throw Error("cannot write " + path);
    write_dataset(os, d, timing);
}

inline Dataset load_dataset(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw Error("cannot read " + path);
    return read_dataset(is);
}

} // namespace opfmeta
