#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "opfmeta/dataset.hpp"
#include "opfmeta/errors.hpp"
#include "opfmeta/feasibility.hpp"
#include "opfmeta/pso.hpp"
#include "opfmeta/qp_ipm.hpp"
#include "opfmeta/scenario.hpp"
#include "opfmeta/train.hpp"

namespace opfmeta {

inline constexpr int kConfigVersion = 1;

struct SweepConfig {
    int max_fp = 10;
    int max_fn = 3;
    int trials = 20;
    int scenarios = 1; // test-split scenarios swept
};

struct ExperimentConfig {
    int version = kConfigVersion;
    std::string case_path;
    std::size_t samples = 1000;
    std::uint64_t seed = 0;
    ScenarioRanges ranges = ScenarioRanges::dc_defaults();
    SolverOptions solver;
    SplitFractions split;
    TrainConfig train;
    MetaOptConfig meta;
    MetaLossConfig loss;
    SweepConfig sweep;
    int monitor_interval = 5;
    int runs = 1;
    double max_failure_fraction = 0.10;
    std::string output_dir = "out";
    std::size_t workers = 0;
    std::string dataset_path; // reuse instead of generating when set

    void check() const
    {
        if (version != kConfigVersion)
            throw ConfigError("unsupported config version " + std::to_string(version));
        if (samples < 1)
            throw ConfigError("samples must be >= 1");
        if (runs < 1 || monitor_interval < 1)
            throw ConfigError("runs and monitor_interval must be >= 1");
        if (!(max_failure_fraction >= 0.0 && max_failure_fraction <= 1.0))
            throw ConfigError("max_failure_fraction must lie in [0, 1]");
        solver.check();
        split.check();
        train.check();
        meta.check();
        loss.check();
    }
};

/// Sample-count presets: batch size 10 for 1k samples, 100 for 10k.
inline ExperimentConfig preset(const std::string& name)
{
    ExperimentConfig c;
    if (name == "1k") {
        c.samples = 1000;
        c.train.batch_size = 10;
    } else if (name == "10k") {
        c.samples = 10000;
        c.train.batch_size = 100;
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return c;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where)
{
    if (!j.is_object())
        throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k))
            throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void take(const nlohmann::json& j, const char* key, T& out)
{
    if (!j.contains(key))
        return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

inline ScaleRange range_from(const nlohmann::json& j, const char* key, ScaleRange r)
{
    if (!j.contains(key))
        return r;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2)
        throw ConfigError(std::string("range '") + key + "' must be [low, high]");
    return {v[0].get<double>(), v[1].get<double>()};
}

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j)
{
    using detail::take;
    detail::reject_unknown(j,
                           {"version", "preset", "case", "samples", "seed", "ranges", "solver", "split", "train", "meta",
                            "loss", "sweep", "monitor_interval", "runs", "max_failure_fraction", "output_dir",
                            "workers", "dataset"},
                           "config");
    if (!j.contains("version"))
        throw ConfigError("config is missing 'version'");
    ExperimentConfig c = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : ExperimentConfig{};
    take(j, "version", c.version);
    take(j, "case", c.case_path);
    take(j, "samples", c.samples);
    take(j, "seed", c.seed);
    take(j, "monitor_interval", c.monitor_interval);
    take(j, "runs", c.runs);
    take(j, "max_failure_fraction", c.max_failure_fraction);
    take(j, "output_dir", c.output_dir);
    take(j, "workers", c.workers);
    take(j, "dataset", c.dataset_path);
    if (j.contains("ranges")) {
        const auto& r = j.at("ranges");
        if (r.is_string()) {
            const auto name = r.get<std::string>();
            if (name == "dc_defaults")
                c.ranges = ScenarioRanges::dc_defaults();
            else if (name == "identity")
                c.ranges = ScenarioRanges::identity();
            else
                throw ConfigError("unknown ranges preset '" + name + "'");
        } else {
            detail::reject_unknown(r, {"load", "pmax", "rate", "reactance"}, "ranges");
            c.ranges.load = detail::range_from(r, "load", c.ranges.load);
            c.ranges.pmax = detail::range_from(r, "pmax", c.ranges.pmax);
            c.ranges.rate = detail::range_from(r, "rate", c.ranges.rate);
            c.ranges.reactance = detail::range_from(r, "reactance", c.ranges.reactance);
        }
    }
    if (j.contains("solver")) {
        const auto& s = j.at("solver");
        detail::reject_unknown(s, {"tol_residual", "tol_gap", "max_iters", "bound_push", "trace"}, "solver");
        take(s, "tol_residual", c.solver.tol_residual);
        take(s, "tol_gap", c.solver.tol_gap);
        take(s, "max_iters", c.solver.max_iters);
        take(s, "bound_push", c.solver.bound_push);
        take(s, "trace", c.solver.record_trace);
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        detail::reject_unknown(s, {"train", "val", "test"}, "split");
        take(s, "train", c.split.train);
        take(s, "val", c.split.val);
        take(s, "test", c.split.test);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown(t,
                               {"learning_rate", "beta1", "beta2", "batch_size", "burn_in_epochs", "patience",
                                "max_epochs", "loss_weight"},
                               "train");
        take(t, "learning_rate", c.train.learning_rate);
        take(t, "beta1", c.train.beta1);
        take(t, "beta2", c.train.beta2);
        take(t, "batch_size", c.train.batch_size);
        take(t, "burn_in_epochs", c.train.burn_in_epochs);
        take(t, "patience", c.train.patience);
        take(t, "max_epochs", c.train.max_epochs);
        take(t, "loss_weight", c.train.loss_weight);
    }
    if (j.contains("meta")) {
        const auto& m = j.at("meta");
        detail::reject_unknown(m,
                               {"n_particles", "n_iters", "subsample", "inertia_start", "inertia_end", "c1", "c2",
                                "velocity_clamp"},
                               "meta");
        take(m, "n_particles", c.meta.n_particles);
        take(m, "n_iters", c.meta.n_iters);
        take(m, "subsample", c.meta.subsample);
        take(m, "inertia_start", c.meta.inertia_start);
        take(m, "inertia_end", c.meta.inertia_end);
        take(m, "c1", c.meta.c1);
        take(m, "c2", c.meta.c2);
        take(m, "velocity_clamp", c.meta.velocity_clamp);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        detail::reject_unknown(l, {"metric", "penalty_multiplier", "per_sample_penalty"}, "loss");
        if (l.contains("metric")) {
            const auto m = l.at("metric").get<std::string>();
            if (m == "work_units")
                c.loss.metric = MetaMetric::WorkUnits;
            else if (m == "wall_time")
                c.loss.metric = MetaMetric::WallTime;
            else
                throw ConfigError("unknown metric '" + m + "'");
        }
        take(l, "penalty_multiplier", c.loss.penalty_threshold_multiplier);
        take(l, "per_sample_penalty", c.loss.per_sample_penalty);
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        detail::reject_unknown(s, {"max_fp", "max_fn", "trials", "scenarios"}, "sweep");
        take(s, "max_fp", c.sweep.max_fp);
        take(s, "max_fn", c.sweep.max_fn);
        take(s, "trials", c.sweep.trials);
        take(s, "scenarios", c.sweep.scenarios);
    }
    c.check();
    return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c)
{
    auto range = [](ScaleRange r) { return nlohmann::json::array({r.low, r.high}); };
    return {{"version", c.version},
            {"case", c.case_path},
            {"samples", c.samples},
            {"seed", c.seed},
            {"ranges",
             {{"load", range(c.ranges.load)},
              {"pmax", range(c.ranges.pmax)},
              {"rate", range(c.ranges.rate)},
              {"reactance", range(c.ranges.reactance)}}},
            {"solver",
             {{"tol_residual", c.solver.tol_residual},
              {"tol_gap", c.solver.tol_gap},
              {"max_iters", c.solver.max_iters},
              {"bound_push", c.solver.bound_push},
              {"trace", c.solver.record_trace}}},
            {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
            {"train",
             {{"learning_rate", c.train.learning_rate},
              {"beta1", c.train.beta1},
              {"beta2", c.train.beta2},
              {"batch_size", c.train.batch_size},
              {"burn_in_epochs", c.train.burn_in_epochs},
              {"patience", c.train.patience},
              {"max_epochs", c.train.max_epochs},
              {"loss_weight", c.train.loss_weight}}},
            {"meta",
             {{"n_particles", c.meta.n_particles},
              {"n_iters", c.meta.n_iters},
              {"subsample", c.meta.subsample},
              {"inertia_start", c.meta.inertia_start},
              {"inertia_end", c.meta.inertia_end},
              {"c1", c.meta.c1},
              {"c2", c.meta.c2},
              {"velocity_clamp", c.meta.velocity_clamp}}},
            {"loss",
             {{"metric", to_string(c.loss.metric)},
              {"penalty_multiplier", c.loss.penalty_threshold_multiplier},
              {"per_sample_penalty", c.loss.per_sample_penalty}}},
            {"sweep",
             {{"max_fp", c.sweep.max_fp},
              {"max_fn", c.sweep.max_fn},
              {"trials", c.sweep.trials},
              {"scenarios", c.sweep.scenarios}}},
            {"monitor_interval", c.monitor_interval},
            {"runs", c.runs},
            {"max_failure_fraction", c.max_failure_fraction},
            {"output_dir", c.output_dir},
            {"workers", c.workers},
            {"dataset", c.dataset_path}};
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw ConfigError("cannot read config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

} // namespace opfmeta
