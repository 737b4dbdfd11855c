#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "opfmeta/dataset.hpp"
#include "opfmeta/dc_model.hpp"
#include "opfmeta/feasibility.hpp"
#include "opfmeta/mlp.hpp"
#include "opfmeta/parallel.hpp"
#include "opfmeta/pso.hpp"
#include "opfmeta/qp_ipm.hpp"
#include "opfmeta/train.hpp"

namespace opfmeta {

/// Full problems aligned with dataset samples.
using ProblemSet = std::vector<DcOpfProblem>;

inline ProblemSet build_problems(const Grid& g, const Dataset& d)
{
    ProblemSet out(d.size());
    parallel_for(d.size(), [&](std::size_t i) { out[i] = build_full(g, d.samples[i].scenario); });
    return out;
}

struct MetaLossEval {
    double value = 0.0;     // penalized
    double raw = 0.0;       // without the penalty (NaN when skipped)
    bool penalized = false;
    double mean_predicted = 0.0;
    std::vector<int> K;
    std::vector<double> work_units;
    std::vector<double> wall_time;
    std::vector<double> objective_error; // |obj - stored| / max(1, |stored|)
};

/// Feasibility tests from the given sets on `rows`, in row order. When
/// `skip_if_penalized` is set and the penalty fires, no problem is solved.
inline MetaLossEval evaluate_sets(const std::vector<ActiveSet>& sets, const Dataset& d, const ProblemSet& problems,
                                  const std::vector<std::size_t>& rows, const MetaLossConfig& cfg,
                                  const SolverOptions& opts, bool skip_if_penalized = true, bool parallel = true)
{
    require_dims(sets.size(), rows.size(), "predicted sets vs rows");
    MetaLossEval ev;
    if (rows.empty())
        throw EmptyBatch("meta-loss needs at least one scenario");
    ev.penalized = penalty_triggered(sets, cfg);
    double count = 0.0;
    for (const auto& s : sets)
        count += static_cast<double>(s.count());
    ev.mean_predicted = count / static_cast<double>(sets.size());
    if (ev.penalized && skip_if_penalized) {
        ev.value = std::numeric_limits<double>::infinity();
        ev.raw = std::numeric_limits<double>::quiet_NaN();
        return ev;
    }
    std::vector<FeasibilityReport> reports(rows.size());
    auto body = [&](std::size_t i) { reports[i] = iterative_feasibility_test(problems[rows[i]], sets[i], opts); };
    if (parallel)
        parallel_for(rows.size(), body);
    else
        for (std::size_t i = 0; i < rows.size(); ++i)
            body(i);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = reports[i];
        ev.K.push_back(r.K());
        ev.work_units.push_back(r.total_work_units);
        ev.wall_time.push_back(r.total_wall_time);
        const double stored = d.samples[rows[i]].objective;
        ev.objective_error.push_back(std::abs(r.objective - stored) / std::max(1.0, std::abs(stored)));
    }
    ev.raw = meta_loss(reports, cfg);
    ev.value = ev.penalized ? std::numeric_limits<double>::infinity() : ev.raw;
    return ev;
}

inline MetaLossEval evaluate_classifier(const MlpParams& params, const Dataset& d, const ProblemSet& problems,
                                        const std::vector<std::size_t>& rows, const MetaLossConfig& cfg,
                                        const SolverOptions& opts, bool skip_if_penalized = true, bool parallel = true)
{
    return evaluate_sets(predict_active_sets(params, d, rows), d, problems, rows, cfg, opts, skip_if_penalized,
                         parallel);
}

/// Sorted sample of `n` rows (all rows when n >= rows.size()).
inline std::vector<std::size_t> subsample_rows(const std::vector<std::size_t>& rows, std::size_t n, std::uint64_t seed)
{
    if (n >= rows.size())
        return rows;
    std::vector<std::size_t> pool = rows;
    Rng rng = make_rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(n);
    std::sort(pool.begin(), pool.end());
    return pool;
}

struct MetaTrainResult {
    MlpParams params;
    PsoResult swarm;
    double val_before = std::numeric_limits<double>::infinity();
    double val_after = std::numeric_limits<double>::infinity();
    bool improved = false;
};

/// PSO over the flattened classifier weights. Each evaluation draws a
/// fresh subsample of the training split, seeded by (seed, iteration,
/// particle), and scores the penalized meta-loss on it. The swarm's best
/// weights are kept only if they lower the validation meta-loss.
inline MetaTrainResult meta_train(const MlpParams& params, const Dataset& d, const ProblemSet& problems,
                                  const MetaOptConfig& mcfg, const MetaLossConfig& lcfg, const SolverOptions& opts = {})
{
    mcfg.check();
    lcfg.check();
    d.check();
    require_dims(problems.size(), d.size(), "problems vs dataset");
    MetaTrainResult res;
    res.params = params;
    if (mcfg.n_iters == 0)
        return res;
    if (d.split.train.empty())
        throw EmptyDataset("training split is empty");

    // particles run in parallel; each evaluation solves sequentially
    SwarmObjective objective = [&](const Eigen::VectorXd& w, int iter, int particle) {
        const MlpParams p = unflatten(params, w);
        const auto rows = subsample_rows(d.split.train, static_cast<std::size_t>(mcfg.subsample),
                                         derive_seed(mcfg.seed, {static_cast<std::uint64_t>(iter),
                                                                 static_cast<std::uint64_t>(particle)}));
        return evaluate_classifier(p, d, problems, rows, lcfg, opts, true, false).value;
    };
    res.swarm = pso_minimize(objective, flatten(params), mcfg);

    const auto& val_rows = d.split.val.empty() ? d.split.train : d.split.val;
    res.val_before = evaluate_classifier(params, d, problems, val_rows, lcfg, opts).value;
    const MlpParams candidate = unflatten(params, res.swarm.best);
    res.val_after = evaluate_classifier(candidate, d, problems, val_rows, lcfg, opts).value;
    if (res.val_after < res.val_before) {
        res.params = candidate;
        res.improved = true;
    }
    return res;
}

} // namespace opfmeta
