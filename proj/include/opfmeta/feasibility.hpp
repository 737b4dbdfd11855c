#pragma once

#include <chrono>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "opfmeta/dc_model.hpp"
#include "opfmeta/errors.hpp"
#include "opfmeta/qp_ipm.hpp"

namespace opfmeta {

struct FeasibilityIteration {
    std::size_t active_count = 0;
    SolveReport report;
    std::vector<std::size_t> violated; // N_k, catalog indices
};

/// Outcome of the iterative feasibility test. Solver time and problem
/// construction time are kept apart; the meta-loss uses solver time.
struct FeasibilityReport {
    Vec solution;
    double objective = std::numeric_limits<double>::quiet_NaN();
    ActiveSet final_set;
    std::vector<FeasibilityIteration> iterations;
    double total_wall_time = 0.0;
    double total_work_units = 0.0;
    double build_time = 0.0;

    int K() const { return static_cast<int>(iterations.size()); }
};

class SolverFailure : public Error {
public:
    SolverFailure(const std::string& what, FeasibilityReport partial)
        : Error(what), partial_(std::move(partial))
    {
    }
    const FeasibilityReport& partial() const { return partial_; }

private:
    FeasibilityReport partial_;
};

/// Solve the reduced problem for A_k, check every catalog row of the full
/// problem at 1e-8, set A_{k+1} = A_k plus the violated rows, repeat until
/// nothing is violated. Sets only grow, so the loop ends after at most
/// |catalog| + 1 solves.
inline FeasibilityReport iterative_feasibility_test(const DcOpfProblem& full, const ActiveSet& initial,
                                                    const SolverOptions& opts = {})
{
    if (!full.is_full())
        throw ValidationError("feasibility test needs the full problem");
    require_dims(initial.size(), full.catalog->size(), "initial active set");
    using clock = std::chrono::steady_clock;
    const InteriorPointSolver solver(opts);

    FeasibilityReport rep;
    ActiveSet active = initial;
    for (;;) {
        const auto tb = clock::now();
        const DcOpfProblem reduced = build_reduced(full, active);
        rep.build_time += std::chrono::duration<double>(clock::now() - tb).count();

        FeasibilityIteration step;
        step.active_count = active.count();
        step.report = solver.solve(reduced.qp);
        rep.total_wall_time += step.report.wall_time;
        rep.total_work_units += step.report.work_units;
        if (!step.report.ok()) {
            const std::string msg = std::string("reduced solve failed at iteration ") +
                                    std::to_string(rep.iterations.size() + 1) + ": " +
                                    to_string(step.report.status) + " " + step.report.message;
            rep.iterations.push_back(std::move(step));
            rep.final_set = active;
            throw SolverFailure(msg, std::move(rep));
        }
        step.violated = violated_constraints(full, step.report.primal, kFeasibilityTol);
        const bool done = step.violated.empty();
        bool grew = false;
        for (auto i : step.violated)
            if (!active[i]) {
                active.set(i);
                grew = true;
            }
        rep.solution = step.report.primal;
        rep.objective = step.report.objective;
        rep.iterations.push_back(std::move(step));
        if (done)
            break;
        if (!grew) {
            rep.final_set = active;
            throw SolverFailure("violated rows are already enforced; reduced solution is inaccurate", std::move(rep));
        }
    }
    rep.final_set = active;
    return rep;
}

enum class MetaMetric { WorkUnits, WallTime };

inline const char* to_string(MetaMetric m) { return m == MetaMetric::WorkUnits ? "work_units" : "wall_time"; }

struct MetaLossConfig {
    MetaMetric metric = MetaMetric::WorkUnits;
    double penalty_threshold_multiplier = 2.0;
    double mean_active_count = 0.0;
    bool per_sample_penalty = false;

    void check() const
    {
        if (!(penalty_threshold_multiplier > 0.0))
            throw ConfigError("penalty multiplier must be positive");
    }
};

inline double metric_value(const FeasibilityReport& r, MetaMetric m)
{
    return m == MetaMetric::WorkUnits ? r.total_work_units : r.total_wall_time;
}

inline double meta_loss(const std::vector<FeasibilityReport>& reports, const MetaLossConfig& cfg)
{
    if (reports.empty())
        throw EmptyBatch("meta-loss needs at least one report");
    double total = 0.0;
    for (const auto& r : reports)
        total += metric_value(r, cfg.metric);
    return total;
}

/// True when the predictions are too large on average (or, with
/// per_sample_penalty, for any single sample); the comparison is strict.
inline bool penalty_triggered(const std::vector<ActiveSet>& predicted, const MetaLossConfig& cfg)
{
    cfg.check();
    if (predicted.empty())
        throw EmptyBatch("meta-loss needs at least one report");
    const double limit = cfg.penalty_threshold_multiplier * cfg.mean_active_count;
    double total = 0.0;
    for (const auto& a : predicted) {
        const auto c = static_cast<double>(a.count());
        if (cfg.per_sample_penalty && c > limit)
            return true;
        total += c;
    }
    return total / static_cast<double>(predicted.size()) > limit;
}

inline double penalized_meta_loss(const std::vector<ActiveSet>& predicted, const std::vector<FeasibilityReport>& reports,
                                  const MetaLossConfig& cfg)
{
    require_dims(predicted.size(), reports.size(), "predicted sets vs reports");
    if (penalty_triggered(predicted, cfg))
        return std::numeric_limits<double>::infinity();
    return meta_loss(reports, cfg);
}

} // namespace opfmeta
