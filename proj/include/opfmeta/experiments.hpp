#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "opfmeta/config.hpp"
#include "opfmeta/dataset.hpp"
#include "opfmeta/dc_model.hpp"
#include "opfmeta/errors.hpp"
#include "opfmeta/feasibility.hpp"
#include "opfmeta/grid.hpp"
#include "opfmeta/meta_train.hpp"
#include "opfmeta/mlp_io.hpp"
#include "opfmeta/parallel.hpp"
#include "opfmeta/qp_ipm.hpp"
#include "opfmeta/records.hpp"
#include "opfmeta/rng.hpp"
#include "opfmeta/scenario.hpp"
#include "opfmeta/train.hpp"

namespace opfmeta {

/// 100 (t_full - t_ml) / t_full
inline double gain(double t_full, double t_ml)
{
    if (!(t_full > 0.0))
        throw NonpositiveBaseline("gain needs a positive baseline, got " + std::to_string(t_full));
    return 100.0 * (t_full - t_ml) / t_full;
}

/// Two-sided 95% half-width of the mean (Student t); 0 for fewer than 2 values.
inline double ci95_half_width(const std::vector<double>& xs)
{
    if (xs.size() < 2)
        return 0.0;
    const auto n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs)
        mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : xs)
        ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    const boost::math::students_t dist(n - 1.0);
    return boost::math::quantile(boost::math::complement(dist, 0.025)) * sd / std::sqrt(n);
}

struct MetaLossReport {
    MetaMetric metric = MetaMetric::WorkUnits;
    double t_full = 0.0;
    double t_ml = 0.0;
    double gain_percent = 0.0;
    std::vector<double> full_per_scenario;
    std::vector<double> ml_per_scenario;
    int runs = 1;
    std::optional<double> ci95; // half-width of the gain over runs
};

inline MetaLossReport make_report(MetaMetric metric, std::vector<double> full, std::vector<double> ml)
{
    require_dims(ml.size(), full.size(), "per-scenario costs");
    MetaLossReport r;
    r.metric = metric;
    for (double v : full)
        r.t_full += v;
    for (double v : ml)
        r.t_ml += v;
    r.gain_percent = gain(r.t_full, r.t_ml);
    r.full_per_scenario = std::move(full);
    r.ml_per_scenario = std::move(ml);
    return r;
}

/// Mean over runs. The gain is recomputed from the mean costs so the Eq. (3)
/// identity holds for the combined fields; ci95 is over the per-run gains.
inline MetaLossReport combine_runs(const std::vector<MetaLossReport>& runs)
{
    if (runs.empty())
        throw EmptyBatch("no runs to combine");
    MetaLossReport r;
    r.metric = runs.front().metric;
    std::vector<double> gains;
    for (const auto& x : runs) {
        r.t_full += x.t_full;
        r.t_ml += x.t_ml;
        gains.push_back(x.gain_percent);
    }
    r.t_full /= static_cast<double>(runs.size());
    r.t_ml /= static_cast<double>(runs.size());
    r.gain_percent = gain(r.t_full, r.t_ml);
    r.runs = static_cast<int>(runs.size());
    if (runs.size() >= 2)
        r.ci95 = ci95_half_width(gains);
    return r;
}

inline json to_json(const MetaLossReport& r, bool per_scenario = false)
{
    json j{{"metric", to_string(r.metric)},
           {"t_full", r.t_full},
           {"t_ml", r.t_ml},
           {"gain_percent", r.gain_percent},
           {"runs", r.runs}};
    if (r.ci95)
        j["ci95"] = *r.ci95;
    if (per_scenario) {
        j["full_per_scenario"] = r.full_per_scenario;
        j["ml_per_scenario"] = r.ml_per_scenario;
    }
    return j;
}

// ---------------------------------------------------------------- dataset

struct GenerationLog {
    std::size_t requested = 0;
    std::vector<std::pair<std::size_t, std::string>> discarded; // scenario index, reason
};

class GenerationFailure : public Error {
public:
    using Error::Error;
};

inline Scenario scenario_for(const Grid& g, const ScenarioRanges& ranges, std::uint64_t seed, std::size_t i)
{
    return sample_scenario(g, ranges, derive_seed(seed, {1, i}));
}

/// Labels one scenario from a cold full solve. Returns nullopt (and a reason)
/// when the solve does not reach optimality.
inline std::optional<Sample> label_scenario(const Grid& g, const Scenario& s, const SolverOptions& opts,
                                            std::string* reason = nullptr)
{
    const DcOpfProblem full = build_full(g, s);
    const SolveReport r = InteriorPointSolver(opts).solve(full.qp);
    if (!r.ok()) {
        if (reason)
            *reason = std::string(to_string(r.status)) + " " + r.message;
        return std::nullopt;
    }
    Sample out;
    out.scenario = s;
    out.phi = phi_vector(g, s).values;
    out.label = binding_status(full, r.primal);
    out.objective = r.objective;
    out.primal.assign(r.primal.data(), r.primal.data() + r.primal.size());
    out.iterations = r.iterations;
    out.work_units = r.work_units;
    out.wall_time = r.wall_time;
    return out;
}

/// Seed-indexed scenarios, solved in parallel and merged in index order.
/// Failed (mostly infeasible) scenarios are logged and replaced by the next
/// seed indices until `n` rows solve; more than `max_failure_fraction * n`
/// failures abort the run.
inline Dataset generate_dataset(const Grid& g, std::size_t n, const ScenarioRanges& ranges, std::uint64_t seed,
                                const SolverOptions& opts = {}, const SplitFractions& split = {},
                                double max_failure_fraction = 0.10, GenerationLog* log = nullptr)
{
    if (n == 0)
        throw EmptyDataset("sample count must be positive");
    Dataset d;
    d.case_name = g.name;
    d.layout = phi_layout(g);
    d.catalog_size = build_full(g, Scenario::identity(g)).catalog->size();
    GenerationLog local;
    local.requested = n;
    const double allowed = max_failure_fraction * static_cast<double>(n);

    std::size_t next = 0;
    while (d.samples.size() < n) {
        const std::size_t batch = n - d.samples.size();
        std::vector<std::optional<Sample>> rows(batch);
        std::vector<std::string> reasons(batch);
        parallel_for(batch, [&](std::size_t k) {
            rows[k] = label_scenario(g, scenario_for(g, ranges, seed, next + k), opts, &reasons[k]);
        });
        for (std::size_t k = 0; k < batch; ++k) {
            if (rows[k])
                d.samples.push_back(std::move(*rows[k]));
            else
                local.discarded.emplace_back(next + k, reasons[k]);
        }
        next += batch;
        if (static_cast<double>(local.discarded.size()) > allowed) {
            if (log)
                *log = local;
            throw GenerationFailure(std::to_string(local.discarded.size()) + " of " + std::to_string(next) +
                                    " scenarios failed to solve");
        }
    }
    if (log)
        *log = local;
    d.split = make_split(d.size(), split, derive_seed(seed, {2}));
    fit_normalizer(d);
    return d;
}

inline Dataset generate_dataset(const Grid& g, const ExperimentConfig& c, GenerationLog* log = nullptr)
{
    return generate_dataset(g, c.samples, c.ranges, c.seed, c.solver, c.split, c.max_failure_fraction, log);
}

/// Number of distinct label vectors.
inline std::size_t count_active_sets(const Dataset& d)
{
    if (d.samples.empty())
        throw EmptyDataset("census of an empty dataset");
    std::set<ActiveSet> seen;
    for (const auto& s : d.samples)
        seen.insert(s.label);
    return seen.size();
}

/// Distinct label vectors with their frequencies, most frequent first.
inline std::vector<std::pair<std::string, std::size_t>> active_set_census(const Dataset& d)
{
    if (d.samples.empty())
        throw EmptyDataset("census of an empty dataset");
    std::map<std::string, std::size_t> freq;
    for (const auto& s : d.samples)
        ++freq[s.label.to_string()];
    std::vector<std::pair<std::string, std::size_t>> out(freq.begin(), freq.end());
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

// -------------------------------------------------------------- baselines

struct BaselineRow {
    std::size_t row = 0;
    bool ok = true;
    std::string error;
    int full_iterations = 0;
    double full_work_units = 0.0;
    double full_wall_time = 0.0;
    double full_objective = 0.0;
    int reduced_K = 0;
    double reduced_work_units = 0.0;
    double reduced_wall_time = 0.0;
    double reduced_objective = 0.0;
    int warm_iterations = 0;
    double warm_work_units = 0.0;
    double warm_wall_time = 0.0;
    double warm_objective = 0.0;
    bool objectives_match = false; // reduced and warm within 1e-6 of full
};

struct BaselineReport {
    std::vector<BaselineRow> rows;
    MetaLossReport classifier; // reduced problem with the true binding set
    MetaLossReport regressor;  // warm start from the stored optimum
    std::size_t failures = 0;
};

inline bool rel_close(double a, double b, double tol = 1e-6) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

/// Full cold solve, perfect-classifier reduction and perfect-regressor warm
/// start for every row. Failed rows are marked and left out of the gains.
inline BaselineReport perfect_baselines(const Dataset& d, const ProblemSet& problems, const std::vector<std::size_t>& rows,
                                        const SolverOptions& opts = {}, MetaMetric metric = MetaMetric::WorkUnits)
{
    require_dims(problems.size(), d.size(), "problems vs dataset");
    BaselineReport rep;
    rep.rows.resize(rows.size());
    const InteriorPointSolver solver(opts);
    parallel_for(rows.size(), [&](std::size_t k) {
        BaselineRow& b = rep.rows[k];
        b.row = rows[k];
        const auto& full = problems[rows[k]];
        const auto& s = d.samples[rows[k]];
        const SolveReport f = solver.solve(full.qp);
        if (!f.ok()) {
            b.ok = false;
            b.error = std::string("full solve ") + to_string(f.status);
            return;
        }
        b.full_iterations = f.iterations;
        b.full_work_units = f.work_units;
        b.full_wall_time = f.wall_time;
        b.full_objective = f.objective;
        try {
            const FeasibilityReport red = iterative_feasibility_test(full, s.label, opts);
            b.reduced_K = red.K();
            b.reduced_work_units = red.total_work_units;
            b.reduced_wall_time = red.total_wall_time;
            b.reduced_objective = red.objective;
        } catch (const SolverFailure& e) {
            b.ok = false;
            b.error = e.what();
            return;
        }
        const Vec x0 = Eigen::Map<const Vec>(s.primal.data(), static_cast<Eigen::Index>(s.primal.size()));
        const SolveReport w = solver.warm_solve(full.qp, x0);
        if (!w.ok()) {
            b.ok = false;
            b.error = std::string("warm solve ") + to_string(w.status);
            return;
        }
        b.warm_iterations = w.iterations;
        b.warm_work_units = w.work_units;
        b.warm_wall_time = w.wall_time;
        b.warm_objective = w.objective;
        b.objectives_match = rel_close(b.reduced_objective, b.full_objective) && rel_close(b.warm_objective, b.full_objective);
    });
    std::vector<double> full, red, warm;
    for (const auto& b : rep.rows) {
        if (!b.ok) {
            ++rep.failures;
            continue;
        }
        const bool wu = metric == MetaMetric::WorkUnits;
        full.push_back(wu ? b.full_work_units : b.full_wall_time);
        red.push_back(wu ? b.reduced_work_units : b.reduced_wall_time);
        warm.push_back(wu ? b.warm_work_units : b.warm_wall_time);
    }
    if (full.empty())
        throw SolverFailure("every baseline row failed", {});
    rep.classifier = make_report(metric, full, red);
    rep.regressor = make_report(metric, std::move(full), std::move(warm));
    return rep;
}

inline void write_baseline_csv(std::ostream& os, const BaselineReport& r, bool timing = false)
{
    os << "row,ok,full_iterations,full_work_units,reduced_K,reduced_work_units,warm_iterations,warm_work_units,"
          "full_objective,reduced_objective,warm_objective,objectives_match";
    if (timing)
        os << ",full_wall_time,reduced_wall_time,warm_wall_time";
    os << '\n';
    os.precision(12);
    for (const auto& b : r.rows) {
        os << b.row << ',' << b.ok << ',' << b.full_iterations << ',' << b.full_work_units << ',' << b.reduced_K << ','
           << b.reduced_work_units << ',' << b.warm_iterations << ',' << b.warm_work_units << ',' << b.full_objective
           << ',' << b.reduced_objective << ',' << b.warm_objective << ',' << b.objectives_match;
        if (timing)
            os << ',' << b.full_wall_time << ',' << b.reduced_wall_time << ',' << b.warm_wall_time;
        os << '\n';
    }
}

// ------------------------------------------------------------------ sweep

struct SweepTrial {
    int n_fp = 0;
    int n_fn = 0;
    int trial = 0;
    int K = 0;
    double work_units = 0.0;
    double wall_time = 0.0;
    double objective = 0.0;
};

struct SweepCell {
    int n_fp = 0;
    int n_fn = 0;
    std::vector<SweepTrial> trials;

    double mean_work_units() const
    {
        double s = 0.0;
        for (const auto& t : trials)
            s += t.work_units;
        return trials.empty() ? 0.0 : s / static_cast<double>(trials.size());
    }
    double sd_work_units() const
    {
        if (trials.size() < 2)
            return 0.0;
        const double m = mean_work_units();
        double ss = 0.0;
        for (const auto& t : trials)
            ss += (t.work_units - m) * (t.work_units - m);
        return std::sqrt(ss / static_cast<double>(trials.size() - 1));
    }
    double mean_K() const
    {
        double s = 0.0;
        for (const auto& t : trials)
            s += t.K;
        return trials.empty() ? 0.0 : s / static_cast<double>(trials.size());
    }
    double fraction_K_at_least(int k) const
    {
        if (trials.empty())
            return 0.0;
        std::size_t c = 0;
        for (const auto& t : trials)
            c += t.K >= k;
        return static_cast<double>(c) / static_cast<double>(trials.size());
    }
};

/// Removes `n_fn` random binding rows from, and adds `n_fp` random
/// non-binding rows to, the binding set of `solution`.
inline ActiveSet perturb_active_set(const ActiveSet& truth, int n_fp, int n_fn, std::uint64_t seed)
{
    std::vector<std::size_t> on, off;
    for (std::size_t i = 0; i < truth.size(); ++i)
        (truth[i] ? on : off).push_back(i);
    if (n_fp < 0 || n_fn < 0 || static_cast<std::size_t>(n_fn) > on.size() || static_cast<std::size_t>(n_fp) > off.size())
        throw InvalidPerturbation("cannot add " + std::to_string(n_fp) + " of " + std::to_string(off.size()) +
                                  " non-binding and drop " + std::to_string(n_fn) + " of " + std::to_string(on.size()) +
                                  " binding rows");
    Rng rng = make_rng(seed);
    ActiveSet out = truth;
    auto pick = [&rng](std::vector<std::size_t> pool, int k) {
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(static_cast<std::size_t>(k));
        return pool;
    };
    for (auto i : pick(on, n_fn))
        out.set(i, false);
    for (auto i : pick(off, n_fp))
        out.set(i, true);
    return out;
}

inline SweepCell perturb_sweep(const DcOpfProblem& full, const Vec& solution, int n_fp, int n_fn, int trials,
                               std::uint64_t seed, const SolverOptions& opts = {})
{
    if (trials < 1)
        throw InvalidPerturbation("trials must be >= 1");
    const ActiveSet truth = binding_status(full, solution);
    SweepCell cell{n_fp, n_fn, std::vector<SweepTrial>(static_cast<std::size_t>(trials))};
    // validate before spawning workers
    perturb_active_set(truth, n_fp, n_fn, seed);
    parallel_for(cell.trials.size(), [&](std::size_t t) {
        const auto start = perturb_active_set(
            truth, n_fp, n_fn,
            derive_seed(seed, {static_cast<std::uint64_t>(n_fp), static_cast<std::uint64_t>(n_fn), t}));
        const FeasibilityReport r = iterative_feasibility_test(full, start, opts);
        cell.trials[t] = {n_fp, n_fn, static_cast<int>(t), r.K(), r.total_work_units, r.total_wall_time, r.objective};
    });
    return cell;
}

/// The Fig. 4 grid: FP-only cells 1..max_fp, then FN-only cells 1..max_fn.
inline std::vector<SweepCell> fp_fn_sweep(const DcOpfProblem& full, const Vec& solution, const SweepConfig& c,
                                          std::uint64_t seed, const SolverOptions& opts = {})
{
    std::vector<SweepCell> out;
    out.push_back(perturb_sweep(full, solution, 0, 0, c.trials, seed, opts));
    for (int k = 1; k <= c.max_fp; ++k)
        out.push_back(perturb_sweep(full, solution, k, 0, c.trials, seed, opts));
    for (int k = 1; k <= c.max_fn; ++k)
        out.push_back(perturb_sweep(full, solution, 0, k, c.trials, seed, opts));
    return out;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepCell>& cells)
{
    os << "n_fp,n_fn,trials,mean_K,min_K,max_K,mean_work_units,sd_work_units\n";
    os.precision(12);
    for (const auto& c : cells) {
        int lo = 0, hi = 0;
        if (!c.trials.empty()) {
            const auto [a, b] = std::minmax_element(c.trials.begin(), c.trials.end(),
                                                    [](const auto& x, const auto& y) { return x.K < y.K; });
            lo = a->K;
            hi = b->K;
        }
        os << c.n_fp << ',' << c.n_fn << ',' << c.trials.size() << ',' << c.mean_K() << ',' << lo << ',' << hi << ','
           << c.mean_work_units() << ',' << c.sd_work_units() << '\n';
    }
}

// ---------------------------------------------------------------- monitor

struct Confusion {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    double fn_rate() const { return tp + fn ? static_cast<double>(fn) / static_cast<double>(tp + fn) : 0.0; }
    double fp_rate() const { return fp + tn ? static_cast<double>(fp) / static_cast<double>(fp + tn) : 0.0; }
};

inline Confusion confusion(const MlpParams& params, const Dataset& d, const std::vector<std::size_t>& rows)
{
    Confusion c;
    const auto pred = predict_active_sets(params, d, rows);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& y = d.samples[rows[r]].label;
        for (std::size_t j = 0; j < y.size(); ++j) {
            if (y[j])
                (pred[r][j] ? c.tp : c.fn) += 1;
            else
                (pred[r][j] ? c.fp : c.tn) += 1;
        }
    }
    return c;
}

struct MonitorRow {
    int epoch = 0;
    bool final = false;
    double test_fp_loss = 0.0;
    double test_fn_loss = 0.0;
    double test_loss = 0.0;
    double meta_loss = 0.0;         // unpenalized
    double meta_loss_penalized = 0.0;
    double mean_K = 0.0;
    double wall_time = 0.0;
};

struct MonitorResult {
    TrainResult training;
    std::vector<MonitorRow> rows;
};

inline MonitorRow checkpoint_row(const MlpParams& p, int epoch, bool final, const Dataset& d, const ProblemSet& problems,
                                 const MetaLossConfig& lcfg, double w, const SolverOptions& opts)
{
    const auto& rows = d.split.test.empty() ? d.split.train : d.split.test;
    MonitorRow m;
    m.epoch = epoch;
    m.final = final;
    const WceParts parts = evaluate_loss(p, d, rows, w);
    m.test_fp_loss = parts.fp;
    m.test_fn_loss = parts.fn;
    m.test_loss = parts.total();
    const MetaLossEval ev = evaluate_classifier(p, d, problems, rows, lcfg, opts, false);
    m.meta_loss = ev.raw;
    m.meta_loss_penalized = ev.value;
    double k = 0.0;
    for (int x : ev.K)
        k += x;
    m.mean_K = k / static_cast<double>(ev.K.size());
    for (double t : ev.wall_time)
        m.wall_time += t;
    return m;
}

/// Trains while keeping the weights every `interval` epochs; each
/// checkpoint and the final (best) weights are scored on the test split.
inline MonitorResult monitor_training(const Dataset& d, const ProblemSet& problems, TrainConfig cfg, int interval,
                                      const MetaLossConfig& lcfg, const SolverOptions& opts = {})
{
    if (interval < 1)
        throw ConfigError("monitor interval must be >= 1");
    std::vector<std::pair<int, MlpParams>> checkpoints;
    auto user_hook = cfg.on_epoch;
    cfg.on_epoch = [&](int epoch, const MlpParams& p) {
        if (user_hook)
            user_hook(epoch, p);
        if (epoch % interval == 0)
            checkpoints.emplace_back(epoch, p);
    };
    MonitorResult out;
    out.training = train(d, cfg);
    for (const auto& [epoch, p] : checkpoints)
        out.rows.push_back(checkpoint_row(p, epoch, false, d, problems, lcfg, cfg.loss_weight, opts));
    out.rows.push_back(checkpoint_row(out.training.params, out.training.best_epoch, true, d, problems, lcfg,
                                      cfg.loss_weight, opts));
    return out;
}

inline void write_monitor_csv(std::ostream& os, const std::vector<MonitorRow>& rows, bool timing = false)
{
    os << "epoch,final,test_fp_loss,test_fn_loss,test_loss,meta_loss,meta_loss_penalized,mean_K";
    if (timing)
        os << ",wall_time";
    os << '\n';
    os.precision(12);
    for (const auto& r : rows) {
        os << r.epoch << ',' << r.final << ',' << r.test_fp_loss << ',' << r.test_fn_loss << ',' << r.test_loss << ','
           << r.meta_loss << ',' << r.meta_loss_penalized << ',' << r.mean_K;
        if (timing)
            os << ',' << r.wall_time;
        os << '\n';
    }
}

// --------------------------------------------------------------- pipeline

struct RunSummary {
    int run = 0;
    std::uint64_t train_seed = 0;
    std::uint64_t meta_seed = 0;
    int epochs = 0;
    int best_epoch = 0;
    double pre_meta_loss = 0.0;
    double post_meta_loss = 0.0;
    bool meta_improved = false;
    double val_before = 0.0;
    double val_after = 0.0;
    Confusion pre_confusion;
    Confusion post_confusion;
    MetaLossReport pre;
    MetaLossReport post;
    double wall_time = 0.0;
};

struct PipelineSummary {
    std::string case_name;
    std::size_t samples = 0;
    std::size_t discarded = 0;
    std::size_t distinct_active_sets = 0;
    double mean_active_count = 0.0;
    MetaLossReport perfect;
    std::vector<RunSummary> runs;
    MetaLossReport pre;  // combined over runs
    MetaLossReport post;
};

inline json to_json(const Confusion& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}}; }

inline json to_json(const PipelineSummary& s)
{
    json runs = json::array();
    for (const auto& r : s.runs)
        runs.push_back({{"run", r.run},
                        {"train_seed", r.train_seed},
                        {"meta_seed", r.meta_seed},
                        {"epochs", r.epochs},
                        {"best_epoch", r.best_epoch},
                        {"pre_meta_loss", r.pre_meta_loss},
                        {"post_meta_loss", r.post_meta_loss},
                        {"val_before", number_json(r.val_before)},
                        {"val_after", number_json(r.val_after)},
                        {"meta_improved", r.meta_improved},
                        {"pre_confusion", to_json(r.pre_confusion)},
                        {"post_confusion", to_json(r.post_confusion)},
                        {"pre", to_json(r.pre)},
                        {"post", to_json(r.post)}});
    return {{"record", "pipeline_summary"},
            {"version", kRecordVersion},
            {"case", s.case_name},
            {"samples", s.samples},
            {"discarded", s.discarded},
            {"distinct_active_sets", s.distinct_active_sets},
            {"mean_active_count", s.mean_active_count},
            {"perfect", to_json(s.perfect)},
            {"pre", to_json(s.pre)},
            {"post", to_json(s.post)},
            {"runs", runs}};
}

class PipelineFailure : public Error {
public:
    PipelineFailure(const std::string& what, std::string stage, int exit_hint)
        : Error(what), stage_(std::move(stage)), exit_hint_(exit_hint)
    {
    }
    const std::string& stage() const { return stage_; }
    int exit_hint() const { return exit_hint_; }

private:
    std::string stage_;
    int exit_hint_;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream os(p);
    if (!os)
        throw Error("cannot write " + p.string());
    os << text;
}

} // namespace detail

/// Test-split meta-loss of a classifier as a report against the stored
/// full-solve cost of the same rows.
inline MetaLossReport test_report(const MlpParams& p, const Dataset& d, const ProblemSet& problems,
                                  const MetaLossConfig& lcfg, const SolverOptions& opts)
{
    const auto& rows = d.split.test;
    const MetaLossEval ev = evaluate_classifier(p, d, problems, rows, lcfg, opts, false);
    std::vector<double> full;
    for (auto r : rows)
        full.push_back(lcfg.metric == MetaMetric::WorkUnits ? d.samples[r].work_units : d.samples[r].wall_time);
    return make_report(lcfg.metric, std::move(full),
                       lcfg.metric == MetaMetric::WorkUnits ? ev.work_units : ev.wall_time);
}

/// generate (or load) -> train -> pre meta-loss on test -> meta_train ->
/// post meta-loss on test, repeated for `runs` seeds. Artifacts go to
/// `output_dir`; wall-clock measurements go to a separate timing file so
/// the rest is reproducible. A failing stage leaves manifest.json behind.
inline PipelineSummary run_pipeline(const ExperimentConfig& cfg, std::ostream* log = nullptr)
{
    namespace fs = std::filesystem;
    using clock = std::chrono::steady_clock;
    cfg.check();
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    json manifest{{"config", config_to_json(cfg)}, {"completed", json::array()}};
    json timing{{"runs", json::array()}};
    std::string stage = "load_case";
    auto done = [&](const std::string& s) {
        manifest["completed"].push_back(s);
        if (log)
            *log << "[pipeline] " << s << " done\n";
    };

    try {
        if (!fs::is_regular_file(cfg.case_path))
            throw ConfigError("case file not found: " + cfg.case_path);
        if (!cfg.dataset_path.empty() && !fs::is_regular_file(cfg.dataset_path))
            throw ConfigError("dataset file not found: " + cfg.dataset_path);
        const Grid g = load_case(cfg.case_path);
        done(stage);

        stage = "generate";
        const auto t0 = clock::now();
        GenerationLog glog;
        Dataset d;
        if (!cfg.dataset_path.empty()) {
            d = load_dataset(cfg.dataset_path);
        } else {
            d = generate_dataset(g, cfg, &glog);
            save_dataset((out / "dataset.jsonl").string(), d);
        }
        if (d.split.test.empty())
            throw EmptyDataset("test split is empty");
        timing["generate"] = std::chrono::duration<double>(clock::now() - t0).count();
        for (const auto& [i, why] : glog.discarded)
            if (log)
                *log << "[generate] discarded scenario " << i << ": " << why << '\n';
        done(stage);

        stage = "problems";
        const ProblemSet problems = build_problems(g, d);
        done(stage);

        PipelineSummary sum;
        sum.case_name = d.case_name;
        sum.samples = d.size();
        sum.discarded = glog.discarded.size();
        sum.distinct_active_sets = count_active_sets(d);
        sum.mean_active_count = mean_active_count(d, d.split.train);
        MetaLossConfig lcfg = cfg.loss;
        lcfg.mean_active_count = sum.mean_active_count;

        stage = "perfect_baseline";
        std::vector<ActiveSet> truth;
        for (auto r : d.split.test)
            truth.push_back(d.samples[r].label);
        const MetaLossEval perfect = evaluate_sets(truth, d, problems, d.split.test, lcfg, cfg.solver, false);
        {
            std::vector<double> full;
            for (auto r : d.split.test)
                full.push_back(lcfg.metric == MetaMetric::WorkUnits ? d.samples[r].work_units : d.samples[r].wall_time);
            sum.perfect = make_report(lcfg.metric, std::move(full),
                                      lcfg.metric == MetaMetric::WorkUnits ? perfect.work_units : perfect.wall_time);
        }
        done(stage);

        std::vector<MetaLossReport> pres, posts;
        for (int run = 0; run < cfg.runs; ++run) {
            const auto tr = clock::now();
            RunSummary rs;
            rs.run = run;
            rs.train_seed = derive_seed(cfg.seed, {3, static_cast<std::uint64_t>(run)});
            rs.meta_seed = derive_seed(cfg.seed, {4, static_cast<std::uint64_t>(run)});
            const std::string tag = "run" + std::to_string(run);

            stage = tag + ".train";
            TrainConfig tcfg = cfg.train;
            tcfg.seed = rs.train_seed;
            const TrainResult trained = train(d, tcfg);
            rs.epochs = trained.epochs_run;
            rs.best_epoch = trained.best_epoch;
            save_mlp((out / (tag + "_pretrained.mlp")).string(), trained.params);
            {
                std::ofstream os(out / (tag + "_train_trace.csv"));
                write_training_trace_csv(os, trained.trace);
            }
            done(stage);

            stage = tag + ".pre";
            rs.pre = test_report(trained.params, d, problems, lcfg, cfg.solver);
            rs.pre_meta_loss = rs.pre.t_ml;
            rs.pre_confusion = confusion(trained.params, d, d.split.test);
            done(stage);

            stage = tag + ".meta";
            MetaOptConfig mcfg = cfg.meta;
            mcfg.seed = rs.meta_seed;
            const MetaTrainResult meta = meta_train(trained.params, d, problems, mcfg, lcfg, cfg.solver);
            rs.meta_improved = meta.improved;
            rs.val_before = meta.val_before;
            rs.val_after = meta.val_after;
            save_mlp((out / (tag + "_meta.mlp")).string(), meta.params);
            done(stage);

            stage = tag + ".post";
            rs.post = test_report(meta.params, d, problems, lcfg, cfg.solver);
            rs.post_meta_loss = rs.post.t_ml;
            rs.post_confusion = confusion(meta.params, d, d.split.test);
            done(stage);

            rs.wall_time = std::chrono::duration<double>(clock::now() - tr).count();
            timing["runs"].push_back({{"run", run}, {"wall_time", rs.wall_time}});
            pres.push_back(rs.pre);
            posts.push_back(rs.post);
            sum.runs.push_back(std::move(rs));
        }
        sum.pre = combine_runs(pres);
        sum.post = combine_runs(posts);

        detail::write_text(out / "summary.json", to_json(sum).dump(2) + "\n");
        detail::write_text(out / "timing.json", timing.dump(2) + "\n");
        return sum;
    } catch (const Error& e) {
        manifest["failed_stage"] = stage;
        manifest["error"] = e.what();
        detail::write_text(out / "manifest.json", manifest.dump(2) + "\n");
        const bool solver = dynamic_cast<const SolverFailure*>(&e) || dynamic_cast<const GenerationFailure*>(&e) ||
                            dynamic_cast<const SwarmError*>(&e);
        const bool config = dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
                            dynamic_cast<const ValidationError*>(&e);
        throw PipelineFailure(stage + ": " + e.what(), stage, solver ? 3 : config ? 2 : 1);
    }
}

} // namespace opfmeta
