// Acceptance run: one PASS/FAIL line per criterion, exit 4 if any fails.
// `acceptance 3 5` runs a subset.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "opfmeta/opfmeta.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracle.hpp"

using namespace opfmeta;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

struct Criterion {
    int id;
    const char* title;
    double budget_s; // 0 = no runtime bound
    std::function<Outcome()> run;
};

bool rel_ok(double a, double b, double tol = 1e-6) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

std::string fmt(double x, int prec = 4)
{
    std::ostringstream ss;
    ss << std::setprecision(prec) << x;
    return ss.str();
}

std::vector<std::size_t> every_row(const Dataset& d)
{
    std::vector<std::size_t> r(d.size());
    for (std::size_t i = 0; i < r.size(); ++i)
        r[i] = i;
    return r;
}

// cases with at least 200 scenarios for criteria 2 and 3
std::vector<Grid> reduction_cases()
{
    return {fixtures::toy2(),
            fixtures::toy3(),
            fixtures::toy6(),
            fixtures::pglib("case24_ieee_rts"),
            fixtures::pglib("case30_ieee"),
            fixtures::pglib("case57_ieee")};
}

Dataset scenarios_200(const Grid& g) { return generate_dataset(g, 200, ScenarioRanges::dc_defaults(), 2024); }

// ------------------------------------------------------------- criteria

Outcome c1_oracle()
{
    int mismatched = 0, kkt_bad = 0, failed = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const int n = 2 + static_cast<int>(seed % 19);
        const int me = static_cast<int>(seed % 4) % n;
        const int mi = 1 + static_cast<int>((seed / 2) % 10);
        const QpProblem qp = oracle::random_qp(n, me, mi, 90000 + seed);
        const auto ref = oracle::solve(qp);
        const SolveReport r = solve(qp);
        if (!ref || !r.ok()) {
            ++failed;
            continue;
        }
        mismatched += !rel_ok(r.objective, ref->objective);
        kkt_bad += !kkt_residuals(qp, r).pass(1e-7);
    }
    return {mismatched == 0 && kkt_bad == 0 && failed == 0,
            "200 QPs: " + std::to_string(mismatched) + " objective mismatches, " + std::to_string(kkt_bad) +
                " KKT failures, " + std::to_string(failed) + " unsolved"};
}

Outcome c2_reduction()
{
    Outcome o;
    for (const Grid& g : reduction_cases()) {
        const Dataset d = scenarios_200(g);
        const ProblemSet problems = build_problems(g, d);
        std::size_t bad = 0;
        double worst = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const SolveReport r = solve(build_reduced(problems[i], d.samples[i].label).qp);
            const double err = std::abs(r.objective - d.samples[i].objective) / std::max(1.0, std::abs(d.samples[i].objective));
            worst = std::max(worst, r.ok() ? err : INFINITY);
            bad += !(r.ok() && err <= 1e-6);
        }
        o.pass = o.pass && bad == 0;
        o.detail += g.name + " " + std::to_string(d.size() - bad) + "/" + std::to_string(d.size()) + " (worst " +
                    fmt(worst, 2) + ")  ";
    }
    return o;
}

Outcome c3_feasibility()
{
    Outcome o;
    for (const Grid& g : reduction_cases()) {
        const Dataset d = scenarios_200(g);
        const ProblemSet problems = build_problems(g, d);
        TrainConfig tc;
        tc.max_epochs = 50;
        tc.seed = 7;
        const MlpParams clf = train(d, tc).params;
        const auto rows = every_row(d);
        const auto predicted = predict_active_sets(clf, d, rows);
        std::size_t bad = 0, runs = 0;
        int max_K = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const std::size_t n = problems[i].catalog->size();
            for (const ActiveSet& start : {ActiveSet::none(n), ActiveSet::all(n), predicted[i]}) {
                ++runs;
                try {
                    const FeasibilityReport r = iterative_feasibility_test(problems[i], start);
                    max_K = std::max(max_K, r.K());
                    bad += !(violated_constraints(problems[i], r.solution, kFeasibilityTol).empty() &&
                             rel_ok(r.objective, d.samples[i].objective));
                } catch (const SolverFailure&) {
                    ++bad;
                }
            }
        }
        o.pass = o.pass && bad == 0;
        o.detail += g.name + " " + std::to_string(runs - bad) + "/" + std::to_string(runs) + " (max K " +
                    std::to_string(max_K) + ")  ";
    }
    return o;
}

Outcome c4_sweep()
{
    Outcome o;
    for (const Grid& g : {fixtures::toy3(), fixtures::pglib("case30_ieee")}) {
        const DcOpfProblem full = build_full(g, Scenario::identity(g));
        const SolveReport s = solve(full.qp);
        const ActiveSet truth = binding_status(full, s.primal);
        bool fp_ok = true;
        for (int k = 1; k <= 10; ++k) {
            const SweepCell c = perturb_sweep(full, s.primal, k, 0, 20, 31);
            for (const auto& t : c.trials)
                fp_ok = fp_ok && t.K == 1;
        }
        // n_fn can not exceed the number of binding rows
        const int max_fn = std::min<int>(3, static_cast<int>(truth.count()));
        bool fn_ok = true, increasing = true;
        double prev = -INFINITY;
        std::string means;
        for (int k = 1; k <= max_fn; ++k) {
            const SweepCell c = perturb_sweep(full, s.primal, 0, k, 20, 31);
            fn_ok = fn_ok && c.fraction_K_at_least(2) >= 0.95;
            increasing = increasing && c.mean_work_units() > prev;
            prev = c.mean_work_units();
            means += fmt(c.mean_work_units(), 6) + (k < max_fn ? "<" : "");
        }
        o.pass = o.pass && fp_ok && fn_ok && increasing;
        o.detail += g.name + ": FP-only K=1 " + (fp_ok ? "yes" : "no") + ", n_fn 1.." + std::to_string(max_fn) +
                    " K>=2 " + (fn_ok ? "yes" : "no") + ", work " + means + (increasing ? "" : " NOT increasing") +
                    "  ";
    }
    return o;
}

// perfect baselines on the 1k preset test split, shared by criteria 5 and 6
struct BaselineRun {
    std::string name;
    BaselineReport report;
};

const std::vector<BaselineRun>& preset_baselines()
{
    static const std::vector<BaselineRun> runs = [] {
        std::vector<BaselineRun> out;
        for (const char* name : {"case24_ieee_rts", "case30_ieee", "case57_ieee"}) {
            const Grid g = fixtures::pglib(name);
            const ExperimentConfig c = preset("1k");
            const Dataset d = generate_dataset(g, c.samples, c.ranges, c.seed);
            const ProblemSet problems = build_problems(g, d);
            out.push_back({g.name, perfect_baselines(d, problems, d.split.test)});
        }
        for (const Grid& g : {fixtures::toy3(), fixtures::toy6()}) {
            const Dataset d = scenarios_200(g);
            const ProblemSet problems = build_problems(g, d);
            out.push_back({g.name, perfect_baselines(d, problems, every_row(d))});
        }
        return out;
    }();
    return runs;
}

Outcome c5_classifier_gain()
{
    Outcome o;
    for (const auto& b : preset_baselines()) {
        if (b.name.rfind("pglib", 0) != 0)
            continue;
        const bool ok = b.report.failures == 0 && b.report.classifier.gain_percent > 0.0;
        o.pass = o.pass && ok;
        o.detail += b.name + " " + fmt(b.report.classifier.gain_percent) + "%" +
                    (b.report.failures ? " (" + std::to_string(b.report.failures) + " failed)" : "") + "  ";
    }
    return o;
}

Outcome c6_warm_start()
{
    Outcome o;
    for (const auto& b : preset_baselines()) {
        std::size_t good = 0, n = 0;
        for (const auto& r : b.report.rows) {
            ++n;
            good += r.ok && r.warm_iterations <= r.full_iterations;
        }
        const double frac = static_cast<double>(good) / static_cast<double>(n);
        o.pass = o.pass && frac >= 0.95;
        o.detail += b.name + " " + fmt(100.0 * frac, 3) + "% (regressor gain " +
                    fmt(b.report.regressor.gain_percent, 3) + "%)  ";
    }
    return o;
}

Outcome c7_equalities()
{
    const Grid g30 = fixtures::pglib("case30_ieee"), g57 = fixtures::pglib("case57_ieee");
    const auto n30 = build_full(g30, Scenario::identity(g30)).qp.num_eq();
    const auto n57 = build_full(g57, Scenario::identity(g57)).qp.num_eq();
    return {n30 == 72 && n57 == 138, "case30 " + std::to_string(n30) + ", case57 " + std::to_string(n57)};
}

Outcome c8_gradients()
{
    double worst = 0.0;
    int kinks = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        int k = 0;
        worst = std::max(worst, gradcheck::run(700 + seed, seed % 2 == 1, 1e-5, &k));
        kinks += k;
    }
    return {worst <= 1e-4, "worst relative error " + fmt(worst, 3) + " over 50 instances (" + std::to_string(kinks) +
                               " components skipped at ReLU kinks)"};
}

// toy6 has a dozen distinct active sets under the default ranges
Dataset toy6_dataset() { return generate_dataset(fixtures::toy6(), 1000, ScenarioRanges::dc_defaults(), 1); }

Outcome c9_weighted_loss()
{
    const Dataset d = toy6_dataset();
    const std::size_t distinct = count_active_sets(d);
    Confusion plain{}, weighted{};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (double w : {0.5, 0.75}) {
            TrainConfig tc;
            tc.max_epochs = 50;
            tc.burn_in_epochs = 50; // no early stop, equal epochs
            tc.seed = derive_seed(9, {seed});
            tc.loss_weight = w;
            const Confusion c = confusion(train(d, tc).params, d, d.split.test);
            Confusion& acc = w == 0.5 ? plain : weighted;
            acc.tp += c.tp;
            acc.fp += c.fp;
            acc.fn += c.fn;
            acc.tn += c.tn;
        }
    }
    auto fn_rate = [](const Confusion& c) { return static_cast<double>(c.fn) / static_cast<double>(std::max<std::size_t>(1, c.fn + c.tp)); };
    return {distinct >= 5 && fn_rate(weighted) <= fn_rate(plain),
            std::to_string(distinct) + " active sets; test FN rate w=0.75 " + fmt(fn_rate(weighted)) + " vs w=0.5 " +
                fmt(fn_rate(plain)) + " over 5 seeds"};
}

Outcome c10_meta()
{
    const Grid g = fixtures::toy6();
    const Dataset d = toy6_dataset();
    const ProblemSet problems = build_problems(g, d);
    MetaLossConfig l;
    l.mean_active_count = mean_active_count(d, d.split.train);
    std::vector<ActiveSet> truth;
    for (auto r : d.split.test)
        truth.push_back(d.samples[r].label);
    const double perfect = evaluate_sets(truth, d, problems, d.split.test, l, {}, false).raw;

    int improved = 0, degraded = 0;
    double min_headroom = INFINITY;
    std::string runs;
    for (std::uint64_t run = 0; run < 10; ++run) {
        TrainConfig tc; // conventional: w = 0.5, early stopping
        tc.seed = derive_seed(1, {3, run});
        const MlpParams pre_params = train(d, tc).params;
        const double pre = evaluate_classifier(pre_params, d, problems, d.split.test, l, {}, false).raw;
        min_headroom = std::min(min_headroom, (pre - perfect) / perfect);
        MetaOptConfig m;
        m.n_particles = 10;
        m.n_iters = 50;
        m.subsample = 100;
        m.seed = derive_seed(1, {4, run});
        const MetaTrainResult res = meta_train(pre_params, d, problems, m, l, {});
        const double post = evaluate_classifier(res.params, d, problems, d.split.test, l, {}, false).raw;
        improved += post < pre;
        degraded += post > pre;
        runs += fmt(pre, 6) + (post < pre ? ">" : post > pre ? "<" : "=") + fmt(post, 6) + " ";
    }
    const bool headroom = min_headroom >= 0.10;
    return {headroom && improved >= 8 && degraded == 0,
            "headroom >= " + fmt(100.0 * min_headroom, 3) + "%; improved " + std::to_string(improved) +
                "/10, degraded " + std::to_string(degraded) + "; pre vs post: " + runs};
}

std::map<std::string, std::string> artifacts(const fs::path& dir)
{
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().filename() == "timing.json")
            continue;
        std::ifstream is(e.path(), std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        out[e.path().filename().string()] = ss.str();
    }
    return out;
}

Outcome c11_determinism()
{
    const fs::path root = fs::temp_directory_path() / "opfmeta_acceptance_c11";
    fs::remove_all(root);
    ExperimentConfig c;
    c.case_path = fixtures::case_path("toys/toy6_meshed.m");
    c.samples = 150;
    c.seed = 11;
    c.train.max_epochs = 20;
    c.meta.n_particles = 4;
    c.meta.n_iters = 5;
    c.meta.subsample = 30;
    c.runs = 2;
    c.output_dir = (root / "a").string();
    run_pipeline(c);
    c.output_dir = (root / "b").string();
    run_pipeline(c);
    const auto a = artifacts(root / "a"), b = artifacts(root / "b");
    std::size_t differ = 0;
    for (const auto& [name, bytes] : a)
        differ += !b.count(name) || b.at(name) != bytes;
    fs::remove_all(root);
    return {differ == 0 && a.size() == b.size() && !a.empty(),
            std::to_string(a.size()) + " artifacts compared, " + std::to_string(differ) + " differ"};
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<Criterion> all{
        {1, "solver oracle equivalence", 60, c1_oracle},
        {2, "reduction equivalence", 300, c2_reduction},
        {3, "feasibility-test guarantee", 600, c3_feasibility},
        {4, "FP/FN asymmetry", 300, c4_sweep},
        {5, "perfect-classifier gain sign", 0, c5_classifier_gain},
        {6, "perfect-regressor warm start", 0, c6_warm_start},
        {7, "equality-count fidelity", 0, c7_equalities},
        {8, "gradient check", 60, c8_gradients},
        {9, "weighted-loss direction", 0, c9_weighted_loss},
        {10, "meta-optimization improvement", 7200, c10_meta},
        {11, "determinism", 0, c11_determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i)
        only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.id))
            continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0 && secs > c.budget_s) {
            o.pass = false;
            o.detail += " [over the " + fmt(c.budget_s) + " s budget]";
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.title << "): " << o.detail
                  << " [" << fmt(secs, 3) << " s]" << std::endl;
    }
    return failed ? 4 : 0;
}
