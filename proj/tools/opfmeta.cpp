#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <curl/curl.h>
#include <openssl/evp.h>

#include "opfmeta/opfmeta.hpp"

using namespace opfmeta;
namespace fs = std::filesystem;
using json = nlohmann::json;

#ifndef OPFMETA_CASES_DIR
#define OPFMETA_CASES_DIR "cases"
#endif

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kSolver = 3, kAssert = 4 };

// a checked property did not hold
class AssertFailure : public Error {
public:
    using Error::Error;
};

// baseline rows whose solves failed
class BaselineFailure : public Error {
public:
    using Error::Error;
};

bool timing_columns = false;

// flags shared by every subcommand; unset ones leave the config alone
struct Common {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string case_path;
    std::optional<std::size_t> samples;
    std::string out;
    std::string dataset;
    std::optional<std::size_t> workers;
    std::optional<int> epochs;
    std::optional<double> loss_weight;
    std::optional<int> particles;
    std::optional<int> meta_iters;
    std::optional<int> runs;
    std::optional<int> max_iters;
    std::string metric;
    bool timing = false;
};

void add_common(CLI::App* sub, Common& c)
{
    sub->add_option("--config", c.config, "versioned JSON config");
    sub->add_option("--preset", c.preset, "sample-count preset when no config is given (1k, 10k)");
    sub->add_option("--seed", c.seed, "master seed");
    sub->add_option("--case", c.case_path, "MATPOWER case file");
    sub->add_option("--samples", c.samples, "scenario count");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--dataset", c.dataset, "reuse a labeled dataset (JSONL)");
    sub->add_option("--workers", c.workers, "worker threads, 0 = all cores");
    sub->add_option("--epochs", c.epochs, "max training epochs");
    sub->add_option("--loss-weight", c.loss_weight, "cross-entropy weight w (0.5 conventional)");
    sub->add_option("--particles", c.particles, "swarm size");
    sub->add_option("--meta-iters", c.meta_iters, "swarm iterations");
    sub->add_option("--runs", c.runs, "independent pipeline runs");
    sub->add_option("--max-iters", c.max_iters, "IPM iteration cap");
    sub->add_option("--metric", c.metric, "meta-loss metric: work_units or wall_time");
    sub->add_flag("--timing", c.timing, "add wall-clock columns to CSV output");
}

ExperimentConfig resolve(const Common& c)
{
    ExperimentConfig cfg;
    if (!c.config.empty())
        cfg = load_config(c.config);
    else if (!c.preset.empty())
        cfg = preset(c.preset);
    if (c.seed)
        cfg.seed = *c.seed;
    if (!c.case_path.empty())
        cfg.case_path = c.case_path;
    if (c.samples)
        cfg.samples = *c.samples;
    if (!c.out.empty())
        cfg.output_dir = c.out;
    if (!c.dataset.empty())
        cfg.dataset_path = c.dataset;
    if (c.workers)
        cfg.workers = *c.workers;
    if (c.epochs)
        cfg.train.max_epochs = *c.epochs;
    if (c.loss_weight)
        cfg.train.loss_weight = *c.loss_weight;
    if (c.particles)
        cfg.meta.n_particles = *c.particles;
    if (c.meta_iters)
        cfg.meta.n_iters = *c.meta_iters;
    if (c.runs)
        cfg.runs = *c.runs;
    if (c.max_iters)
        cfg.solver.max_iters = *c.max_iters;
    if (c.metric == "work_units")
        cfg.loss.metric = MetaMetric::WorkUnits;
    else if (c.metric == "wall_time")
        cfg.loss.metric = MetaMetric::WallTime;
    else if (!c.metric.empty())
        throw ConfigError("unknown metric '" + c.metric + "'");
    cfg.check();
    worker_count() = cfg.workers;
    return cfg;
}

Grid need_case(const ExperimentConfig& cfg)
{
    if (cfg.case_path.empty())
        throw ConfigError("no case given (--case or \"case\" in the config)");
    if (!fs::is_regular_file(cfg.case_path))
        throw ConfigError("case file not found: " + cfg.case_path);
    return load_case(cfg.case_path);
}

fs::path out_dir(const ExperimentConfig& cfg)
{
    fs::create_directories(cfg.output_dir);
    return cfg.output_dir;
}

Dataset need_dataset(const Grid& g, const ExperimentConfig& cfg)
{
    if (!cfg.dataset_path.empty()) {
        if (!fs::is_regular_file(cfg.dataset_path))
            throw ConfigError("dataset file not found: " + cfg.dataset_path);
        Dataset d = load_dataset(cfg.dataset_path);
        if (d.case_name != g.name)
            throw ConfigError("dataset was labeled on " + d.case_name + ", not " + g.name);
        return d;
    }
    GenerationLog log;
    Dataset d = generate_dataset(g, cfg, &log);
    for (const auto& [i, why] : log.discarded)
        std::cerr << "discarded scenario " << i << ": " << why << '\n';
    return d;
}

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream os(p, std::ios::binary);
    if (!os || !(os << text))
        throw Error("cannot write " + p.string());
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    if (!is)
        throw ConfigError("cannot read " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

MetaLossConfig loss_config(const ExperimentConfig& cfg, const Dataset& d)
{
    MetaLossConfig l = cfg.loss;
    l.mean_active_count = mean_active_count(d, d.split.train);
    return l;
}

TrainConfig train_config(const ExperimentConfig& cfg)
{
    TrainConfig t = cfg.train;
    t.seed = derive_seed(cfg.seed, {3, 0});
    return t;
}

// ------------------------------------------------------------ subcommands

int cmd_parse(const ExperimentConfig& cfg, const std::string& write_to)
{
    const Grid g = need_case(cfg);
    const DcOpfProblem full = build_full(g, Scenario::identity(g));
    const PhiVector phi = phi_vector(g, Scenario::identity(g));
    json j{{"case", g.name},
           {"base_mva", g.base_mva},
           {"buses", g.buses.size()},
           {"generators", g.generators.size()},
           {"branches", g.branches.size()},
           {"loads", g.num_loads()},
           {"catalog_size", full.catalog->size()},
           {"phi_dim", phi.values.size()}};
    std::cout << j.dump(2) << '\n';
    if (!write_to.empty())
        write_file(write_to, write_case(g));
    return kOk;
}

int cmd_sample(const ExperimentConfig& cfg)
{
    const Grid g = need_case(cfg);
    const fs::path p = out_dir(cfg) / "scenarios.jsonl";
    std::ofstream os(p);
    if (!os)
        throw Error("cannot write " + p.string());
    for (std::size_t i = 0; i < cfg.samples; ++i) {
        const Scenario s = scenario_for(g, cfg.ranges, cfg.seed, i);
        os << json{{"record", "scenario"},
                   {"version", kRecordVersion},
                   {"index", i},
                   {"scenario", to_json(s)},
                   {"phi", phi_vector(g, s).values}}
                  .dump()
           << '\n';
    }
    std::cout << cfg.samples << " scenarios -> " << p.string() << '\n';
    return kOk;
}

int cmd_label(const ExperimentConfig& cfg)
{
    const Grid g = need_case(cfg);
    GenerationLog log;
    const Dataset d = generate_dataset(g, cfg, &log);
    for (const auto& [i, why] : log.discarded)
        std::cerr << "discarded scenario " << i << ": " << why << '\n';
    const fs::path p = out_dir(cfg) / "dataset.jsonl";
    save_dataset(p.string(), d, timing_columns);
    std::cout << json{{"case", d.case_name},
                      {"rows", d.size()},
                      {"discarded", log.discarded.size()},
                      {"train", d.split.train.size()},
                      {"val", d.split.val.size()},
                      {"test", d.split.test.size()},
                      {"dataset", p.string()}}
                     .dump(2)
              << '\n';
    return kOk;
}

int cmd_census(const ExperimentConfig& cfg)
{
    const Grid g = need_case(cfg);
    const Dataset d = need_dataset(g, cfg);
    const auto census = active_set_census(d);
    const fs::path p = out_dir(cfg) / "census.csv";
    std::ostringstream csv;
    csv << "active_set,count\n";
    for (const auto& [label, n] : census)
        csv << label << ',' << n << '\n';
    write_file(p, csv.str());
    std::cout << json{{"case", d.case_name}, {"rows", d.size()}, {"distinct_active_sets", census.size()}}.dump(2)
              << '\n';
    return kOk;
}

int cmd_baseline(const ExperimentConfig& cfg, bool all_rows)
{
    const Grid g = need_case(cfg);
    const Dataset d = need_dataset(g, cfg);
    const ProblemSet problems = build_problems(g, d);
    std::vector<std::size_t> rows = d.split.test;
    if (all_rows || rows.empty()) {
        rows.resize(d.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            rows[i] = i;
    }
    const BaselineReport r = perfect_baselines(d, problems, rows, cfg.solver, cfg.loss.metric);
    const fs::path dir = out_dir(cfg);
    {
        std::ostringstream csv;
        write_baseline_csv(csv, r, timing_columns);
        write_file(dir / "baseline.csv", csv.str());
    }
    const json j{{"case", d.case_name},
                 {"rows", rows.size()},
                 {"failures", r.failures},
                 {"classifier", to_json(r.classifier)},
                 {"regressor", to_json(r.regressor)}};
    write_file(dir / "baseline.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << '\n';
    if (r.failures > 0)
        throw BaselineFailure(std::to_string(r.failures) + " baseline rows failed to solve");
    std::size_t mismatched = 0;
    for (const auto& b : r.rows)
        mismatched += b.ok && !b.objectives_match;
    if (mismatched)
        throw AssertFailure(std::to_string(mismatched) + " rows: reduced or warm objective differs from full");
    return kOk;
}

int cmd_sweep(const ExperimentConfig& cfg)
{
    const Grid g = need_case(cfg);
    const Dataset d = need_dataset(g, cfg);
    const ProblemSet problems = build_problems(g, d);
    const auto& pool = d.split.test.empty() ? d.split.train : d.split.test;
    const std::size_t n = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(std::max(cfg.sweep.scenarios, 0)));
    const fs::path dir = out_dir(cfg);
    std::size_t off = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t row = pool[k];
        const auto& s = d.samples[row];
        const Vec x = Eigen::Map<const Vec>(s.primal.data(), static_cast<Eigen::Index>(s.primal.size()));
        const ActiveSet truth = binding_status(problems[row], x);
        // cells beyond what this scenario can supply are skipped
        SweepConfig sc = cfg.sweep;
        sc.max_fn = std::min<int>(sc.max_fn, static_cast<int>(truth.count()));
        sc.max_fp = std::min<int>(sc.max_fp, static_cast<int>(truth.size() - truth.count()));
        const auto cells = fp_fn_sweep(problems[row], x, sc, derive_seed(cfg.seed, {5, row}), cfg.solver);
        for (const auto& c : cells)
            for (const auto& t : c.trials)
                off += !(std::abs(t.objective - s.objective) <= 1e-6 * std::max(1.0, std::abs(s.objective)));
        std::ostringstream csv;
        write_sweep_csv(csv, cells);
        const fs::path p = dir / ("sweep_row" + std::to_string(row) + ".csv");
        write_file(p, csv.str());
        std::cout << "row " << row << " -> " << p.string() << '\n';
    }
    if (off)
        throw AssertFailure(std::to_string(off) + " sweep trials ended away from the full optimum");
    return kOk;
}

int cmd_train(const ExperimentConfig& cfg)
{
    const Grid g = need_case(cfg);
    const Dataset d = need_dataset(g, cfg);
    const TrainResult r = train(d, train_config(cfg));
    const fs::path dir = out_dir(cfg);
    save_mlp((dir / "model.mlp").string(), r.params);
    {
        std::ostringstream csv;
        write_training_trace_csv(csv, r.trace);
        write_file(dir / "train_trace.csv", csv.str());
    }
    const auto& rows = d.split.test.empty() ? d.split.train : d.split.test;
    std::cout << json{{"epochs", r.epochs_run},
                      {"best_epoch", r.best_epoch},
                      {"test_confusion", to_json(confusion(r.params, d, rows))},
                      {"model", (dir / "model.mlp").string()}}
                     .dump(2)
              << '\n';
    return kOk;
}

int cmd_monitor(const ExperimentConfig& cfg)
{
    const Grid g = need_case(cfg);
    const Dataset d = need_dataset(g, cfg);
    const ProblemSet problems = build_problems(g, d);
    const MonitorResult m =
        monitor_training(d, problems, train_config(cfg), cfg.monitor_interval, loss_config(cfg, d), cfg.solver);
    std::ostringstream csv;
    write_monitor_csv(csv, m.rows, timing_columns);
    const fs::path p = out_dir(cfg) / "monitor.csv";
    write_file(p, csv.str());
    std::cout << m.rows.size() << " checkpoints -> " << p.string() << '\n';
    return kOk;
}

int cmd_meta(const ExperimentConfig& cfg, const std::string& model)
{
    const Grid g = need_case(cfg);
    const Dataset d = need_dataset(g, cfg);
    const ProblemSet problems = build_problems(g, d);
    const MetaLossConfig lcfg = loss_config(cfg, d);
    MlpParams start;
    if (!model.empty()) {
        if (!fs::is_regular_file(model))
            throw ConfigError("model file not found: " + model);
        start = load_mlp(model);
    } else {
        start = train(d, train_config(cfg)).params;
    }
    MetaOptConfig mcfg = cfg.meta;
    mcfg.seed = derive_seed(cfg.seed, {4, 0});
    const MetaTrainResult r = meta_train(start, d, problems, mcfg, lcfg, cfg.solver);
    const fs::path dir = out_dir(cfg);
    save_mlp((dir / "meta.mlp").string(), r.params);
    json j{{"improved", r.improved},
           {"val_before", number_json(r.val_before)},
           {"val_after", number_json(r.val_after)},
           {"swarm_trace", r.swarm.trace}};
    if (!d.split.test.empty()) {
        j["pre"] = to_json(test_report(start, d, problems, lcfg, cfg.solver));
        j["post"] = to_json(test_report(r.params, d, problems, lcfg, cfg.solver));
    }
    write_file(dir / "meta.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << '\n';
    return kOk;
}

int cmd_pipeline(const ExperimentConfig& cfg)
{
    const PipelineSummary s = run_pipeline(cfg, &std::cerr);
    std::cout << to_json(s).dump(2) << '\n';
    return kOk;
}

int cmd_report(const ExperimentConfig& cfg, std::string summary)
{
    if (summary.empty())
        summary = (fs::path(cfg.output_dir) / "summary.json").string();
    json s;
    try {
        s = json::parse(slurp(summary));
    } catch (const json::exception& e) {
        throw ParseError(summary + ": " + e.what());
    }
    if (s.value("record", "") != "pipeline_summary")
        throw ParseError(summary + " is not a pipeline summary");
    std::ostringstream csv;
    csv.precision(12);
    csv << "case,stage,metric,t_full,t_ml,gain_percent,ci95,runs\n";
    for (const char* stage : {"perfect", "pre", "post"}) {
        const json& r = s.at(stage);
        csv << s.at("case").get<std::string>() << ',' << stage << ',' << r.at("metric").get<std::string>() << ','
            << r.at("t_full").get<double>() << ',' << r.at("t_ml").get<double>() << ','
            << r.at("gain_percent").get<double>() << ',';
        if (r.contains("ci95"))
            csv << r.at("ci95").get<double>();
        csv << ',' << r.at("runs").get<int>() << '\n';
        // the gain must agree with its own fields
        const double t_full = r.at("t_full").get<double>(), t_ml = r.at("t_ml").get<double>();
        if (r.at("gain_percent").get<double>() != gain(t_full, t_ml))
            throw AssertFailure(std::string(stage) + " gain does not match its t_full/t_ml");
    }
    write_file(fs::path(summary).parent_path() / "report.csv", csv.str());
    std::cout << csv.str();
    return kOk;
}

// -------------------------------------------------------------- fetching

std::string sha256_hex(const std::string& bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr))
        throw Error("sha256 failed");
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

std::size_t curl_sink(char* p, std::size_t size, std::size_t n, void* user)
{
    static_cast<std::string*>(user)->append(p, size * n);
    return size * n;
}

std::string http_get(const std::string& url)
{
    CURL* h = curl_easy_init();
    if (!h)
        throw Error("curl init failed");
    std::string body;
    curl_easy_setopt(h, CURLOPT_URL, url.c_str());
    curl_easy_setopt(h, CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(h, CURLOPT_FAILONERROR, 1L);
    curl_easy_setopt(h, CURLOPT_WRITEFUNCTION, curl_sink);
    curl_easy_setopt(h, CURLOPT_WRITEDATA, &body);
    const CURLcode rc = curl_easy_perform(h);
    curl_easy_cleanup(h);
    if (rc != CURLE_OK)
        throw Error("download " + url + ": " + curl_easy_strerror(rc));
    return body;
}

int cmd_fetch(const std::string& source, const std::string& dest, const std::string& sums)
{
    std::vector<std::pair<std::string, std::string>> wanted; // file, sha256
    {
        std::istringstream is(slurp(sums));
        std::string hash, name;
        while (is >> hash >> name)
            wanted.emplace_back(name, hash);
    }
    if (wanted.empty())
        throw ConfigError("no entries in " + sums);
    const bool remote = source.rfind("http://", 0) == 0 || source.rfind("https://", 0) == 0;
    fs::create_directories(dest);
    std::size_t bad = 0;
    for (const auto& [name, hash] : wanted) {
        const std::string bytes = remote ? http_get(source + "/" + name) : slurp(fs::path(source) / name);
        const std::string got = sha256_hex(bytes);
        if (got != hash) {
            std::cerr << name << ": checksum mismatch (" << got << ")\n";
            ++bad;
            continue;
        }
        const fs::path target = fs::path(dest) / name;
        if (remote || !fs::exists(target) || !fs::equivalent(target, fs::path(source) / name))
            write_file(target, bytes);
        std::cout << name << " ok\n";
    }
    if (bad)
        throw AssertFailure(std::to_string(bad) + " case files failed verification");
    return kOk;
}

int exit_code(const std::exception& e)
{
    if (auto* p = dynamic_cast<const PipelineFailure*>(&e))
        return p->exit_hint();
    if (dynamic_cast<const AssertFailure*>(&e))
        return kAssert;
    if (dynamic_cast<const SolverFailure*>(&e) || dynamic_cast<const GenerationFailure*>(&e) ||
        dynamic_cast<const SwarmError*>(&e) || dynamic_cast<const BaselineFailure*>(&e))
        return kSolver;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
        dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const UnsupportedError*>(&e) ||
        dynamic_cast<const InvalidRange*>(&e) || dynamic_cast<const InvalidPerturbation*>(&e) ||
        dynamic_cast<const DimensionMismatch*>(&e))
        return kConfig;
    return kOther;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Learned reduced DC-OPF: labels, training, meta-optimization and baselines"};
    app.require_subcommand(1);

    Common common;
    std::string write_to, model, summary;
    bool all_rows = false;
    std::string source = OPFMETA_CASES_DIR, dest = "cases", sums;

    auto* parse = app.add_subcommand("parse", "parse a case and print its dimensions");
    parse->add_option("--write", write_to, "write the parsed case back out as MATPOWER text");
    auto* sample = app.add_subcommand("sample", "draw seed-indexed scenarios (no solving)");
    auto* label = app.add_subcommand("label", "solve scenarios and write the labeled dataset");
    auto* census = app.add_subcommand("census", "count distinct active sets");
    auto* baseline = app.add_subcommand("baseline", "perfect classifier and warm-start baselines");
    baseline->add_flag("--all-rows", all_rows, "use every row instead of the test split");
    auto* sweep = app.add_subcommand("sweep", "false positive / false negative sweep");
    auto* trn = app.add_subcommand("train", "train the classifier");
    auto* monitor = app.add_subcommand("monitor", "loss and meta-loss at training checkpoints");
    auto* meta = app.add_subcommand("meta", "meta-optimize a classifier with the swarm");
    meta->add_option("--model", model, "start from this model instead of training one");
    auto* pipeline = app.add_subcommand("pipeline", "generate, train, meta-optimize and report");
    auto* report = app.add_subcommand("report", "gain table from a pipeline summary");
    report->add_option("--summary", summary, "summary.json (default <out>/summary.json)");
    auto* fetch = app.add_subcommand("fetch-cases", "copy or download PGLib cases and verify checksums");
    fetch->add_option("--source", source, "directory or http(s) base URL");
    fetch->add_option("--dest", dest, "target directory");
    fetch->add_option("--checksums", sums, "sha256 list (default <bundled cases>/SHA256SUMS)");

    for (auto* sub : {parse, sample, label, census, baseline, sweep, trn, monitor, meta, pipeline, report, fetch})
        add_common(sub, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (fetch->parsed()) {
            if (sums.empty())
                sums = (fs::path(OPFMETA_CASES_DIR) / "SHA256SUMS").string();
            return cmd_fetch(source, dest, sums);
        }
        timing_columns = common.timing;
        const ExperimentConfig cfg = resolve(common);
        if (parse->parsed())
            return cmd_parse(cfg, write_to);
        if (sample->parsed())
            return cmd_sample(cfg);
        if (label->parsed())
            return cmd_label(cfg);
        if (census->parsed())
            return cmd_census(cfg);
        if (baseline->parsed())
            return cmd_baseline(cfg, all_rows);
        if (sweep->parsed())
            return cmd_sweep(cfg);
        if (trn->parsed())
            return cmd_train(cfg);
        if (monitor->parsed())
            return cmd_monitor(cfg);
        if (meta->parsed())
            return cmd_meta(cfg, model);
        if (pipeline->parsed())
            return cmd_pipeline(cfg);
        if (report->parsed())
            return cmd_report(cfg, summary);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e);
    }
    return kOther;
}
