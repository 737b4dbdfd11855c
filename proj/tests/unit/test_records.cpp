#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "opfmeta/config.hpp"
#include "opfmeta/experiments.hpp"
#include "opfmeta/mlp_io.hpp"
#include "opfmeta/records.hpp"
#include "support/fixtures.hpp"

using namespace opfmeta;
using nlohmann::json;

namespace {

Dataset small_dataset()
{
    const Grid g = fixtures::toy3();
    return generate_dataset(g, 12, ScenarioRanges::dc_defaults(), 3);
}

std::filesystem::path temp_file(const std::string& name)
{
    return std::filesystem::temp_directory_path() / ("opfmeta_records_" + name);
}

} // namespace

TEST(JsonRecords, NonFiniteNumbers)
{
    const double inf = std::numeric_limits<double>::infinity();
    EXPECT_EQ(json_number(number_json(inf)), inf);
    EXPECT_EQ(json_number(number_json(-inf)), -inf);
    EXPECT_TRUE(std::isnan(json_number(number_json(std::nan("")))));
    EXPECT_EQ(json_number(number_json(2.5)), 2.5);
}

TEST(JsonRecords, ScenarioAndPhiRoundTrip)
{
    const Grid g = fixtures::toy6();
    const Scenario s = sample_scenario(g, ScenarioRanges::dc_defaults(), 77);
    const Scenario back = scenario_from_json(json::parse(to_json(s).dump()));
    EXPECT_EQ(back.seed, s.seed);
    EXPECT_EQ(back.load_scale, s.load_scale);
    EXPECT_EQ(back.pmax_scale, s.pmax_scale);
    EXPECT_EQ(back.rate_scale, s.rate_scale);
    EXPECT_EQ(back.x_scale, s.x_scale);

    const PhiVector phi = phi_vector(g, s);
    const PhiVector phi_back = phi_from_json(json::parse(to_json(phi).dump()));
    EXPECT_EQ(phi_back.values, phi.values);
    ASSERT_EQ(phi_back.layout.size(), phi.layout.size());
    for (std::size_t i = 0; i < phi.layout.size(); ++i) {
        EXPECT_EQ(phi_back.layout[i].kind, phi.layout[i].kind);
        EXPECT_EQ(phi_back.layout[i].index, phi.layout[i].index);
    }
}

TEST(JsonRecords, SolveReportRoundTrip)
{
    const Grid g = fixtures::toy3();
    const SolveReport r = solve(build_full(g, Scenario::identity(g)).qp);
    const SolveReport back = solve_report_from_json(json::parse(to_json(r).dump()));
    EXPECT_EQ(back.status, r.status);
    EXPECT_EQ(back.objective, r.objective);
    EXPECT_EQ(back.iterations, r.iterations);
    EXPECT_EQ(back.work_units, r.work_units);
    EXPECT_EQ(back.primal, r.primal);
    EXPECT_EQ(back.dual_ineq, r.dual_ineq);
    EXPECT_FALSE(to_json(r).contains("wall_time"));
    EXPECT_TRUE(to_json(r, true).contains("wall_time"));

    SolveReport failed;
    failed.status = SolveStatus::MaxIters;
    EXPECT_TRUE(std::isnan(solve_report_from_json(json::parse(to_json(failed).dump())).objective));
    EXPECT_THROW(status_from_string("Sideways"), ParseError);
}

TEST(JsonRecords, FeasibilityReport)
{
    const Grid g = fixtures::toy3();
    const DcOpfProblem full = build_full(g, Scenario::identity(g));
    const FeasibilityReport r = iterative_feasibility_test(full, ActiveSet::none(full.catalog->size()));
    const json j = json::parse(to_json(r).dump());
    EXPECT_EQ(j.at("K").get<int>(), r.K());
    EXPECT_EQ(j.at("iterations").size(), static_cast<std::size_t>(r.K()));
    EXPECT_EQ(j.at("final_set").get<std::string>(), r.final_set.to_string());
    EXPECT_EQ(j.at("total_work_units").get<double>(), r.total_work_units);
}

TEST(Dataset, JsonlRoundTrip)
{
    const Dataset d = small_dataset();
    std::stringstream ss;
    write_dataset(ss, d);
    const std::string text = ss.str();
    EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), d.size() + 1);
    const Dataset back = read_dataset(ss);
    EXPECT_EQ(back.case_name, d.case_name);
    EXPECT_EQ(back.catalog_size, d.catalog_size);
    EXPECT_EQ(back.split, d.split);
    EXPECT_EQ(back.feature_mean, d.feature_mean);
    EXPECT_EQ(back.feature_std, d.feature_std);
    ASSERT_EQ(back.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        Sample expected = d.samples[i];
        expected.wall_time = 0.0; // not written without timing
        EXPECT_EQ(back.samples[i], expected) << i;
    }

    std::stringstream again;
    write_dataset(again, back);
    EXPECT_EQ(again.str(), text);
}

TEST(Dataset, FileRoundTripAndErrors)
{
    const Dataset d = small_dataset();
    const auto path = temp_file("dataset.jsonl");
    save_dataset(path.string(), d, true);
    const Dataset back = load_dataset(path.string());
    EXPECT_EQ(back.samples[0].wall_time, d.samples[0].wall_time);
    std::filesystem::remove(path);

    std::stringstream no_head("{\"record\":\"sample\"}\n");
    EXPECT_THROW(read_dataset(no_head), ParseError);
    std::stringstream junk("not json\n");
    EXPECT_THROW(read_dataset(junk), ParseError);
    std::stringstream version("{\"record\":\"dataset\",\"version\":99}\n");
    EXPECT_THROW(read_dataset(version), ParseError);
    std::stringstream kind("{\"record\":\"mystery\"}\n");
    EXPECT_THROW(read_dataset(kind), ParseError);
    EXPECT_THROW(load_dataset("/nonexistent/dataset.jsonl"), Error);
}

TEST(MlpBlob, RoundTripIsExact)
{
    MlpParams p = init_mlp(7, 5, 42);
    p.feature_mean = Eigen::VectorXd::LinSpaced(7, -1.0, 1.0);
    p.feature_std = Eigen::VectorXd::LinSpaced(7, 0.5, 2.0);
    p.bn1.running_mean.setConstant(0.25);
    p.bn2.running_var.setConstant(1.75);
    p.dropout = 0.3;
    std::stringstream ss;
    write_mlp(ss, p);
    EXPECT_EQ(read_mlp(ss), p);
}

TEST(MlpBlob, HeaderIsJson)
{
    const MlpParams p = init_mlp(3, 2, 1);
    std::stringstream ss;
    write_mlp(ss, p);
    const std::string blob = ss.str();
    ASSERT_EQ(blob.substr(0, 8), "OPFMLP01");
    std::uint32_t len = 0;
    std::memcpy(&len, blob.data() + 8, 4);
    const json head = json::parse(blob.substr(12, len));
    EXPECT_EQ(head.at("in_dim").get<int>(), 3);
    EXPECT_EQ(head.at("out_dim").get<int>(), 2);
    EXPECT_EQ(head.at("num_params").get<Eigen::Index>(), num_params(p));
    EXPECT_EQ(blob.size(), 12 + len + 8 * static_cast<std::size_t>(num_params(p) + 4 * kHiddenWidth));
}

TEST(MlpBlob, RejectsDamagedInput)
{
    const MlpParams p = init_mlp(3, 2, 1);
    std::stringstream ss;
    write_mlp(ss, p);
    const std::string blob = ss.str();

    std::stringstream magic("XXXXXXXX" + blob.substr(8));
    EXPECT_THROW(read_mlp(magic), ParseError);
    std::stringstream truncated(blob.substr(0, blob.size() - 9));
    EXPECT_THROW(read_mlp(truncated), ParseError);
    std::stringstream header_only(blob.substr(0, 20));
    EXPECT_THROW(read_mlp(header_only), ParseError);
}

TEST(MlpBlob, FileRoundTrip)
{
    const MlpParams p = init_mlp(4, 6, 9);
    const auto path = temp_file("weights.mlp");
    save_mlp(path.string(), p);
    EXPECT_EQ(load_mlp(path.string()), p);
    std::filesystem::remove(path);
    EXPECT_THROW(load_mlp("/nonexistent/weights.mlp"), Error);
}

TEST(TrainingTrace, CsvLayout)
{
    std::stringstream ss;
    write_training_trace_csv(ss, {{1, 0.5, 0.6, 0.2, 0.4}, {2, 0.4, 0.5, 0.2, 0.3}});
    std::string line;
    std::getline(ss, line);
    EXPECT_EQ(line, "epoch,train_loss,val_loss,fp_loss,fn_loss");
    std::getline(ss, line);
    EXPECT_EQ(line, "1,0.5,0.6,0.2,0.4");
}

TEST(Config, MinimalUsesDefaults)
{
    const ExperimentConfig c = config_from_json(json{{"version", 1}});
    EXPECT_EQ(c.samples, 1000u);
    EXPECT_EQ(c.train.batch_size, 10u);
    EXPECT_EQ(c.train.loss_weight, 0.5);
    EXPECT_EQ(c.meta.n_particles, 10);
    EXPECT_EQ(c.meta.n_iters, 50);
    EXPECT_EQ(c.meta.subsample, 100);
    EXPECT_EQ(c.loss.metric, MetaMetric::WorkUnits);
    EXPECT_EQ(c.loss.penalty_threshold_multiplier, 2.0);
    EXPECT_EQ(c.monitor_interval, 5);
}

TEST(Config, Presets)
{
    EXPECT_EQ(preset("1k").samples, 1000u);
    EXPECT_EQ(preset("1k").train.batch_size, 10u);
    EXPECT_EQ(preset("10k").samples, 10000u);
    EXPECT_EQ(preset("10k").train.batch_size, 100u);
    EXPECT_THROW(preset("3k"), ConfigError);
    const ExperimentConfig c = config_from_json(json{{"version", 1}, {"preset", "10k"}, {"samples", 50}});
    EXPECT_EQ(c.samples, 50u);
    EXPECT_EQ(c.train.batch_size, 100u);
}

TEST(Config, RejectsUnknownKeysAndBadValues)
{
    EXPECT_THROW(config_from_json(json::object()), ConfigError);
    EXPECT_THROW(config_from_json(json{{"version", 2}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"version", 1}, {"sampels", 10}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"version", 1}, {"train", {{"lr", 0.1}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"version", 1}, {"samples", "many"}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"version", 1}, {"ranges", "wild"}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"version", 1}, {"ranges", {{"load", {1.0}}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"version", 1}, {"loss", {{"metric", "joules"}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"version", 1}, {"split", {{"train", 0.9}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"version", 1}, {"meta", {{"n_particles", 0}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"version", 1}, {"runs", 0}}), ConfigError);
}

TEST(Config, JsonRoundTrip)
{
    const json in{{"version", 1},
                  {"case", "cases/toys/toy3_congested.m"},
                  {"samples", 200},
                  {"seed", 9},
                  {"ranges", {{"load", {0.8, 1.2}}}},
                  {"solver", {{"tol_residual", 1e-9}, {"max_iters", 80}}},
                  {"train", {{"learning_rate", 1e-3}, {"max_epochs", 12}, {"loss_weight", 0.5}}},
                  {"meta", {{"n_particles", 4}, {"subsample", 20}}},
                  {"loss", {{"metric", "wall_time"}, {"per_sample_penalty", true}}},
                  {"sweep", {{"max_fp", 3}}},
                  {"runs", 3},
                  {"output_dir", "/tmp/x"}};
    const ExperimentConfig c = config_from_json(in);
    EXPECT_EQ(c.ranges.load.low, 0.8);
    EXPECT_EQ(c.ranges.pmax.low, ScenarioRanges::dc_defaults().pmax.low);
    EXPECT_EQ(c.solver.max_iters, 80);
    EXPECT_EQ(c.loss.metric, MetaMetric::WallTime);
    EXPECT_TRUE(c.loss.per_sample_penalty);
    EXPECT_EQ(c.sweep.max_fp, 3);
    const json out = config_to_json(c);
    EXPECT_EQ(config_to_json(config_from_json(out)), out);
}

TEST(Config, LoadFromFile)
{
    const auto path = temp_file("config.json");
    {
        std::ofstream os(path);
        os << R"({"version": 1, "samples": 30, "ranges": "identity"})";
    }
    const ExperimentConfig c = load_config(path.string());
    EXPECT_EQ(c.samples, 30u);
    EXPECT_EQ(c.ranges.load.high, 1.0);
    {
        std::ofstream os(path);
        os << "{ not json";
    }
    EXPECT_THROW(load_config(path.string()), ConfigError);
    std::filesystem::remove(path);
    EXPECT_THROW(load_config(path.string()), ConfigError);
}
