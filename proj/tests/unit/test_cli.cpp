#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = OPFMETA_CLI;
const std::string kCases = OPFMETA_CASES_DIR;
const std::string kToy2 = kCases + "/toys/toy2_uncongested.m";
const std::string kToy3 = kCases + "/toys/toy3_congested.m";

class Cli : public ::testing::Test {
protected:
    void SetUp() override
    {
        dir = fs::temp_directory_path() / ("opfmeta_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    // exit status of the CLI; stdout lands in `out`
    int run(const std::string& args)
    {
        const fs::path log = dir / "stdout.txt";
        const std::string cmd = kCli + " " + args + " > " + log.string() + " 2> " + (dir / "stderr.txt").string();
        const int st = std::system(cmd.c_str());
        out = read(log);
        return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    }

    static std::string read(const fs::path& p)
    {
        std::ifstream is(p, std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    }

    void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

    std::string o(const std::string& name) { return (dir / name).string(); }

    fs::path dir;
    std::string out;
};

} // namespace

TEST_F(Cli, ParsePrintsDimensions)
{
    ASSERT_EQ(run("parse --case " + kToy3), 0);
    const json j = json::parse(out);
    EXPECT_EQ(j.at("buses"), 3);
    EXPECT_EQ(j.at("branches"), 3);
    EXPECT_EQ(j.at("generators"), 2);
}

TEST_F(Cli, ConfigErrorsExitTwo)
{
    EXPECT_EQ(run("parse --case " + o("missing.m")), 2);
    EXPECT_EQ(run("parse --no-such-flag"), 2);
    EXPECT_EQ(run(""), 2); // a subcommand is required
    write(dir / "bad.json", "{ not json");
    EXPECT_EQ(run("label --config " + o("bad.json")), 2);
    write(dir / "unknown.json", R"({"version": 1, "case": ")" + kToy2 + R"(", "frobnicate": 3})");
    EXPECT_EQ(run("label --config " + o("unknown.json")), 2);
    write(dir / "v2.json", R"({"version": 2})");
    EXPECT_EQ(run("label --config " + o("v2.json")), 2);
    EXPECT_EQ(run("label --case " + kToy2 + " --loss-weight 1.5"), 2);
    EXPECT_EQ(run("label --case " + kToy2 + " --metric seconds"), 2);
}

TEST_F(Cli, SolverFailureExitsThree)
{
    EXPECT_EQ(run("label --case " + kToy3 + " --samples 5 --max-iters 1 --out " + o("a")), 3);
}

TEST_F(Cli, LabelIsReproducibleAndSeeded)
{
    ASSERT_EQ(run("label --case " + kToy3 + " --samples 30 --seed 4 --out " + o("a")), 0);
    ASSERT_EQ(run("label --case " + kToy3 + " --samples 30 --seed 4 --out " + o("b")), 0);
    ASSERT_EQ(run("label --case " + kToy3 + " --samples 30 --seed 5 --out " + o("c")), 0);
    const std::string a = read(dir / "a/dataset.jsonl");
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, read(dir / "b/dataset.jsonl"));
    EXPECT_NE(a, read(dir / "c/dataset.jsonl"));
}

TEST_F(Cli, FlagsOverrideConfig)
{
    write(dir / "cfg.json", R"({"version": 1, "case": ")" + kToy3 + R"(", "samples": 20, "seed": 1, "output_dir": ")" +
                                o("cfg") + R"("})");
    ASSERT_EQ(run("label --config " + o("cfg.json") + " --seed 9"), 0);
    ASSERT_EQ(run("label --case " + kToy3 + " --samples 20 --seed 9 --out " + o("flags")), 0);
    EXPECT_EQ(read(dir / "cfg/dataset.jsonl"), read(dir / "flags/dataset.jsonl"));
}

TEST_F(Cli, CensusAndBaselineOnDataset)
{
    ASSERT_EQ(run("label --case " + kToy2 + " --samples 20 --out " + o("d")), 0);
    const std::string ds = " --dataset " + o("d/dataset.jsonl");
    ASSERT_EQ(run("census --case " + kToy2 + ds + " --out " + o("d")), 0);
    EXPECT_GE(json::parse(out).at("distinct_active_sets").get<int>(), 1);
    EXPECT_EQ(read(dir / "d/census.csv").rfind("active_set,count\n", 0), 0u);
    ASSERT_EQ(run("baseline --case " + kToy2 + ds + " --all-rows --out " + o("d")), 0);
    EXPECT_EQ(json::parse(out).at("failures"), 0);
    // dataset from another grid
    EXPECT_EQ(run("census --case " + kToy3 + ds + " --out " + o("d")), 2);
}

TEST_F(Cli, PipelineThenReport)
{
    ASSERT_EQ(run("pipeline --case " + kToy3 + " --samples 40 --epochs 5 --particles 3 --meta-iters 2 --out " + o("p")),
              0);
    ASSERT_TRUE(fs::exists(dir / "p/summary.json"));
    ASSERT_EQ(run("report --out " + o("p")), 0);
    EXPECT_EQ(out.rfind("case,stage,metric,t_full,t_ml,gain_percent,ci95,runs\n", 0), 0u);
    EXPECT_TRUE(fs::exists(dir / "p/report.csv"));

    json s = json::parse(read(dir / "p/summary.json"));
    s["post"]["gain_percent"] = s["post"]["gain_percent"].get<double>() + 1.0;
    write(dir / "p/summary.json", s.dump());
    EXPECT_EQ(run("report --out " + o("p")), 4);
}

TEST_F(Cli, PipelineFailureLeavesManifest)
{
    EXPECT_EQ(run("pipeline --case " + o("none.m") + " --out " + o("p")), 2);
    const json m = json::parse(read(dir / "p/manifest.json"));
    EXPECT_EQ(m.at("failed_stage"), "load_case");
}

TEST_F(Cli, FetchCasesVerifiesChecksums)
{
    ASSERT_EQ(run("fetch-cases --dest " + o("cases")), 0);
    EXPECT_EQ(read(dir / "cases/pglib_opf_case30_ieee.m"), read(kCases + "/pglib_opf_case30_ieee.m"));

    write(dir / "sums", std::string(64, '0') + "  pglib_opf_case30_ieee.m\n");
    EXPECT_EQ(run("fetch-cases --dest " + o("bad") + " --checksums " + o("sums")), 4);
    EXPECT_FALSE(fs::exists(dir / "bad/pglib_opf_case30_ieee.m"));
}
