#include <gtest/gtest.h>

#include <string>

#include "opfmeta/grid.hpp"
#include "opfmeta/scenario.hpp"
#include "support/fixtures.hpp"

using namespace opfmeta;

namespace {

const char* kTwoBus = R"(
function mpc = two
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	135	1	1.05	0.95;
	2	1	50	0	0	0	1	1	0	135	1	1.05	0.95;
];
mpc.gen = [
	1	0	0	0	0	1	100	1	200	0;
];
mpc.branch = [
	1	2	0	0.1	0	100	100	100	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	2	10	0;
];
)";

std::string replace(std::string s, const std::string& from, const std::string& to)
{
    const auto pos = s.find(from);
    EXPECT_NE(pos, std::string::npos) << from;
    return s.replace(pos, from.size(), to);
}

} // namespace

TEST(ParseCase, MinimalTwoBus)
{
    const Grid g = parse_case(kTwoBus);
    ASSERT_EQ(g.buses.size(), 2u);
    ASSERT_EQ(g.generators.size(), 1u);
    ASSERT_EQ(g.branches.size(), 1u);
    EXPECT_EQ(g.base_mva, 100.0);
    EXPECT_EQ(g.buses[0].type, BusType::Slack);
    EXPECT_EQ(g.buses[1].load_p, 50.0);
    EXPECT_EQ(g.generators[0].p_max, 200.0);
    EXPECT_EQ(g.generators[0].p_min, 0.0);
    EXPECT_EQ(g.generators[0].cost_lin, 10.0);
    EXPECT_EQ(g.generators[0].cost_quad, 0.0);
    EXPECT_EQ(g.branches[0].reactance_x, 0.1);
    EXPECT_EQ(g.branches[0].rate_f_max, 100.0);
    EXPECT_NEAR(g.branches[0].angle_diff_max, kDefaultAngleDiffMax, 1e-15);
}

TEST(ParseCase, CubicCostUnsupported)
{
    const auto text = replace(kTwoBus, "2	0	0	2	10	0;", "2	0	0	4	1	0	10	0;");
    EXPECT_THROW(parse_case(text), UnsupportedError);
}

TEST(ParseCase, PiecewiseCostUnsupported)
{
    const auto text = replace(kTwoBus, "2	0	0	2	10	0;", "1	0	0	2	0	0;");
    EXPECT_THROW(parse_case(text), UnsupportedError);
}

TEST(ParseCase, MissingMatrix)
{
    const auto text = replace(kTwoBus, "mpc.gencost", "mpc.notcost");
    EXPECT_THROW(parse_case(text), ParseError);
}

TEST(ParseCase, WrongColumnCount)
{
    const auto text = replace(kTwoBus, "1	0	0	0	0	1	100	1	200	0;", "1	0	0	0	0	1	100	1	200;");
    EXPECT_THROW(parse_case(text), ParseError);
}

TEST(ParseCase, MalformedNumber)
{
    const auto text = replace(kTwoBus, "2	1	50", "2	1	5x0");
    EXPECT_THROW(parse_case(text), ParseError);
}

TEST(ParseCase, NoSlackBus)
{
    const auto text = replace(kTwoBus, "1	3	0", "1	2	0");
    EXPECT_THROW(parse_case(text), ValidationError);
}

TEST(ParseCase, UnknownBusReference)
{
    const auto text = replace(kTwoBus, "1	2	0	0.1", "1	7	0	0.1");
    EXPECT_THROW(parse_case(text), ValidationError);
}

TEST(ParseCase, NonconvexCostRejected)
{
    const auto text = replace(kTwoBus, "2	0	0	2	10	0;", "2	0	0	3	-1	10	0;");
    EXPECT_THROW(parse_case(text), ValidationError);
}

TEST(ParseCase, OutOfServiceDropped)
{
    auto text = replace(kTwoBus, "1	2	0	0.1	0	100	100	100	0	0	1	-360	360;",
                        "1	2	0	0.1	0	100	100	100	0	0	1	-360	360;\n\t1	2	0	0.2	0	50	50	50	0	0	0	-360	360;");
    text = replace(text, "1	0	0	0	0	1	100	1	200	0;", "1	0	0	0	0	1	100	1	200	0;\n\t1	0	0	0	0	1	100	0	99	0;");
    text = replace(text, "2	0	0	2	10	0;", "2	0	0	2	10	0;\n\t2	0	0	2	20	0;");
    const Grid g = parse_case(text);
    EXPECT_EQ(g.generators.size(), 1u);
    EXPECT_EQ(g.branches.size(), 1u);
    EXPECT_EQ(g.generators[0].p_max, 200.0);
}

TEST(ParseCase, EntityCountsOfBundledCases)
{
    struct Want {
        const char* name;
        std::size_t buses, gens, branches;
    };
    // counted from the in-service rows of each file
    for (const auto& w : {Want{"case24_ieee_rts", 24, 33, 38}, Want{"case30_ieee", 30, 6, 41},
                          Want{"case57_ieee", 57, 7, 80}, Want{"case118_ieee", 118, 54, 186}}) {
        const Grid g = fixtures::pglib(w.name);
        EXPECT_EQ(g.buses.size(), w.buses) << w.name;
        EXPECT_EQ(g.generators.size(), w.gens) << w.name;
        EXPECT_EQ(g.branches.size(), w.branches) << w.name;
    }
}

TEST(ParseCase, RoundTrip)
{
    for (const auto& path : {"toys/toy2_uncongested.m", "toys/toy3_congested.m", "toys/toy6_meshed.m",
                             "pglib_opf_case24_ieee_rts.m", "pglib_opf_case30_ieee.m", "pglib_opf_case39_epri.m",
                             "pglib_opf_case57_ieee.m", "pglib_opf_case73_ieee_rts.m", "pglib_opf_case118_ieee.m"}) {
        const Grid g = load_case(fixtures::case_path(path));
        const Grid back = parse_case(write_case(g), g.name);
        EXPECT_EQ(back, g) << path;
    }
}

TEST(SampleScenario, IdentityRanges)
{
    const Grid g = fixtures::pglib("case30_ieee");
    const Scenario s = sample_scenario(g, ScenarioRanges::identity(), 5);
    for (const auto* v : {&s.load_scale, &s.pmax_scale, &s.rate_scale, &s.x_scale})
        for (double x : *v)
            EXPECT_EQ(x, 1.0);
    EXPECT_EQ(s, Scenario::identity(g, 5));
}

TEST(SampleScenario, DefaultRangesBounds)
{
    const Grid g = fixtures::pglib("case57_ieee");
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Scenario s = sample_scenario(g, ScenarioRanges::dc_defaults(), seed);
        ASSERT_EQ(s.load_scale.size(), g.num_loads());
        for (double x : s.load_scale) {
            EXPECT_GE(x, 0.85);
            EXPECT_LE(x, 1.15);
        }
        for (const auto* v : {&s.pmax_scale, &s.rate_scale, &s.x_scale})
            for (double x : *v) {
                EXPECT_GE(x, 0.9);
                EXPECT_LE(x, 1.1);
            }
    }
}

TEST(SampleScenario, Deterministic)
{
    const Grid g = fixtures::pglib("case24_ieee_rts");
    EXPECT_EQ(sample_scenario(g, {}, 42), sample_scenario(g, {}, 42));
    EXPECT_NE(sample_scenario(g, {}, 42), sample_scenario(g, {}, 43));
}

TEST(SampleScenario, InvalidRange)
{
    const Grid g = fixtures::toy2();
    ScenarioRanges r;
    r.load = {1.2, 1.1};
    EXPECT_THROW(sample_scenario(g, r, 0), InvalidRange);
    r.load = {0.0, 1.1};
    EXPECT_THROW(sample_scenario(g, r, 0), InvalidRange);
}

TEST(PhiVector, IdentityOnTwoBus)
{
    const Grid g = parse_case(kTwoBus);
    const PhiVector phi = phi_vector(g, Scenario::identity(g));
    EXPECT_EQ(phi.values, (std::vector<double>{50, 200, 100, 0.1}));
    ASSERT_EQ(phi.layout.size(), 4u);
    EXPECT_EQ(phi.layout[0].kind, EntityKind::Load);
    EXPECT_EQ(phi.layout[0].index, 1u);
    EXPECT_EQ(phi.layout[3].kind, EntityKind::BranchReactance);
}

TEST(PhiVector, LoadScaling)
{
    const Grid g = parse_case(kTwoBus);
    Scenario s = Scenario::identity(g);
    s.load_scale = {1.1};
    const PhiVector phi = phi_vector(g, s);
    EXPECT_DOUBLE_EQ(phi.values[0], 55.0);
    EXPECT_EQ(phi.values[1], 200.0);
    EXPECT_EQ(phi.values[2], 100.0);
    EXPECT_EQ(phi.values[3], 0.1);
}

TEST(PhiVector, LengthFormula)
{
    for (const char* name : {"case24_ieee_rts", "case30_ieee", "case57_ieee", "case118_ieee"}) {
        const Grid g = fixtures::pglib(name);
        const auto phi = phi_vector(g, Scenario::identity(g));
        EXPECT_EQ(phi.values.size(), g.num_loads() + g.generators.size() + 2 * g.branches.size()) << name;
    }
}

TEST(PhiVector, DimensionMismatch)
{
    const Grid g = parse_case(kTwoBus);
    Scenario s = Scenario::identity(g);
    s.rate_scale.push_back(1.0);
    EXPECT_THROW(phi_vector(g, s), DimensionMismatch);
}

TEST(PhiVector, InsideScaledBoxAndStableLayout)
{
    const Grid g = fixtures::pglib("case30_ieee");
    const PhiVector base = phi_vector(g, Scenario::identity(g));
    ScenarioRanges r{{0.7, 1.3}, {0.8, 1.2}, {0.5, 1.5}, {0.9, 1.05}};
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const PhiVector phi = phi_vector(g, sample_scenario(g, r, seed));
        ASSERT_EQ(phi.layout, base.layout);
        for (std::size_t i = 0; i < phi.values.size(); ++i) {
            ScaleRange k;
            switch (phi.layout[i].kind) {
            case EntityKind::Load: k = r.load; break;
            case EntityKind::GenPmax: k = r.pmax; break;
            case EntityKind::BranchRate: k = r.rate; break;
            case EntityKind::BranchReactance: k = r.reactance; break;
            }
            const double lo = std::min(k.low * base.values[i], k.high * base.values[i]);
            const double hi = std::max(k.low * base.values[i], k.high * base.values[i]);
            EXPECT_GE(phi.values[i], lo - 1e-12);
            EXPECT_LE(phi.values[i], hi + 1e-12);
        }
    }
}
