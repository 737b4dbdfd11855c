#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "opfmeta/errors.hpp"
#include "opfmeta/grid.hpp"
#include "opfmeta/rng.hpp"

namespace opfmeta {

struct ScaleRange {
    double low = 1.0;
    double high = 1.0;

    bool operator==(const ScaleRange&) const = default;
};

/// Per-kind uniform sampling ranges for scale factors.
struct ScenarioRanges {
    ScaleRange load{0.85, 1.15};
    ScaleRange pmax{0.9, 1.1};
    ScaleRange rate{0.9, 1.1};
    ScaleRange reactance{0.9, 1.1};

    static ScenarioRanges dc_defaults() { return {}; }
    static ScenarioRanges identity() { return {{1, 1}, {1, 1}, {1, 1}, {1, 1}}; }

    bool operator==(const ScenarioRanges&) const = default;
};

/// One realization of the grid parameters, stored as multiplicative scale
/// factors on the base case so the same draw drives both the classifier
/// input and the problem build.
struct Scenario {
    std::vector<double> load_scale;
    std::vector<double> pmax_scale;
    std::vector<double> rate_scale;
    std::vector<double> x_scale;
    std::uint64_t seed = 0;

    bool operator==(const Scenario&) const = default;

    static Scenario identity(const Grid& g, std::uint64_t seed = 0)
    {
        return {std::vector<double>(g.num_loads(), 1.0), std::vector<double>(g.generators.size(), 1.0),
                std::vector<double>(g.branches.size(), 1.0), std::vector<double>(g.branches.size(), 1.0), seed};
    }
};

inline void check_scenario(const Grid& g, const Scenario& s)
{
    require_dims(s.load_scale.size(), g.num_loads(), "scenario load_scale");
    require_dims(s.pmax_scale.size(), g.generators.size(), "scenario pmax_scale");
    require_dims(s.rate_scale.size(), g.branches.size(), "scenario rate_scale");
    require_dims(s.x_scale.size(), g.branches.size(), "scenario x_scale");
    auto positive = [](const std::vector<double>& v, const char* what) {
        for (double x : v)
            if (!(x > 0.0))
                throw ValidationError(std::string(what) + " must be strictly positive");
    };
    positive(s.load_scale, "load_scale");
    positive(s.pmax_scale, "pmax_scale");
    positive(s.rate_scale, "rate_scale");
    positive(s.x_scale, "x_scale");
}

inline Scenario sample_scenario(const Grid& g, const ScenarioRanges& ranges, std::uint64_t seed)
{
    for (const auto& r : {ranges.load, ranges.pmax, ranges.rate, ranges.reactance})
        if (!(r.low > 0.0) || !(r.low <= r.high))
            throw InvalidRange("scale range [" + std::to_string(r.low) + ", " + std::to_string(r.high) +
                               "] must satisfy 0 < low <= high");

    Rng rng = make_rng(seed);
    auto draw = [&rng](std::size_t n, ScaleRange r) {
        std::vector<double> v(n);
        if (r.low == r.high) {
            std::fill(v.begin(), v.end(), r.low);
            return v;
        }
        std::uniform_real_distribution<double> u(r.low, r.high);
        for (auto& x : v)
            x = u(rng);
        return v;
    };
    Scenario s;
    s.seed = seed;
    s.load_scale = draw(g.num_loads(), ranges.load);
    s.pmax_scale = draw(g.generators.size(), ranges.pmax);
    s.rate_scale = draw(g.branches.size(), ranges.rate);
    s.x_scale = draw(g.branches.size(), ranges.reactance);
    return s;
}

enum class EntityKind { Load, GenPmax, BranchRate, BranchReactance };

inline const char* to_string(EntityKind k)
{
    switch (k) {
    case EntityKind::Load: return "load";
    case EntityKind::GenPmax: return "gen_pmax";
    case EntityKind::BranchRate: return "branch_rate";
    case EntityKind::BranchReactance: return "branch_x";
    }
    return "?";
}

struct PhiEntry {
    EntityKind kind;
    std::size_t index; // bus index for loads, generator/branch index otherwise

    bool operator==(const PhiEntry&) const = default;
};

/// Classifier input: [loads (MW), Pmax (MW), ratings (MVA), reactances (pu)].
struct PhiVector {
    std::vector<double> values;
    std::vector<PhiEntry> layout;
};

inline std::vector<PhiEntry> phi_layout(const Grid& g)
{
    std::vector<PhiEntry> layout;
    for (auto b : g.load_buses())
        layout.push_back({EntityKind::Load, b});
    for (std::size_t k = 0; k < g.generators.size(); ++k)
        layout.push_back({EntityKind::GenPmax, k});
    for (std::size_t k = 0; k < g.branches.size(); ++k)
        layout.push_back({EntityKind::BranchRate, k});
    for (std::size_t k = 0; k < g.branches.size(); ++k)
        layout.push_back({EntityKind::BranchReactance, k});
    return layout;
}

inline PhiVector phi_vector(const Grid& g, const Scenario& s)
{
    check_scenario(g, s);
    PhiVector phi;
    phi.layout = phi_layout(g);
    phi.values.reserve(phi.layout.size());
    const auto loads = g.load_buses();
    for (std::size_t i = 0; i < loads.size(); ++i)
        phi.values.push_back(g.buses[loads[i]].load_p * s.load_scale[i]);
    for (std::size_t k = 0; k < g.generators.size(); ++k)
        phi.values.push_back(g.generators[k].p_max * s.pmax_scale[k]);
    for (std::size_t k = 0; k < g.branches.size(); ++k)
        phi.values.push_back(g.branches[k].rate_f_max * s.rate_scale[k]);
    for (std::size_t k = 0; k < g.branches.size(); ++k)
        phi.values.push_back(g.branches[k].reactance_x * s.x_scale[k]);
    return phi;
}

} // namespace opfmeta
