#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "opfmeta/errors.hpp"
#include "opfmeta/grid.hpp"
#include "opfmeta/qp.hpp"
#include "opfmeta/scenario.hpp"

namespace opfmeta {

enum class ConstraintKind : std::uint8_t { GenPUpper, FlowUpper, FlowLower, AngleUpper, AngleLower };

inline const char* to_string(ConstraintKind k)
{
    switch (k) {
    case ConstraintKind::GenPUpper: return "GEN_P_UPPER";
    case ConstraintKind::FlowUpper: return "FLOW_UPPER";
    case ConstraintKind::FlowLower: return "FLOW_LOWER";
    case ConstraintKind::AngleUpper: return "ANGLE_UPPER";
    case ConstraintKind::AngleLower: return "ANGLE_LOWER";
    }
    return "?";
}

struct CatalogEntry {
    ConstraintKind kind;
    std::size_t entity; // generator index or branch index

    bool operator==(const CatalogEntry&) const = default;
};

/// The predicted inequality constraints in a fixed order: every
/// GEN_P_UPPER by generator, then FLOW_UPPER, FLOW_LOWER, ANGLE_UPPER and
/// ANGLE_LOWER by branch. Generator lower bounds and all equalities are
/// outside the catalog and always enforced.
struct ConstraintCatalog {
    std::vector<CatalogEntry> entries;
    std::size_t num_gens = 0;
    std::size_t num_branches = 0;

    static ConstraintCatalog for_grid(const Grid& g)
    {
        ConstraintCatalog cat;
        cat.num_gens = g.generators.size();
        cat.num_branches = g.branches.size();
        for (std::size_t k = 0; k < cat.num_gens; ++k)
            cat.entries.push_back({ConstraintKind::GenPUpper, k});
        for (auto kind : {ConstraintKind::FlowUpper, ConstraintKind::FlowLower, ConstraintKind::AngleUpper,
                          ConstraintKind::AngleLower})
            for (std::size_t k = 0; k < cat.num_branches; ++k)
                cat.entries.push_back({kind, k});
        return cat;
    }

    std::size_t size() const { return entries.size(); }

    std::size_t count(ConstraintKind kind) const
    {
        return static_cast<std::size_t>(
            std::count_if(entries.begin(), entries.end(), [kind](const auto& e) { return e.kind == kind; }));
    }

    std::size_t index_of(ConstraintKind kind, std::size_t entity) const
    {
        switch (kind) {
        case ConstraintKind::GenPUpper: return entity;
        default: break;
        }
        const std::size_t block = static_cast<std::size_t>(kind) - 1;
        return num_gens + block * num_branches + entity;
    }

    bool operator==(const ConstraintCatalog&) const = default;
};

/// Membership vector over a ConstraintCatalog.
class ActiveSet {
public:
    ActiveSet() = default;
    explicit ActiveSet(std::size_t n, bool value = false) : bits_(n, value ? 1 : 0) {}
    explicit ActiveSet(std::vector<std::uint8_t> bits) : bits_(std::move(bits))
    {
        for (auto& b : bits_)
            b = b ? 1 : 0;
    }

    static ActiveSet all(std::size_t n) { return ActiveSet(n, true); }
    static ActiveSet none(std::size_t n) { return ActiveSet(n, false); }

    std::size_t size() const { return bits_.size(); }
    bool operator[](std::size_t i) const { return bits_[i] != 0; }
    void set(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }

    std::size_t count() const
    {
        return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
    }

    std::vector<std::size_t> indices() const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < bits_.size(); ++i)
            if (bits_[i])
                out.push_back(i);
        return out;
    }

    const std::vector<std::uint8_t>& bits() const { return bits_; }

    std::string to_string() const
    {
        std::string s(bits_.size(), '0');
        for (std::size_t i = 0; i < bits_.size(); ++i)
            if (bits_[i])
                s[i] = '1';
        return s;
    }

    static ActiveSet from_string(const std::string& s)
    {
        ActiveSet a(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] != '0' && s[i] != '1')
                throw ParseError("active set strings contain only 0/1");
            a.bits_[i] = s[i] == '1';
        }
        return a;
    }

    bool operator==(const ActiveSet&) const = default;
    auto operator<=>(const ActiveSet&) const = default;

private:
    std::vector<std::uint8_t> bits_;
};

/// Sentinel in DcOpfProblem::row_entry for always-enforced rows.
inline constexpr std::size_t kAlwaysRow = std::numeric_limits<std::size_t>::max();

/// DC-OPF as a convex QP over [theta (rad) per bus, Pg (pu) per generator,
/// F (pu) per branch]. Equality rows are ordered flow definitions, slack
/// angle, nodal balances. Inequality rows carry their catalog index in
/// row_entry; GEN_P_LOWER rows are tagged kAlwaysRow.
struct DcOpfProblem {
    QpProblem qp;
    std::shared_ptr<const ConstraintCatalog> catalog;
    std::vector<std::size_t> row_entry;
    std::vector<std::size_t> always_rows;
    std::size_t num_buses = 0;
    std::size_t num_gens = 0;
    std::size_t num_branches = 0;
    double base_mva = 100.0;

    std::size_t num_vars() const { return num_buses + num_gens + num_branches; }
    std::size_t theta_var(std::size_t bus) const { return bus; }
    std::size_t pg_var(std::size_t gen) const { return num_buses + gen; }
    std::size_t flow_var(std::size_t branch) const { return num_buses + num_gens + branch; }

    /// True when every catalog entry has a row, in catalog order, as
    /// produced by build_full.
    bool is_full() const
    {
        if (!catalog || row_entry.size() < catalog->size())
            return false;
        for (std::size_t i = 0; i < catalog->size(); ++i)
            if (row_entry[i] != i)
                return false;
        return true;
    }

    /// Objective in the MW-domain currency of the case file.
    double objective_currency(const Vec& x) const { return qp.objective(x) * base_mva; }
};

/// Full DC-OPF for a scenario, in per-unit. Costs are rescaled so the
/// objective equals the MW-domain cost divided by base_mva.
inline DcOpfProblem build_full(const Grid& g, const Scenario& s)
{
    check_scenario(g, s);
    const double base = g.base_mva;
    DcOpfProblem p;
    p.num_buses = g.buses.size();
    p.num_gens = g.generators.size();
    p.num_branches = g.branches.size();
    p.base_mva = base;
    p.catalog = std::make_shared<const ConstraintCatalog>(ConstraintCatalog::for_grid(g));
    const auto n = static_cast<Eigen::Index>(p.num_vars());

    std::vector<std::size_t> from(p.num_branches), to(p.num_branches);
    for (std::size_t k = 0; k < p.num_branches; ++k) {
        from[k] = g.bus_index(g.branches[k].from_bus);
        to[k] = g.bus_index(g.branches[k].to_bus);
    }

    // objective
    std::vector<Eigen::Triplet<double>> qt;
    p.qp.c = Vec::Zero(n);
    p.qp.constant = 0.0;
    for (std::size_t k = 0; k < p.num_gens; ++k) {
        const auto& gen = g.generators[k];
        if (gen.cost_quad < 0.0)
            throw ValidationError("generator " + std::to_string(k) + " has a non-convex cost");
        const auto v = static_cast<Eigen::Index>(p.pg_var(k));
        if (gen.cost_quad != 0.0)
            qt.emplace_back(v, v, 2.0 * gen.cost_quad * base);
        p.qp.c[v] = gen.cost_lin;
        p.qp.constant += gen.cost_const / base;
    }
    p.qp.Q.resize(n, n);
    p.qp.Q.setFromTriplets(qt.begin(), qt.end());

    // equalities
    std::vector<Eigen::Triplet<double>> at;
    const auto n_eq = static_cast<Eigen::Index>(p.num_branches + 1 + p.num_buses);
    p.qp.b = Vec::Zero(n_eq);
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < p.num_branches; ++k, ++row) {
        const double x = g.branches[k].reactance_x * s.x_scale[k];
        if (x == 0.0 || !std::isfinite(x))
            throw ValidationError("branch " + std::to_string(k) + " has zero reactance after scaling");
        at.emplace_back(row, static_cast<Eigen::Index>(p.flow_var(k)), 1.0);
        at.emplace_back(row, static_cast<Eigen::Index>(p.theta_var(from[k])), -1.0 / x);
        at.emplace_back(row, static_cast<Eigen::Index>(p.theta_var(to[k])), 1.0 / x);
    }
    at.emplace_back(row++, static_cast<Eigen::Index>(p.theta_var(g.slack_index())), 1.0);
    const auto loads = g.load_buses();
    std::vector<double> bus_load(p.num_buses, 0.0);
    for (std::size_t i = 0; i < loads.size(); ++i)
        bus_load[loads[i]] = g.buses[loads[i]].load_p * s.load_scale[i];
    const Eigen::Index balance0 = row;
    for (std::size_t b = 0; b < p.num_buses; ++b)
        p.qp.b[balance0 + static_cast<Eigen::Index>(b)] = -bus_load[b] / base;
    for (std::size_t k = 0; k < p.num_branches; ++k) {
        at.emplace_back(balance0 + static_cast<Eigen::Index>(from[k]), static_cast<Eigen::Index>(p.flow_var(k)), 1.0);
        at.emplace_back(balance0 + static_cast<Eigen::Index>(to[k]), static_cast<Eigen::Index>(p.flow_var(k)), -1.0);
    }
    for (std::size_t k = 0; k < p.num_gens; ++k)
        at.emplace_back(balance0 + static_cast<Eigen::Index>(g.bus_index(g.generators[k].bus_id)),
                        static_cast<Eigen::Index>(p.pg_var(k)), -1.0);
    p.qp.A.resize(n_eq, n);
    p.qp.A.setFromTriplets(at.begin(), at.end());

    // inequalities: catalog rows in catalog order, then GEN_P_LOWER
    const auto& cat = *p.catalog;
    const auto n_in = static_cast<Eigen::Index>(cat.size() + p.num_gens);
    std::vector<Eigen::Triplet<double>> gt;
    p.qp.h = Vec::Zero(n_in);
    p.row_entry.resize(static_cast<std::size_t>(n_in));
    for (std::size_t i = 0; i < cat.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const auto& e = cat.entries[i];
        p.row_entry[i] = i;
        switch (e.kind) {
        case ConstraintKind::GenPUpper:
            gt.emplace_back(r, static_cast<Eigen::Index>(p.pg_var(e.entity)), 1.0);
            p.qp.h[r] = g.generators[e.entity].p_max * s.pmax_scale[e.entity] / base;
            break;
        case ConstraintKind::FlowUpper:
        case ConstraintKind::FlowLower: {
            const double sign = e.kind == ConstraintKind::FlowUpper ? 1.0 : -1.0;
            gt.emplace_back(r, static_cast<Eigen::Index>(p.flow_var(e.entity)), sign);
            p.qp.h[r] = g.branches[e.entity].rate_f_max * s.rate_scale[e.entity] / base;
            break;
        }
        case ConstraintKind::AngleUpper:
        case ConstraintKind::AngleLower: {
            const double sign = e.kind == ConstraintKind::AngleUpper ? 1.0 : -1.0;
            gt.emplace_back(r, static_cast<Eigen::Index>(p.theta_var(from[e.entity])), sign);
            gt.emplace_back(r, static_cast<Eigen::Index>(p.theta_var(to[e.entity])), -sign);
            p.qp.h[r] = g.branches[e.entity].angle_diff_max;
            break;
        }
        }
    }
    for (std::size_t k = 0; k < p.num_gens; ++k) {
        const auto r = static_cast<Eigen::Index>(cat.size() + k);
        gt.emplace_back(r, static_cast<Eigen::Index>(p.pg_var(k)), -1.0);
        p.qp.h[r] = -g.generators[k].p_min / base;
        p.row_entry[static_cast<std::size_t>(r)] = kAlwaysRow;
        p.always_rows.push_back(static_cast<std::size_t>(r));
    }
    p.qp.G.resize(n_in, n);
    p.qp.G.setFromTriplets(gt.begin(), gt.end());

    // cold start: flat angles, generators mid-range, flows from the
    // (zero) angle differences
    p.qp.start = Vec::Zero(n);
    for (std::size_t k = 0; k < p.num_gens; ++k) {
        const double hi = g.generators[k].p_max * s.pmax_scale[k] / base;
        const double lo = g.generators[k].p_min / base;
        p.qp.start[static_cast<Eigen::Index>(p.pg_var(k))] = 0.5 * (lo + hi);
    }
    return p;
}

/// Keeps the objective and equalities; inequality rows are the catalog
/// rows selected by `active` plus every always-enforced row.
inline DcOpfProblem build_reduced(const DcOpfProblem& full, const ActiveSet& active)
{
    if (!full.is_full())
        throw ValidationError("build_reduced expects a full problem");
    require_dims(active.size(), full.catalog->size(), "active set");
    DcOpfProblem red;
    red.catalog = full.catalog;
    red.num_buses = full.num_buses;
    red.num_gens = full.num_gens;
    red.num_branches = full.num_branches;
    red.base_mva = full.base_mva;
    red.qp.Q = full.qp.Q;
    red.qp.c = full.qp.c;
    red.qp.constant = full.qp.constant;
    red.qp.A = full.qp.A;
    red.qp.b = full.qp.b;
    red.qp.start = full.qp.start;

    std::vector<Eigen::Index> rows;
    rows.reserve(active.count() + full.always_rows.size());
    for (std::size_t i = 0; i < full.row_entry.size(); ++i) {
        const auto e = full.row_entry[i];
        if (e == kAlwaysRow || active[e])
            rows.push_back(static_cast<Eigen::Index>(i));
    }
    red.qp.G = select_rows(full.qp.G, rows);
    red.qp.h.resize(static_cast<Eigen::Index>(rows.size()));
    red.row_entry.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        red.qp.h[static_cast<Eigen::Index>(r)] = full.qp.h[rows[r]];
        const auto e = full.row_entry[static_cast<std::size_t>(rows[r])];
        red.row_entry.push_back(e);
        if (e == kAlwaysRow)
            red.always_rows.push_back(r);
    }
    return red;
}

namespace detail {

inline Vec catalog_slack(const DcOpfProblem& full, const Vec& x)
{
    if (!full.is_full())
        throw ValidationError("constraint status is evaluated against the full problem");
    require_dims(static_cast<std::size_t>(x.size()), full.num_vars(), "solution");
    return (full.qp.h - full.qp.G * x).head(static_cast<Eigen::Index>(full.catalog->size()));
}

} // namespace detail

inline constexpr double kBindingTol = 1e-5;
inline constexpr double kFeasibilityTol = 1e-8;

/// Label rule: an entry is binding if its row is violated or its slack is
/// within `tol` of zero, i.e. h - g'x < tol.
inline ActiveSet binding_status(const DcOpfProblem& full, const Vec& x, double tol = kBindingTol)
{
    const Vec slack = detail::catalog_slack(full, x);
    ActiveSet out(static_cast<std::size_t>(slack.size()));
    for (Eigen::Index i = 0; i < slack.size(); ++i)
        out.set(static_cast<std::size_t>(i), slack[i] < 0.0 || std::abs(slack[i]) < tol);
    return out;
}

/// Catalog indices whose row exceeds its bound by more than `tol`.
inline std::vector<std::size_t> violated_constraints(const DcOpfProblem& full, const Vec& x,
                                                     double tol = kFeasibilityTol)
{
    const Vec slack = detail::catalog_slack(full, x);
    std::vector<std::size_t> out;
    for (Eigen::Index i = 0; i < slack.size(); ++i)
        if (-slack[i] > tol)
            out.push_back(static_cast<std::size_t>(i));
    return out;
}

/// Largest violation over every row of the problem (equalities in both
/// directions, all inequalities). Used as an independent feasibility audit.
inline double max_violation(const QpProblem& qp, const Vec& x)
{
    double v = 0.0;
    if (qp.num_eq() > 0)
        v = (qp.A * x - qp.b).cwiseAbs().maxCoeff();
    if (qp.num_ineq() > 0)
        v = std::max(v, (qp.G * x - qp.h).maxCoeff());
    return std::max(v, 0.0);
}

} // namespace opfmeta
