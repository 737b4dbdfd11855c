#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "opfmeta/errors.hpp"

namespace opfmeta {

enum class BusType { PQ = 1, PV = 2, Slack = 3 };

struct Bus {
    int id = 0;
    BusType type = BusType::PQ;
    double load_p = 0.0; // MW

    bool operator==(const Bus&) const = default;
};

/// Generator with a polynomial cost C(P) = quad*P^2 + lin*P + constant, P in MW.
struct Generator {
    int bus_id = 0;
    double p_min = 0.0; // MW
    double p_max = 0.0; // MW
    double cost_quad = 0.0;
    double cost_lin = 0.0;
    double cost_const = 0.0;
    bool status = true;

    bool operator==(const Generator&) const = default;
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double resistance_r = 0.0; // pu, only used to derive missing ratings
    double reactance_x = 0.0;  // pu
    double rate_f_max = 0.0;   // MVA
    double angle_diff_max = 0.0; // rad
    bool status = true;

    bool operator==(const Branch&) const = default;
};

/// Static network description. Out-of-service elements are dropped at
/// parse time, so every stored generator and branch is in service.
struct Grid {
    std::string name;
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Generator> generators;
    std::vector<Branch> branches;

    bool operator==(const Grid&) const = default;

    std::size_t bus_index(int bus_id) const
    {
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (buses[i].id == bus_id)
                return i;
        throw ValidationError("unknown bus id " + std::to_string(bus_id));
    }

    std::size_t slack_index() const
    {
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (buses[i].type == BusType::Slack)
                return i;
        throw ValidationError("grid has no slack bus");
    }

    /// Buses with nonzero base load, in file order. These are the load
    /// entities that receive scale factors and Phi entries.
    std::vector<std::size_t> load_buses() const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (buses[i].load_p != 0.0)
                out.push_back(i);
        return out;
    }

    std::size_t num_loads() const { return load_buses().size(); }
};

inline constexpr double kDefaultAngleDiffMax = std::numbers::pi / 6.0;

inline void validate(const Grid& g)
{
    if (!(g.base_mva > 0.0))
        throw ValidationError("baseMVA must be positive");
    if (g.buses.empty())
        throw ValidationError("grid has no buses");
    int slack = 0;
    std::unordered_map<int, int> seen;
    for (const auto& b : g.buses) {
        if (b.type == BusType::Slack)
            ++slack;
        if (seen[b.id]++)
            throw ValidationError("duplicate bus id " + std::to_string(b.id));
    }
    if (slack != 1)
        throw ValidationError("expected exactly one slack bus, found " + std::to_string(slack));
    for (std::size_t k = 0; k < g.generators.size(); ++k) {
        const auto& gen = g.generators[k];
        if (!seen.count(gen.bus_id))
            throw ValidationError("generator " + std::to_string(k) + " references unknown bus " +
                                  std::to_string(gen.bus_id));
        if (gen.p_min > gen.p_max)
            throw ValidationError("generator " + std::to_string(k) + " has p_min > p_max");
        if (gen.cost_quad < 0.0)
            throw ValidationError("generator " + std::to_string(k) + " has a non-convex cost");
    }
    for (std::size_t k = 0; k < g.branches.size(); ++k) {
        const auto& br = g.branches[k];
        const auto tag = "branch " + std::to_string(k);
        if (!seen.count(br.from_bus) || !seen.count(br.to_bus))
            throw ValidationError(tag + " references an unknown bus");
        if (br.reactance_x == 0.0)
            throw ValidationError(tag + " has zero reactance");
        if (!(br.rate_f_max > 0.0))
            throw ValidationError(tag + " has a non-positive rating");
        if (!(br.angle_diff_max > 0.0))
            throw ValidationError(tag + " has a non-positive angle-difference limit");
    }
}

namespace detail {

inline std::string strip_comments(std::string_view text)
{
    std::string out;
    out.reserve(text.size());
    bool in_comment = false;
    bool in_string = false;
    for (char c : text) {
        if (c == '\n') {
            in_comment = false;
            in_string = false;
            out.push_back(c);
            continue;
        }
        if (in_comment)
            continue;
        if (c == '\'')
            in_string = !in_string;
        if (c == '%' && !in_string) {
            in_comment = true;
            continue;
        }
        out.push_back(c);
    }
    return out;
}

inline std::size_t find_assignment(const std::string& text, std::string_view field)
{
    const std::string key = "mpc." + std::string(field);
    std::size_t pos = 0;
    while ((pos = text.find(key, pos)) != std::string::npos) {
        std::size_t p = pos + key.size();
        while (p < text.size() && (text[p] == ' ' || text[p] == '\t'))
            ++p;
        if (p < text.size() && text[p] == '=')
            return p + 1;
        pos = p;
    }
    return std::string::npos;
}

inline double parse_number(const std::string& tok, std::string_view field)
{
    if (tok == "Inf" || tok == "inf")
        return std::numeric_limits<double>::infinity();
    if (tok == "-Inf" || tok == "-inf")
        return -std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        throw ParseError("malformed number '" + tok + "' in mpc." + std::string(field));
    }
    if (used != tok.size())
        throw ParseError("malformed number '" + tok + "' in mpc." + std::string(field));
    return v;
}

using Table = std::vector<std::vector<double>>;

inline Table parse_matrix(const std::string& text, std::string_view field)
{
    const auto start = find_assignment(text, field);
    if (start == std::string::npos)
        throw ParseError("missing matrix mpc." + std::string(field));
    const auto open = text.find('[', start);
    if (open == std::string::npos)
        throw ParseError("mpc." + std::string(field) + " is not a matrix");
    const auto close = text.find(']', open);
    if (close == std::string::npos)
        throw ParseError("unterminated matrix mpc." + std::string(field));

    Table rows;
    std::vector<double> row;
    std::string tok;
    auto flush_tok = [&] {
        if (!tok.empty()) {
            row.push_back(parse_number(tok, field));
            tok.clear();
        }
    };
    auto flush_row = [&] {
        flush_tok();
        if (!row.empty())
            rows.push_back(std::move(row));
        row.clear();
    };
    for (std::size_t i = open + 1; i < close; ++i) {
        const char c = text[i];
        if (c == ';' || c == '\n')
            flush_row();
        else if (c == ' ' || c == '\t' || c == '\r' || c == ',')
            flush_tok();
        else
            tok.push_back(c);
    }
    flush_row();
    return rows;
}

inline double parse_scalar(const std::string& text, std::string_view field)
{
    const auto start = find_assignment(text, field);
    if (start == std::string::npos)
        throw ParseError("missing scalar mpc." + std::string(field));
    const auto end = text.find_first_of(";\n", start);
    std::string tok = text.substr(start, end - start);
    tok.erase(std::remove_if(tok.begin(), tok.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; }),
              tok.end());
    return parse_number(tok, field);
}

inline void require_columns(const Table& t, std::size_t cols, std::string_view field)
{
    for (std::size_t r = 0; r < t.size(); ++r)
        if (t[r].size() < cols)
            throw ParseError("mpc." + std::string(field) + " row " + std::to_string(r + 1) + " has " +
                             std::to_string(t[r].size()) + " columns, expected at least " + std::to_string(cols));
}

inline double angle_limit(double angmin_deg, double angmax_deg)
{
    const bool unbounded = (angmin_deg <= -360.0 || angmin_deg == 0.0) && (angmax_deg >= 360.0 || angmax_deg == 0.0);
    if (unbounded)
        return kDefaultAngleDiffMax;
    double lim = std::numeric_limits<double>::infinity();
    if (angmin_deg < 0.0 && angmin_deg > -360.0)
        lim = std::min(lim, -angmin_deg);
    if (angmax_deg > 0.0 && angmax_deg < 360.0)
        lim = std::min(lim, angmax_deg);
    if (!std::isfinite(lim))
        return kDefaultAngleDiffMax;
    return lim * std::numbers::pi / 180.0;
}

/// Rating for branches whose file rating is 0 (MATPOWER's "unlimited"):
/// the apparent power a flat 1 pu voltage profile pushes through the
/// series impedance at the angle-difference limit.
inline double derived_rating(double base_mva, double r, double x, double angle_max)
{
    const double z = std::hypot(r, x);
    return base_mva * 2.0 * std::sin(angle_max / 2.0) / z;
}

/// Degree value that angle_limit maps back to exactly `rad`.
inline double degrees_for(double rad)
{
    double deg = rad * 180.0 / std::numbers::pi;
    double lo = deg, hi = deg;
    for (int i = 0; i < 64; ++i) {
        if (angle_limit(-lo, lo) == rad)
            return lo;
        if (angle_limit(-hi, hi) == rad)
            return hi;
        lo = std::nextafter(lo, 0.0);
        hi = std::nextafter(hi, 360.0);
    }
    return deg;
}

} // namespace detail

/// Parses the MATPOWER case subset: baseMVA, bus, gen, branch, gencost.
/// AC-only columns are read for shape checking and otherwise ignored.
inline Grid parse_case(std::string_view raw, std::string name = {})
{
    const std::string text = detail::strip_comments(raw);
    Grid g;
    g.name = std::move(name);
    g.base_mva = detail::parse_scalar(text, "baseMVA");

    const auto bus = detail::parse_matrix(text, "bus");
    const auto gen = detail::parse_matrix(text, "gen");
    const auto branch = detail::parse_matrix(text, "branch");
    const auto gencost = detail::parse_matrix(text, "gencost");
    detail::require_columns(bus, 13, "bus");
    detail::require_columns(gen, 10, "gen");
    detail::require_columns(branch, 13, "branch");
    detail::require_columns(gencost, 4, "gencost");
    if (gencost.size() < gen.size())
        throw ParseError("mpc.gencost has fewer rows than mpc.gen");

    for (const auto& row : bus) {
        const int type = static_cast<int>(row[1]);
        if (type < 1 || type > 3)
            throw UnsupportedError("bus " + std::to_string(static_cast<int>(row[0])) + " has unsupported type " +
                                   std::to_string(type));
        g.buses.push_back({static_cast<int>(row[0]), static_cast<BusType>(type), row[2]});
    }

    for (std::size_t k = 0; k < gen.size(); ++k) {
        const auto& row = gen[k];
        const auto& cost = gencost[k];
        const int model = static_cast<int>(cost[0]);
        if (model != 2)
            throw UnsupportedError("gencost row " + std::to_string(k + 1) + ": only polynomial costs are supported");
        const int ncost = static_cast<int>(cost[3]);
        if (ncost < 1 || ncost > 3)
            throw UnsupportedError("gencost row " + std::to_string(k + 1) + ": polynomial degree " +
                                   std::to_string(ncost - 1) + " exceeds 2");
        if (cost.size() < 4 + static_cast<std::size_t>(ncost))
            throw ParseError("gencost row " + std::to_string(k + 1) + " is missing coefficients");
        if (row[7] <= 0.0)
            continue;
        Generator out;
        out.bus_id = static_cast<int>(row[0]);
        out.p_max = row[8];
        out.p_min = row[9];
        // coefficients are listed highest degree first
        double coef[3] = {0.0, 0.0, 0.0}; // const, lin, quad
        for (int d = 0; d < ncost; ++d)
            coef[ncost - 1 - d] = cost[4 + d];
        out.cost_const = coef[0];
        out.cost_lin = coef[1];
        out.cost_quad = coef[2];
        g.generators.push_back(out);
    }

    for (const auto& row : branch) {
        if (row[10] <= 0.0)
            continue;
        Branch br;
        br.from_bus = static_cast<int>(row[0]);
        br.to_bus = static_cast<int>(row[1]);
        br.resistance_r = row[2];
        br.reactance_x = row[3];
        br.angle_diff_max = detail::angle_limit(row[11], row[12]);
        br.rate_f_max = row[5] > 0.0 ? row[5]
                                     : detail::derived_rating(g.base_mva, br.resistance_r, br.reactance_x,
                                                              br.angle_diff_max);
        g.branches.push_back(br);
    }

    validate(g);
    return g;
}

inline Grid load_case(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open case file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    auto name = path.substr(path.find_last_of("/\\") + 1);
    if (auto dot = name.rfind('.'); dot != std::string::npos)
        name.resize(dot);
    return parse_case(ss.str(), name);
}

/// Writes a Grid back in the same table syntax. Values are printed with
/// round-trip precision so parse_case(write_case(g)) == g.
inline std::string write_case(const Grid& g)
{
    std::ostringstream os;
    os << std::setprecision(17);
    const std::string fn = g.name.empty() ? "case" : g.name;
    os << "function mpc = " << fn << "\n";
    os << "mpc.version = '2';\n";
    os << "mpc.baseMVA = " << g.base_mva << ";\n\n";
    os << "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin\n";
    os << "mpc.bus = [\n";
    for (const auto& b : g.buses)
        os << "\t" << b.id << "\t" << static_cast<int>(b.type) << "\t" << b.load_p
           << "\t0\t0\t0\t1\t1\t0\t0\t1\t1.1\t0.9;\n";
    os << "];\n\n";
    os << "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin\n";
    os << "mpc.gen = [\n";
    for (const auto& gen : g.generators)
        os << "\t" << gen.bus_id << "\t0\t0\t0\t0\t1\t" << g.base_mva << "\t1\t" << gen.p_max << "\t" << gen.p_min
           << ";\n";
    os << "];\n\n";
    os << "%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax\n";
    os << "mpc.branch = [\n";
    for (const auto& br : g.branches) {
        const double deg = detail::degrees_for(br.angle_diff_max);
        os << "\t" << br.from_bus << "\t" << br.to_bus << "\t" << br.resistance_r << "\t" << br.reactance_x
           << "\t0\t" << br.rate_f_max << "\t" << br.rate_f_max << "\t" << br.rate_f_max << "\t0\t0\t1\t" << -deg
           << "\t" << deg << ";\n";
    }
    os << "];\n\n";
    os << "%% 2 startup shutdown n c2 c1 c0\n";
    os << "mpc.gencost = [\n";
    for (const auto& gen : g.generators)
        os << "\t2\t0\t0\t3\t" << gen.cost_quad << "\t" << gen.cost_lin << "\t" << gen.cost_const << ";\n";
    os << "];\n";
    return os.str();
}

} // namespace opfmeta
