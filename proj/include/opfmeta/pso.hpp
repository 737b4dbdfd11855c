#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opfmeta/errors.hpp"
#include "opfmeta/parallel.hpp"
#include "opfmeta/rng.hpp"

namespace opfmeta {

struct MetaOptConfig {
    int n_particles = 10;
    int n_iters = 50;
    int subsample = 100;
    double inertia_start = 0.9;
    double inertia_end = 0.4;
    double c1 = 2.0;
    double c2 = 2.0;
    double velocity_clamp = 0.5; // fraction of the per-dimension initial spread
    std::uint64_t seed = 0;

    void check() const
    {
        if (n_particles < 1 || n_iters < 0 || subsample < 1)
            throw ConfigError("swarm sizes must be >= 1 (iterations >= 0)");
        if (!(inertia_end > 0.0) || !(inertia_start >= inertia_end))
            throw ConfigError("inertia schedule must satisfy start >= end > 0");
    }

    double inertia(int iter) const
    {
        if (n_iters <= 1)
            return inertia_start;
        const double t = static_cast<double>(iter - 1) / static_cast<double>(n_iters - 1);
        return inertia_start + t * (inertia_end - inertia_start);
    }
};

/// Each component w_i becomes w_i + N(0, |w_i|).
inline Eigen::VectorXd perturb_init(const Eigen::VectorXd& base, std::uint64_t seed)
{
    Rng rng = make_rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    Eigen::VectorXd out = base;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        const double z = n01(rng);
        out[i] += std::abs(base[i]) * z;
    }
    return out;
}

struct Particle {
    Eigen::VectorXd position;
    Eigen::VectorXd velocity;
    Eigen::VectorXd best_position;
    double score = std::numeric_limits<double>::infinity();
    double best_score = std::numeric_limits<double>::infinity();
};

struct SwarmState {
    std::vector<Particle> particles;
    Eigen::VectorXd global_best;
    double global_best_score = std::numeric_limits<double>::infinity();
    int iteration = 0;
};

struct PsoResult {
    Eigen::VectorXd best;
    double best_score = std::numeric_limits<double>::infinity();
    std::vector<double> trace; // global best after init (index 0) and after each iteration
    std::vector<std::vector<double>> particle_scores;
    std::size_t evaluations = 0;
};

/// objective(weights, iteration, particle); iteration 0 is the initial
/// evaluation. Must be safe to call concurrently.
using SwarmObjective = std::function<double(const Eigen::VectorXd&, int, int)>;

class SwarmError : public Error {
public:
    SwarmError(const std::string& what, SwarmState snapshot) : Error(what), snapshot_(std::move(snapshot)) {}
    const SwarmState& snapshot() const { return snapshot_; }

private:
    SwarmState snapshot_;
};

namespace detail {

inline void evaluate_swarm(SwarmState& s, const SwarmObjective& f, int iter, PsoResult& res)
{
    const auto n = s.particles.size();
    std::vector<double> scores(n);
    try {
        parallel_for(n, [&](std::size_t i) { scores[i] = f(s.particles[i].position, iter, static_cast<int>(i)); });
    } catch (const std::exception& e) {
        throw SwarmError(std::string("objective failed in iteration ") + std::to_string(iter) + ": " + e.what(), s);
    }
    res.evaluations += n;
    // merge in particle order
    for (std::size_t i = 0; i < n; ++i) {
        auto& p = s.particles[i];
        p.score = std::isnan(scores[i]) ? std::numeric_limits<double>::infinity() : scores[i];
        if (p.score < p.best_score) {
            p.best_score = p.score;
            p.best_position = p.position;
        }
        if (p.best_score < s.global_best_score) {
            s.global_best_score = p.best_score;
            s.global_best = p.best_position;
        }
    }
    res.particle_scores.push_back(scores);
    res.trace.push_back(s.global_best_score);
}

} // namespace detail

/// Global-best PSO with a linear inertia schedule and velocity clamping.
/// Particle 0 starts at `base`, the others at perturb_init(base). Ties keep
/// the earlier best, so with no strict improvement `base` is returned.
inline PsoResult pso_minimize(const SwarmObjective& f, const Eigen::VectorXd& base, const MetaOptConfig& cfg)
{
    cfg.check();
    const auto n_p = static_cast<std::size_t>(cfg.n_particles);
    const auto dim = base.size();
    SwarmState s;
    s.particles.resize(n_p);
    for (std::size_t i = 0; i < n_p; ++i) {
        auto& p = s.particles[i];
        p.position = i == 0 ? base : perturb_init(base, derive_seed(cfg.seed, {0x9e, i}));
        p.velocity = Eigen::VectorXd::Zero(dim);
        p.best_position = p.position;
    }
    Eigen::VectorXd lo = base, hi = base;
    for (const auto& p : s.particles) {
        lo = lo.cwiseMin(p.position);
        hi = hi.cwiseMax(p.position);
    }
    const Eigen::VectorXd vmax = cfg.velocity_clamp * (hi - lo);
    s.global_best = base;

    PsoResult res;
    detail::evaluate_swarm(s, f, 0, res);

    Rng rng = make_rng(derive_seed(cfg.seed, {0x50}));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int it = 1; it <= cfg.n_iters; ++it) {
        s.iteration = it;
        const double w = cfg.inertia(it);
        for (auto& p : s.particles) {
            for (Eigen::Index d = 0; d < dim; ++d) {
                const double r1 = u01(rng), r2 = u01(rng);
                double v = w * p.velocity[d] + cfg.c1 * r1 * (p.best_position[d] - p.position[d]) +
                           cfg.c2 * r2 * (s.global_best[d] - p.position[d]);
                p.velocity[d] = std::clamp(v, -vmax[d], vmax[d]);
            }
            p.position += p.velocity;
        }
        detail::evaluate_swarm(s, f, it, res);
    }
    res.best = s.global_best;
    res.best_score = s.global_best_score;
    return res;
}

} // namespace opfmeta
