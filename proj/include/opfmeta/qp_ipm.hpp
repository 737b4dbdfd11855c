#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "opfmeta/errors.hpp"
#include "opfmeta/qp.hpp"

namespace opfmeta {

struct SolverOptions {
    double tol_residual = 1e-8;
    double tol_gap = 1e-8;
    int max_iters = 200;
    double bound_push = 1e-9; // warm start only
    double regularization = 1e-10;
    double divergence = 1e10;
    bool record_trace = false;

    void check() const
    {
        if (!(tol_residual > 0.0) || !(tol_gap > 0.0) || !(bound_push > 0.0) || max_iters < 1)
            throw ConfigError("solver options must be positive and max_iters >= 1");
    }
};

enum class SolveStatus { Optimal, MaxIters, NumericalFailure, Unbounded };

inline const char* to_string(SolveStatus s)
{
    switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::MaxIters: return "MaxIters";
    case SolveStatus::NumericalFailure: return "NumericalFailure";
    case SolveStatus::Unbounded: return "Unbounded";
    }
    return "?";
}

struct IterationRecord {
    int iter = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double gap = 0.0;
    double step = 0.0;
};

struct SolveReport {
    SolveStatus status = SolveStatus::NumericalFailure;
    Vec primal;
    Vec dual_eq;
    Vec dual_ineq;
    Vec slack;
    double objective = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    double wall_time = 0.0; // seconds
    double work_units = 0.0;
    std::string message;
    std::vector<IterationRecord> trace;

    bool ok() const { return status == SolveStatus::Optimal; }
};

inline void write_trace_csv(std::ostream& os, const SolveReport& r)
{
    os << "iter,primal_residual,dual_residual,gap,step\n";
    for (const auto& t : r.trace)
        os << t.iter << ',' << t.primal_residual << ',' << t.dual_residual << ',' << t.gap << ',' << t.step << '\n';
}

/// Factorization of the regularized KKT matrix [H + dI, A'; A, -dI].
/// Solver logic only talks to this interface.
class KktBackend {
public:
    virtual ~KktBackend() = default;
    virtual bool factorize(const Eigen::SparseMatrix<double>& K) = 0;
    virtual Vec solve(const Vec& rhs) = 0;
};

class DenseLuBackend final : public KktBackend {
public:
    bool factorize(const Eigen::SparseMatrix<double>& K) override
    {
        dense_ = Eigen::MatrixXd(K);
        lu_.compute(dense_);
        return std::isfinite(lu_.rcond()) && lu_.rcond() > 1e-300;
    }
    Vec solve(const Vec& rhs) override { return lu_.solve(rhs); }

private:
    Eigen::MatrixXd dense_;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

class SparseLuBackend final : public KktBackend {
public:
    bool factorize(const Eigen::SparseMatrix<double>& K) override
    {
        if (!analyzed_) {
            lu_.analyzePattern(K);
            analyzed_ = true;
        }
        lu_.factorize(K);
        return lu_.info() == Eigen::Success;
    }
    Vec solve(const Vec& rhs) override { return lu_.solve(rhs); }

private:
    bool analyzed_ = false;
    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
};

/// KKT systems at or above this order use the sparse backend.
inline constexpr Eigen::Index kSparseThreshold = 120;

inline std::unique_ptr<KktBackend> make_backend(Eigen::Index order)
{
    if (order >= kSparseThreshold)
        return std::make_unique<SparseLuBackend>();
    return std::make_unique<DenseLuBackend>();
}

namespace detail {

inline double inf_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// largest a in (0, 1] keeping v + a*dv >= 0
inline double max_step(const Vec& v, const Vec& dv)
{
    double a = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0)
            a = std::min(a, -v[i] / dv[i]);
    return a;
}

// pattern of K = [H + dI, A'; A, -dI], H = Q + G' diag(w) G
class KktAssembler {
public:
    KktAssembler(const QpProblem& qp, double delta) : qp_(qp), delta_(delta)
    {
        Gt_ = Eigen::SparseMatrix<double>(qp.G.transpose());
        Gcol_ = Eigen::SparseMatrix<double>(qp.G);
        Qcol_ = Eigen::SparseMatrix<double>(qp.Q);
        Acol_ = Eigen::SparseMatrix<double>(qp.A);
    }

    Eigen::SparseMatrix<double> assemble(const Vec& w) const
    {
        const auto n = qp_.num_vars();
        const auto me = qp_.num_eq();
        Eigen::SparseMatrix<double> H = Qcol_;
        if (qp_.num_ineq() > 0)
            H += Eigen::SparseMatrix<double>(Gt_ * w.asDiagonal() * Gcol_);
        std::vector<Eigen::Triplet<double>> t;
        t.reserve(static_cast<std::size_t>(H.nonZeros() + 2 * Acol_.nonZeros() + n + me));
        for (int k = 0; k < H.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(H, k); it; ++it)
                t.emplace_back(it.row(), it.col(), it.value());
        for (int k = 0; k < Acol_.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(Acol_, k); it; ++it) {
                t.emplace_back(n + it.row(), it.col(), it.value());
                t.emplace_back(it.col(), n + it.row(), it.value());
            }
        for (Eigen::Index i = 0; i < n; ++i)
            t.emplace_back(i, i, delta_);
        for (Eigen::Index i = 0; i < me; ++i)
            t.emplace_back(n + i, n + i, -delta_);
        Eigen::SparseMatrix<double> K(n + me, n + me);
        K.setFromTriplets(t.begin(), t.end());
        K.makeCompressed();
        return K;
    }

private:
    const QpProblem& qp_;
    double delta_;
    Eigen::SparseMatrix<double> Gt_, Gcol_, Qcol_, Acol_;
};

// A variable whose singleton upper and lower rows coincide (a generator
// with p_max == p_min). Such a pair has no strict interior and its two
// duals can drift apart without bound, so the solver treats the variable
// as an equality and hands the multiplier back to one of the rows.
struct FixedVar {
    Eigen::Index var = 0;
    double value = 0.0;
    Eigen::Index upper_row = -1; // tightest  a x <= h, a > 0
    Eigen::Index lower_row = -1; // tightest  a x <= h, a < 0
    std::vector<Eigen::Index> rows; // every singleton row on var
};

inline std::vector<FixedVar> find_fixed_vars(const QpProblem& qp)
{
    const auto n = qp.num_vars();
    std::vector<FixedVar> cand(static_cast<std::size_t>(n));
    std::vector<double> up(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::vector<double> lo(static_cast<std::size_t>(n), -std::numeric_limits<double>::infinity());
    for (Eigen::Index r = 0; r < qp.G.rows(); ++r) {
        Eigen::Index nnz = 0, col = 0;
        double a = 0.0;
        for (SpMat::InnerIterator it(qp.G, r); it; ++it)
            if (it.value() != 0.0) {
                ++nnz;
                col = it.col();
                a = it.value();
            }
        if (nnz != 1)
            continue;
        const auto k = static_cast<std::size_t>(col);
        cand[k].rows.push_back(r);
        const double bound = qp.h[r] / a;
        if (a > 0.0 && bound < up[k]) {
            up[k] = bound;
            cand[k].upper_row = r;
        } else if (a < 0.0 && bound > lo[k]) {
            lo[k] = bound;
            cand[k].lower_row = r;
        }
    }
    std::vector<FixedVar> out;
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto i = static_cast<std::size_t>(k);
        if (cand[i].upper_row < 0 || cand[i].lower_row < 0)
            continue;
        const double gap = up[i] - lo[i];
        // a crossed pair is infeasible; leave it to the solver to report
        if (gap < 0.0 || gap > 1e-12 * std::max({1.0, std::abs(up[i]), std::abs(lo[i])}))
            continue;
        cand[i].var = k;
        cand[i].value = lo[i];
        out.push_back(std::move(cand[i]));
    }
    return out;
}

// qp with the fixed variables' bound rows replaced by equalities x_k = value
inline QpProblem fix_variables(const QpProblem& qp, const std::vector<FixedVar>& fixed, std::vector<Eigen::Index>& kept)
{
    std::vector<char> drop(static_cast<std::size_t>(qp.num_ineq()), 0);
    for (const auto& f : fixed)
        for (auto r : f.rows)
            drop[static_cast<std::size_t>(r)] = 1;
    kept.clear();
    for (Eigen::Index r = 0; r < qp.num_ineq(); ++r)
        if (!drop[static_cast<std::size_t>(r)])
            kept.push_back(r);

    QpProblem out = qp;
    out.G = select_rows(qp.G, kept);
    out.h.resize(static_cast<Eigen::Index>(kept.size()));
    for (std::size_t i = 0; i < kept.size(); ++i)
        out.h[static_cast<Eigen::Index>(i)] = qp.h[kept[i]];

    const auto me = qp.num_eq();
    std::vector<Eigen::Triplet<double>> t;
    for (Eigen::Index r = 0; r < me; ++r)
        for (SpMat::InnerIterator it(qp.A, r); it; ++it)
            t.emplace_back(r, it.col(), it.value());
    out.b.resize(me + static_cast<Eigen::Index>(fixed.size()));
    out.b.head(me) = qp.b;
    for (std::size_t i = 0; i < fixed.size(); ++i) {
        const auto r = me + static_cast<Eigen::Index>(i);
        t.emplace_back(r, fixed[i].var, 1.0);
        out.b[r] = fixed[i].value;
    }
    out.A = SpMat(out.b.size(), qp.num_vars());
    out.A.setFromTriplets(t.begin(), t.end());
    return out;
}

} // namespace detail

/// Mehrotra predictor-corrector interior-point method for convex QPs with
/// equality and one-sided inequality rows. Infeasible-start: inequality
/// slacks are separate variables, so any primal point is admissible.
class InteriorPointSolver {
public:
    explicit InteriorPointSolver(SolverOptions opts = {}) : opts_(opts) { opts_.check(); }

    const SolverOptions& options() const { return opts_; }

    SolveReport solve(const QpProblem& qp) const
    {
        qp.check();
        return run(qp, qp.start, Init::Cold);
    }

    /// Primal warm start: x0 = primal_init, each inequality slack pushed to
    /// at least bound_push * max(1, |h_i|); duals use the cold-start rule.
    SolveReport warm_solve(const QpProblem& qp, const Vec& primal_init) const
    {
        qp.check();
        require_dims(static_cast<std::size_t>(primal_init.size()), static_cast<std::size_t>(qp.num_vars()),
                     "warm-start primal");
        // the default point keeps the cold initialization, so
        // warm_solve(qp, qp.start) reproduces solve(qp)
        return run(qp, primal_init, primal_init == qp.start ? Init::Cold : Init::Warm);
    }

private:
    enum class Init { Cold, Warm };

    SolveReport run(const QpProblem& qp, const Vec& x0, Init init) const
    {
        const double dims = static_cast<double>(qp.num_vars() + qp.num_rows());
        const auto fixed = detail::find_fixed_vars(qp);
        if (fixed.empty())
            return iterate(qp, x0, init, dims);

        std::vector<Eigen::Index> kept;
        const QpProblem inner = detail::fix_variables(qp, fixed, kept);
        SolveReport r = iterate(inner, x0, init, dims);
        const auto me = qp.num_eq();
        Vec z = Vec::Zero(qp.num_ineq());
        for (std::size_t i = 0; i < kept.size(); ++i)
            z[kept[i]] = r.dual_ineq[static_cast<Eigen::Index>(i)];
        for (std::size_t i = 0; i < fixed.size(); ++i) {
            const double y = r.dual_eq[me + static_cast<Eigen::Index>(i)];
            // stationarity needs sum_r a_r z_r = y over the pair
            const auto row = y >= 0.0 ? fixed[i].upper_row : fixed[i].lower_row;
            double a = 0.0;
            for (SpMat::InnerIterator it(qp.G, row); it; ++it)
                a += it.value();
            z[row] = y / a;
        }
        r.dual_eq = r.dual_eq.head(me).eval();
        r.dual_ineq = z;
        r.slack = (qp.h - qp.G * r.primal).cwiseMax(0.0);
        return r;
    }

    SolveReport iterate(const QpProblem& qp, const Vec& x0, Init init, double dims) const
    {
        using clock = std::chrono::steady_clock;
        const auto t0 = clock::now();
        const auto n = qp.num_vars();
        const auto me = qp.num_eq();
        const auto mi = qp.num_ineq();

        SolveReport rep;
        Vec x = x0;
        Vec y = Vec::Zero(me);
        Vec s = qp.h - qp.G * x;
        Vec z = Vec::Ones(mi);
        for (Eigen::Index i = 0; i < mi; ++i) {
            const double floor = init == Init::Cold ? 1.0 : opts_.bound_push * std::max(1.0, std::abs(qp.h[i]));
            s[i] = std::max(s[i], floor);
        }

        const double m = static_cast<double>(mi);

        const double d_scale = 1.0 + detail::inf_norm(qp.c);

        detail::KktAssembler assembler(qp, opts_.regularization);
        auto backend = make_backend(n + me);

        auto finish = [&](SolveStatus st, int iters, std::string msg = {}) {
            rep.status = st;
            rep.iterations = iters;
            rep.primal = x;
            rep.dual_eq = y;
            rep.dual_ineq = z;
            rep.slack = s;
            rep.objective = qp.objective(x);
            rep.work_units = static_cast<double>(iters) * dims;
            rep.message = std::move(msg);
            rep.wall_time = std::chrono::duration<double>(clock::now() - t0).count();
            return rep;
        };

        for (int it = 0;; ++it) {
            const Vec rd = qp.Q * x + qp.c + qp.A.transpose() * y + qp.G.transpose() * z;
            const Vec rp = qp.A * x - qp.b;
            const Vec rg = qp.G * x + s - qp.h;
            const double mu = mi > 0 ? s.dot(z) / m : 0.0;
            const double pres = std::max(detail::inf_norm(rp), detail::inf_norm(rg));
            const double dres = detail::inf_norm(rd);
            if (opts_.record_trace)
                rep.trace.push_back({it, pres, dres, mu, 0.0});

            if (!x.allFinite() || !z.allFinite() || !y.allFinite())
                return finish(SolveStatus::NumericalFailure, it, "non-finite iterate");
            if (pres <= opts_.tol_residual && dres <= opts_.tol_residual * d_scale && mu <= opts_.tol_gap)
                return finish(SolveStatus::Optimal, it);
            if (detail::inf_norm(x) > opts_.divergence)
                return finish(SolveStatus::Unbounded, it, "primal iterates diverged");
            // large duals alone also show up near degenerate optima (dependent
            // active rows); only a primal residual that stays put marks infeasibility
            if (pres > opts_.tol_residual && std::max(detail::inf_norm(z), detail::inf_norm(y)) > opts_.divergence)
                return finish(SolveStatus::NumericalFailure, it, "dual iterates diverged (infeasible problem?)");
            if (it >= opts_.max_iters)
                return finish(SolveStatus::MaxIters, it);

            const Vec w = z.cwiseQuotient(s);
            if (!backend->factorize(assembler.assemble(w)))
                return finish(SolveStatus::NumericalFailure, it, "singular KKT system");

            // Newton system with complementarity residual rc:
            //   dx, dy from K; dz = w.*(G dx) + (z.*rg - rc)./s; ds = -rg - G dx
            auto direction = [&](const Vec& rc, Vec& dx, Vec& dy, Vec& dz, Vec& ds) {
                const Vec corr = (z.cwiseProduct(rg) - rc).cwiseQuotient(s);
                Vec rhs(n + me);
                rhs.head(n) = -rd - qp.G.transpose() * corr;
                rhs.tail(me) = -rp;
                const Vec sol = backend->solve(rhs);
                dx = sol.head(n);
                dy = sol.tail(me);
                const Vec Gdx = qp.G * dx;
                dz = w.cwiseProduct(Gdx) + corr;
                ds = -rg - Gdx;
            };

            Vec dx, dy, dz, ds;
            const Vec sz = s.cwiseProduct(z);
            direction(sz, dx, dy, dz, ds);
            double alpha = 1.0;
            if (mi > 0) {
                const double a_aff = std::min(detail::max_step(s, ds), detail::max_step(z, dz));
                const double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / m;
                const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
                const Vec rc = sz + ds.cwiseProduct(dz) - Vec::Constant(mi, sigma * mu);
                direction(rc, dx, dy, dz, ds);
                // 1 - mu rounds to 1 once mu < 1e-16; cap it so blocking slacks stay positive
                const double tau = std::clamp(1.0 - mu, 0.99, 1.0 - 1e-10);
                alpha = std::min(1.0, tau * std::min(detail::max_step(s, ds), detail::max_step(z, dz)));
            }
            if (!dx.allFinite() || !dz.allFinite())
                return finish(SolveStatus::NumericalFailure, it,
                              pres > opts_.tol_residual && mu <= opts_.tol_gap
                                  ? "non-finite Newton direction; primal residual stalled (infeasible problem?)"
                                  : "non-finite Newton direction");
            x += alpha * dx;
            y += alpha * dy;
            s += alpha * ds;
            z += alpha * dz;
            if (opts_.record_trace)
                rep.trace.back().step = alpha;
        }
    }

    SolverOptions opts_;
};

inline SolveReport solve(const QpProblem& qp, const SolverOptions& opts = {})
{
    return InteriorPointSolver(opts).solve(qp);
}

inline SolveReport warm_solve(const QpProblem& qp, const Vec& primal_init, const SolverOptions& opts = {})
{
    return InteriorPointSolver(opts).warm_solve(qp, primal_init);
}

} // namespace opfmeta
