#pragma once

#include <algorithm>
#include <cmath>

#include "opfmeta/qp.hpp"
#include "opfmeta/qp_ipm.hpp"

namespace opfmeta {

/// Residuals of the first-order conditions at (x, y, z), computed from the
/// problem data alone. Slacks are recomputed as h - Gx, never taken from
/// the solver.
struct KktResiduals {
    double stationarity = 0.0;    // |Qx + c + A'y + G'z|_inf / (1 + |c|_inf)
    double primal = 0.0;          // max(|Ax - b|_inf, max(Gx - h, 0))
    double dual = 0.0;            // max(-z, 0)
    double complementarity = 0.0; // max_i |z_i (h_i - g_i'x)|

    double worst() const { return std::max({stationarity, primal, dual, complementarity}); }
    bool pass(double tol) const { return worst() <= tol; }
};

inline KktResiduals kkt_residuals(const QpProblem& qp, const Vec& x, const Vec& y, const Vec& z)
{
    require_dims(static_cast<std::size_t>(x.size()), static_cast<std::size_t>(qp.num_vars()), "kkt x");
    require_dims(static_cast<std::size_t>(y.size()), static_cast<std::size_t>(qp.num_eq()), "kkt y");
    require_dims(static_cast<std::size_t>(z.size()), static_cast<std::size_t>(qp.num_ineq()), "kkt z");
    KktResiduals r;
    Vec grad = qp.Q * x + qp.c;
    if (qp.num_eq() > 0)
        grad += qp.A.transpose() * y;
    if (qp.num_ineq() > 0)
        grad += qp.G.transpose() * z;
    const double cnorm = qp.c.size() ? qp.c.cwiseAbs().maxCoeff() : 0.0;
    r.stationarity = (grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0) / (1.0 + cnorm);
    if (qp.num_eq() > 0)
        r.primal = (qp.A * x - qp.b).cwiseAbs().maxCoeff();
    if (qp.num_ineq() > 0) {
        const Vec slack = qp.h - qp.G * x;
        r.primal = std::max(r.primal, std::max(0.0, -slack.minCoeff()));
        r.dual = std::max(0.0, -z.minCoeff());
        r.complementarity = z.cwiseProduct(slack).cwiseAbs().maxCoeff();
    }
    return r;
}

inline KktResiduals kkt_residuals(const QpProblem& qp, const SolveReport& rep)
{
    return kkt_residuals(qp, rep.primal, rep.dual_eq, rep.dual_ineq);
}

} // namespace opfmeta
