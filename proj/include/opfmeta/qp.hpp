#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "opfmeta/errors.hpp"

namespace opfmeta {

using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Convex QP in standard form:
///   min 1/2 x'Qx + c'x + constant   s.t.  Ax = b,  Gx <= h.
/// `start` is the problem's cold-start primal point.
struct QpProblem {
    SpMat Q;
    Vec c;
    double constant = 0.0;
    SpMat A;
    Vec b;
    SpMat G;
    Vec h;
    Vec start;

    Eigen::Index num_vars() const { return c.size(); }
    Eigen::Index num_eq() const { return b.size(); }
    Eigen::Index num_ineq() const { return h.size(); }
    Eigen::Index num_rows() const { return num_eq() + num_ineq(); }

    double objective(const Vec& x) const { return 0.5 * x.dot(Q * x) + c.dot(x) + constant; }

    void check() const
    {
        const auto n = num_vars();
        if (Q.rows() != n || Q.cols() != n)
            throw DimensionMismatch("Q must be n x n");
        if (A.cols() != n || A.rows() != b.size())
            throw DimensionMismatch("A/b shape mismatch");
        if (G.cols() != n || G.rows() != h.size())
            throw DimensionMismatch("G/h shape mismatch");
        if (start.size() != n)
            throw DimensionMismatch("start point has wrong length");
    }
};

/// Copies the listed rows of a row-major sparse matrix.
inline SpMat select_rows(const SpMat& m, const std::vector<Eigen::Index>& rows)
{
    std::vector<Eigen::Triplet<double>> trip;
    for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(rows.size()); ++r)
        for (SpMat::InnerIterator it(m, rows[r]); it; ++it)
            trip.emplace_back(r, it.col(), it.value());
    SpMat out(static_cast<Eigen::Index>(rows.size()), m.cols());
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

} // namespace opfmeta
