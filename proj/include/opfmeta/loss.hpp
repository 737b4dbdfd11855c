#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "opfmeta/errors.hpp"
#include "opfmeta/mlp.hpp"

namespace opfmeta {


/// Weighted cross-entropy split into its two halves. fn is the term on
/// true labels (y = 1, weighted by w), fp the term on y = 0 (weighted by
/// 1 - w). Both are already divided by the entry count.
struct WceParts {
    double fn = 0.0;
    double fp = 0.0;

    double total() const { return fn + fp; }
};

/// Mean over all entries of -w y log(p) - (1 - w)(1 - y) log(1 - p),
/// with p clipped to [1e-12, 1 - 1e-12].
inline WceParts wce_parts(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& label, double w)
{
    if (pred.rows() != label.rows() || pred.cols() != label.cols())
        throw DimensionMismatch("prediction and label shapes differ");
    if (pred.size() == 0)
        return {};
    WceParts out;
    for (Eigen::Index j = 0; j < pred.cols(); ++j)
        for (Eigen::Index i = 0; i < pred.rows(); ++i) {
            const double p = std::clamp(pred(i, j), kProbClip, 1.0 - kProbClip);
            const double y = label(i, j);
            out.fn -= w * y * std::log(p);
            out.fp -= (1.0 - w) * (1.0 - y) * std::log(1.0 - p);
        }
    const double n = static_cast<double>(pred.size());
    out.fn /= n;
    out.fp /= n;
    return out;
}

inline double wce_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& label, double w)
{
    require_dims(static_cast<std::size_t>(pred.size()), static_cast<std::size_t>(label.size()), "wce inputs");
    return wce_parts(pred, label, w).total();
}

/// d(wce)/d(logit) for sigmoid outputs; zero where the clip is active.
inline Eigen::MatrixXd wce_logit_grad(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& label, double w)
{
    if (pred.rows() != label.rows() || pred.cols() != label.cols())
        throw DimensionMismatch("prediction and label shapes differ");
    Eigen::MatrixXd g(pred.rows(), pred.cols());
    const double n = static_cast<double>(pred.size());
    for (Eigen::Index j = 0; j < pred.cols(); ++j)
        for (Eigen::Index i = 0; i < pred.rows(); ++i) {
            const double p = pred(i, j);
            const double y = label(i, j);
            if (p <= kProbClip || p >= 1.0 - kProbClip)
                g(i, j) = 0.0;
            else
                g(i, j) = (-w * y * (1.0 - p) + (1.0 - w) * (1.0 - y) * p) / n;
        }
    return g;
}

} // namespace opfmeta
