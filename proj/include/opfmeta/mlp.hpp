#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "opfmeta/errors.hpp"
#include "opfmeta/rng.hpp"

namespace opfmeta {

// probabilities stay strictly inside (0, 1)
inline constexpr double kProbClip = 1e-12;

using Mat = Eigen::MatrixXd;

inline constexpr Eigen::Index kHiddenWidth = 50;

struct DenseLayer {
    Mat W; // out x in
    Eigen::VectorXd b;

    bool operator==(const DenseLayer&) const = default;
};

struct BatchNormLayer {
    Eigen::VectorXd gamma;
    Eigen::VectorXd beta;
    Eigen::VectorXd running_mean;
    Eigen::VectorXd running_var;

    bool operator==(const BatchNormLayer&) const = default;
};

/// [in -> 50 -> 50 -> out]; each hidden layer is Linear, BatchNorm, ReLU,
/// Dropout. Output is a sigmoid per constraint. feature_mean/feature_std
/// standardize raw inputs (empty means identity).
struct MlpParams {
    DenseLayer l1, l2, l3;
    BatchNormLayer bn1, bn2;
    double dropout = 0.4;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    std::uint64_t seed = 0;
    Eigen::VectorXd feature_mean;
    Eigen::VectorXd feature_std;

    Eigen::Index in_dim() const { return l1.W.cols(); }
    Eigen::Index out_dim() const { return l3.W.rows(); }

    bool operator==(const MlpParams&) const = default;
};

inline MlpParams init_mlp(Eigen::Index in_dim, Eigen::Index out_dim, std::uint64_t seed)
{
    if (in_dim < 1 || out_dim < 1)
        throw DimensionMismatch("classifier dimensions must be >= 1");
    Rng rng = make_rng(seed);
    // variance-scaled uniform: Var = scale / fan_in
    auto dense = [&rng](Eigen::Index out, Eigen::Index in, double scale) {
        const double limit = std::sqrt(3.0 * scale / static_cast<double>(in));
        std::uniform_real_distribution<double> u(-limit, limit);
        DenseLayer l{Mat(out, in), Eigen::VectorXd::Zero(out)};
        for (Eigen::Index j = 0; j < in; ++j)
            for (Eigen::Index i = 0; i < out; ++i)
                l.W(i, j) = u(rng);
        return l;
    };
    auto bn = [] {
        return BatchNormLayer{Eigen::VectorXd::Ones(kHiddenWidth), Eigen::VectorXd::Zero(kHiddenWidth),
                              Eigen::VectorXd::Zero(kHiddenWidth), Eigen::VectorXd::Ones(kHiddenWidth)};
    };
    MlpParams p;
    p.seed = seed;
    p.l1 = dense(kHiddenWidth, in_dim, 2.0);
    p.bn1 = bn();
    p.l2 = dense(kHiddenWidth, kHiddenWidth, 2.0);
    p.bn2 = bn();
    p.l3 = dense(out_dim, kHiddenWidth, 1.0);
    return p;
}

// Trainable parameters in flattening order: W1 b1 gamma1 beta1 W2 b2
// gamma2 beta2 W3 b3. Running statistics are state, not parameters.
inline Eigen::Index num_params(const MlpParams& p)
{
    return p.l1.W.size() + p.l1.b.size() + 2 * p.bn1.gamma.size() + p.l2.W.size() + p.l2.b.size() +
           2 * p.bn2.gamma.size() + p.l3.W.size() + p.l3.b.size();
}

namespace detail {

template <class P, class F>
void for_each_block(P& p, F&& f)
{
    f(p.l1.W.data(), p.l1.W.size());
    f(p.l1.b.data(), p.l1.b.size());
    f(p.bn1.gamma.data(), p.bn1.gamma.size());
    f(p.bn1.beta.data(), p.bn1.beta.size());
    f(p.l2.W.data(), p.l2.W.size());
    f(p.l2.b.data(), p.l2.b.size());
    f(p.bn2.gamma.data(), p.bn2.gamma.size());
    f(p.bn2.beta.data(), p.bn2.beta.size());
    f(p.l3.W.data(), p.l3.W.size());
    f(p.l3.b.data(), p.l3.b.size());
}

} // namespace detail

inline Eigen::VectorXd flatten(const MlpParams& params)
{
    Eigen::VectorXd v(num_params(params));
    Eigen::Index at = 0;
    detail::for_each_block(params, [&](const double* d, Eigen::Index n) {
        v.segment(at, n) = Eigen::Map<const Eigen::VectorXd>(d, n);
        at += n;
    });
    return v;
}

/// Copy of `like` with trainable parameters replaced by `flat`.
inline MlpParams unflatten(const MlpParams& like, const Eigen::VectorXd& flat)
{
    require_dims(static_cast<std::size_t>(flat.size()), static_cast<std::size_t>(num_params(like)),
                 "flattened parameters");
    MlpParams p = like;
    Eigen::Index at = 0;
    detail::for_each_block(p, [&](double* d, Eigen::Index n) {
        Eigen::Map<Eigen::VectorXd>(d, n) = flat.segment(at, n);
        at += n;
    });
    return p;
}

enum class Mode { Train, Eval };

/// Intermediate values kept for backprop. Rows are samples.
struct ForwardCache {
    Mat x;
    Mat xhat1, xhat2;
    Eigen::VectorXd inv_std1, inv_std2;
    Mat bn_out1, bn_out2; // before ReLU
    Mat mask1, mask2;     // dropout scale per entry, 0 or 1/(1-p)
    Mat a1, a2;           // after dropout
    Mat logits;
};

struct ForwardOptions {
    Mode mode = Mode::Eval;
    std::uint64_t seed = 0;
    bool use_dropout = true;         // train mode only
    bool update_running_stats = false;
};

namespace detail {

inline Mat affine(const Mat& x, const DenseLayer& l)
{
    Mat z = x * l.W.transpose();
    z.rowwise() += l.b.transpose();
    return z;
}

inline Mat batch_norm_forward(const Mat& z, BatchNormLayer& bn, const MlpParams& p, bool train, bool update,
                              Mat& xhat, Eigen::VectorXd& inv_std)
{
    const auto rows = z.rows();
    Eigen::VectorXd mean, var;
    if (train) {
        mean = z.colwise().mean().transpose();
        var = (z.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
        if (update) {
            const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
            bn.running_mean = (1.0 - p.bn_momentum) * bn.running_mean + p.bn_momentum * mean;
            bn.running_var = (1.0 - p.bn_momentum) * bn.running_var + p.bn_momentum * unbias * var;
        }
    } else {
        mean = bn.running_mean;
        var = bn.running_var;
    }
    inv_std = (var.array() + p.bn_eps).rsqrt().matrix();
    xhat = (z.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array();
    Mat out = xhat.array().rowwise() * bn.gamma.transpose().array();
    out.rowwise() += bn.beta.transpose();
    return out;
}

inline Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng)
{
    Mat m(rows, cols);
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            m(i, j) = keep(rng) ? scale : 0.0;
    return m;
}

inline Mat sigmoid(const Mat& z)
{
    return (1.0 + (-z.array()).exp()).inverse().max(kProbClip).min(1.0 - kProbClip).matrix();
}

} // namespace detail

/// Batch forward pass returning logits. Train mode normalizes with batch
/// statistics and applies seeded dropout masks; eval mode uses running
/// statistics and no dropout. Running statistics are only written when
/// options.update_running_stats is set, hence the mutable params.
inline Mat forward_logits(MlpParams& p, const Mat& x, const ForwardOptions& opt, ForwardCache* cache = nullptr)
{
    require_dims(static_cast<std::size_t>(x.cols()), static_cast<std::size_t>(p.in_dim()), "classifier input");
    const bool train = opt.mode == Mode::Train;
    const bool drop = train && opt.use_dropout && p.dropout > 0.0;
    Rng rng = make_rng(opt.seed);
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.x = x;

    c.bn_out1 = detail::batch_norm_forward(detail::affine(x, p.l1), p.bn1, p, train, opt.update_running_stats,
                                           c.xhat1, c.inv_std1);
    c.a1 = c.bn_out1.cwiseMax(0.0);
    c.mask1 = drop ? detail::dropout_mask(x.rows(), kHiddenWidth, p.dropout, rng)
                   : Mat::Ones(x.rows(), kHiddenWidth);
    c.a1 = c.a1.cwiseProduct(c.mask1);

    c.bn_out2 = detail::batch_norm_forward(detail::affine(c.a1, p.l2), p.bn2, p, train, opt.update_running_stats,
                                           c.xhat2, c.inv_std2);
    c.a2 = c.bn_out2.cwiseMax(0.0);
    c.mask2 = drop ? detail::dropout_mask(x.rows(), kHiddenWidth, p.dropout, rng)
                   : Mat::Ones(x.rows(), kHiddenWidth);
    c.a2 = c.a2.cwiseProduct(c.mask2);

    c.logits = detail::affine(c.a2, p.l3);
    return c.logits;
}

/// Probabilities for a batch (rows are samples), no state update.
inline Mat predict_proba(const MlpParams& params, const Mat& x, Mode mode = Mode::Eval, std::uint64_t seed = 0)
{
    MlpParams p = params;
    return detail::sigmoid(forward_logits(p, x, {mode, seed, true, false}));
}

/// Single-sample forward pass.
inline Eigen::VectorXd forward(const MlpParams& params, const Eigen::VectorXd& x, Mode mode, std::uint64_t seed = 0)
{
    require_dims(static_cast<std::size_t>(x.size()), static_cast<std::size_t>(params.in_dim()), "classifier input");
    return predict_proba(params, Mat(x.transpose()), mode, seed).row(0).transpose();
}

namespace detail {

// gradient through y = gamma*xhat + beta with batch statistics
inline Mat batch_norm_backward(const Mat& dy, const Mat& xhat, const Eigen::VectorXd& inv_std,
                               const BatchNormLayer& bn, bool train, Eigen::VectorXd& dgamma,
                               Eigen::VectorXd& dbeta)
{
    dgamma = dy.cwiseProduct(xhat).colwise().sum().transpose();
    dbeta = dy.colwise().sum().transpose();
    const Mat dxhat = dy.array().rowwise() * bn.gamma.transpose().array();
    if (!train)
        return dxhat.array().rowwise() * inv_std.transpose().array();
    const double rows = static_cast<double>(dy.rows());
    const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
    const Eigen::RowVectorXd sum_dxhat_xhat = dxhat.cwiseProduct(xhat).colwise().sum();
    Mat dz = (rows * dxhat).rowwise() - sum_dxhat;
    dz -= (xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
    return (dz.array().rowwise() * (inv_std.transpose().array() / rows)).matrix();
}

} // namespace detail

/// Gradient of a loss with respect to the flattened parameters, given the
/// loss gradient with respect to the logits of the cached forward pass.
inline Eigen::VectorXd backward(const MlpParams& p, const ForwardCache& c, const Mat& dlogits, Mode mode)
{
    const bool train = mode == Mode::Train;
    MlpParams g = p; // same shapes, reused as gradient storage

    g.l3.W = dlogits.transpose() * c.a2;
    g.l3.b = dlogits.colwise().sum().transpose();
    Mat da2 = dlogits * p.l3.W;
    Mat dbn2 = da2.cwiseProduct(c.mask2).cwiseProduct((c.bn_out2.array() > 0.0).cast<double>().matrix());
    Mat dz2 = detail::batch_norm_backward(dbn2, c.xhat2, c.inv_std2, p.bn2, train, g.bn2.gamma, g.bn2.beta);
    g.l2.W = dz2.transpose() * c.a1;
    g.l2.b = dz2.colwise().sum().transpose();
    Mat da1 = dz2 * p.l2.W;
    Mat dbn1 = da1.cwiseProduct(c.mask1).cwiseProduct((c.bn_out1.array() > 0.0).cast<double>().matrix());
    Mat dz1 = detail::batch_norm_backward(dbn1, c.xhat1, c.inv_std1, p.bn1, train, g.bn1.gamma, g.bn1.beta);
    g.l1.W = dz1.transpose() * c.x;
    g.l1.b = dz1.colwise().sum().transpose();
    return flatten(g);
}

} // namespace opfmeta
