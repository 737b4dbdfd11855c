#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "opfmeta/dataset.hpp"
#include "opfmeta/dc_model.hpp"
#include "opfmeta/errors.hpp"
#include "opfmeta/loss.hpp"
#include "opfmeta/mlp.hpp"
#include "opfmeta/rng.hpp"
#include "opfmeta/scenario.hpp"

namespace opfmeta {

struct TrainConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 10;
    int burn_in_epochs = 50;
    int patience = 10;
    int max_epochs = 500;
    double loss_weight = 0.5; // w; 0.5 is plain cross-entropy up to a factor
    std::uint64_t seed = 0;
    // Test seam: replaces the measured validation loss of an epoch.
    std::function<double(int epoch, double val_loss)> val_override;
    // Called after every epoch with the current (not best) parameters.
    std::function<void(int epoch, const MlpParams&)> on_epoch;

    void check() const
    {
        if (!(learning_rate > 0.0) || batch_size < 1 || max_epochs < 0 || patience < 1 || burn_in_epochs < 0)
            throw ConfigError("invalid training configuration");
        if (!(loss_weight >= 0.0 && loss_weight <= 1.0))
            throw ConfigError("loss weight must lie in [0, 1]");
    }
};

/// Adam with bias correction over a flat parameter vector.
class Adam {
public:
    Adam(Eigen::Index n, double lr, double b1, double b2, double eps)
        : m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)), lr_(lr), b1_(b1), b2_(b2), eps_(eps)
    {
    }

    void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad)
    {
        ++t_;
        m_ = b1_ * m_ + (1.0 - b1_) * grad;
        v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(b1_, t_);
        const double c2 = 1.0 - std::pow(b2_, t_);
        theta.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
    }

private:
    Eigen::VectorXd m_, v_;
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double fp_loss = 0.0; // validation, y = 0 terms
    double fn_loss = 0.0; // validation, y = 1 terms
};

struct TrainResult {
    MlpParams params; // best validation checkpoint
    std::vector<EpochRecord> trace;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

/// Eval-mode loss parts of `params` on the given rows.
inline WceParts evaluate_loss(const MlpParams& params, const Dataset& d, const std::vector<std::size_t>& rows, double w)
{
    if (rows.empty())
        return {};
    const Mat x = standardize(feature_matrix(d, rows), params.feature_mean, params.feature_std);
    return wce_parts(predict_proba(params, x), label_matrix(d, rows), w);
}

/// Mini-batch Adam on the weighted cross-entropy. After the burn-in,
/// training stops once the validation loss has not improved for
/// `patience` consecutive epochs; the best-validation checkpoint is
/// returned. `init` continues from given weights instead of a fresh init.
inline TrainResult train(const Dataset& d, const TrainConfig& cfg, const MlpParams* init = nullptr)
{
    cfg.check();
    d.check();
    if (d.split.train.empty())
        throw EmptyDataset("training split is empty");
    if (d.feature_mean.size() != static_cast<Eigen::Index>(d.in_dim()))
        throw ConfigError("dataset normalizer not fitted");

    MlpParams params = init ? *init
                            : init_mlp(static_cast<Eigen::Index>(d.in_dim()), static_cast<Eigen::Index>(d.catalog_size),
                                       derive_seed(cfg.seed, {0x1417}));
    params.feature_mean = d.feature_mean;
    params.feature_std = d.feature_std;
    Eigen::VectorXd theta = flatten(params);
    Adam adam(theta.size(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);

    const Mat x_train = standardize(feature_matrix(d, d.split.train), d.feature_mean, d.feature_std);
    const Mat y_train = label_matrix(d, d.split.train);
    const auto& val_rows = d.split.val.empty() ? d.split.train : d.split.val;

    TrainResult res;
    res.params = params;
    int stale = 0;
    std::vector<std::size_t> order(d.split.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng = make_rng(derive_seed(cfg.seed, {0x5e, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const auto rows = static_cast<Eigen::Index>(end - start);
            Mat xb(rows, x_train.cols()), yb(rows, y_train.cols());
            for (Eigen::Index r = 0; r < rows; ++r) {
                xb.row(r) = x_train.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(r)]));
                yb.row(r) = y_train.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(r)]));
            }
            params = unflatten(params, theta);
            ForwardCache cache;
            const std::uint64_t mask_seed =
                derive_seed(cfg.seed, {0xd0, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batches)});
            const Mat logits = forward_logits(params, xb, {Mode::Train, mask_seed, true, true}, &cache);
            const Mat prob = detail::sigmoid(logits);
            const Eigen::VectorXd grad = backward(params, cache, wce_logit_grad(prob, yb, cfg.loss_weight), Mode::Train);
            adam.step(theta, grad);
            ++batches;
        }
        params = unflatten(params, theta);

        // both losses in eval mode so epochs compare without dropout noise
        const double train_loss = evaluate_loss(params, d, d.split.train, cfg.loss_weight).total();
        const WceParts val = evaluate_loss(params, d, val_rows, cfg.loss_weight);
        double val_loss = val.total();
        if (cfg.val_override)
            val_loss = cfg.val_override(epoch, val_loss);
        res.trace.push_back({epoch, train_loss, val_loss, val.fp, val.fn});
        res.epochs_run = epoch;
        if (cfg.on_epoch)
            cfg.on_epoch(epoch, params);

        if (val_loss < res.best_val_loss) {
            res.best_val_loss = val_loss;
            res.best_epoch = epoch;
            res.params = params;
            stale = 0;
        } else if (epoch > cfg.burn_in_epochs) {
            ++stale;
        }
        if (epoch > cfg.burn_in_epochs && stale >= cfg.patience)
            break;
    }
    if (res.epochs_run == 0)
        res.params = params;
    return res;
}

/// Standardizes raw Phi values with the parameters' stored statistics and
/// thresholds the eval-mode probabilities.
inline ActiveSet predict_active_set(const MlpParams& params, const std::vector<double>& phi, double threshold = 0.5)
{
    require_dims(phi.size(), static_cast<std::size_t>(params.in_dim()), "phi");
    Mat x = Eigen::Map<const Eigen::RowVectorXd>(phi.data(), static_cast<Eigen::Index>(phi.size()));
    const Mat p = predict_proba(params, standardize(x, params.feature_mean, params.feature_std));
    ActiveSet out(static_cast<std::size_t>(p.cols()));
    for (Eigen::Index j = 0; j < p.cols(); ++j)
        out.set(static_cast<std::size_t>(j), p(0, j) >= threshold);
    return out;
}

inline ActiveSet predict_active_set(const MlpParams& params, const PhiVector& phi, double threshold = 0.5)
{
    return predict_active_set(params, phi.values, threshold);
}

/// Predictions for many dataset rows in one batch.
inline std::vector<ActiveSet> predict_active_sets(const MlpParams& params, const Dataset& d,
                                                  const std::vector<std::size_t>& rows, double threshold = 0.5)
{
    std::vector<ActiveSet> out;
    if (rows.empty())
        return out;
    const Mat p = predict_proba(params, standardize(feature_matrix(d, rows), params.feature_mean, params.feature_std));
    out.reserve(rows.size());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        ActiveSet a(static_cast<std::size_t>(p.cols()));
        for (Eigen::Index j = 0; j < p.cols(); ++j)
            a.set(static_cast<std::size_t>(j), p(i, j) >= threshold);
        out.push_back(std::move(a));
    }
    return out;
}

} // namespace opfmeta
