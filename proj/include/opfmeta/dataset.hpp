#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opfmeta/dc_model.hpp"
#include "opfmeta/errors.hpp"
#include "opfmeta/rng.hpp"
#include "opfmeta/scenario.hpp"

namespace opfmeta {

/// One labeled scenario: classifier input, binding label and the stored
/// full-problem solution.
struct Sample {
    Scenario scenario;
    std::vector<double> phi;
    ActiveSet label;
    double objective = 0.0; // per-unit cost
    std::vector<double> primal;
    int iterations = 0;
    double work_units = 0.0;
    double wall_time = 0.0;

    bool operator==(const Sample&) const = default;
};

struct SplitFractions {
    double train = 0.7;
    double val = 0.2;
    double test = 0.1;

    void check() const
    {
        if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9)
            throw ConfigError("split fractions must be non-negative and sum to 1");
    }
};

struct Split {
    std::vector<std::size_t> train, val, test;

    bool operator==(const Split&) const = default;
};

/// Shuffled index split; sizes are rounded and the test split takes the
/// remainder, so 1000 rows give 700/200/100.
inline Split make_split(std::size_t n, const SplitFractions& f, std::uint64_t seed)
{
    f.check();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = make_rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n))));
    Split s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                 idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
    return s;
}

struct Dataset {
    std::string case_name;
    std::vector<PhiEntry> layout;
    std::size_t catalog_size = 0;
    std::vector<Sample> samples;
    Split split;
    Eigen::VectorXd feature_mean; // training split
    Eigen::VectorXd feature_std;

    std::size_t size() const { return samples.size(); }
    std::size_t in_dim() const { return layout.size(); }

    void check() const
    {
        if (samples.empty())
            throw EmptyDataset("dataset has no samples");
        for (const auto& s : samples) {
            require_dims(s.phi.size(), layout.size(), "sample phi");
            require_dims(s.label.size(), catalog_size, "sample label");
        }
    }
};

/// Per-feature mean and standard deviation over the training split.
/// Constant features get std 1 so they standardize to zero.
inline void fit_normalizer(Dataset& d)
{
    d.check();
    const auto& rows = d.split.train;
    const auto dim = static_cast<Eigen::Index>(d.in_dim());
    d.feature_mean = Eigen::VectorXd::Zero(dim);
    d.feature_std = Eigen::VectorXd::Ones(dim);
    if (rows.empty())
        return;
    for (auto r : rows)
        d.feature_mean += Eigen::Map<const Eigen::VectorXd>(d.samples[r].phi.data(), dim);
    d.feature_mean /= static_cast<double>(rows.size());
    Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
    for (auto r : rows)
        var += (Eigen::Map<const Eigen::VectorXd>(d.samples[r].phi.data(), dim) - d.feature_mean).array().square().matrix();
    var /= static_cast<double>(rows.size());
    for (Eigen::Index i = 0; i < dim; ++i)
        d.feature_std[i] = var[i] > 1e-24 ? std::sqrt(var[i]) : 1.0;
}

inline Eigen::MatrixXd standardize(const Eigen::MatrixXd& x, const Eigen::VectorXd& mean, const Eigen::VectorXd& std)
{
    if (mean.size() == 0)
        return x;
    require_dims(static_cast<std::size_t>(x.cols()), static_cast<std::size_t>(mean.size()), "normalizer");
    return ((x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array()).matrix();
}

/// Raw feature rows for the given sample indices.
inline Eigen::MatrixXd feature_matrix(const Dataset& d, const std::vector<std::size_t>& rows)
{
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d.in_dim()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < d.in_dim(); ++j)
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = d.samples[rows[r]].phi[j];
    return x;
}

inline Eigen::MatrixXd label_matrix(const Dataset& d, const std::vector<std::size_t>& rows)
{
    Eigen::MatrixXd y(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d.catalog_size));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < d.catalog_size; ++j)
            y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = d.samples[rows[r]].label[j] ? 1.0 : 0.0;
    return y;
}

/// Mean label cardinality over the given rows.
inline double mean_active_count(const Dataset& d, const std::vector<std::size_t>& rows)
{
    if (rows.empty())
        throw EmptyDataset("no rows to average");
    double total = 0.0;
    for (auto r : rows)
        total += static_cast<double>(d.samples[r].label.count());
    return total / static_cast<double>(rows.size());
}

inline std::vector<std::size_t> all_rows(const Dataset& d)
{
    std::vector<std::size_t> r(d.size());
    std::iota(r.begin(), r.end(), std::size_t{0});
    return r;
}

} // namespace opfmeta
