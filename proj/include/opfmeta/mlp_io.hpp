#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opfmeta/errors.hpp"
#include "opfmeta/mlp.hpp"
#include "opfmeta/train.hpp"

// Blob layout: 8-byte magic, uint32 header length, JSON header, then
// little-endian float64 payload: flattened parameters followed by the
// running mean and variance of both batch-norm layers.

namespace opfmeta {

inline constexpr char kMlpMagic[8] = {'O', 'P', 'F', 'M', 'L', 'P', '0', '1'};
inline constexpr int kMlpFormatVersion = 1;

inline void write_mlp(std::ostream& os, const MlpParams& p)
{
    static_assert(sizeof(double) == 8 && std::endian::native == std::endian::little);
    const Eigen::VectorXd flat = flatten(p);
    nlohmann::json head{{"format", "opfmeta-mlp"},
                        {"version", kMlpFormatVersion},
                        {"in_dim", p.in_dim()},
                        {"hidden", kHiddenWidth},
                        {"out_dim", p.out_dim()},
                        {"dropout", p.dropout},
                        {"bn_momentum", p.bn_momentum},
                        {"bn_eps", p.bn_eps},
                        {"seed", p.seed},
                        {"num_params", flat.size()},
                        {"feature_mean", std::vector<double>(p.feature_mean.data(),
                                                             p.feature_mean.data() + p.feature_mean.size())},
                        {"feature_std",
                         std::vector<double>(p.feature_std.data(), p.feature_std.data() + p.feature_std.size())}};
    const std::string h = head.dump();
    const auto len = static_cast<std::uint32_t>(h.size());
    os.write(kMlpMagic, sizeof kMlpMagic);
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    auto put = [&os](const Eigen::VectorXd& v) {
        os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    };
    put(flat);
    put(p.bn1.running_mean);
    put(p.bn1.running_var);
    put(p.bn2.running_mean);
    put(p.bn2.running_var);
    if (!os)
        throw Error("failed to write classifier blob");
}

inline MlpParams read_mlp(std::istream& is)
{
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMlpMagic, sizeof magic) != 0)
        throw ParseError("not a classifier blob");
    std::uint32_t len = 0;
    if (!is.read(reinterpret_cast<char*>(&len), sizeof len))
        throw ParseError("truncated classifier header");
    std::string h(len, '\0');
    if (!is.read(h.data(), len))
        throw ParseError("truncated classifier header");
    nlohmann::json head;
    try {
        head = nlohmann::json::parse(h);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad classifier header: ") + e.what());
    }
    if (head.value("version", 0) != kMlpFormatVersion)
        throw ParseError("unsupported classifier blob version");
    if (head.at("hidden").get<Eigen::Index>() != kHiddenWidth)
        throw ParseError("classifier hidden width mismatch");

    MlpParams p = init_mlp(head.at("in_dim").get<Eigen::Index>(), head.at("out_dim").get<Eigen::Index>(), 0);
    p.dropout = head.at("dropout").get<double>();
    p.bn_momentum = head.at("bn_momentum").get<double>();
    p.bn_eps = head.at("bn_eps").get<double>();
    p.seed = head.at("seed").get<std::uint64_t>();
    const auto mean = head.at("feature_mean").get<std::vector<double>>();
    const auto sd = head.at("feature_std").get<std::vector<double>>();
    p.feature_mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    p.feature_std = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    if (head.at("num_params").get<Eigen::Index>() != num_params(p))
        throw ParseError("classifier parameter count mismatch");

    auto get = [&is](Eigen::Index n) {
        Eigen::VectorXd v(n);
        if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8)))
            throw ParseError("truncated classifier payload");
        return v;
    };
    p = unflatten(p, get(num_params(p)));
    p.bn1.running_mean = get(kHiddenWidth);
    p.bn1.running_var = get(kHiddenWidth);
    p.bn2.running_mean = get(kHiddenWidth);
    p.bn2.running_var = get(kHiddenWidth);
    return p;
}

inline void save_mlp(const std::string& path, const MlpParams& p)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw Error("cannot write " + path);
    write_mlp(os, p);
}

inline MlpParams load_mlp(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw Error("cannot read " + path);
    return read_mlp(is);
}

inline void write_training_trace_csv(std::ostream& os, const std::vector<EpochRecord>& trace)
{
    os << "epoch,train_loss,val_loss,fp_loss,fn_loss\n";
    os.precision(10);
    for (const auto& e : trace)
        os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.fp_loss << ',' << e.fn_loss << '\n';
}

} // namespace opfmeta
