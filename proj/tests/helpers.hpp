#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dqt/tensor.hpp"

namespace testutil {

// scratch directory removed on scope exit
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }

  private:
    static uint64_t& counter() {
        static uint64_t c = 0;
        return c;
    }
};

inline std::vector<float> bell(size_t n, uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<float> out(n);
    for (auto& v : out) v = float(dist(rng));
    return out;
}

inline std::vector<float> uniform(size_t n, uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<float> out(n);
    for (auto& v : out) v = float(dist(rng));
    return out;
}

inline dqt::NamedTensor tensor(std::string name, dqt::LayerType type, std::vector<uint64_t> shape,
                               std::vector<float> data) {
    return dqt::NamedTensor{std::move(name), type, std::move(shape), std::move(data)};
}

// small multi-layer-type checkpoint with bell-shaped weights
inline dqt::Checkpoint small_checkpoint(uint64_t seed, size_t per_tensor = 2000,
                                        bool with_embedding = true) {
    dqt::Checkpoint c;
    c.step = 1;
    uint64_t n = per_tensor;
    if (with_embedding)
        c.tensors.push_back(tensor("tok_embed.weight", dqt::LayerType::Embedding, {n / 20, 20},
                                   bell(n, seed + 1, 0.8)));
    c.tensors.push_back(
        tensor("blk.attn.qkv", dqt::LayerType::Attention, {n / 20, 20}, bell(n, seed + 2, 1.0)));
    c.tensors.push_back(
        tensor("blk.fc1.weight", dqt::LayerType::Linear, {n / 20, 20}, bell(n, seed + 3, 1.2)));
    c.tensors.push_back(
        tensor("blk.norm.weight", dqt::LayerType::Norm, {n / 4}, bell(n / 4, seed + 4, 0.3)));
    c.tensors.push_back(
        tensor("blk.fc1.bias", dqt::LayerType::Bias, {n / 4}, bell(n / 4, seed + 5, 0.2)));
    return c;
}

inline dqt::GradientSnapshot grads_like(const dqt::Checkpoint& c, uint64_t seed) {
    dqt::GradientSnapshot g = c;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.1);
    for (auto& t : g.tensors)
        for (auto& v : t.data) v = float(dist(rng));
    return g;
}

}  // namespace testutil
