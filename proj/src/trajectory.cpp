#include "dqt/trajectory.hpp"

#include <cmath>
#include <random>

namespace dqt {

namespace {

constexpr double kInitScale = 0.05;

// Box-Muller, deterministic across platforms.
struct NormalRng {
    std::mt19937_64 gen;
    double spare = 0.0;
    bool have_spare = false;

    explicit NormalRng(uint64_t seed) : gen(seed) {}

    double uniform01() { return (double(gen() >> 11) + 0.5) * 0x1.0p-53; }

    double operator()() {
        if (have_spare) {
            have_spare = false;
            return spare;
        }
        double u = uniform01();
        double v = uniform01();
        double r = std::sqrt(-2.0 * std::log(u));
        spare = r * std::sin(2.0 * M_PI * v);
        have_spare = true;
        return r * std::cos(2.0 * M_PI * v);
    }
};

}  // namespace

std::vector<NamedTensor> default_layout(uint64_t params) {
    struct Part {
        const char* name;
        LayerType type;
        double frac;
        bool flat;
    };
    static const Part parts[] = {
        {"model.embed.weight", LayerType::Embedding, 0.15, false},
        {"model.layer0.attn.qkv.weight", LayerType::Attention, 0.20, false},
        {"model.layer0.attn.out.weight", LayerType::Attention, 0.10, false},
        {"model.layer0.mlp.fc1.weight", LayerType::Linear, 0.175, false},
        {"model.layer0.mlp.fc2.weight", LayerType::Linear, 0.165, false},
        {"model.stem.conv.weight", LayerType::Conv, 0.08, false},
        {"model.layer0.norm.weight", LayerType::Norm, 0.005, true},
        {"model.layer0.mlp.fc1.bias", LayerType::Bias, 0.005, true},
        {"model.output.weight", LayerType::Other, 0.12, false},
    };
    std::vector<NamedTensor> layout;
    for (const Part& p : parts) {
        uint64_t n = std::max<uint64_t>(4, uint64_t(std::llround(p.frac * double(params))));
        NamedTensor t;
        t.name = p.name;
        t.type = p.type;
        if (p.flat) {
            t.shape = {n};
        } else {
            uint64_t cols = 1;
            while (cols * cols < n) ++cols;
            uint64_t rows = (n + cols - 1) / cols;
            t.shape = {rows, cols};
        }
        layout.push_back(std::move(t));
    }
    return layout;
}

std::vector<TrajectoryStep> generate_trajectory(const TrajectorySpec& spec) {
    if (spec.steps < 2) throw Error("trajectory needs at least 2 steps");
    if (!(spec.decay > 0.0 && spec.decay <= 1.0)) throw Error("decay must be in (0, 1]");
    if (!(spec.lr0 > 0.0)) throw Error("lr0 must be positive");

    std::vector<NamedTensor> layout = spec.layout.empty() ? default_layout(spec.params) : spec.layout;
    NormalRng rng(spec.seed);

    std::vector<NamedTensor> w = layout;
    for (auto& t : w) {
        t.data.resize(t.size());
        for (auto& v : t.data) v = float(kInitScale * rng());
    }

    std::vector<TrajectoryStep> out;
    out.reserve(spec.steps);
    double lr = spec.lr0;
    for (uint32_t step = 1; step <= spec.steps; ++step) {
        TrajectoryStep ts;
        ts.weights.step = step;
        ts.weights.tensors = w;
        ts.grads.step = step;
        ts.grads.tensors = layout;
        for (size_t i = 0; i < w.size(); ++i) {
            auto& g = ts.grads.tensors[i];
            g.data.resize(w[i].data.size());
            for (size_t e = 0; e < g.data.size(); ++e)
                g.data[e] = w[i].data[e] + float(spec.noise * kInitScale * rng());
        }
        out.push_back(std::move(ts));
        for (size_t i = 0; i < w.size(); ++i) {
            const auto& g = out.back().grads.tensors[i];
            for (size_t e = 0; e < w[i].data.size(); ++e)
                w[i].data[e] -= float(lr) * g.data[e];
        }
        lr *= spec.decay;
    }
    return out;
}

}  // namespace dqt
