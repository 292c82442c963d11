#include "dqt/ranker.hpp"

#include <cmath>
#include <cstdio>

namespace dqt {

const NamedTensor* EmaState::find(const std::string& name) const {
    for (const auto& t : grads)
        if (t.name == name) return &t;
    return nullptr;
}

EmaState ema_init(double beta) {
    if (!(beta > 0.0) || !(beta <= 1.0)) throw Error("beta must be in (0, 1]");
    EmaState e;
    e.beta = beta;
    return e;
}

void ema_update(EmaState& ema, const GradientSnapshot& g) {
    if (ema.step_count == 0) {
        ema.grads = g.tensors;
    } else {
        if (g.tensors.size() != ema.grads.size())
            throw ShapeMismatch("gradient snapshot tensor count changed");
        for (auto& e : ema.grads) {
            const NamedTensor* gt = g.find(e.name);
            if (!gt) throw MissingGradients("no gradient for tensor " + e.name);
            if (gt->shape != e.shape) throw ShapeMismatch("gradient shape changed for " + e.name);
            const float b = float(ema.beta);
            for (size_t i = 0; i < e.data.size(); ++i)
                e.data[i] = b * gt->data[i] + (1.0f - b) * e.data[i];
        }
    }
    ++ema.step_count;
}

void ema_save(const std::string& path, const EmaState& ema) {
    Checkpoint c;
    c.step = ema.step_count;
    c.tensors = ema.grads;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", ema.beta);
    c.meta["beta"] = buf;
    c.meta["step_count"] = std::to_string(ema.step_count);
    write_checkpoint(path, c);
}

EmaState ema_load(const std::string& path) {
    Checkpoint c = read_checkpoint(path);
    auto bit = c.meta.find("beta");
    auto sit = c.meta.find("step_count");
    if (bit == c.meta.end() || sit == c.meta.end())
        throw IoError(path + ": missing beta/step_count meta");
    EmaState e;
    e.beta = std::stod(bit->second);
    e.step_count = std::stoull(sit->second);
    e.grads = std::move(c.tensors);
    return e;
}

const char* prune_metric_name(PruneMetric m) {
    return m == PruneMetric::Magnitude ? "MAGNITUDE" : "SENSITIVITY";
}

PruneMetric prune_metric_from_name(const std::string& s) {
    if (s == "MAGNITUDE") return PruneMetric::Magnitude;
    if (s == "SENSITIVITY") return PruneMetric::Sensitivity;
    throw Error("unknown prune metric: " + s);
}

const std::vector<std::vector<float>>& ScoreSet::metric(PruneMetric m) const {
    if (m == PruneMetric::Magnitude) return magnitude;
    if (!has_sensitivity) throw MissingScores("sensitivity scores not available");
    return sensitivity;
}

ScoreSet compute_scores(const Checkpoint& c, const EmaState* ema) {
    ScoreSet s;
    s.magnitude.reserve(c.tensors.size());
    for (const auto& t : c.tensors) {
        std::vector<float> m(t.data.size());
        for (size_t i = 0; i < m.size(); ++i) m[i] = std::fabs(t.data[i]);
        s.magnitude.push_back(std::move(m));
    }
    if (ema && ema->step_count > 0) {
        s.sensitivity.reserve(c.tensors.size());
        for (const auto& t : c.tensors) {
            const NamedTensor* e = ema->find(t.name);
            if (!e) throw MissingGradients("no gradient history for tensor " + t.name);
            if (e->shape != t.shape)
                throw ShapeMismatch("gradient history shape mismatch for " + t.name);
            std::vector<float> v(t.data.size());
            for (size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(e->data[i] * t.data[i]);
            s.sensitivity.push_back(std::move(v));
        }
        s.has_sensitivity = true;
    }
    return s;
}

}  // namespace dqt
