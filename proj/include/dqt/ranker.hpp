#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dqt/tensor.hpp"

namespace dqt {

// Exponential moving average of raw signed gradients, aligned with the
// checkpoint by tensor name. The first observed snapshot seeds the average.
struct EmaState {
    double beta = 0.9;
    uint64_t step_count = 0;
    std::vector<NamedTensor> grads;

    const NamedTensor* find(const std::string& name) const;
};

EmaState ema_init(double beta);
void ema_update(EmaState& ema, const GradientSnapshot& g);
void ema_save(const std::string& path, const EmaState& ema);
EmaState ema_load(const std::string& path);

enum class PruneMetric : uint8_t { Magnitude = 0, Sensitivity = 1 };

const char* prune_metric_name(PruneMetric m);
PruneMetric prune_metric_from_name(const std::string& s);

// Per-element importance scores, one vector per checkpoint tensor, in
// checkpoint tensor order. Sensitivity is present only when an EMA with at
// least one update covers every tensor.
struct ScoreSet {
    std::vector<std::vector<float>> magnitude;
    std::vector<std::vector<float>> sensitivity;
    bool has_sensitivity = false;

    const std::vector<std::vector<float>>& metric(PruneMetric m) const;
};

ScoreSet compute_scores(const Checkpoint& c, const EmaState* ema);

}  // namespace dqt
