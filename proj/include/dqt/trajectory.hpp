#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dqt/tensor.hpp"

namespace dqt {

// Synthetic decaying-gradient training run: parameters start bell-shaped,
// each step applies w -= lr0 * decay^t * g with g = w + noise.
struct TrajectorySpec {
    uint64_t params = 100000;  // target total size when layout is empty
    uint32_t steps = 50;
    double lr0 = 0.1;
    double decay = 0.9;
    double noise = 0.05;  // gradient noise relative to the init scale
    uint64_t seed = 1;
    std::vector<NamedTensor> layout;  // names/shapes/types; data ignored
};

std::vector<NamedTensor> default_layout(uint64_t params);

struct TrajectoryStep {
    Checkpoint weights;
    GradientSnapshot grads;
};

std::vector<TrajectoryStep> generate_trajectory(const TrajectorySpec& spec);

}  // namespace dqt
