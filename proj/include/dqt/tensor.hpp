#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dqt/errors.hpp"

namespace dqt {

enum class LayerType : uint8_t {
    Conv = 0,
    Linear = 1,
    Attention = 2,
    Norm = 3,
    Embedding = 4,
    Bias = 5,
    Other = 6,
};
constexpr int kLayerTypeCount = 7;

const char* layer_type_name(LayerType t);
LayerType layer_type_from_name(const std::string& s);

struct NamedTensor {
    std::string name;
    LayerType type = LayerType::Other;
    std::vector<uint64_t> shape;
    std::vector<float> data;

    uint64_t size() const;
    bool operator==(const NamedTensor&) const = default;
};

// Container for both weight checkpoints and gradient snapshots.
struct Checkpoint {
    uint64_t step = 0;
    std::vector<NamedTensor> tensors;
    std::map<std::string, std::string> meta;

    const NamedTensor* find(const std::string& name) const;
    uint64_t param_count() const;
    bool operator==(const Checkpoint&) const = default;
};

using GradientSnapshot = Checkpoint;

// DQT1 binary container, little-endian throughout.
void write_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::string& path);

// Layer classification: ordered glob rules, first match wins.
struct LayerRule {
    std::string pattern;
    LayerType type = LayerType::Other;
};

bool glob_match(const std::string& pattern, const std::string& text);
std::vector<LayerRule> default_layer_rules();
std::vector<LayerRule> load_layer_rules(const std::string& path);
LayerType classify_layer_type(const std::string& name, const std::vector<LayerRule>& rules);
void apply_layer_rules(Checkpoint& c, const std::vector<LayerRule>& rules);

}  // namespace dqt
