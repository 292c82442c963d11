#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dqt/ranker.hpp"
#include "dqt/tensor.hpp"

namespace dqt {

struct QuantConfig {
    uint32_t bins = 16;
    uint32_t embed_bins = 32;
    double prune_frac = 0.0;
    double protect_frac = 0.005;
    PruneMetric metric = PruneMetric::Magnitude;
    double sigma = 0.2;
    double alpha = 0.01;

    uint32_t bins_for(LayerType t) const {
        return t == LayerType::Embedding ? embed_bins : bins;
    }
    bool operator==(const QuantConfig&) const = default;
};

enum class Part : uint8_t { Quantize = 0, Prune = 1, Protect = 2 };

// Per-tensor element partition, in checkpoint tensor order.
struct PartitionMasks {
    std::vector<std::vector<uint8_t>> part;

    uint64_t count(Part p) const;
};

// Embedding tensors are never pruned. Protection takes the top
// protect_frac/2 mass by magnitude and by sensitivity (when available) per
// layer type; elements qualifying for both prune and protect are protected.
PartitionMasks partition_params(const Checkpoint& c, const ScoreSet& s, const QuantConfig& cfg);

// Weighted k-means++ seeding over 1-D points: first center drawn
// proportionally to weight, later centers proportionally to weight times
// squared distance to the nearest chosen center. Returns ascending centers.
std::vector<double> weighted_kmeanspp_init(const std::vector<double>& points,
                                           const std::vector<double>& weights, uint32_t k,
                                           uint64_t seed);

struct LloydResult {
    std::vector<double> centers;  // ascending
    uint32_t iterations = 0;
};

// Batch Lloyd iterations with weighted mean updates. Empty clusters are
// re-seeded to the point with the largest weighted squared distance.
// Converges when the largest center movement drops below tol relative to the
// point scale.
LloydResult weighted_lloyd(const std::vector<double>& points, const std::vector<double>& weights,
                           std::vector<double> centers, double tol = 1e-6,
                           uint32_t max_iter = 100);

double weighted_sq_loss(const std::vector<double>& points, const std::vector<double>& weights,
                        const std::vector<double>& centers);

// Histogram-accelerated non-uniform codebook: sketch the values, mix
// normalized bucket counts and key magnitudes into per-bucket weights
// (sigma on counts, 1-sigma on magnitudes), and cluster the bucket keys.
// Inputs with fewer distinct values than k get their distinct values back.
std::vector<float> approx_kmeans(const std::vector<float>& values, uint32_t k, double sigma,
                                 double alpha, uint64_t seed);

uint32_t nearest_center(const std::vector<float>& centers, float v);  // ties -> lower index

uint16_t bf16_from_f32(float v);  // round-to-nearest-even
float bf16_to_f32(uint16_t v);

struct ProtectedEntry {
    uint64_t pos = 0;
    uint16_t value = 0;
    bool operator==(const ProtectedEntry&) const = default;
};

// Level values: 0..len(codebook)-1 select codebook entries, len(codebook)
// means pruned, len(codebook)+1 means protected.
struct QuantizedTensor {
    std::string name;
    LayerType type = LayerType::Other;
    std::vector<uint64_t> shape;
    std::vector<uint16_t> levels;
    std::vector<ProtectedEntry> protected_values;  // strictly ascending pos

    uint64_t size() const;
    bool operator==(const QuantizedTensor&) const = default;
};

struct QuantizedCheckpoint {
    uint64_t step = 0;
    QuantConfig config;
    std::array<std::vector<float>, kLayerTypeCount> codebooks;
    std::vector<QuantizedTensor> tensors;

    uint32_t levels_for(LayerType t) const;  // codebook length + 2
    uint32_t max_levels() const;
    uint64_t param_count() const;
    bool operator==(const QuantizedCheckpoint&) const = default;
};

QuantizedCheckpoint quantize_checkpoint(const Checkpoint& c, const ScoreSet& s,
                                        const QuantConfig& cfg, uint64_t seed);
Checkpoint dequantize_checkpoint(const QuantizedCheckpoint& q);

uint64_t mix_seed(uint64_t seed, uint64_t salt);

}  // namespace dqt
