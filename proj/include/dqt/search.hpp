#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dqt/quantize.hpp"

namespace dqt {

// Search axes, each ordered so that a higher index never lowers model
// quality: more bins, less pruning, more protection. Embedding bins are
// handled by a second pass rather than as a cube axis.
struct ConfigCube {
    std::vector<uint32_t> bins{4, 6, 8, 12, 16, 32};
    std::vector<double> prune_frac{0.5, 0.4, 0.3, 0.2, 0.1, 0.0};
    std::vector<double> protect_frac{0.0005, 0.005, 0.01};
    std::vector<uint32_t> embed_bins{16, 32};
    double sigma = 0.2;
    double alpha = 0.01;

    QuantConfig config_at(size_t bi, size_t pi, size_t ti, PruneMetric metric,
                          uint32_t embed) const;
    size_t grid_size() const { return bins.size() * prune_frac.size() * protect_frac.size(); }
};

struct EvalResult {
    double quality_delta = 0.0;
    double est_compression = 0.0;
};

class Evaluator {
  public:
    virtual ~Evaluator() = default;
    // Must be safe to call concurrently and deterministic per (c, cfg, seed).
    virtual EvalResult evaluate(const Checkpoint& c, const ScoreSet& s, const QuantConfig& cfg,
                                uint64_t seed) = 0;
};

// Deterministic stand-in quality: per-layer-type relative L2 between the
// original and dequantized tensors, weighted by parameter counts. The
// compression estimate is raw bytes over entropy-coded index bytes plus
// codebook and protected overhead.
class ProxyEvaluator : public Evaluator {
  public:
    EvalResult evaluate(const Checkpoint& c, const ScoreSet& s, const QuantConfig& cfg,
                        uint64_t seed) override;
};

// Runs a user command with {ckpt} replaced by the path of a freshly written
// dequantized checkpoint; the command must print one number and exit 0.
class ExternalEvaluator : public Evaluator {
  public:
    explicit ExternalEvaluator(std::string command_template);
    EvalResult evaluate(const Checkpoint& c, const ScoreSet& s, const QuantConfig& cfg,
                        uint64_t seed) override;

  private:
    std::string template_;
};

double proxy_quality_delta(const Checkpoint& original, const Checkpoint& reconstructed);
double estimate_compression(const Checkpoint& c, const QuantizedCheckpoint& q);

uint64_t config_hash(const QuantConfig& cfg);
uint64_t quantize_seed(uint64_t search_seed, const QuantConfig& cfg);

struct SearchParams {
    double threshold = 0.05;
    uint32_t parallelism = 1;
    uint64_t seed = 1;
};

struct SearchOutcome {
    QuantConfig config;
    double quality_delta = 0.0;
    double est_compression = 0.0;
    uint64_t evaluations_used = 0;
    bool feasible = false;
};

// Shared evaluation cache so a delta search can fall back to the guided
// search without re-evaluating configs.
class EvalCache {
  public:
    explicit EvalCache(Evaluator& ev) : ev_(&ev) {}
    EvalResult get(const Checkpoint& c, const ScoreSet& s, const QuantConfig& cfg,
                   uint64_t search_seed);
    // Evaluates the missing configs, at most `parallelism` concurrently.
    void prefetch(const Checkpoint& c, const ScoreSet& s, const std::vector<QuantConfig>& cfgs,
                  uint64_t search_seed, uint32_t parallelism);
    uint64_t misses() const { return misses_; }

  private:
    Evaluator* ev_;
    std::map<uint64_t, EvalResult> results_;
    uint64_t misses_ = 0;
};

// Divide-and-conquer over the cube: evaluate the diagonal, split at the
// feasibility crossing, and recurse into the sub-boxes that can still hold a
// feasible config with higher estimated compression. Repeated per prune
// metric, then embedding bins are settled by a second pass.
SearchOutcome guided_exhaustive_search(const Checkpoint& c, const ScoreSet& s,
                                       const ConfigCube& cube, Evaluator& ev,
                                       const SearchParams& params);

// Re-evaluates prev (with a prune-metric flip probe), then walks the
// Chebyshev e-neighborhood of prev minus configs more aggressive on every
// axis, most compressive first, in batches with early exit. Falls back to
// the guided search when the whole neighborhood is infeasible.
SearchOutcome delta_neighborhood_search(const Checkpoint& c, const ScoreSet& s,
                                        const ConfigCube& cube, Evaluator& ev,
                                        const QuantConfig& prev, uint32_t e,
                                        const SearchParams& params);

}  // namespace dqt
