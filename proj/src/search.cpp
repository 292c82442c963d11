#include "dqt/search.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <future>
#include <unistd.h>

namespace dqt {

QuantConfig ConfigCube::config_at(size_t bi, size_t pi, size_t ti, PruneMetric metric,
                                  uint32_t embed) const {
    QuantConfig cfg;
    cfg.bins = bins.at(bi);
    cfg.prune_frac = prune_frac.at(pi);
    cfg.protect_frac = protect_frac.at(ti);
    cfg.metric = metric;
    cfg.embed_bins = embed;
    cfg.sigma = sigma;
    cfg.alpha = alpha;
    return cfg;
}

double proxy_quality_delta(const Checkpoint& original, const Checkpoint& reconstructed) {
    if (original.tensors.size() != reconstructed.tensors.size())
        throw ShapeMismatch("checkpoint layout mismatch");
    std::array<double, kLayerTypeCount> diff_sq{}, orig_sq{};
    std::array<uint64_t, kLayerTypeCount> count{};
    for (size_t i = 0; i < original.tensors.size(); ++i) {
        const auto& a = original.tensors[i];
        const auto& b = reconstructed.tensors[i];
        if (a.data.size() != b.data.size()) throw ShapeMismatch("tensor size mismatch at " + a.name);
        size_t lt = size_t(a.type);
        for (size_t e = 0; e < a.data.size(); ++e) {
            double d = double(a.data[e]) - double(b.data[e]);
            diff_sq[lt] += d * d;
            orig_sq[lt] += double(a.data[e]) * double(a.data[e]);
        }
        count[lt] += a.data.size();
    }
    uint64_t total = 0;
    for (uint64_t n : count) total += n;
    if (total == 0) return 0.0;
    double quality = 0.0;
    for (size_t lt = 0; lt < kLayerTypeCount; ++lt) {
        if (count[lt] == 0) continue;
        double rel;
        if (orig_sq[lt] > 0.0)
            rel = std::sqrt(diff_sq[lt] / orig_sq[lt]);
        else
            rel = diff_sq[lt] > 0.0 ? 1.0 : 0.0;
        quality += (double(count[lt]) / double(total)) * rel;
    }
    return quality;
}

double estimate_compression(const Checkpoint& c, const QuantizedCheckpoint& q) {
    double raw = 4.0 * double(c.param_count());
    double est = 64.0;
    for (const auto& t : q.tensors) {
        std::array<uint64_t, 40> hist{};
        std::vector<uint64_t> wide;
        uint32_t levels = uint32_t(q.codebooks[size_t(t.type)].size()) + 2;
        if (levels > hist.size()) wide.assign(levels, 0);
        auto* counts = wide.empty() ? hist.data() : wide.data();
        for (uint16_t lvl : t.levels) ++counts[lvl];
        double n = double(t.levels.size());
        double bits = 0.0;
        for (uint32_t l = 0; l < levels; ++l) {
            if (!counts[l]) continue;
            double p = double(counts[l]) / n;
            bits -= double(counts[l]) * std::log2(p);
        }
        est += bits / 8.0;
        est += 10.0 * double(t.protected_values.size());
    }
    for (const auto& cb : q.codebooks) est += 4.0 * double(cb.size());
    return raw / est;
}

uint64_t config_hash(const QuantConfig& cfg) {
    auto f2u = [](double v) {
        uint64_t u;
        std::memcpy(&u, &v, 8);
        return u;
    };
    uint64_t h = mix_seed(cfg.bins, 1);
    h = mix_seed(h ^ cfg.embed_bins, 2);
    h = mix_seed(h ^ f2u(cfg.prune_frac), 3);
    h = mix_seed(h ^ f2u(cfg.protect_frac), 4);
    h = mix_seed(h ^ uint64_t(cfg.metric), 5);
    h = mix_seed(h ^ f2u(cfg.sigma), 6);
    h = mix_seed(h ^ f2u(cfg.alpha), 7);
    return h;
}

uint64_t quantize_seed(uint64_t search_seed, const QuantConfig& cfg) {
    return mix_seed(search_seed, config_hash(cfg));
}

EvalResult ProxyEvaluator::evaluate(const Checkpoint& c, const ScoreSet& s,
                                    const QuantConfig& cfg, uint64_t seed) {
    QuantizedCheckpoint q = quantize_checkpoint(c, s, cfg, seed);
    Checkpoint deq = dequantize_checkpoint(q);
    return {proxy_quality_delta(c, deq), estimate_compression(c, q)};
}

ExternalEvaluator::ExternalEvaluator(std::string command_template)
    : template_(std::move(command_template)) {}

EvalResult ExternalEvaluator::evaluate(const Checkpoint& c, const ScoreSet& s,
                                       const QuantConfig& cfg, uint64_t seed) {
    QuantizedCheckpoint q = quantize_checkpoint(c, s, cfg, seed);
    Checkpoint deq = dequantize_checkpoint(q);
    deq.step = c.step;

    static std::atomic<uint64_t> counter{0};
    auto path = std::filesystem::temp_directory_path() /
                ("dqt-eval-" + std::to_string(getpid()) + "-" +
                 std::to_string(counter.fetch_add(1)) + ".dqt");
    write_checkpoint(path.string(), deq);

    std::string cmd = template_;
    const std::string token = "{ckpt}";
    for (size_t at = cmd.find(token); at != std::string::npos; at = cmd.find(token))
        cmd.replace(at, token.size(), path.string());

    std::string output;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) {
        std::filesystem::remove(path);
        throw ExternalEvaluatorFailed("cannot run evaluator command: " + cmd);
    }
    char buf[256];
    while (size_t n = fread(buf, 1, sizeof(buf), pipe)) output.append(buf, n);
    int rc = pclose(pipe);
    std::filesystem::remove(path);
    if (rc == -1 || !WIFEXITED(rc) || WEXITSTATUS(rc) != 0)
        throw ExternalEvaluatorFailed("evaluator command failed: " + cmd);

    const char* p = output.c_str();
    char* end = nullptr;
    double value = 0.0;
    bool found = false;
    while (*p) {
        value = std::strtod(p, &end);
        if (end != p) {
            found = true;
            break;
        }
        ++p;
    }
    if (!found) throw ExternalEvaluatorFailed("evaluator printed no number: " + output);
    return {value, estimate_compression(c, q)};
}

EvalResult EvalCache::get(const Checkpoint& c, const ScoreSet& s, const QuantConfig& cfg,
                          uint64_t search_seed) {
    uint64_t key = config_hash(cfg);
    auto it = results_.find(key);
    if (it != results_.end()) return it->second;
    EvalResult r = ev_->evaluate(c, s, cfg, quantize_seed(search_seed, cfg));
    results_.emplace(key, r);
    ++misses_;
    return r;
}

void EvalCache::prefetch(const Checkpoint& c, const ScoreSet& s,
                         const std::vector<QuantConfig>& cfgs, uint64_t search_seed,
                         uint32_t parallelism) {
    std::vector<QuantConfig> todo;
    std::vector<uint64_t> keys;
    for (const auto& cfg : cfgs) {
        uint64_t key = config_hash(cfg);
        if (results_.count(key) || std::count(keys.begin(), keys.end(), key)) continue;
        todo.push_back(cfg);
        keys.push_back(key);
    }
    if (parallelism <= 1 || todo.size() <= 1) {
        for (const auto& cfg : todo) get(c, s, cfg, search_seed);
        return;
    }
    for (size_t at = 0; at < todo.size(); at += parallelism) {
        size_t batch = std::min<size_t>(parallelism, todo.size() - at);
        std::vector<std::future<EvalResult>> futs;
        futs.reserve(batch);
        for (size_t i = 0; i < batch; ++i) {
            const QuantConfig& cfg = todo[at + i];
            futs.push_back(std::async(std::launch::async, [&, cfg] {
                return ev_->evaluate(c, s, cfg, quantize_seed(search_seed, cfg));
            }));
        }
        for (size_t i = 0; i < batch; ++i) {
            results_.emplace(keys[at + i], futs[i].get());
            ++misses_;
        }
    }
}

namespace {

struct Box {
    std::array<int, 3> lo, hi;  // inclusive index ranges: bins, prune, protect

    int extent(int a) const { return hi[a] - lo[a] + 1; }
    bool valid() const { return extent(0) > 0 && extent(1) > 0 && extent(2) > 0; }
};

std::vector<std::array<int, 3>> box_diagonal(const Box& b) {
    int d = std::max({b.extent(0), b.extent(1), b.extent(2)});
    std::vector<std::array<int, 3>> out;
    out.reserve(size_t(d));
    for (int t = 0; t < d; ++t)
        out.push_back({b.lo[0] + std::min(t, b.extent(0) - 1),
                       b.lo[1] + std::min(t, b.extent(1) - 1),
                       b.lo[2] + std::min(t, b.extent(2) - 1)});
    return out;
}

struct GuidedCtx {
    const Checkpoint& c;
    const ScoreSet& s;
    const ConfigCube& cube;
    EvalCache& cache;
    const SearchParams& params;
    PruneMetric metric;
    uint32_t embed;
    SearchOutcome* best;
};

void consider(SearchOutcome& best, const QuantConfig& cfg, const EvalResult& r, double threshold) {
    if (r.quality_delta > threshold) return;
    if (!best.feasible || r.est_compression > best.est_compression) {
        best.config = cfg;
        best.quality_delta = r.quality_delta;
        best.est_compression = r.est_compression;
        best.feasible = true;
    }
}

void guided_box(GuidedCtx& ctx, const Box& box) {
    if (!box.valid()) return;
    auto diag = box_diagonal(box);
    std::vector<QuantConfig> cfgs;
    cfgs.reserve(diag.size());
    for (const auto& idx : diag)
        cfgs.push_back(ctx.cube.config_at(size_t(idx[0]), size_t(idx[1]), size_t(idx[2]),
                                          ctx.metric, ctx.embed));
    // Walk the diagonal from the aggressive end in parallelism-sized batches
    // and stop at the first feasible point: everything past it is feasible
    // too but dominated, except along the prune axis, which gets its own
    // sweep at the end of the search.
    int t_star = -1;
    uint32_t m = std::max(1u, ctx.params.parallelism);
    for (size_t at = 0; at < cfgs.size() && t_star < 0; at += m) {
        size_t n = std::min<size_t>(m, cfgs.size() - at);
        std::vector<QuantConfig> batch(cfgs.begin() + long(at), cfgs.begin() + long(at + n));
        ctx.cache.prefetch(ctx.c, ctx.s, batch, ctx.params.seed, ctx.params.parallelism);
        for (size_t t = at; t < at + n; ++t) {
            EvalResult r = ctx.cache.get(ctx.c, ctx.s, cfgs[t], ctx.params.seed);
            if (r.quality_delta <= ctx.params.threshold) {
                consider(*ctx.best, cfgs[t], r, ctx.params.threshold);
                if (t_star < 0) t_star = int(t);
            }
        }
    }
    // Quality never decreases along the diagonal, so an infeasible top corner
    // certifies the whole box infeasible, and a feasible bottom corner is
    // already the box's most compressive feasible point.
    if (t_star <= 0) return;

    std::array<int, 3> pivot{box.lo[0] + std::min(t_star, box.extent(0) - 1),
                             box.lo[1] + std::min(t_star, box.extent(1) - 1),
                             box.lo[2] + std::min(t_star, box.extent(2) - 1)};
    for (int mask = 1; mask < 7; ++mask) {  // skip all-high (0) and all-low (7)
        Box sub;
        bool ok = true;
        for (int a = 0; a < 3; ++a) {
            if (mask & (1 << a)) {
                sub.lo[a] = box.lo[a];
                sub.hi[a] = pivot[a] - 1;
            } else {
                sub.lo[a] = pivot[a];
                sub.hi[a] = box.hi[a];
            }
            if (sub.lo[a] > sub.hi[a]) ok = false;
        }
        if (ok) guided_box(ctx, sub);
    }
}

bool has_embedding(const Checkpoint& c) {
    for (const auto& t : c.tensors)
        if (t.type == LayerType::Embedding) return true;
    return false;
}

std::vector<PruneMetric> usable_metrics(const ScoreSet& s) {
    std::vector<PruneMetric> m{PruneMetric::Magnitude};
    if (s.has_sensitivity) m.push_back(PruneMetric::Sensitivity);
    return m;
}

// The estimate is not monotone along the prune axis: a small pruned mass adds
// a level symbol and can raise entropy, while heavy pruning collapses it, so
// the best fraction for the incumbent's bins/protect can sit anywhere on the
// fiber. Sweep it before settling.
void prune_fiber_pass(const Checkpoint& c, const ScoreSet& s, const ConfigCube& cube,
                      EvalCache& cache, const SearchParams& params, SearchOutcome& best) {
    if (!best.feasible) return;
    std::vector<QuantConfig> fiber;
    for (double pf : cube.prune_frac) {
        if (pf == best.config.prune_frac) continue;
        QuantConfig cfg = best.config;
        cfg.prune_frac = pf;
        fiber.push_back(cfg);
    }
    cache.prefetch(c, s, fiber, params.seed, params.parallelism);
    for (const auto& cfg : fiber)
        consider(best, cfg, cache.get(c, s, cfg, params.seed), params.threshold);
}

// Second pass: keep the chosen cube config but try the other embedding-bin
// settings, preferring the most compressive feasible variant.
void embed_second_pass(const Checkpoint& c, const ScoreSet& s, const ConfigCube& cube,
                       EvalCache& cache, const SearchParams& params, SearchOutcome& best) {
    if (!best.feasible || cube.embed_bins.size() < 2 || !has_embedding(c)) return;
    std::vector<QuantConfig> variants;
    for (uint32_t eb : cube.embed_bins) {
        if (eb == best.config.embed_bins) continue;
        QuantConfig cfg = best.config;
        cfg.embed_bins = eb;
        variants.push_back(cfg);
    }
    cache.prefetch(c, s, variants, params.seed, params.parallelism);
    for (const auto& cfg : variants)
        consider(best, cfg, cache.get(c, s, cfg, params.seed), params.threshold);
}

SearchOutcome finish_outcome(const Checkpoint& c, const ScoreSet& s, const ConfigCube& cube,
                             EvalCache& cache, const SearchParams& params, SearchOutcome best) {
    if (!best.feasible) {
        // Report the least aggressive config so the caller sees how far the
        // cube is from the threshold.
        QuantConfig cfg = cube.config_at(cube.bins.size() - 1, cube.prune_frac.size() - 1,
                                         cube.protect_frac.size() - 1, PruneMetric::Magnitude,
                                         cube.embed_bins.back());
        EvalResult r = cache.get(c, s, cfg, params.seed);
        best.config = cfg;
        best.quality_delta = r.quality_delta;
        best.est_compression = r.est_compression;
    }
    best.evaluations_used = cache.misses();
    return best;
}

SearchOutcome guided_search_cached(const Checkpoint& c, const ScoreSet& s, const ConfigCube& cube,
                                   EvalCache& cache, const SearchParams& params) {
    SearchOutcome best;
    Box full{{0, 0, 0},
             {int(cube.bins.size()) - 1, int(cube.prune_frac.size()) - 1,
              int(cube.protect_frac.size()) - 1}};
    for (PruneMetric metric : usable_metrics(s)) {
        GuidedCtx ctx{c, s, cube, cache, params, metric, cube.embed_bins.back(), &best};
        guided_box(ctx, full);
    }
    prune_fiber_pass(c, s, cube, cache, params, best);
    embed_second_pass(c, s, cube, cache, params, best);
    return finish_outcome(c, s, cube, cache, params, std::move(best));
}

}  // namespace

SearchOutcome guided_exhaustive_search(const Checkpoint& c, const ScoreSet& s,
                                       const ConfigCube& cube, Evaluator& ev,
                                       const SearchParams& params) {
    EvalCache cache(ev);
    return guided_search_cached(c, s, cube, cache, params);
}

SearchOutcome delta_neighborhood_search(const Checkpoint& c, const ScoreSet& s,
                                        const ConfigCube& cube, Evaluator& ev,
                                        const QuantConfig& prev, uint32_t e,
                                        const SearchParams& params) {
    EvalCache cache(ev);

    int bi = -1, pi = -1, ti = -1;
    for (size_t i = 0; i < cube.bins.size(); ++i)
        if (cube.bins[i] == prev.bins) bi = int(i);
    for (size_t i = 0; i < cube.prune_frac.size(); ++i)
        if (cube.prune_frac[i] == prev.prune_frac) pi = int(i);
    for (size_t i = 0; i < cube.protect_frac.size(); ++i)
        if (cube.protect_frac[i] == prev.protect_frac) ti = int(i);
    if (bi < 0 || pi < 0 || ti < 0) return guided_search_cached(c, s, cube, cache, params);

    // Metric probe: re-evaluate prev as-is and with the metric flipped,
    // switching only on a >10% relative quality improvement.
    PruneMetric metric = prev.metric;
    auto metrics = usable_metrics(s);
    QuantConfig cfg_orig = cube.config_at(size_t(bi), size_t(pi), size_t(ti), metric,
                                          prev.embed_bins);
    std::vector<QuantConfig> probe{cfg_orig};
    if (metrics.size() > 1) {
        PruneMetric other =
            metric == PruneMetric::Magnitude ? PruneMetric::Sensitivity : PruneMetric::Magnitude;
        probe.push_back(cube.config_at(size_t(bi), size_t(pi), size_t(ti), other, prev.embed_bins));
    }
    cache.prefetch(c, s, probe, params.seed, params.parallelism);
    EvalResult base_res = cache.get(c, s, probe[0], params.seed);
    QuantConfig base_cfg = probe[0];
    if (probe.size() > 1) {
        EvalResult flipped = cache.get(c, s, probe[1], params.seed);
        if (flipped.quality_delta < 0.9 * base_res.quality_delta) {
            base_cfg = probe[1];
            base_res = flipped;
        }
    }
    metric = base_cfg.metric;

    SearchOutcome best;
    consider(best, base_cfg, base_res, params.threshold);

    // Chebyshev e-neighborhood minus configs more aggressive on every axis,
    // most compressive first (lowest index sum), evaluated in batches with
    // early exit once a batch yields a feasible config.
    struct Cand {
        int sum;
        std::array<int, 3> idx;
    };
    std::vector<Cand> cands;
    for (int di = -int(e); di <= int(e); ++di)
        for (int dj = -int(e); dj <= int(e); ++dj)
            for (int dl = -int(e); dl <= int(e); ++dl) {
                if (di == 0 && dj == 0 && dl == 0) continue;
                if (di < 0 && dj < 0 && dl < 0) continue;
                int i = bi + di, j = pi + dj, l = ti + dl;
                if (i < 0 || j < 0 || l < 0 || i >= int(cube.bins.size()) ||
                    j >= int(cube.prune_frac.size()) || l >= int(cube.protect_frac.size()))
                    continue;
                cands.push_back({i + j + l, {i, j, l}});
            }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.sum != b.sum) return a.sum < b.sum;
        return a.idx < b.idx;
    });
    bool base_feasible = best.feasible;
    if (base_feasible) {
        // Only configs estimated more compressive than the feasible base are
        // worth a look.
        int base_sum = bi + pi + ti;
        std::erase_if(cands, [&](const Cand& cd) { return cd.sum >= base_sum; });
    }

    uint32_t m = std::max(1u, params.parallelism);
    bool found = false;
    for (size_t at = 0; at < cands.size() && !found; at += m) {
        size_t n = std::min<size_t>(m, cands.size() - at);
        std::vector<QuantConfig> batch;
        batch.reserve(n);
        for (size_t i = 0; i < n; ++i) {
            const auto& idx = cands[at + i].idx;
            batch.push_back(cube.config_at(size_t(idx[0]), size_t(idx[1]), size_t(idx[2]), metric,
                                           prev.embed_bins));
        }
        cache.prefetch(c, s, batch, params.seed, params.parallelism);
        for (const auto& cfg : batch) {
            EvalResult r = cache.get(c, s, cfg, params.seed);
            if (r.quality_delta <= params.threshold) found = true;
            consider(best, cfg, r, params.threshold);
        }
    }

    if (!best.feasible) return guided_search_cached(c, s, cube, cache, params);
    embed_second_pass(c, s, cube, cache, params, best);
    return finish_outcome(c, s, cube, cache, params, std::move(best));
}

}  // namespace dqt
