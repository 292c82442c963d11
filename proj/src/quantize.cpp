#include "dqt/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "dqt/sketch.hpp"

namespace dqt {

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

namespace {

// Deterministic across platforms, unlike std::uniform_real_distribution.
double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

}  // namespace

uint64_t PartitionMasks::count(Part p) const {
    uint64_t n = 0;
    for (const auto& v : part)
        for (uint8_t b : v) n += (b == uint8_t(p));
    return n;
}

PartitionMasks partition_params(const Checkpoint& c, const ScoreSet& s, const QuantConfig& cfg) {
    if (s.magnitude.size() != c.tensors.size())
        throw MissingScores("score set does not match checkpoint");
    if (cfg.metric == PruneMetric::Sensitivity && !s.has_sensitivity)
        throw MissingScores("sensitivity prune metric requested without gradient history");

    PartitionMasks m;
    m.part.resize(c.tensors.size());
    for (size_t i = 0; i < c.tensors.size(); ++i)
        m.part[i].assign(c.tensors[i].data.size(), uint8_t(Part::Quantize));

    const auto& prune_scores = s.metric(cfg.metric);
    for (int lt = 0; lt < kLayerTypeCount; ++lt) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < c.tensors.size(); ++i)
            if (c.tensors[i].type == LayerType(lt)) idx.push_back(i);
        if (idx.empty()) continue;

        bool do_prune = cfg.prune_frac > 0.0 && LayerType(lt) != LayerType::Embedding;
        double t_prune = 0.0;
        if (do_prune) {
            Sketch sk(cfg.alpha);
            for (size_t i : idx) sk.merge(sketch_build(prune_scores[i], cfg.alpha));
            t_prune = sk.quantile(cfg.prune_frac);
        }

        bool do_protect = cfg.protect_frac > 0.0;
        double q_prot = 1.0 - cfg.protect_frac / 2.0;
        bool protect_all = do_protect && q_prot <= 0.0;
        double t_mag = std::numeric_limits<double>::infinity();
        double t_sens = std::numeric_limits<double>::infinity();
        if (do_protect && !protect_all) {
            Sketch mag(cfg.alpha);
            for (size_t i : idx) mag.merge(sketch_build(s.magnitude[i], cfg.alpha));
            t_mag = mag.quantile(q_prot);
            if (s.has_sensitivity) {
                Sketch sen(cfg.alpha);
                for (size_t i : idx) sen.merge(sketch_build(s.sensitivity[i], cfg.alpha));
                t_sens = sen.quantile(q_prot);
            }
        }

        for (size_t i : idx) {
            const auto& mag = s.magnitude[i];
            const auto* sens = s.has_sensitivity ? &s.sensitivity[i] : nullptr;
            const auto& ps = prune_scores[i];
            auto& part = m.part[i];
            for (size_t e = 0; e < part.size(); ++e) {
                bool prot = protect_all ||
                            (do_protect && (mag[e] > t_mag || (sens && (*sens)[e] > t_sens)));
                if (prot)
                    part[e] = uint8_t(Part::Protect);
                else if (do_prune && ps[e] <= t_prune)
                    part[e] = uint8_t(Part::Prune);
            }
        }
    }
    return m;
}

std::vector<double> weighted_kmeanspp_init(const std::vector<double>& points,
                                           const std::vector<double>& weights, uint32_t k,
                                           uint64_t seed) {
    size_t n = points.size();
    if (k == 0) throw Error("k must be >= 1");
    if (weights.size() != n) throw Error("points/weights size mismatch");
    double total_w = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw Error("weights must be non-negative");
        total_w += w;
    }
    if (!(total_w > 0.0)) throw Error("total weight must be positive");
    {
        std::vector<double> d(points);
        std::sort(d.begin(), d.end());
        size_t distinct = size_t(std::unique(d.begin(), d.end()) - d.begin());
        if (distinct < k)
            throw TooFewDistinctPoints("need " + std::to_string(k) + " distinct points, have " +
                                       std::to_string(distinct));
    }

    std::mt19937_64 rng(seed);
    auto pick = [&](auto prob_of) -> size_t {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) total += prob_of(i);
        if (!(total > 0.0)) return n;  // caller falls back
        double r = uniform01(rng) * total;
        double cum = 0.0;
        size_t last_pos = n;
        for (size_t i = 0; i < n; ++i) {
            double p = prob_of(i);
            if (p <= 0.0) continue;
            last_pos = i;
            cum += p;
            if (cum >= r) return i;
        }
        return last_pos;
    };

    std::vector<double> chosen;
    chosen.reserve(k);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    auto not_chosen = [&](double v) {
        return std::find(chosen.begin(), chosen.end(), v) == chosen.end();
    };
    auto add_center = [&](double v) {
        chosen.push_back(v);
        for (size_t i = 0; i < n; ++i) {
            double d = points[i] - v;
            d2[i] = std::min(d2[i], d * d);
        }
    };

    size_t first = pick([&](size_t i) { return weights[i]; });
    add_center(points[first]);
    while (chosen.size() < k) {
        size_t next = pick([&](size_t i) { return weights[i] * d2[i]; });
        if (next == n || !not_chosen(points[next])) {
            // All remaining probability mass sits on chosen values; fall back
            // to the first unchosen distinct point.
            for (size_t i = 0; i < n; ++i)
                if (not_chosen(points[i])) {
                    next = i;
                    break;
                }
        }
        add_center(points[next]);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

double weighted_sq_loss(const std::vector<double>& points, const std::vector<double>& weights,
                        const std::vector<double>& centers) {
    double loss = 0.0;
    for (size_t i = 0; i < points.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (double c : centers) {
            double d = points[i] - c;
            best = std::min(best, d * d);
        }
        loss += weights[i] * best;
    }
    return loss;
}

LloydResult weighted_lloyd(const std::vector<double>& points, const std::vector<double>& weights,
                           std::vector<double> centers, double tol, uint32_t max_iter) {
    size_t n = points.size();
    size_t k = centers.size();
    if (k == 0) throw Error("no initial centers");
    if (weights.size() != n) throw Error("points/weights size mismatch");

    double scale = 0.0;
    for (double x : points) scale = std::fmax(scale, std::fabs(x));
    if (scale == 0.0) scale = 1.0;

    LloydResult res;
    std::vector<double> wsum(k), wxsum(k), next(k);
    for (uint32_t it = 0; it < max_iter; ++it) {
        std::fill(wsum.begin(), wsum.end(), 0.0);
        std::fill(wxsum.begin(), wxsum.end(), 0.0);
        for (size_t i = 0; i < n; ++i) {
            double x = points[i];
            size_t best = 0;
            double bd = std::fabs(x - centers[0]);
            for (size_t j = 1; j < k; ++j) {
                double d = std::fabs(x - centers[j]);
                if (d < bd) {
                    bd = d;
                    best = j;
                }
            }
            wsum[best] += weights[i];
            wxsum[best] += weights[i] * x;
        }

        std::vector<size_t> empties;
        for (size_t j = 0; j < k; ++j) {
            if (wsum[j] > 0.0)
                next[j] = wxsum[j] / wsum[j];
            else
                empties.push_back(j);
        }
        if (!empties.empty()) {
            // Re-seed each empty cluster to the point with the largest
            // weighted squared distance from the centers it was assigned to.
            std::vector<std::pair<double, double>> top;  // (score, value), descending
            for (size_t i = 0; i < n; ++i) {
                double x = points[i];
                double bd = std::numeric_limits<double>::infinity();
                for (size_t j = 0; j < k; ++j) bd = std::min(bd, std::fabs(x - centers[j]));
                double score = weights[i] * bd * bd;
                if (score <= 0.0) continue;
                bool dup = false;
                for (auto& [sc, v] : top)
                    if (v == x) {
                        dup = true;
                        if (score > sc) sc = score;
                        break;
                    }
                if (dup) continue;
                top.emplace_back(score, x);
            }
            std::sort(top.begin(), top.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
            size_t c = 0;
            for (size_t j : empties)
                if (c < top.size()) next[j] = top[c++].second;
        }

        double movement = 0.0;
        for (size_t j = 0; j < k; ++j) movement = std::fmax(movement, std::fabs(next[j] - centers[j]));
        centers = next;
        res.iterations = it + 1;
        if (movement <= tol * scale) break;
    }
    std::sort(centers.begin(), centers.end());
    res.centers = std::move(centers);
    return res;
}

std::vector<float> approx_kmeans(const std::vector<float>& values, uint32_t k, double sigma,
                                 double alpha, uint64_t seed) {
    if (k == 0) throw Error("k must be >= 1");
    if (values.empty()) return {};
    if (!(sigma >= 0.0 && sigma <= 1.0)) throw Error("sigma must be in [0, 1]");

    std::vector<double> pts, w;
    Histogram h = sketch_build(values, alpha).histogram();
    auto mix_weights = [&](const std::vector<double>& keys, const std::vector<uint64_t>& counts) {
        uint64_t maxc = 1;
        double maxk = 0.0;
        for (uint64_t c : counts) maxc = std::max(maxc, c);
        for (double x : keys) maxk = std::fmax(maxk, std::fabs(x));
        w.resize(keys.size());
        for (size_t i = 0; i < keys.size(); ++i) {
            double nc = double(counts[i]) / double(maxc);
            double nx = maxk > 0.0 ? std::fabs(keys[i]) / maxk : 0.0;
            w[i] = sigma * nc + (1.0 - sigma) * nx;
        }
    };

    if (h.keys.size() >= k) {
        pts = h.keys;
        mix_weights(h.keys, h.counts);
    } else {
        // Too few buckets to seed k centers: fall back to the distinct values.
        std::vector<float> sorted(values);
        std::sort(sorted.begin(), sorted.end());
        std::vector<double> keys;
        std::vector<uint64_t> counts;
        for (float v : sorted) {
            if (keys.empty() || double(v) != keys.back()) {
                keys.push_back(v);
                counts.push_back(1);
            } else {
                ++counts.back();
            }
        }
        if (keys.size() <= k) {
            std::vector<float> cb(keys.begin(), keys.end());
            return cb;
        }
        pts = keys;
        mix_weights(keys, counts);
    }

    // Lloyd descends to whichever local minimum the sampled init lands in, so
    // near-identical inputs could get structurally different codebooks (and a
    // delta stream full of spurious level churn). Restarts pin the result to
    // the best basin, which is stable while the data distribution is stable.
    const uint32_t restarts = 8;
    LloydResult r;
    double best = std::numeric_limits<double>::infinity();
    for (uint32_t t = 0; t < restarts; ++t) {
        std::vector<double> init = weighted_kmeanspp_init(pts, w, k, seed + t);
        LloydResult cand = weighted_lloyd(pts, w, std::move(init));
        double loss = weighted_sq_loss(pts, w, cand.centers);
        if (loss < best) {
            best = loss;
            r = std::move(cand);
        }
    }
    std::vector<float> cb;
    cb.reserve(r.centers.size());
    for (double c : r.centers) {
        float f = float(c);
        if (cb.empty() || f != cb.back()) cb.push_back(f);
    }
    return cb;
}

uint32_t nearest_center(const std::vector<float>& centers, float v) {
    auto it = std::lower_bound(centers.begin(), centers.end(), v);
    if (it == centers.begin()) return 0;
    if (it == centers.end()) return uint32_t(centers.size() - 1);
    uint32_t hi = uint32_t(it - centers.begin());
    uint32_t lo = hi - 1;
    // Equal distances resolve to the lower index.
    return (centers[hi] - v < v - centers[lo]) ? hi : lo;
}

uint16_t bf16_from_f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    bits += 0x7fffu + ((bits >> 16) & 1);
    return uint16_t(bits >> 16);
}

float bf16_to_f32(uint16_t v) {
    uint32_t bits = uint32_t(v) << 16;
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

uint64_t QuantizedTensor::size() const {
    uint64_t n = 1;
    for (uint64_t d : shape) n *= d;
    return n;
}

uint32_t QuantizedCheckpoint::levels_for(LayerType t) const {
    return uint32_t(codebooks[size_t(t)].size()) + 2;
}

uint32_t QuantizedCheckpoint::max_levels() const {
    uint32_t m = 0;
    for (const auto& t : tensors) m = std::max(m, levels_for(t.type));
    return m;
}

uint64_t QuantizedCheckpoint::param_count() const {
    uint64_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

QuantizedCheckpoint quantize_checkpoint(const Checkpoint& c, const ScoreSet& s,
                                        const QuantConfig& cfg, uint64_t seed) {
    if (cfg.bins < 1 || cfg.embed_bins < 1) throw Error("bins must be >= 1");
    PartitionMasks masks = partition_params(c, s, cfg);

    QuantizedCheckpoint q;
    q.step = c.step;
    q.config = cfg;

    for (int lt = 0; lt < kLayerTypeCount; ++lt) {
        std::vector<float> vals;
        for (size_t i = 0; i < c.tensors.size(); ++i) {
            if (c.tensors[i].type != LayerType(lt)) continue;
            const auto& part = masks.part[i];
            const auto& data = c.tensors[i].data;
            for (size_t e = 0; e < data.size(); ++e)
                if (part[e] == uint8_t(Part::Quantize)) vals.push_back(data[e]);
        }
        if (!vals.empty())
            q.codebooks[lt] = approx_kmeans(vals, cfg.bins_for(LayerType(lt)), cfg.sigma,
                                            cfg.alpha, mix_seed(seed, uint64_t(lt)));
    }

    q.tensors.reserve(c.tensors.size());
    for (size_t i = 0; i < c.tensors.size(); ++i) {
        const auto& t = c.tensors[i];
        const auto& cb = q.codebooks[size_t(t.type)];
        uint16_t pruned = uint16_t(cb.size());
        uint16_t protected_lvl = pruned + 1;
        QuantizedTensor qt;
        qt.name = t.name;
        qt.type = t.type;
        qt.shape = t.shape;
        qt.levels.resize(t.data.size());
        const auto& part = masks.part[i];
        for (size_t e = 0; e < t.data.size(); ++e) {
            switch (Part(part[e])) {
                case Part::Quantize:
                    qt.levels[e] = uint16_t(nearest_center(cb, t.data[e]));
                    break;
                case Part::Prune:
                    qt.levels[e] = pruned;
                    break;
                case Part::Protect:
                    qt.levels[e] = protected_lvl;
                    qt.protected_values.push_back({uint64_t(e), bf16_from_f32(t.data[e])});
                    break;
            }
        }
        q.tensors.push_back(std::move(qt));
    }
    return q;
}

Checkpoint dequantize_checkpoint(const QuantizedCheckpoint& q) {
    Checkpoint c;
    c.step = q.step;
    c.tensors.reserve(q.tensors.size());
    for (const auto& qt : q.tensors) {
        const auto& cb = q.codebooks[size_t(qt.type)];
        uint16_t pruned = uint16_t(cb.size());
        uint16_t protected_lvl = pruned + 1;
        NamedTensor t;
        t.name = qt.name;
        t.type = qt.type;
        t.shape = qt.shape;
        t.data.resize(qt.levels.size());
        size_t next_prot = 0;
        for (size_t e = 0; e < qt.levels.size(); ++e) {
            uint16_t lvl = qt.levels[e];
            if (lvl < pruned) {
                t.data[e] = cb[lvl];
            } else if (lvl == pruned) {
                t.data[e] = 0.0f;
            } else if (lvl == protected_lvl) {
                if (next_prot >= qt.protected_values.size() ||
                    qt.protected_values[next_prot].pos != uint64_t(e))
                    throw CorruptIndex("protected entry missing for " + qt.name + " at " +
                                       std::to_string(e));
                t.data[e] = bf16_to_f32(qt.protected_values[next_prot++].value);
            } else {
                throw CorruptIndex("level " + std::to_string(lvl) + " out of range in " + qt.name);
            }
        }
        if (next_prot != qt.protected_values.size())
            throw CorruptIndex("unreferenced protected entries in " + qt.name);
        c.tensors.push_back(std::move(t));
    }
    return c;
}

}  // namespace dqt
