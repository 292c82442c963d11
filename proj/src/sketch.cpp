#include "dqt/sketch.hpp"

#include <cmath>
#include <cstdlib>

namespace dqt {

uint64_t Histogram::total() const {
    uint64_t n = 0;
    for (uint64_t c : counts) n += c;
    return n;
}

Sketch::Sketch(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw AlphaOutOfRange("alpha must be in (0, 1)");
    gamma_ = (1.0 + alpha) / (1.0 - alpha);
    inv_ln_gamma_ = 1.0 / std::log(gamma_);
    rep_scale_ = 2.0 / (1.0 + gamma_);
}

int64_t Sketch::bucket_index(double abs_x) const {
    double r = std::log(abs_x) * inv_ln_gamma_;
    double nearest = std::nearbyint(r);
    if (std::fabs(r - nearest) > 1e-9 * std::fmax(1.0, std::fabs(r)))
        return int64_t(std::ceil(r));
    // Within fp noise of a bucket boundary: settle against the true bounds.
    int64_t k = int64_t(nearest);
    while (std::pow(gamma_, double(k - 1)) >= abs_x) --k;
    while (std::pow(gamma_, double(k)) < abs_x) ++k;
    return k;
}

double Sketch::representative(int64_t bucket) const {
    // The unique point of (gamma^(k-1), gamma^k] within relative error alpha
    // of every point in the bucket: 2 gamma^k / (1 + gamma).
    return rep_scale_ * std::pow(gamma_, double(bucket));
}

void Sketch::add(double x) {
    double ax = std::fabs(x);
    if (ax < kZeroMin) {
        ++zero_;
    } else if (x > 0) {
        ++pos_[bucket_index(ax)];
    } else {
        ++neg_[bucket_index(ax)];
    }
    ++total_;
}

void Sketch::merge(const Sketch& other) {
    if (alpha_ != other.alpha_) throw AlphaMismatch("cannot merge sketches with different alpha");
    zero_ += other.zero_;
    total_ += other.total_;
    for (const auto& [k, c] : other.pos_) pos_[k] += c;
    for (const auto& [k, c] : other.neg_) neg_[k] += c;
}

double Sketch::quantile(double q) const {
    if (!(q >= 0.0 && q <= 1.0)) throw AlphaOutOfRange("quantile q must be in [0, 1]");
    if (total_ == 0) throw EmptySketch("quantile of empty sketch");
    uint64_t rank = uint64_t(std::ceil(q * double(total_ - 1))) + 1;
    if (rank > total_) rank = total_;
    uint64_t seen = 0;
    // Ascending value order: most negative buckets first, then zero, then positive.
    for (auto it = neg_.rbegin(); it != neg_.rend(); ++it) {
        seen += it->second;
        if (seen >= rank) return -representative(it->first);
    }
    seen += zero_;
    if (seen >= rank) return 0.0;
    for (const auto& [k, c] : pos_) {
        seen += c;
        if (seen >= rank) return representative(k);
    }
    return representative(pos_.rbegin()->first);
}

Histogram Sketch::histogram() const {
    Histogram h;
    h.keys.reserve(bucket_count());
    h.counts.reserve(bucket_count());
    for (auto it = neg_.rbegin(); it != neg_.rend(); ++it) {
        h.keys.push_back(-representative(it->first));
        h.counts.push_back(it->second);
    }
    if (zero_) {
        h.keys.push_back(0.0);
        h.counts.push_back(zero_);
    }
    for (const auto& [k, c] : pos_) {
        h.keys.push_back(representative(k));
        h.counts.push_back(c);
    }
    return h;
}

namespace {

// Dense per-sign bucket accumulator used by the bulk build path.
struct DenseCounts {
    int64_t base = 0;
    std::vector<uint64_t> counts;

    void bump(int64_t k) {
        if (counts.empty()) {
            base = k;
            counts.assign(1, 0);
        } else if (k < base) {
            size_t grow = size_t(base - k) + counts.size();
            std::vector<uint64_t> next(grow + counts.size(), 0);
            int64_t next_base = base - int64_t(grow);
            for (size_t i = 0; i < counts.size(); ++i) next[size_t(base - next_base) + i] = counts[i];
            counts.swap(next);
            base = next_base;
        } else if (k >= base + int64_t(counts.size())) {
            size_t need = size_t(k - base) + 1;
            counts.resize(need + counts.size(), 0);
        }
        ++counts[size_t(k - base)];
    }

    void drain(std::map<int64_t, uint64_t>& out) const {
        for (size_t i = 0; i < counts.size(); ++i)
            if (counts[i]) out[base + int64_t(i)] += counts[i];
    }
};

}  // namespace

Sketch sketch_build(const float* x, size_t n, double alpha) {
    Sketch s(alpha);
    DenseCounts pos, neg;
    for (size_t i = 0; i < n; ++i) {
        double v = x[i];
        double av = std::fabs(v);
        if (av < Sketch::kZeroMin)
            ++s.zero_;
        else if (v > 0)
            pos.bump(s.bucket_index(av));
        else
            neg.bump(s.bucket_index(av));
    }
    pos.drain(s.pos_);
    neg.drain(s.neg_);
    s.total_ = n;
    return s;
}

Sketch sketch_build(const std::vector<float>& x, double alpha) {
    return sketch_build(x.data(), x.size(), alpha);
}

Sketch sketch_build(const std::vector<double>& x, double alpha) {
    Sketch s(alpha);
    for (double v : x) s.add(v);
    return s;
}

Sketch sketch_merge(const Sketch& a, const Sketch& b) {
    Sketch out = a;
    out.merge(b);
    return out;
}

double sketch_quantile(const Sketch& s, double q) { return s.quantile(q); }

Histogram sketch_histogram(const Sketch& s) { return s.histogram(); }

}  // namespace dqt
