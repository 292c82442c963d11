#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "dqt/errors.hpp"

namespace dqt {

// Histogram view of a sketch: strictly ascending representative keys with counts.
struct Histogram {
    std::vector<double> keys;
    std::vector<uint64_t> counts;

    uint64_t total() const;
};

// Two-sided logarithmic-bucket quantile sketch with relative error alpha.
// Bucket k holds |x| in (gamma^(k-1), gamma^k]; |x| below kZeroMin goes to a
// dedicated zero bucket. Buckets are unbounded and never collapsed.
class Sketch {
  public:
    static constexpr double kZeroMin = 1e-12;

    explicit Sketch(double alpha);

    double alpha() const { return alpha_; }
    double gamma() const { return gamma_; }
    uint64_t total() const { return total_; }
    uint64_t bucket_count() const { return pos_.size() + neg_.size() + (zero_ ? 1 : 0); }
    uint64_t zero_count() const { return zero_; }

    void add(double x);
    void merge(const Sketch& other);
    double quantile(double q) const;
    Histogram histogram() const;

    int64_t bucket_index(double abs_x) const;
    double representative(int64_t bucket) const;

    bool operator==(const Sketch&) const = default;

  private:
    double alpha_;
    double gamma_;
    double inv_ln_gamma_;
    double rep_scale_;  // 2 / (1 + gamma)
    uint64_t zero_ = 0;
    uint64_t total_ = 0;
    std::map<int64_t, uint64_t> pos_;
    std::map<int64_t, uint64_t> neg_;  // keyed by bucket index of |x|

    friend Sketch sketch_build(const float* x, size_t n, double alpha);
};

Sketch sketch_build(const float* x, size_t n, double alpha);
Sketch sketch_build(const std::vector<float>& x, double alpha);
Sketch sketch_build(const std::vector<double>& x, double alpha);
Sketch sketch_merge(const Sketch& a, const Sketch& b);
double sketch_quantile(const Sketch& s, double q);
Histogram sketch_histogram(const Sketch& s);

}  // namespace dqt
