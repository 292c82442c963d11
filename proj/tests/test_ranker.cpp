#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "dqt/errors.hpp"
#include "dqt/ranker.hpp"
#include "helpers.hpp"

using namespace dqt;

namespace {

GradientSnapshot one_tensor(std::vector<float> data) {
    GradientSnapshot g;
    uint64_t n = data.size();
    g.tensors.push_back(testutil::tensor("w", LayerType::Linear, {n}, std::move(data)));
    return g;
}

}  // namespace

TEST_CASE("first update copies the gradients") {
    EmaState ema = ema_init(0.9);
    ema_update(ema, one_tensor({1.0f, -2.0f}));
    REQUIRE(ema.grads.size() == 1);
    CHECK(ema.grads[0].data == std::vector<float>{1.0f, -2.0f});
    CHECK(ema.step_count == 1);
}

TEST_CASE("update applies beta * g + (1 - beta) * old") {
    EmaState ema = ema_init(0.9);
    ema_update(ema, one_tensor({1.0f}));
    ema_update(ema, one_tensor({0.0f}));
    CHECK(ema.grads[0].data[0] == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("constant gradients are a fixed point") {
    EmaState ema = ema_init(0.7);
    for (int i = 0; i < 40; ++i) ema_update(ema, one_tensor({3.0f, -1.5f}));
    CHECK(ema.grads[0].data[0] == doctest::Approx(3.0));
    CHECK(ema.grads[0].data[1] == doctest::Approx(-1.5));
}

TEST_CASE("ema stays a convex combination") {
    EmaState ema = ema_init(0.25);
    auto g1 = one_tensor(testutil::bell(100, 3));
    auto g2 = one_tensor(testutil::bell(100, 4));
    ema_update(ema, g1);
    ema_update(ema, g2);
    for (size_t i = 0; i < 100; ++i) {
        float lo = std::min(g1.tensors[0].data[i], g2.tensors[0].data[i]);
        float hi = std::max(g1.tensors[0].data[i], g2.tensors[0].data[i]);
        CHECK(ema.grads[0].data[i] >= lo - 1e-6f);
        CHECK(ema.grads[0].data[i] <= hi + 1e-6f);
    }
}

TEST_CASE("ema rejects mismatched snapshots") {
    EmaState ema = ema_init(0.9);
    ema_update(ema, one_tensor({1.0f, 2.0f}));
    CHECK_THROWS_AS(ema_update(ema, one_tensor({1.0f})), ShapeMismatch);
    GradientSnapshot other;
    other.tensors.push_back(testutil::tensor("different", LayerType::Linear, {2}, {1, 2}));
    CHECK_THROWS_AS(ema_update(ema, other), MissingGradients);
}

TEST_CASE("ema state survives save and load") {
    testutil::TempDir dir("dqt-ranker");
    EmaState ema = ema_init(0.85);
    ema_update(ema, one_tensor(testutil::bell(64, 9)));
    ema_update(ema, one_tensor(testutil::bell(64, 10)));
    ema_save(dir.file("ema.dqt"), ema);
    EmaState back = ema_load(dir.file("ema.dqt"));
    CHECK(back.beta == ema.beta);
    CHECK(back.step_count == 2);
    CHECK(back.grads[0].data == ema.grads[0].data);
}

TEST_CASE("magnitude scores") {
    Checkpoint c = one_tensor({-3.0f, 0.0f, 2.0f});
    ScoreSet s = compute_scores(c, nullptr);
    CHECK(s.magnitude[0] == std::vector<float>{3.0f, 0.0f, 2.0f});
    CHECK_FALSE(s.has_sensitivity);
    CHECK_THROWS_AS(s.metric(PruneMetric::Sensitivity), MissingScores);

    SUBCASE("all zeros give all-zero scores") {
        Checkpoint z = one_tensor({0.0f, 0.0f});
        CHECK(compute_scores(z, nullptr).magnitude[0] == std::vector<float>{0.0f, 0.0f});
    }
    SUBCASE("sign flip leaves scores unchanged") {
        Checkpoint flipped = c;
        for (auto& v : flipped.tensors[0].data) v = -v;
        CHECK(compute_scores(flipped, nullptr).magnitude == s.magnitude);
    }
}

TEST_CASE("sensitivity scores") {
    Checkpoint c = one_tensor({2.0f, 5.0f, -2.0f, 0.0f});
    EmaState ema = ema_init(0.9);
    ema_update(ema, one_tensor({3.0f, 0.0f, 3.0f, 9.0f}));
    ScoreSet s = compute_scores(c, &ema);
    REQUIRE(s.has_sensitivity);
    CHECK(s.sensitivity[0] == std::vector<float>{6.0f, 0.0f, 6.0f, 0.0f});
    CHECK(&s.metric(PruneMetric::Sensitivity) == &s.sensitivity);
    CHECK(&s.metric(PruneMetric::Magnitude) == &s.magnitude);
}

TEST_CASE("sensitivity needs a populated ema") {
    Checkpoint c = one_tensor({1.0f});
    EmaState fresh = ema_init(0.9);
    ScoreSet s = compute_scores(c, &fresh);
    CHECK_FALSE(s.has_sensitivity);

    EmaState wrong = ema_init(0.9);
    GradientSnapshot other;
    other.tensors.push_back(testutil::tensor("other", LayerType::Linear, {1}, {1.0f}));
    ema_update(wrong, other);
    CHECK_THROWS_AS(compute_scores(c, &wrong), MissingGradients);
}

TEST_CASE("scores are permutation equivariant") {
    auto data = testutil::bell(50, 17);
    Checkpoint c = one_tensor(data);
    std::reverse(data.begin(), data.end());
    Checkpoint r = one_tensor(data);
    auto sc = compute_scores(c, nullptr).magnitude[0];
    auto sr = compute_scores(r, nullptr).magnitude[0];
    std::reverse(sr.begin(), sr.end());
    CHECK(sc == sr);
}

TEST_CASE("prune metric names round trip") {
    CHECK(prune_metric_from_name(prune_metric_name(PruneMetric::Magnitude)) ==
          PruneMetric::Magnitude);
    CHECK(prune_metric_from_name(prune_metric_name(PruneMetric::Sensitivity)) ==
          PruneMetric::Sensitivity);
    CHECK_THROWS(prune_metric_from_name("bogus"));
}
