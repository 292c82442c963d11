#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "dqt/chain.hpp"
#include "dqt/errors.hpp"
#include "dqt/trajectory.hpp"
#include "helpers.hpp"

using namespace dqt;
using testutil::TempDir;

namespace {

QuantizedCheckpoint quantize_step(const Checkpoint& c, uint64_t step) {
    Checkpoint copy = c;
    copy.step = step;
    QuantConfig cfg;
    cfg.bins = 8;
    cfg.prune_frac = 0.1;
    QuantizedCheckpoint q = quantize_checkpoint(copy, compute_scores(copy, nullptr), cfg, step);
    return q;
}

std::vector<QuantizedCheckpoint> append_trajectory(Chain& chain, int steps, uint64_t seed) {
    std::vector<QuantizedCheckpoint> appended;
    Checkpoint c = testutil::small_checkpoint(seed, 1500, false);
    for (int i = 1; i <= steps; ++i) {
        appended.push_back(quantize_step(c, uint64_t(i)));
        chain.append(appended.back());
        for (auto& t : c.tensors)
            for (auto& v : t.data) v *= 0.95f;
    }
    return appended;
}

}  // namespace

TEST_CASE("append then restore is the identity") {
    TempDir dir("dqt-chain");
    Chain chain = Chain::open(dir.str());
    auto appended = append_trajectory(chain, 3, 1);
    CHECK(chain.restore(3) == appended[2]);
    CHECK(chain.restore(2) == appended[1]);
    CHECK(chain.restore(1) == appended[0]);
    CHECK(chain.restore_latest() == appended[2]);
    CHECK(chain.latest_step() == 3);
}

TEST_CASE("every appended state restores after reopening the directory") {
    TempDir dir("dqt-chain");
    std::vector<QuantizedCheckpoint> appended;
    {
        Chain chain = Chain::open(dir.str(), 4);
        appended = append_trajectory(chain, 10, 2);
    }
    Chain chain = Chain::open(dir.str(), 4);
    REQUIRE(chain.entries().size() == 10);
    for (int i = 0; i < 10; ++i) CHECK(chain.restore(uint64_t(i + 1)) == appended[size_t(i)]);
    chain.verify();
}

TEST_CASE("full records appear on the configured cadence") {
    TempDir dir("dqt-chain");
    Chain chain = Chain::open(dir.str(), 3);
    append_trajectory(chain, 7, 3);
    const auto& e = chain.entries();
    REQUIRE(e.size() == 7);
    CHECK(e[0].full);
    CHECK_FALSE(e[1].full);
    CHECK_FALSE(e[2].full);
    CHECK(e[3].full);
    CHECK_FALSE(e[4].full);
    CHECK_FALSE(e[5].full);
    CHECK(e[6].full);
    for (size_t i = 1; i < e.size(); ++i)
        if (!e[i].full) CHECK(e[i].base_step == e[i - 1].step);
}

TEST_CASE("unknown steps are rejected") {
    TempDir dir("dqt-chain");
    Chain chain = Chain::open(dir.str());
    CHECK_THROWS_AS(chain.latest_step(), UnknownStep);
    CHECK_THROWS_AS(chain.restore_latest(), UnknownStep);
    append_trajectory(chain, 2, 4);
    CHECK_THROWS_AS(chain.restore(99), UnknownStep);
}

TEST_CASE("a flipped record bit is caught") {
    TempDir dir("dqt-chain");
    Chain chain = Chain::open(dir.str());
    append_trajectory(chain, 3, 5);
    std::string victim = chain.record_path(chain.entries()[1]);
    {
        std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-9, std::ios::end);
        char b;
        f.seekg(-9, std::ios::end);
        f.get(b);
        b = char(b ^ 0x40);
        f.seekp(-9, std::ios::end);
        f.put(b);
    }
    Chain fresh = Chain::open(dir.str());
    CHECK_THROWS_AS(fresh.verify(), ChainCorrupt);
    try {
        fresh.verify();
    } catch (const ChainCorrupt& e) {
        CHECK(std::string(e.what()).find("step 2") != std::string::npos);
    }
}

TEST_CASE("a full prefix restores with later records deleted") {
    TempDir dir("dqt-chain");
    std::vector<QuantizedCheckpoint> appended;
    {
        Chain chain = Chain::open(dir.str());
        appended = append_trajectory(chain, 3, 6);
        std::filesystem::remove(chain.record_path(chain.entries()[1]));
        std::filesystem::remove(chain.record_path(chain.entries()[2]));
    }
    Chain chain = Chain::open(dir.str());
    CHECK(chain.restore(1) == appended[0]);
    CHECK_THROWS(chain.restore(3));
}

TEST_CASE("manifest validation") {
    TempDir dir("dqt-chain");
    SUBCASE("garbage header") {
        std::ofstream(dir.file("manifest.txt")) << "not a manifest\n";
        CHECK_THROWS_AS(Chain::open(dir.str()), ChainCorrupt);
    }
    SUBCASE("first entry must be full") {
        std::ofstream(dir.file("manifest.txt"))
            << "# dqt-chain abc123\n1,DELTA,rec-000000000001.dqdr,0\n";
        CHECK_THROWS_AS(Chain::open(dir.str()), ChainCorrupt);
    }
    SUBCASE("unknown record kind") {
        std::ofstream(dir.file("manifest.txt"))
            << "# dqt-chain abc123\n1,fullish,rec-000000000001.dqdr,\n";
        CHECK_THROWS_AS(Chain::open(dir.str()), ChainCorrupt);
    }
    SUBCASE("steps must ascend") {
        std::ofstream(dir.file("manifest.txt"))
            << "# dqt-chain abc123\n"
            << "5,FULL,rec-000000000005.dqdr,\n"
            << "4,DELTA,rec-000000000004.dqdr,5\n";
        CHECK_THROWS_AS(Chain::open(dir.str()), ChainCorrupt);
    }
    SUBCASE("delta must base on its predecessor") {
        std::ofstream(dir.file("manifest.txt"))
            << "# dqt-chain abc123\n"
            << "1,FULL,rec-000000000001.dqdr,\n"
            << "2,DELTA,rec-000000000002.dqdr,1\n"
            << "3,DELTA,rec-000000000003.dqdr,1\n";
        CHECK_THROWS_AS(Chain::open(dir.str()), ChainCorrupt);
    }
}

TEST_CASE("append rejects non-increasing steps") {
    TempDir dir("dqt-chain");
    Chain chain = Chain::open(dir.str());
    append_trajectory(chain, 2, 7);
    Checkpoint c = testutil::small_checkpoint(7, 1500, false);
    CHECK_THROWS(chain.append(quantize_step(c, 2)));
    CHECK_THROWS(chain.append(quantize_step(c, 1)));
}

TEST_CASE("trajectory with no noise and no decay shrinks geometrically") {
    TrajectorySpec spec;
    spec.params = 400;
    spec.steps = 4;
    spec.decay = 1.0;
    spec.noise = 0.0;
    spec.lr0 = 0.1;
    auto traj = generate_trajectory(spec);
    REQUIRE(traj.size() == 4);
    for (size_t s = 1; s < traj.size(); ++s) {
        for (size_t t = 0; t < traj[s].weights.tensors.size(); ++t) {
            const auto& cur = traj[s].weights.tensors[t].data;
            const auto& prev = traj[s - 1].weights.tensors[t].data;
            for (size_t i = 0; i < cur.size(); ++i)
                CHECK(cur[i] == doctest::Approx(prev[i] * 0.9f).epsilon(1e-5));
        }
    }
}

TEST_CASE("trajectories are reproducible per seed") {
    TrajectorySpec spec;
    spec.params = 600;
    spec.steps = 5;
    spec.seed = 77;
    auto a = generate_trajectory(spec);
    auto b = generate_trajectory(spec);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].weights == b[i].weights);
        CHECK(a[i].grads == b[i].grads);
    }
    spec.seed = 78;
    auto c = generate_trajectory(spec);
    CHECK_FALSE(a[0].weights == c[0].weights);
}

TEST_CASE("decaying updates shrink step over step") {
    TrajectorySpec spec;
    spec.params = 5000;
    spec.steps = 50;
    spec.decay = 0.9;
    auto traj = generate_trajectory(spec);
    std::vector<double> dist;
    for (size_t s = 1; s < traj.size(); ++s) {
        double d2 = 0;
        for (size_t t = 0; t < traj[s].weights.tensors.size(); ++t) {
            const auto& cur = traj[s].weights.tensors[t].data;
            const auto& prev = traj[s - 1].weights.tensors[t].data;
            for (size_t i = 0; i < cur.size(); ++i) {
                double d = double(cur[i]) - double(prev[i]);
                d2 += d * d;
            }
        }
        dist.push_back(std::sqrt(d2));
    }
    for (size_t i = 5; i < dist.size(); ++i) CHECK(dist[i] < dist[i - 1]);
}

TEST_CASE("trajectory spec validation") {
    TrajectorySpec spec;
    spec.steps = 1;
    CHECK_THROWS(generate_trajectory(spec));
    spec.steps = 3;
    spec.decay = 1.5;
    CHECK_THROWS(generate_trajectory(spec));
    spec.decay = 0.9;
    spec.lr0 = 0.0;
    CHECK_THROWS(generate_trajectory(spec));
}

TEST_CASE("default layout covers the layer types near the requested size") {
    auto layout = default_layout(100000);
    uint64_t total = 0;
    bool embed = false;
    for (const auto& t : layout) {
        uint64_t n = 1;
        for (uint64_t d : t.shape) n *= d;
        total += n;
        embed |= t.type == LayerType::Embedding;
    }
    CHECK(embed);
    CHECK(total > 90000);
    CHECK(total < 110000);
}
