// End-to-end tests driving the installed binary through std::system.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <fcntl.h>
#include <sys/file.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dqt/tensor.hpp"
#include "helpers.hpp"

namespace {

const char kHeader[] =
    "step,kind,raw_bytes,encoded_bytes,ratio,cum_ratio,quality_delta,bins,prune_frac,"
    "protect_frac,metric";

int run(const std::string& args, const std::string& out = "/dev/null",
        const std::string& err = "/dev/null") {
    std::string cmd = std::string(DQT_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
    int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string l;
    while (std::getline(ss, l)) out.push_back(l);
    return out;
}

std::vector<std::string> fields(const std::string& row) {
    std::vector<std::string> out;
    std::stringstream ss(row);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    return out;
}

// One shared chain built from a stationary trajectory (the learning rate is
// far below float resolution, so the weights never move).
struct ChainFixture {
    testutil::TempDir dir{"dqt-cli"};
    std::string traj, chain;
    std::vector<std::string> compress_rows;

    ChainFixture() : traj(dir.file("traj")), chain(dir.file("chain")) {
        REQUIRE(run("gen " + traj +
                    " --params 100000 --steps 4 --lr0 1e-12 --noise 0 --decay 1 --seed 11") == 0);
        for (int s = 1; s <= 4; ++s) {
            char ck[32], gr[32];
            std::snprintf(ck, sizeof(ck), "/ck-%06d.dqt", s);
            std::snprintf(gr, sizeof(gr), "/grad-%06d.dqt", s);
            std::string out = dir.file("compress-" + std::to_string(s) + ".txt");
            REQUIRE(run("compress " + traj + ck + " " + chain + " --grads " + traj + gr +
                            " --threshold 0.1",
                        out, dir.file("err.txt")) == 0);
            auto ls = lines(slurp(out));
            REQUIRE(ls.size() == 2);
            REQUIRE(ls[0] == kHeader);
            compress_rows.push_back(ls[1]);
        }
    }
};

ChainFixture& fixture() {
    static ChainFixture f;
    return f;
}

}  // namespace

TEST_CASE("gen writes a deterministic trajectory") {
    testutil::TempDir dir("dqt-gen");
    std::string a = dir.file("a"), b = dir.file("b"), c = dir.file("c");
    std::string args = " --params 3000 --steps 3 --seed 5";
    CHECK(run("gen " + a + args) == 0);
    CHECK(run("gen " + b + args) == 0);
    CHECK(run("gen " + c + " --params 3000 --steps 3 --seed 6") == 0);
    for (int s = 1; s <= 3; ++s) {
        char ck[32], gr[32];
        std::snprintf(ck, sizeof(ck), "/ck-%06d.dqt", s);
        std::snprintf(gr, sizeof(gr), "/grad-%06d.dqt", s);
        CHECK(slurp(a + ck) == slurp(b + ck));
        CHECK(slurp(a + gr) == slurp(b + gr));
    }
    CHECK(slurp(a + "/ck-000001.dqt") != slurp(c + "/ck-000001.dqt"));
    dqt::Checkpoint first = dqt::read_checkpoint(a + "/ck-000001.dqt");
    CHECK(first.step == 1);
    CHECK(first.param_count() >= 3000);
    CHECK(run("gen " + dir.file("bad") + " --steps 1") != 0);
}

TEST_CASE("compress produces full then delta records") {
    auto& f = fixture();
    auto first = fields(f.compress_rows[0]);
    REQUIRE(first.size() == 11);
    CHECK(first[0] == "1");
    CHECK(first[1] == "full");
    for (int s = 1; s < 4; ++s) {
        auto row = fields(f.compress_rows[size_t(s)]);
        CHECK(row[0] == std::to_string(s + 1));
        CHECK(row[1] == "delta");
        CHECK(std::stoull(row[2]) == std::stoull(first[2]));
        CHECK(std::stoull(row[3]) < std::stoull(first[3]));
    }
    // stationary weights: once the config settles the deltas are all zero
    auto last = fields(f.compress_rows[3]);
    CHECK(std::stod(last[4]) > 50.0);
    CHECK(std::stod(last[6]) <= 0.1);
}

TEST_CASE("stats reproduces the compress-time rows exactly") {
    auto& f = fixture();
    std::string out = f.dir.file("stats.txt");
    REQUIRE(run("stats " + f.chain, out) == 0);
    auto ls = lines(slurp(out));
    REQUIRE(ls.size() == 5);
    CHECK(ls[0] == kHeader);
    for (size_t i = 0; i < 4; ++i) CHECK(ls[i + 1] == f.compress_rows[i]);
}

TEST_CASE("stats on a chain with no records prints only the header") {
    testutil::TempDir dir("dqt-stats");
    std::string d = dir.file("empty");
    std::filesystem::create_directories(d);
    std::ofstream(d + "/manifest.txt") << "# dqt-chain 0123456789abcdef\n";
    std::string out = dir.file("out.txt");
    CHECK(run("stats " + d, out) == 0);
    auto ls = lines(slurp(out));
    REQUIRE(ls.size() == 1);
    CHECK(ls[0] == kHeader);
}

TEST_CASE("restore recovers checkpoints at any retained step") {
    auto& f = fixture();
    std::string latest = f.dir.file("latest.dqt");
    std::string again = f.dir.file("again.dqt");
    std::string early = f.dir.file("early.dqt");
    REQUIRE(run("restore " + f.chain + " " + latest) == 0);
    REQUIRE(run("restore " + f.chain + " " + again) == 0);
    REQUIRE(run("restore " + f.chain + " " + early + " --step 1") == 0);
    CHECK(slurp(latest) == slurp(again));
    dqt::Checkpoint c4 = dqt::read_checkpoint(latest);
    dqt::Checkpoint c1 = dqt::read_checkpoint(early);
    CHECK(c4.step == 4);
    CHECK(c1.step == 1);
    CHECK(c4.param_count() == c1.param_count());
    CHECK(run("restore " + f.chain + " " + f.dir.file("x.dqt") + " --step 99") != 0);
    CHECK(run("restore " + f.dir.file("nochain") + " " + f.dir.file("y.dqt")) != 0);
}

TEST_CASE("verify passes on a clean chain and fails after corruption") {
    auto& f = fixture();
    std::string out = f.dir.file("verify.txt");
    REQUIRE(run("verify " + f.chain, out) == 0);
    CHECK(slurp(out) == "ok: 4 records\n");

    std::string copy = f.dir.file("chain-bad");
    std::filesystem::copy(f.chain, copy, std::filesystem::copy_options::recursive);
    // find a delta record and damage its tail (payload and checksum live there)
    std::string victim;
    for (const auto& l : lines(slurp(copy + "/manifest.txt")))
        if (l.find(",DELTA,") != std::string::npos) victim = copy + "/" + fields(l)[2];
    REQUIRE(!victim.empty());
    std::string bytes = slurp(victim);
    REQUIRE(bytes.size() > 16);
    for (size_t i = bytes.size() - 12; i < bytes.size() - 4; ++i) bytes[i] ^= 0x5a;
    std::ofstream(victim, std::ios::binary | std::ios::trunc) << bytes;
    std::string err = f.dir.file("verify-err.txt");
    CHECK(run("verify " + copy, "/dev/null", err) != 0);
    CHECK(slurp(err).find("step") != std::string::npos);

    CHECK(run("verify " + f.dir.file("nochain")) != 0);
}

TEST_CASE("compress respects a layer rules file") {
    auto& f = fixture();
    testutil::TempDir dir("dqt-rules");
    std::string rules = dir.file("rules.txt");
    std::ofstream(rules) << "# everything coarse\n"
                         << "*embed* = EMBEDDING\n"
                         << "*.bias = BIAS\n"
                         << "* = LINEAR\n";
    std::string chain = dir.file("chain");
    CHECK(run("compress " + f.traj + "/ck-000001.dqt " + chain + " --layer-rules " + rules +
              " --threshold 0.1") == 0);

    std::string bad = dir.file("bad.txt");
    std::ofstream(bad) << "*embed* = EMBEDDING\n";
    std::string err = dir.file("err.txt");
    CHECK(run("compress " + f.traj + "/ck-000001.dqt " + dir.file("chain2") + " --layer-rules " +
                  bad,
              "/dev/null", err) != 0);
    CHECK(slurp(err).find("error:") != std::string::npos);
}

TEST_CASE("an unreachable threshold reports infeasible with exit code 3") {
    auto& f = fixture();
    testutil::TempDir dir("dqt-infeasible");
    std::string err = dir.file("err.txt");
    int rc = run("compress " + f.traj + "/ck-000001.dqt " + dir.file("chain") +
                     " --threshold 1e-9",
                 "/dev/null", err);
    CHECK(rc == 3);
    CHECK(slurp(err).find("INFEASIBLE") != std::string::npos);
}

TEST_CASE("an external evaluator command is honored") {
    auto& f = fixture();
    testutil::TempDir dir("dqt-ext");
    std::string out = dir.file("out.txt");
    REQUIRE(run("compress " + f.traj + "/ck-000001.dqt " + dir.file("chain") +
                    " --evaluator 'echo 0.01'",
                out) == 0);
    auto row = fields(lines(slurp(out)).at(1));
    CHECK(std::stod(row[6]) == doctest::Approx(0.01));
    // constant quality makes every config feasible: expect the coarsest grid
    CHECK(row[7] == "4");

    CHECK(run("compress " + f.traj + "/ck-000001.dqt " + dir.file("chain2") +
              " --evaluator 'exit 7'") != 0);
}

TEST_CASE("a held chain lock blocks concurrent compression") {
    auto& f = fixture();
    std::string lock = f.chain + "/lock";
    int fd = ::open(lock.c_str(), O_CREAT | O_RDWR, 0644);
    REQUIRE(fd >= 0);
    REQUIRE(flock(fd, LOCK_EX | LOCK_NB) == 0);
    std::string err = f.dir.file("lock-err.txt");
    CHECK(run("compress " + f.traj + "/ck-000001.dqt " + f.chain, "/dev/null", err) != 0);
    CHECK(slurp(err).find("lock") != std::string::npos);
    flock(fd, LOCK_UN);
    ::close(fd);
}
