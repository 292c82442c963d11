#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "dqt/errors.hpp"
#include "dqt/tensor.hpp"
#include "helpers.hpp"

using namespace dqt;
using testutil::TempDir;

namespace {

std::vector<uint8_t> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

}  // namespace

TEST_CASE("single tensor round trip") {
    TempDir dir("dqt-tensor");
    Checkpoint c;
    c.step = 12;
    c.tensors.push_back(testutil::tensor("w", LayerType::Linear, {2, 2}, {1, 2, 3, 4}));
    write_checkpoint(dir.file("a.dqt"), c);
    Checkpoint back = read_checkpoint(dir.file("a.dqt"));
    REQUIRE(back.tensors.size() == 1);
    CHECK(back.tensors[0].name == "w");
    CHECK(back.tensors[0].shape == std::vector<uint64_t>{2, 2});
    CHECK(back.tensors[0].data == std::vector<float>{1, 2, 3, 4});
    CHECK(back == c);
}

TEST_CASE("bad magic rejected") {
    TempDir dir("dqt-tensor");
    Checkpoint c;
    c.tensors.push_back(testutil::tensor("w", LayerType::Other, {1}, {0.5f}));
    write_checkpoint(dir.file("a.dqt"), c);
    auto bytes = slurp(dir.file("a.dqt"));
    bytes[0] = 'X';
    bytes[1] = 'X';
    spit(dir.file("a.dqt"), bytes);
    CHECK_THROWS_AS(read_checkpoint(dir.file("a.dqt")), BadMagic);
}

TEST_CASE("declared elements missing from payload") {
    TempDir dir("dqt-tensor");
    Checkpoint c;
    c.tensors.push_back(testutil::tensor("w", LayerType::Other, {4}, {1, 2, 3, 4}));
    write_checkpoint(dir.file("a.dqt"), c);
    auto bytes = slurp(dir.file("a.dqt"));
    bytes.resize(bytes.size() - 4);  // drop the last element
    spit(dir.file("a.dqt"), bytes);
    CHECK_THROWS_AS(read_checkpoint(dir.file("a.dqt")), TruncatedFile);
}

TEST_CASE("trailing garbage rejected") {
    TempDir dir("dqt-tensor");
    Checkpoint c;
    c.tensors.push_back(testutil::tensor("w", LayerType::Other, {1}, {1.0f}));
    write_checkpoint(dir.file("a.dqt"), c);
    auto bytes = slurp(dir.file("a.dqt"));
    bytes.push_back(0);
    spit(dir.file("a.dqt"), bytes);
    CHECK_THROWS_AS(read_checkpoint(dir.file("a.dqt")), IoError);
}

TEST_CASE("empty tensor list is a valid file") {
    TempDir dir("dqt-tensor");
    Checkpoint c;
    c.step = 3;
    write_checkpoint(dir.file("empty.dqt"), c);
    Checkpoint back = read_checkpoint(dir.file("empty.dqt"));
    CHECK(back.step == 3);
    CHECK(back.tensors.empty());
}

TEST_CASE("file size follows directly from the layout") {
    TempDir dir("dqt-tensor");
    const size_t n = 1u << 20;
    Checkpoint c;
    c.tensors.push_back(
        testutil::tensor("big", LayerType::Linear, {1024, 1024}, std::vector<float>(n, 0.25f)));
    write_checkpoint(dir.file("big.dqt"), c);
    // magic + version + step + meta count + tensor count, then per tensor:
    // name len + name + type + rank + dims + payload
    size_t expect = 4 + 4 + 8 + 4 + 4 + (2 + 3 + 1 + 1 + 2 * 8 + 4 * n);
    CHECK(std::filesystem::file_size(dir.file("big.dqt")) == expect);
}

TEST_CASE("non-finite data rejected on write and read") {
    TempDir dir("dqt-tensor");
    Checkpoint c;
    c.tensors.push_back(testutil::tensor("w", LayerType::Other, {2},
                                         {1.0f, std::numeric_limits<float>::quiet_NaN()}));
    CHECK_THROWS_AS(write_checkpoint(dir.file("nan.dqt"), c), NonFiniteData);

    Checkpoint ok;
    ok.tensors.push_back(testutil::tensor("w", LayerType::Other, {1}, {1.0f}));
    write_checkpoint(dir.file("inf.dqt"), ok);
    auto bytes = slurp(dir.file("inf.dqt"));
    float inf = std::numeric_limits<float>::infinity();
    std::memcpy(&bytes[bytes.size() - 4], &inf, 4);
    spit(dir.file("inf.dqt"), bytes);
    CHECK_THROWS_AS(read_checkpoint(dir.file("inf.dqt")), NonFiniteData);
}

TEST_CASE("duplicate tensor names rejected") {
    TempDir dir("dqt-tensor");
    Checkpoint c;
    c.tensors.push_back(testutil::tensor("w", LayerType::Other, {1}, {1.0f}));
    c.tensors.push_back(testutil::tensor("w", LayerType::Other, {1}, {2.0f}));
    CHECK_THROWS(write_checkpoint(dir.file("dup.dqt"), c));
}

TEST_CASE("random checkpoints round trip and serialize deterministically") {
    TempDir dir("dqt-tensor");
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Checkpoint c = testutil::small_checkpoint(seed, 300);
        c.step = seed * 7 + 1;
        c.meta["note"] = "s" + std::to_string(seed);
        write_checkpoint(dir.file("a.dqt"), c);
        write_checkpoint(dir.file("b.dqt"), c);
        CHECK(slurp(dir.file("a.dqt")) == slurp(dir.file("b.dqt")));
        Checkpoint back = read_checkpoint(dir.file("a.dqt"));
        CHECK(back == c);
    }
}

TEST_CASE("glob layer rules") {
    std::vector<LayerRule> conv_rules{{"*conv*", LayerType::Conv}, {"*", LayerType::Other}};
    CHECK(classify_layer_type("layer1.conv.weight", conv_rules) == LayerType::Conv);
    CHECK(classify_layer_type("foo", {{"*", LayerType::Other}}) == LayerType::Other);
    CHECK(classify_layer_type("embed.weight",
                              {{"*embed*", LayerType::Embedding}, {"*", LayerType::Other}}) ==
          LayerType::Embedding);

    SUBCASE("first match wins") {
        std::vector<LayerRule> rules{{"*weight*", LayerType::Linear},
                                     {"*conv*", LayerType::Conv},
                                     {"*", LayerType::Other}};
        CHECK(classify_layer_type("conv.weight", rules) == LayerType::Linear);
    }

    SUBCASE("default rules cover common names") {
        auto rules = default_layer_rules();
        CHECK(classify_layer_type("model.tok_embeddings.weight", rules) == LayerType::Embedding);
        CHECK(classify_layer_type("h.0.attn.c_attn.weight", rules) == LayerType::Attention);
        CHECK(classify_layer_type("h.0.ln_1.weight", rules) == LayerType::Norm);
        CHECK(classify_layer_type("features.0.conv.weight", rules) == LayerType::Conv);
        CHECK(classify_layer_type("classifier.fc.weight", rules) == LayerType::Linear);
        CHECK(classify_layer_type("h.0.mlp.c_proj.bias", rules) == LayerType::Bias);
        CHECK(classify_layer_type("some.other.thing", rules) == LayerType::Other);
    }
}

TEST_CASE("layer rule file parsing") {
    TempDir dir("dqt-tensor");
    {
        std::ofstream out(dir.file("rules.txt"));
        out << "# comment line\n";
        out << "*emb* = EMBEDDING\n";
        out << "\n";
        out << "*.w = LINEAR\n";
        out << "* = OTHER\n";
    }
    auto rules = load_layer_rules(dir.file("rules.txt"));
    REQUIRE(rules.size() == 3);
    CHECK(classify_layer_type("tok.emb.0", rules) == LayerType::Embedding);
    CHECK(classify_layer_type("a.w", rules) == LayerType::Linear);
    CHECK(classify_layer_type("a.b", rules) == LayerType::Other);

    SUBCASE("missing catch-all rejected") {
        std::ofstream out(dir.file("bad.txt"));
        out << "*emb* = EMBEDDING\n";
        out.close();
        CHECK_THROWS(load_layer_rules(dir.file("bad.txt")));
    }
    SUBCASE("unknown layer type rejected") {
        std::ofstream out(dir.file("bad2.txt"));
        out << "* = NOPE\n";
        out.close();
        CHECK_THROWS(load_layer_rules(dir.file("bad2.txt")));
    }
}

TEST_CASE("apply_layer_rules retypes tensors in place") {
    Checkpoint c;
    c.tensors.push_back(testutil::tensor("encoder.conv1", LayerType::Other, {4}, {1, 2, 3, 4}));
    c.tensors.push_back(testutil::tensor("misc", LayerType::Other, {1}, {0.0f}));
    apply_layer_rules(c, default_layer_rules());
    CHECK(c.tensors[0].type == LayerType::Conv);
    CHECK(c.tensors[1].type == LayerType::Other);
}
