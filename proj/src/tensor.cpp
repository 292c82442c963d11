#include "dqt/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "bytes.hpp"

namespace dqt {

namespace detail {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    f.seekg(0, std::ios::end);
    std::streamoff n = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(n));
    if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw IoError("read failed: " + path);
    return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    f.flush();
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace detail

static const char* kLayerNames[kLayerTypeCount] = {
    "CONV", "LINEAR", "ATTENTION", "NORM", "EMBEDDING", "BIAS", "OTHER",
};

const char* layer_type_name(LayerType t) {
    auto i = size_t(t);
    return i < kLayerTypeCount ? kLayerNames[i] : "OTHER";
}

LayerType layer_type_from_name(const std::string& s) {
    for (int i = 0; i < kLayerTypeCount; ++i)
        if (s == kLayerNames[i]) return LayerType(i);
    throw IoError("unknown layer type: " + s);
}

uint64_t NamedTensor::size() const {
    uint64_t n = 1;
    for (uint64_t d : shape) n *= d;
    return n;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

uint64_t Checkpoint::param_count() const {
    uint64_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

static constexpr char kMagic[4] = {'D', 'Q', 'T', '1'};
static constexpr uint32_t kVersion = 1;

static void validate(const Checkpoint& c) {
    std::set<std::string> names;
    for (const auto& t : c.tensors) {
        if (t.name.empty()) throw IoError("tensor with empty name");
        if (!names.insert(t.name).second) throw IoError("duplicate tensor name: " + t.name);
        if (t.shape.empty()) throw ShapeMismatch("tensor " + t.name + " has empty shape");
        if (t.data.size() != t.size())
            throw ShapeMismatch("tensor " + t.name + " has " + std::to_string(t.data.size()) +
                                " elements, shape implies " + std::to_string(t.size()));
        for (float v : t.data)
            if (!std::isfinite(v)) throw NonFiniteData("tensor " + t.name + " contains NaN/Inf");
    }
}

void write_checkpoint(const std::string& path, const Checkpoint& c) {
    validate(c);
    detail::ByteWriter w;
    w.raw(kMagic, 4);
    w.u32(kVersion);
    w.u64(c.step);
    w.u32(uint32_t(c.meta.size()));
    for (const auto& [k, v] : c.meta) {
        w.str(k);
        w.u32(uint32_t(v.size()));
        w.raw(v.data(), v.size());
    }
    w.u32(uint32_t(c.tensors.size()));
    for (const auto& t : c.tensors) {
        w.str(t.name);
        w.u8(uint8_t(t.type));
        w.u8(uint8_t(t.shape.size()));
        for (uint64_t d : t.shape) w.u64(d);
        for (float v : t.data) w.f32(v);
    }
    detail::write_file(path, w.buf);
}

Checkpoint read_checkpoint(const std::string& path) {
    auto bytes = detail::read_file(path);
    detail::ByteReader r(bytes);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw BadMagic("not a DQT1 file: " + path);
    uint32_t version = r.u32();
    if (version != kVersion) throw IoError("unsupported DQT1 version " + std::to_string(version));
    Checkpoint c;
    c.step = r.u64();
    uint32_t meta_count = r.u32();
    for (uint32_t i = 0; i < meta_count; ++i) {
        std::string k = r.str();
        uint32_t n = r.u32();
        std::string v(n, '\0');
        r.raw(v.data(), n);
        c.meta[k] = v;
    }
    uint32_t tensor_count = r.u32();
    c.tensors.reserve(tensor_count);
    for (uint32_t i = 0; i < tensor_count; ++i) {
        NamedTensor t;
        t.name = r.str();
        uint8_t lt = r.u8();
        if (lt >= kLayerTypeCount) throw IoError("bad layer type " + std::to_string(lt));
        t.type = LayerType(lt);
        uint8_t rank = r.u8();
        if (rank == 0) throw ShapeMismatch("tensor " + t.name + " has rank 0");
        t.shape.resize(rank);
        for (auto& d : t.shape) d = r.u64();
        uint64_t n = t.size();
        if (n > r.remaining() / 4 + 1) throw TruncatedFile("tensor " + t.name + " exceeds file size");
        t.data.resize(n);
        for (auto& v : t.data) v = r.f32();
        c.tensors.push_back(std::move(t));
    }
    if (r.remaining() != 0) throw IoError("trailing bytes after last tensor in " + path);
    validate(c);
    return c;
}

bool glob_match(const std::string& pattern, const std::string& text) {
    // Iterative * / ? matcher with single-star backtracking.
    size_t p = 0, t = 0, star = std::string::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p, ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

std::vector<LayerRule> default_layer_rules() {
    return {
        {"*embed*", LayerType::Embedding},
        {"*bias*", LayerType::Bias},
        {"*conv*", LayerType::Conv},
        {"*attention*", LayerType::Attention},
        {"*attn*", LayerType::Attention},
        {"*norm*", LayerType::Norm},
        {"*ln_*", LayerType::Norm},
        {"*bn*", LayerType::Norm},
        {"*linear*", LayerType::Linear},
        {"*fc*", LayerType::Linear},
        {"*dense*", LayerType::Linear},
        {"*mlp*", LayerType::Linear},
        {"*proj*", LayerType::Linear},
        {"*", LayerType::Other},
    };
}

std::vector<LayerRule> load_layer_rules(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open layer rules file " + path);
    std::vector<LayerRule> rules;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        size_t h = line.find('#');
        if (h != std::string::npos) line.resize(h);
        size_t eq = line.find('=');
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        if (trim(line).empty()) continue;
        if (eq == std::string::npos)
            throw IoError(path + ":" + std::to_string(lineno) + ": expected 'pattern = LAYERTYPE'");
        std::string pat = trim(line.substr(0, eq));
        std::string ty = trim(line.substr(eq + 1));
        if (pat.empty()) throw IoError(path + ":" + std::to_string(lineno) + ": empty pattern");
        rules.push_back({pat, layer_type_from_name(ty)});
    }
    if (rules.empty() || rules.back().pattern != "*")
        throw IoError(path + ": last rule must be the catch-all '*'");
    return rules;
}

LayerType classify_layer_type(const std::string& name, const std::vector<LayerRule>& rules) {
    for (const auto& r : rules)
        if (glob_match(r.pattern, name)) return r.type;
    return LayerType::Other;
}

void apply_layer_rules(Checkpoint& c, const std::vector<LayerRule>& rules) {
    for (auto& t : c.tensors) t.type = classify_layer_type(t.name, rules);
}

}  // namespace dqt
