#include "dqt/codec.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <queue>

#include "bytes.hpp"

namespace dqt {

std::vector<uint16_t> delta_compute(const std::vector<uint16_t>& prev,
                                    const std::vector<uint16_t>& cur, uint32_t B) {
    if (prev.size() != cur.size()) throw ShapeMismatch("level stream size mismatch");
    if (B == 0) throw Error("cyclic alphabet size must be positive");
    std::vector<uint16_t> d(cur.size());
    for (size_t i = 0; i < cur.size(); ++i) {
        if (prev[i] >= B || cur[i] >= B) throw CorruptIndex("level outside cyclic alphabet");
        int32_t diff = int32_t(prev[i]) - int32_t(cur[i]);
        if (diff < 0) diff += int32_t(B);
        d[i] = uint16_t(diff);
    }
    return d;
}

std::vector<uint16_t> delta_apply(const std::vector<uint16_t>& prev,
                                  const std::vector<uint16_t>& deltas, uint32_t B) {
    if (prev.size() != deltas.size()) throw ShapeMismatch("level stream size mismatch");
    std::vector<uint16_t> cur(prev.size());
    for (size_t i = 0; i < prev.size(); ++i) {
        if (prev[i] >= B || deltas[i] >= B) throw CorruptIndex("level outside cyclic alphabet");
        int32_t v = int32_t(prev[i]) - int32_t(deltas[i]);
        if (v < 0) v += int32_t(B);
        cur[i] = uint16_t(v);
    }
    return cur;
}

RearrangedGroups rearrange(const std::vector<uint16_t>& deltas, const std::vector<uint16_t>& prev,
                           uint32_t B) {
    if (prev.size() != deltas.size()) throw ShapeMismatch("level stream size mismatch");
    std::vector<std::vector<uint16_t>> by_bucket(B);
    for (size_t i = 0; i < deltas.size(); ++i) {
        if (prev[i] >= B) throw CorruptIndex("source level outside cyclic alphabet");
        by_bucket[prev[i]].push_back(deltas[i]);
    }
    RearrangedGroups out;
    for (uint32_t b = 0; b < B; ++b)
        if (!by_bucket[b].empty()) {
            out.bucket_ids.push_back(b);
            out.groups.push_back(std::move(by_bucket[b]));
        }
    return out;
}

std::vector<uint16_t> unrearrange(RearrangedGroups groups, const std::vector<uint16_t>& prev,
                                  uint32_t B) {
    std::vector<size_t> next(B, 0);
    std::vector<std::vector<uint16_t>*> by_bucket(B, nullptr);
    for (size_t g = 0; g < groups.bucket_ids.size(); ++g) {
        uint32_t b = groups.bucket_ids[g];
        if (b >= B) throw CorruptIndex("group bucket outside cyclic alphabet");
        if (by_bucket[b]) throw CorruptIndex("duplicate group bucket");
        by_bucket[b] = &groups.groups[g];
    }
    std::vector<uint16_t> deltas(prev.size());
    for (size_t i = 0; i < prev.size(); ++i) {
        uint16_t src = prev[i];
        if (src >= B || !by_bucket[src] || next[src] >= by_bucket[src]->size())
            throw CorruptIndex("group underrun during reconstruction");
        deltas[i] = (*by_bucket[src])[next[src]++];
    }
    for (size_t g = 0; g < groups.groups.size(); ++g)
        if (next[groups.bucket_ids[g]] != groups.groups[g].size())
            throw CorruptIndex("group element count mismatch");
    return deltas;
}

std::vector<int64_t> rle_encode(const std::vector<uint16_t>& vals) {
    std::vector<int64_t> out;
    size_t i = 0;
    while (i < vals.size()) {
        size_t j = i;
        while (j < vals.size() && vals[j] == vals[i]) ++j;
        out.push_back(-int64_t(vals[i]));
        if (j - i > 1) out.push_back(int64_t(j - i));
        i = j;
    }
    return out;
}

std::vector<uint16_t> rle_decode(const std::vector<int64_t>& symbols, uint64_t expected_count) {
    std::vector<uint16_t> out;
    out.reserve(expected_count);
    for (size_t i = 0; i < symbols.size(); ++i) {
        int64_t s = symbols[i];
        if (s > 0) throw CorruptBitstream("run length without a preceding value");
        if (-s > 0xffff) throw CorruptBitstream("run value out of range");
        uint16_t v = uint16_t(-s);
        uint64_t run = 1;
        if (i + 1 < symbols.size() && symbols[i + 1] > 0) run = uint64_t(symbols[++i]);
        if (out.size() + run > expected_count) throw CorruptBitstream("run overflows group");
        out.insert(out.end(), run, v);
    }
    if (out.size() != expected_count) throw CorruptBitstream("group element count mismatch");
    return out;
}

namespace {

struct BitWriter {
    std::vector<uint8_t> bytes;
    int used = 0;  // bits used in the last byte

    void put(uint64_t code, int len) {
        for (int i = len - 1; i >= 0; --i) {
            if (used == 0) bytes.push_back(0);
            bytes.back() |= uint8_t(((code >> i) & 1) << (7 - used));
            used = (used + 1) & 7;
        }
    }
};

struct BitReader {
    const uint8_t* p;
    size_t nbits;
    size_t pos = 0;

    int bit() {
        if (pos >= nbits) throw CorruptBitstream("bitstream overrun");
        int b = (p[pos >> 3] >> (7 - (pos & 7))) & 1;
        ++pos;
        return b;
    }
};

std::vector<std::pair<int64_t, uint8_t>> huffman_lengths(const std::vector<int64_t>& symbols) {
    std::map<int64_t, uint64_t> freq;
    for (int64_t s : symbols) ++freq[s];
    std::vector<std::pair<int64_t, uint8_t>> table;
    if (freq.empty()) return table;
    if (freq.size() == 1) {
        table.emplace_back(freq.begin()->first, 1);
        return table;
    }

    struct Node {
        uint64_t f;
        uint32_t order;
        int left = -1, right = -1;
        int64_t sym = 0;
    };
    std::vector<Node> arena;
    arena.reserve(freq.size() * 2);
    for (const auto& [s, f] : freq)
        arena.push_back({f, uint32_t(arena.size()), -1, -1, s});
    auto cmp = [&](int a, int b) {
        if (arena[a].f != arena[b].f) return arena[a].f > arena[b].f;
        return arena[a].order > arena[b].order;
    };
    std::priority_queue<int, std::vector<int>, decltype(cmp)> pq(cmp);
    for (size_t i = 0; i < arena.size(); ++i) pq.push(int(i));
    while (pq.size() > 1) {
        int a = pq.top();
        pq.pop();
        int b = pq.top();
        pq.pop();
        arena.push_back({arena[a].f + arena[b].f, uint32_t(arena.size()), a, b, 0});
        pq.push(int(arena.size() - 1));
    }
    // Depth-first walk assigns code lengths.
    std::vector<std::pair<int, uint8_t>> stack{{pq.top(), 0}};
    while (!stack.empty()) {
        auto [idx, depth] = stack.back();
        stack.pop_back();
        const Node& nd = arena[size_t(idx)];
        if (nd.left < 0) {
            table.emplace_back(nd.sym, depth);
        } else {
            if (depth >= 63) throw Error("huffman code length overflow");
            stack.push_back({nd.left, uint8_t(depth + 1)});
            stack.push_back({nd.right, uint8_t(depth + 1)});
        }
    }
    std::sort(table.begin(), table.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    return table;
}

struct CanonicalCodes {
    // Indexed in table order (ascending length, then symbol).
    std::vector<uint64_t> codes;
    uint8_t max_len = 0;
};

CanonicalCodes assign_codes(const std::vector<std::pair<int64_t, uint8_t>>& table) {
    CanonicalCodes cc;
    cc.codes.resize(table.size());
    uint64_t code = 0;
    uint8_t prev_len = table.empty() ? 0 : table[0].second;
    uint64_t kraft = 0;
    for (size_t i = 0; i < table.size(); ++i) {
        uint8_t len = table[i].second;
        if (len == 0 || len > 63 || len < prev_len) throw CorruptBitstream("bad huffman table");
        code <<= (len - prev_len);
        cc.codes[i] = code++;
        prev_len = len;
        cc.max_len = len;
        kraft += 1ull << (63 - len);
        if (kraft > (1ull << 63)) throw CorruptBitstream("huffman table overfull");
    }
    return cc;
}

}  // namespace

HuffmanEncoded huffman_encode(const std::vector<int64_t>& symbols) {
    HuffmanEncoded out;
    out.table = huffman_lengths(symbols);
    CanonicalCodes cc = assign_codes(out.table);
    std::map<int64_t, std::pair<uint64_t, uint8_t>> lookup;
    for (size_t i = 0; i < out.table.size(); ++i)
        lookup[out.table[i].first] = {cc.codes[i], out.table[i].second};
    BitWriter bw;
    for (int64_t s : symbols) {
        const auto& [code, len] = lookup.at(s);
        bw.put(code, len);
    }
    out.bytes = std::move(bw.bytes);
    return out;
}

std::vector<int64_t> huffman_decode(const std::vector<std::pair<int64_t, uint8_t>>& table,
                                    const std::vector<uint8_t>& bytes, uint64_t count) {
    std::vector<int64_t> out;
    if (count == 0) return out;
    if (table.empty()) throw CorruptBitstream("empty huffman table");
    for (size_t i = 1; i < table.size(); ++i)
        if (table[i].second < table[i - 1].second ||
            (table[i].second == table[i - 1].second && table[i].first <= table[i - 1].first))
            throw CorruptBitstream("huffman table not canonical");
    CanonicalCodes cc = assign_codes(table);
    // Per-length first code and first table index.
    std::vector<uint64_t> first_code(cc.max_len + 1, 0);
    std::vector<size_t> first_idx(cc.max_len + 1, 0);
    std::vector<size_t> len_count(cc.max_len + 1, 0);
    for (size_t i = 0; i < table.size(); ++i) {
        uint8_t len = table[i].second;
        if (len_count[len] == 0) {
            first_code[len] = cc.codes[i];
            first_idx[len] = i;
        }
        ++len_count[len];
    }
    BitReader br{bytes.data(), bytes.size() * 8};
    out.reserve(count);
    for (uint64_t n = 0; n < count; ++n) {
        uint64_t cur = 0;
        uint8_t len = 0;
        while (true) {
            cur = (cur << 1) | uint64_t(br.bit());
            ++len;
            if (len > cc.max_len) throw CorruptBitstream("invalid huffman code");
            if (len_count[len] && cur >= first_code[len] &&
                cur - first_code[len] < len_count[len]) {
                out.push_back(table[first_idx[len] + size_t(cur - first_code[len])].first);
                break;
            }
        }
    }
    return out;
}

uint32_t crc32(const uint8_t* data, size_t n) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = 0xffffffffu;
    for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

namespace {

constexpr char kRecordMagic[4] = {'D', 'Q', 'D', 'R'};
constexpr uint32_t kRecordVersion = 1;

std::vector<uint8_t> level_stream_bytes(const QuantizedCheckpoint& q) {
    std::vector<uint8_t> bytes;
    for (const auto& t : q.tensors) {
        size_t at = bytes.size();
        bytes.resize(at + t.levels.size() * 2);
        for (size_t i = 0; i < t.levels.size(); ++i) {
            bytes[at + 2 * i] = uint8_t(t.levels[i]);
            bytes[at + 2 * i + 1] = uint8_t(t.levels[i] >> 8);
        }
    }
    return bytes;
}

void encode_tensor_payload(detail::ByteWriter& w, const std::vector<uint16_t>& prev,
                           const std::vector<uint16_t>& cur, uint32_t B) {
    auto deltas = delta_compute(prev, cur, B);
    auto rg = rearrange(deltas, prev, B);
    w.uvarint(rg.groups.size());
    for (size_t g = 0; g < rg.groups.size(); ++g) {
        auto symbols = rle_encode(rg.groups[g]);
        HuffmanEncoded he = huffman_encode(symbols);
        w.uvarint(rg.bucket_ids[g]);
        w.uvarint(rg.groups[g].size());
        w.uvarint(symbols.size());
        w.uvarint(he.table.size());
        for (const auto& [sym, len] : he.table) {
            w.svarint(sym);
            w.u8(len);
        }
        w.uvarint(he.bytes.size());
        w.raw(he.bytes.data(), he.bytes.size());
    }
}

std::vector<uint16_t> decode_tensor_payload(detail::ByteReader& r,
                                            const std::vector<uint16_t>& prev, uint32_t B) {
    RearrangedGroups rg;
    uint64_t group_count = r.uvarint();
    uint64_t total = 0;
    for (uint64_t g = 0; g < group_count; ++g) {
        uint64_t bucket = r.uvarint();
        uint64_t elems = r.uvarint();
        uint64_t nsyms = r.uvarint();
        uint64_t table_size = r.uvarint();
        std::vector<std::pair<int64_t, uint8_t>> table;
        table.reserve(table_size);
        for (uint64_t i = 0; i < table_size; ++i) {
            int64_t sym = r.svarint();
            uint8_t len = r.u8();
            table.emplace_back(sym, len);
        }
        uint64_t nbytes = r.uvarint();
        std::vector<uint8_t> bytes(nbytes);
        r.raw(bytes.data(), nbytes);
        auto symbols = huffman_decode(table, bytes, nsyms);
        rg.bucket_ids.push_back(uint32_t(bucket));
        rg.groups.push_back(rle_decode(symbols, elems));
        total += elems;
    }
    if (total != prev.size()) throw CorruptIndex("group totals do not cover the tensor");
    auto deltas = unrearrange(std::move(rg), prev, B);
    return delta_apply(prev, deltas, B);
}

QuantizedCheckpoint zero_base_like(const QuantizedCheckpoint& target) {
    QuantizedCheckpoint z;
    z.step = 0;
    z.tensors.reserve(target.tensors.size());
    for (const auto& t : target.tensors) {
        QuantizedTensor qt;
        qt.name = t.name;
        qt.type = t.type;
        qt.shape = t.shape;
        qt.levels.assign(t.levels.size(), 0);
        z.tensors.push_back(std::move(qt));
    }
    return z;
}

void write_config(detail::ByteWriter& w, const QuantConfig& cfg) {
    w.u32(cfg.bins);
    w.u32(cfg.embed_bins);
    w.f64(cfg.prune_frac);
    w.f64(cfg.protect_frac);
    w.u8(uint8_t(cfg.metric));
    w.f64(cfg.sigma);
    w.f64(cfg.alpha);
}

QuantConfig read_config(detail::ByteReader& r) {
    QuantConfig cfg;
    cfg.bins = r.u32();
    cfg.embed_bins = r.u32();
    cfg.prune_frac = r.f64();
    cfg.protect_frac = r.f64();
    cfg.metric = PruneMetric(r.u8());
    cfg.sigma = r.f64();
    cfg.alpha = r.f64();
    return cfg;
}

}  // namespace

std::vector<uint8_t> encode_delta_record(const QuantizedCheckpoint* base,
                                         const QuantizedCheckpoint& target,
                                         double quality_delta) {
    QuantizedCheckpoint zero;
    if (!base) {
        zero = zero_base_like(target);
        // A FULL record's implicit base shares the target's alphabet.
    } else {
        if (base->tensors.size() != target.tensors.size())
            throw ShapeMismatch("base/target tensor count mismatch");
        for (size_t i = 0; i < base->tensors.size(); ++i) {
            const auto& bt = base->tensors[i];
            const auto& tt = target.tensors[i];
            if (bt.name != tt.name || bt.shape != tt.shape || bt.type != tt.type)
                throw ShapeMismatch("base/target tensor layout mismatch at " + tt.name);
        }
    }
    const QuantizedCheckpoint& b = base ? *base : zero;
    uint32_t B = std::max(base ? b.max_levels() : 0u, target.max_levels());
    if (B == 0) B = 2;

    detail::ByteWriter w;
    w.raw(kRecordMagic, 4);
    w.u32(kRecordVersion);
    w.u8(base ? 1 : 0);
    w.u64(base ? b.step : 0);
    w.u64(target.step);
    w.u32(B);
    write_config(w, target.config);
    w.f64(quality_delta);

    uint8_t n_lt = 0;
    for (const auto& cb : target.codebooks) n_lt += !cb.empty();
    w.u8(n_lt);
    for (int lt = 0; lt < kLayerTypeCount; ++lt) {
        const auto& cb = target.codebooks[size_t(lt)];
        if (cb.empty()) continue;
        w.u8(uint8_t(lt));
        w.u32(uint32_t(cb.size()));
        for (float v : cb) w.f32(v);
    }

    w.u32(uint32_t(target.tensors.size()));
    for (size_t i = 0; i < target.tensors.size(); ++i) {
        const auto& tt = target.tensors[i];
        w.str(tt.name);
        w.u8(uint8_t(tt.type));
        w.u8(uint8_t(tt.shape.size()));
        for (uint64_t d : tt.shape) w.u64(d);
        w.uvarint(tt.protected_values.size());
        uint64_t prev_pos = 0;
        for (size_t p = 0; p < tt.protected_values.size(); ++p) {
            const auto& e = tt.protected_values[p];
            w.uvarint(p == 0 ? e.pos : e.pos - prev_pos);
            w.u16(e.value);
            prev_pos = e.pos;
        }
        encode_tensor_payload(w, b.tensors[i].levels, tt.levels, B);
    }
    auto stream = level_stream_bytes(target);
    w.u32(crc32(stream.data(), stream.size()));
    return std::move(w.buf);
}

RecordInfo read_record_info(const std::vector<uint8_t>& record) {
    detail::ByteReader r(record);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kRecordMagic, 4) != 0) throw BadMagic("not a DQDR record");
    uint32_t version = r.u32();
    if (version != kRecordVersion)
        throw IoError("unsupported DQDR version " + std::to_string(version));
    RecordInfo info;
    info.full = r.u8() == 0;
    info.base_step = r.u64();
    info.target_step = r.u64();
    info.B = r.u32();
    info.config = read_config(r);
    info.quality_delta = r.f64();
    uint8_t n_lt = r.u8();
    for (uint8_t i = 0; i < n_lt; ++i) {
        r.u8();
        uint32_t len = r.u32();
        for (uint32_t j = 0; j < len; ++j) r.f32();
    }
    uint32_t tensor_count = r.u32();
    for (uint32_t i = 0; i < tensor_count; ++i) {
        r.str();
        r.u8();
        uint8_t rank = r.u8();
        uint64_t n = 1;
        for (uint8_t d = 0; d < rank; ++d) n *= r.u64();
        info.param_count += n;
        uint64_t prot = r.uvarint();
        for (uint64_t p = 0; p < prot; ++p) {
            r.uvarint();
            r.u16();
        }
        uint64_t groups = r.uvarint();
        for (uint64_t g = 0; g < groups; ++g) {
            r.uvarint();
            r.uvarint();
            r.uvarint();
            uint64_t table_size = r.uvarint();
            for (uint64_t t = 0; t < table_size; ++t) {
                r.svarint();
                r.u8();
            }
            uint64_t nbytes = r.uvarint();
            r.seek(r.pos() + nbytes);
        }
    }
    return info;
}

QuantizedCheckpoint decode_delta_record(const std::vector<uint8_t>& record,
                                        const QuantizedCheckpoint* base) {
    detail::ByteReader r(record);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kRecordMagic, 4) != 0) throw BadMagic("not a DQDR record");
    uint32_t version = r.u32();
    if (version != kRecordVersion)
        throw IoError("unsupported DQDR version " + std::to_string(version));
    bool has_base = r.u8() != 0;
    uint64_t base_step = r.u64();
    uint64_t target_step = r.u64();
    uint32_t B = r.u32();

    if (has_base && !base) throw ChainCorrupt("delta record requires its base state");
    if (!has_base) base = nullptr;
    if (base && base->step != base_step)
        throw ChainCorrupt("base step mismatch: record expects " + std::to_string(base_step) +
                           ", got " + std::to_string(base->step));

    QuantizedCheckpoint q;
    q.step = target_step;
    q.config = read_config(r);
    r.f64();  // quality_delta, reported via read_record_info
    uint8_t n_lt = r.u8();
    for (uint8_t i = 0; i < n_lt; ++i) {
        uint8_t lt = r.u8();
        if (lt >= kLayerTypeCount) throw CorruptIndex("bad codebook layer type");
        uint32_t len = r.u32();
        auto& cb = q.codebooks[lt];
        cb.resize(len);
        for (auto& v : cb) v = r.f32();
    }

    uint32_t tensor_count = r.u32();
    if (base && base->tensors.size() != tensor_count)
        throw ChainCorrupt("base tensor count mismatch");
    q.tensors.reserve(tensor_count);
    for (uint32_t i = 0; i < tensor_count; ++i) {
        QuantizedTensor qt;
        qt.name = r.str();
        uint8_t lt = r.u8();
        if (lt >= kLayerTypeCount) throw CorruptIndex("bad tensor layer type");
        qt.type = LayerType(lt);
        uint8_t rank = r.u8();
        qt.shape.resize(rank);
        for (auto& d : qt.shape) d = r.u64();
        uint64_t n = qt.size();

        uint64_t prot = r.uvarint();
        if (prot > n) throw CorruptIndex("too many protected entries in " + qt.name);
        qt.protected_values.resize(prot);
        uint64_t pos = 0;
        for (uint64_t p = 0; p < prot; ++p) {
            uint64_t d = r.uvarint();
            pos = (p == 0) ? d : pos + d;
            if (pos >= n || (p > 0 && d == 0))
                throw CorruptIndex("protected positions not ascending in " + qt.name);
            qt.protected_values[p] = {pos, r.u16()};
        }

        std::vector<uint16_t> prev_levels;
        if (base) {
            const auto& bt = base->tensors[i];
            if (bt.name != qt.name || bt.shape != qt.shape || bt.type != qt.type)
                throw ChainCorrupt("base tensor layout mismatch at " + qt.name);
            prev_levels = bt.levels;
        } else {
            prev_levels.assign(n, 0);
        }
        if (prev_levels.size() != n) throw ChainCorrupt("base tensor size mismatch at " + qt.name);
        qt.levels = decode_tensor_payload(r, prev_levels, B);

        uint32_t max_lvl = uint32_t(q.codebooks[size_t(qt.type)].size()) + 1;
        for (uint16_t lvl : qt.levels)
            if (lvl > max_lvl) throw CorruptIndex("decoded level out of range in " + qt.name);
        q.tensors.push_back(std::move(qt));
    }
    uint32_t stored_crc = r.u32();
    if (r.remaining() != 0) throw IoError("trailing bytes after DQDR record");
    auto stream = level_stream_bytes(q);
    if (crc32(stream.data(), stream.size()) != stored_crc)
        throw ChecksumMismatch("record checksum mismatch at step " + std::to_string(target_step));
    return q;
}

namespace {

uint64_t huffman_payload_size(const std::vector<int64_t>& symbols) {
    HuffmanEncoded he = huffman_encode(symbols);
    detail::ByteWriter w;
    w.uvarint(symbols.size());
    w.uvarint(he.table.size());
    for (const auto& [sym, len] : he.table) {
        w.svarint(sym);
        w.u8(len);
    }
    w.uvarint(he.bytes.size());
    return w.buf.size() + he.bytes.size();
}

}  // namespace

uint64_t payload_bytes_pe(const QuantizedCheckpoint& base, const QuantizedCheckpoint& target) {
    uint32_t B = std::max(base.max_levels(), target.max_levels());
    uint64_t total = 0;
    for (size_t i = 0; i < target.tensors.size(); ++i) {
        detail::ByteWriter w;
        encode_tensor_payload(w, base.tensors[i].levels, target.tensors[i].levels, B);
        total += w.buf.size();
    }
    return total;
}

uint64_t payload_bytes_rle(const QuantizedCheckpoint& base, const QuantizedCheckpoint& target) {
    uint32_t B = std::max(base.max_levels(), target.max_levels());
    uint64_t total = 0;
    for (size_t i = 0; i < target.tensors.size(); ++i) {
        auto deltas = delta_compute(base.tensors[i].levels, target.tensors[i].levels, B);
        total += huffman_payload_size(rle_encode(deltas));
    }
    return total;
}

uint64_t payload_bytes_he(const QuantizedCheckpoint& base, const QuantizedCheckpoint& target) {
    uint32_t B = std::max(base.max_levels(), target.max_levels());
    uint64_t total = 0;
    for (size_t i = 0; i < target.tensors.size(); ++i) {
        auto deltas = delta_compute(base.tensors[i].levels, target.tensors[i].levels, B);
        std::vector<int64_t> symbols(deltas.begin(), deltas.end());
        total += huffman_payload_size(symbols);
    }
    return total;
}

}  // namespace dqt
