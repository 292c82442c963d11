#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dqt/quantize.hpp"

namespace dqt {

// Cyclic level deltas: D[i] = (prev[i] - cur[i]) mod B, recovered as
// cur[i] = (prev[i] - D[i]) mod B. All levels must be below B.
std::vector<uint16_t> delta_compute(const std::vector<uint16_t>& prev,
                                    const std::vector<uint16_t>& cur, uint32_t B);
std::vector<uint16_t> delta_apply(const std::vector<uint16_t>& prev,
                                  const std::vector<uint16_t>& deltas, uint32_t B);

// Deltas regrouped by their source level in prev, scan order preserved
// within each group. Groups are listed by ascending source level.
struct RearrangedGroups {
    std::vector<uint32_t> bucket_ids;
    std::vector<std::vector<uint16_t>> groups;
};
RearrangedGroups rearrange(const std::vector<uint16_t>& deltas,
                           const std::vector<uint16_t>& prev, uint32_t B);
std::vector<uint16_t> unrearrange(RearrangedGroups groups, const std::vector<uint16_t>& prev,
                                  uint32_t B);

// Run-length coding: a run of value v emits -v, followed by the run length
// as a positive symbol only when the run is longer than one.
std::vector<int64_t> rle_encode(const std::vector<uint16_t>& vals);
std::vector<uint16_t> rle_decode(const std::vector<int64_t>& symbols, uint64_t expected_count);

// Canonical Huffman coding. The table stores (symbol, code length) pairs;
// codes are assigned canonically by (length, symbol). A single-symbol
// alphabet uses one-bit codes. Bitstreams are byte-padded.
struct HuffmanEncoded {
    std::vector<std::pair<int64_t, uint8_t>> table;
    std::vector<uint8_t> bytes;
};
HuffmanEncoded huffman_encode(const std::vector<int64_t>& symbols);
std::vector<int64_t> huffman_decode(const std::vector<std::pair<int64_t, uint8_t>>& table,
                                    const std::vector<uint8_t>& bytes, uint64_t count);

uint32_t crc32(const uint8_t* data, size_t n);

// DQDR delta record. A record without a base (FULL) encodes the target
// against an implicit all-zero level state and is self-contained.
struct RecordInfo {
    bool full = false;
    uint64_t base_step = 0;
    uint64_t target_step = 0;
    uint32_t B = 0;
    QuantConfig config;
    double quality_delta = 0.0;
    uint64_t param_count = 0;
};

std::vector<uint8_t> encode_delta_record(const QuantizedCheckpoint* base,
                                         const QuantizedCheckpoint& target,
                                         double quality_delta = 0.0);
QuantizedCheckpoint decode_delta_record(const std::vector<uint8_t>& record,
                                        const QuantizedCheckpoint* base);
RecordInfo read_record_info(const std::vector<uint8_t>& record);

// Encoded payload sizes (symbol tables + bitstreams + group headers) of the
// shipped pipeline and of two reduced variants over the same state pair:
// rle skips the rearrangement, he additionally skips run-length coding.
uint64_t payload_bytes_pe(const QuantizedCheckpoint& base, const QuantizedCheckpoint& target);
uint64_t payload_bytes_rle(const QuantizedCheckpoint& base, const QuantizedCheckpoint& target);
uint64_t payload_bytes_he(const QuantizedCheckpoint& base, const QuantizedCheckpoint& target);

}  // namespace dqt
