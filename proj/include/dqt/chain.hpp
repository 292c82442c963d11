#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dqt/codec.hpp"

namespace dqt {

struct ChainEntry {
    uint64_t step = 0;
    bool full = false;
    std::string filename;
    uint64_t base_step = 0;  // meaningful for deltas only
};

// Append-only record chain in a directory: a line-oriented manifest plus one
// DQDR file per step. The first record is FULL, later ones are deltas
// against the immediately preceding entry, with a fresh FULL every
// full_every records.
class Chain {
  public:
    static Chain open(const std::string& dir, uint32_t full_every = 50);

    const std::string& dir() const { return dir_; }
    const std::string& id() const { return id_; }
    const std::vector<ChainEntry>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }
    uint64_t latest_step() const;
    std::string record_path(const ChainEntry& e) const;

    ChainEntry append(const QuantizedCheckpoint& q, double quality_delta = 0.0);
    QuantizedCheckpoint restore(uint64_t step) const;
    QuantizedCheckpoint restore_latest() const;
    // Replays every record, validating structure and checksums. Throws
    // ChainCorrupt naming the first bad step.
    void verify() const;

  private:
    std::string dir_;
    std::string id_;
    uint32_t full_every_ = 50;
    std::vector<ChainEntry> entries_;
    std::optional<QuantizedCheckpoint> cache_;  // last appended state
};

}  // namespace dqt
