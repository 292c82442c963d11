#include "dqt/chain.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "bytes.hpp"

namespace fs = std::filesystem;

namespace dqt {

static const char* kManifestName = "manifest.txt";
static const char* kHeaderPrefix = "# dqt-chain ";

Chain Chain::open(const std::string& dir, uint32_t full_every) {
    if (full_every == 0) throw Error("full_every must be >= 1");
    Chain ch;
    ch.dir_ = dir;
    ch.full_every_ = full_every;
    fs::create_directories(dir);
    fs::path mpath = fs::path(dir) / kManifestName;
    if (!fs::exists(mpath)) {
        std::random_device rd;
        char id[17];
        std::snprintf(id, sizeof(id), "%08x%08x", rd(), rd());
        ch.id_ = id;
        std::ofstream f(mpath);
        if (!f) throw IoError("cannot create " + mpath.string());
        f << kHeaderPrefix << ch.id_ << "\n";
        return ch;
    }
    std::ifstream f(mpath);
    if (!f) throw IoError("cannot open " + mpath.string());
    std::string line;
    if (!std::getline(f, line) || line.rfind(kHeaderPrefix, 0) != 0)
        throw ChainCorrupt("manifest missing chain header");
    ch.id_ = line.substr(std::string(kHeaderPrefix).size());
    size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string step_s, kind, fname, base_s;
        if (!std::getline(ss, step_s, ',') || !std::getline(ss, kind, ',') ||
            !std::getline(ss, fname, ','))
            throw ChainCorrupt("manifest line " + std::to_string(lineno) + " malformed");
        std::getline(ss, base_s, ',');
        ChainEntry e;
        e.step = std::stoull(step_s);
        e.filename = fname;
        if (kind == "FULL") {
            e.full = true;
        } else if (kind == "DELTA") {
            e.full = false;
            if (base_s.empty())
                throw ChainCorrupt("manifest line " + std::to_string(lineno) + " missing base");
            e.base_step = std::stoull(base_s);
        } else {
            throw ChainCorrupt("manifest line " + std::to_string(lineno) + " has kind " + kind);
        }
        if (!ch.entries_.empty() && e.step <= ch.entries_.back().step)
            throw ChainCorrupt("manifest steps not strictly ascending at step " +
                               std::to_string(e.step));
        if (ch.entries_.empty() && !e.full) throw ChainCorrupt("first chain entry must be FULL");
        if (!e.full && e.base_step != ch.entries_.back().step)
            throw ChainCorrupt("delta at step " + std::to_string(e.step) +
                               " does not chain from the preceding entry");
        ch.entries_.push_back(std::move(e));
    }
    return ch;
}

uint64_t Chain::latest_step() const {
    if (entries_.empty()) throw UnknownStep("chain is empty");
    return entries_.back().step;
}

std::string Chain::record_path(const ChainEntry& e) const {
    return (fs::path(dir_) / e.filename).string();
}

ChainEntry Chain::append(const QuantizedCheckpoint& q, double quality_delta) {
    if (!entries_.empty() && q.step <= entries_.back().step)
        throw Error("append step " + std::to_string(q.step) + " not after " +
                    std::to_string(entries_.back().step));

    size_t since_full = 0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it, ++since_full)
        if (it->full) break;
    bool full = entries_.empty() || since_full + 1 >= full_every_;

    std::vector<uint8_t> bytes;
    ChainEntry e;
    e.step = q.step;
    e.full = full;
    char fname[32];
    std::snprintf(fname, sizeof(fname), "rec-%012" PRIu64 ".dqdr", q.step);
    e.filename = fname;
    if (full) {
        bytes = encode_delta_record(nullptr, q, quality_delta);
    } else {
        e.base_step = entries_.back().step;
        QuantizedCheckpoint prev;
        const QuantizedCheckpoint* prev_p;
        if (cache_ && cache_->step == e.base_step) {
            prev_p = &*cache_;
        } else {
            prev = restore(e.base_step);
            prev_p = &prev;
        }
        bytes = encode_delta_record(prev_p, q, quality_delta);
    }
    detail::write_file(record_path(e), bytes);

    std::ofstream f(fs::path(dir_) / kManifestName, std::ios::app);
    if (!f) throw IoError("cannot append to chain manifest");
    f << e.step << ',' << (e.full ? "FULL" : "DELTA") << ',' << e.filename << ','
      << (e.full ? std::string() : std::to_string(e.base_step)) << "\n";
    f.flush();
    if (!f) throw IoError("manifest write failed");

    entries_.push_back(e);
    cache_ = q;
    return e;
}

QuantizedCheckpoint Chain::restore(uint64_t step) const {
    size_t idx = entries_.size();
    for (size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].step == step) {
            idx = i;
            break;
        }
    if (idx == entries_.size())
        throw UnknownStep("step " + std::to_string(step) + " not in chain");
    size_t start = idx;
    while (!entries_[start].full) {
        if (start == 0) throw ChainCorrupt("no FULL record precedes step " + std::to_string(step));
        --start;
    }
    QuantizedCheckpoint state;
    for (size_t i = start; i <= idx; ++i) {
        auto bytes = detail::read_file(record_path(entries_[i]));
        state = decode_delta_record(bytes, entries_[i].full ? nullptr : &state);
        if (state.step != entries_[i].step)
            throw ChainCorrupt("record step " + std::to_string(state.step) +
                               " disagrees with manifest step " + std::to_string(entries_[i].step));
    }
    return state;
}

QuantizedCheckpoint Chain::restore_latest() const { return restore(latest_step()); }

void Chain::verify() const {
    QuantizedCheckpoint state;
    bool have_state = false;
    for (const auto& e : entries_) {
        try {
            auto bytes = detail::read_file(record_path(e));
            RecordInfo info = read_record_info(bytes);
            if (info.full != e.full) throw ChainCorrupt("record kind disagrees with manifest");
            if (!e.full && !have_state) throw ChainCorrupt("delta without preceding state");
            if (!e.full && info.base_step != e.base_step)
                throw ChainCorrupt("record base step disagrees with manifest");
            state = decode_delta_record(bytes, e.full ? nullptr : &state);
            have_state = true;
            if (state.step != e.step) throw ChainCorrupt("record step disagrees with manifest");
        } catch (const Error& err) {
            throw ChainCorrupt("step " + std::to_string(e.step) + ": " + err.what());
        }
    }
}

}  // namespace dqt
