#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "dqt/chain.hpp"
#include "dqt/codec.hpp"
#include "dqt/quantize.hpp"
#include "dqt/ranker.hpp"
#include "dqt/search.hpp"
#include "dqt/tensor.hpp"
#include "dqt/trajectory.hpp"

namespace fs = std::filesystem;

namespace {

// Advisory per-chain lock: held for the whole compress, released on exit
// even after a crash since flock follows the descriptor.
class ChainLock {
  public:
    explicit ChainLock(const std::string& dir) {
        fs::create_directories(dir);
        path_ = dir + "/lock";
        fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0) throw dqt::IoError("cannot open lock file " + path_);
        if (flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            fd_ = -1;
            throw dqt::IoError("another process holds the chain lock " + path_);
        }
    }
    ~ChainLock() {
        if (fd_ >= 0) {
            flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }
    ChainLock(const ChainLock&) = delete;
    ChainLock& operator=(const ChainLock&) = delete;

  private:
    std::string path_;
    int fd_ = -1;
};

struct StatsRow {
    uint64_t step = 0;
    bool full = false;
    uint64_t raw_bytes = 0;
    uint64_t encoded_bytes = 0;
    double ratio = 0.0;
    double cum_ratio = 0.0;
    double quality_delta = 0.0;
    dqt::QuantConfig config;
};

std::vector<uint8_t> read_record_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dqt::IoError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

std::vector<StatsRow> collect_stats(const dqt::Chain& chain) {
    std::vector<StatsRow> rows;
    uint64_t raw_sum = 0, enc_sum = 0;
    for (const auto& entry : chain.entries()) {
        auto bytes = read_record_bytes(chain.record_path(entry));
        dqt::RecordInfo info = dqt::read_record_info(bytes);
        StatsRow row;
        row.step = entry.step;
        row.full = info.full;
        row.raw_bytes = 4 * info.param_count;
        row.encoded_bytes = bytes.size();
        row.ratio = double(row.raw_bytes) / double(row.encoded_bytes);
        raw_sum += row.raw_bytes;
        enc_sum += row.encoded_bytes;
        row.cum_ratio = double(raw_sum) / double(enc_sum);
        row.quality_delta = info.quality_delta;
        row.config = info.config;
        rows.push_back(row);
    }
    return rows;
}

const char kCsvHeader[] =
    "step,kind,raw_bytes,encoded_bytes,ratio,cum_ratio,quality_delta,bins,prune_frac,"
    "protect_frac,metric";

void print_csv_row(const StatsRow& r) {
    std::printf("%" PRIu64 ",%s,%" PRIu64 ",%" PRIu64 ",%.6g,%.6g,%.9g,%u,%g,%g,%s\n", r.step,
                r.full ? "full" : "delta", r.raw_bytes, r.encoded_bytes, r.ratio, r.cum_ratio,
                r.quality_delta, r.config.bins, r.config.prune_frac, r.config.protect_frac,
                dqt::prune_metric_name(r.config.metric));
}

std::string search_state_path(const std::string& dir) { return dir + "/search-state.txt"; }

void save_search_state(const std::string& dir, const dqt::QuantConfig& cfg) {
    std::string path = search_state_path(dir);
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw dqt::IoError("cannot write " + tmp);
        char buf[512];
        std::snprintf(buf, sizeof(buf),
                      "bins=%u\nembed_bins=%u\nprune_frac=%.17g\nprotect_frac=%.17g\n"
                      "metric=%s\nsigma=%.17g\nalpha=%.17g\n",
                      cfg.bins, cfg.embed_bins, cfg.prune_frac, cfg.protect_frac,
                      dqt::prune_metric_name(cfg.metric), cfg.sigma, cfg.alpha);
        out << buf;
    }
    fs::rename(tmp, path);
}

std::optional<dqt::QuantConfig> load_search_state(const std::string& dir) {
    std::ifstream in(search_state_path(dir));
    if (!in) return std::nullopt;
    dqt::QuantConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "bins")
            cfg.bins = uint32_t(std::stoul(val));
        else if (key == "embed_bins")
            cfg.embed_bins = uint32_t(std::stoul(val));
        else if (key == "prune_frac")
            cfg.prune_frac = std::stod(val);
        else if (key == "protect_frac")
            cfg.protect_frac = std::stod(val);
        else if (key == "metric")
            cfg.metric = dqt::prune_metric_from_name(val);
        else if (key == "sigma")
            cfg.sigma = std::stod(val);
        else if (key == "alpha")
            cfg.alpha = std::stod(val);
    }
    return cfg;
}

struct CompressOpts {
    std::string ckpt, chain_dir, grads, evaluator, layer_rules;
    double threshold = 0.05, alpha = 0.01, sigma = 0.2, beta = 0.9;
    uint32_t e = 1, parallelism = 1, full_every = 50;
    uint64_t seed = 1;
};

int cmd_compress(const CompressOpts& o) {
    auto rules = o.layer_rules.empty() ? dqt::default_layer_rules()
                                       : dqt::load_layer_rules(o.layer_rules);
    dqt::Checkpoint c = dqt::read_checkpoint(o.ckpt);
    dqt::apply_layer_rules(c, rules);

    ChainLock lock(o.chain_dir);
    dqt::Chain chain = dqt::Chain::open(o.chain_dir, o.full_every);

    std::string ema_path = o.chain_dir + "/ema.dqt";
    dqt::EmaState ema;
    bool have_ema = fs::exists(ema_path);
    if (have_ema) ema = dqt::ema_load(ema_path);
    if (!o.grads.empty()) {
        dqt::GradientSnapshot g = dqt::read_checkpoint(o.grads);
        if (!have_ema) ema = dqt::ema_init(o.beta);
        dqt::ema_update(ema, g);
        dqt::ema_save(ema_path, ema);
        have_ema = true;
    }
    dqt::ScoreSet scores = dqt::compute_scores(c, have_ema ? &ema : nullptr);

    dqt::ConfigCube cube;
    cube.alpha = o.alpha;
    cube.sigma = o.sigma;
    dqt::ProxyEvaluator proxy;
    std::unique_ptr<dqt::ExternalEvaluator> external;
    dqt::Evaluator* ev = &proxy;
    if (!o.evaluator.empty()) {
        external = std::make_unique<dqt::ExternalEvaluator>(o.evaluator);
        ev = external.get();
    }
    dqt::SearchParams params{o.threshold, o.parallelism, o.seed};

    auto prev = chain.empty() ? std::nullopt : load_search_state(o.chain_dir);
    dqt::SearchOutcome out =
        prev ? dqt::delta_neighborhood_search(c, scores, cube, *ev, *prev, o.e, params)
             : dqt::guided_exhaustive_search(c, scores, cube, *ev, params);
    if (!out.feasible) {
        std::fprintf(stderr,
                     "INFEASIBLE: best quality_delta %.9g exceeds threshold %.9g "
                     "(%" PRIu64 " evaluations)\n",
                     out.quality_delta, o.threshold, out.evaluations_used);
        return 3;
    }

    dqt::QuantizedCheckpoint q =
        dqt::quantize_checkpoint(c, scores, out.config, dqt::quantize_seed(o.seed, out.config));
    chain.append(q, out.quality_delta);
    save_search_state(o.chain_dir, out.config);

    auto rows = collect_stats(chain);
    std::puts(kCsvHeader);
    print_csv_row(rows.back());
    return 0;
}

void require_chain(const std::string& dir) {
    if (!fs::exists(dir + "/manifest.txt")) throw dqt::IoError("no chain manifest in " + dir);
}

int cmd_restore(const std::string& dir, std::optional<uint64_t> step, const std::string& out) {
    require_chain(dir);
    dqt::Chain chain = dqt::Chain::open(dir);
    dqt::QuantizedCheckpoint q = step ? chain.restore(*step) : chain.restore_latest();
    dqt::write_checkpoint(out, dqt::dequantize_checkpoint(q));
    std::printf("restored step %" PRIu64 " to %s\n", q.step, out.c_str());
    return 0;
}

int cmd_stats(const std::string& dir) {
    require_chain(dir);
    dqt::Chain chain = dqt::Chain::open(dir);
    std::puts(kCsvHeader);
    for (const auto& row : collect_stats(chain)) print_csv_row(row);
    return 0;
}

int cmd_verify(const std::string& dir) {
    require_chain(dir);
    dqt::Chain chain = dqt::Chain::open(dir);
    chain.verify();
    std::printf("ok: %zu records\n", chain.entries().size());
    return 0;
}

int cmd_gen(const std::string& out_dir, const dqt::TrajectorySpec& spec) {
    auto traj = dqt::generate_trajectory(spec);
    fs::create_directories(out_dir);
    for (size_t i = 0; i < traj.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "/ck-%06zu.dqt", i + 1);
        dqt::write_checkpoint(out_dir + name, traj[i].weights);
        std::snprintf(name, sizeof(name), "/grad-%06zu.dqt", i + 1);
        dqt::write_checkpoint(out_dir + name, traj[i].grads);
    }
    std::printf("wrote %zu steps to %s\n", traj.size(), out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"quantized checkpoint chain tool"};
    app.require_subcommand(1);

    CompressOpts co;
    auto* compress = app.add_subcommand("compress", "quantize a checkpoint and append it");
    compress->add_option("ckpt", co.ckpt, "checkpoint file (DQT1)")->required();
    compress->add_option("chain", co.chain_dir, "chain directory")->required();
    compress->add_option("--grads", co.grads, "gradient snapshot file for the importance EMA");
    compress->add_option("--threshold", co.threshold, "max acceptable quality delta");
    compress->add_option("--alpha", co.alpha, "sketch relative-error bound");
    compress->add_option("--sigma", co.sigma, "count/magnitude mix for cluster weights");
    compress->add_option("--beta", co.beta, "gradient EMA smoothing factor");
    compress->add_option("--neighborhood-e", co.e, "delta-search neighborhood radius");
    compress->add_option("--parallelism", co.parallelism, "concurrent evaluations")
        ->check(CLI::PositiveNumber);
    compress->add_option("--evaluator", co.evaluator,
                         "external quality command; {ckpt} is replaced by a checkpoint path");
    compress->add_option("--layer-rules", co.layer_rules, "glob -> layer type rule file");
    compress->add_option("--full-every", co.full_every, "records between full snapshots")
        ->check(CLI::PositiveNumber);
    compress->add_option("--seed", co.seed, "search and quantization seed");

    std::string dir, out_path;
    std::optional<uint64_t> step;
    auto* restore = app.add_subcommand("restore", "write a dequantized checkpoint");
    restore->add_option("chain", dir, "chain directory")->required();
    restore->add_option("out", out_path, "output checkpoint path")->required();
    restore->add_option("--step", step, "step to restore (default: latest)");

    auto* stats = app.add_subcommand("stats", "per-record compression CSV");
    stats->add_option("chain", dir, "chain directory")->required();

    auto* verify = app.add_subcommand("verify", "replay the chain and check every record");
    verify->add_option("chain", dir, "chain directory")->required();

    dqt::TrajectorySpec spec;
    std::string gen_dir;
    auto* gen = app.add_subcommand("gen", "generate a synthetic weight/gradient trajectory");
    gen->add_option("out", gen_dir, "output directory")->required();
    gen->add_option("--params", spec.params, "total parameter count");
    gen->add_option("--steps", spec.steps, "number of steps");
    gen->add_option("--lr0", spec.lr0, "initial learning rate");
    gen->add_option("--decay", spec.decay, "per-step learning-rate decay");
    gen->add_option("--noise", spec.noise, "gradient noise scale");
    gen->add_option("--seed", spec.seed, "rng seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (compress->parsed()) return cmd_compress(co);
        if (restore->parsed()) return cmd_restore(dir, step, out_path);
        if (stats->parsed()) return cmd_stats(dir);
        if (verify->parsed()) return cmd_verify(dir);
        if (gen->parsed()) return cmd_gen(gen_dir, spec);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
