#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>

#include "dqt/chain.hpp"
#include "dqt/codec.hpp"
#include "dqt/quantize.hpp"
#include "dqt/ranker.hpp"
#include "dqt/search.hpp"
#include "dqt/sketch.hpp"
#include "dqt/tensor.hpp"
#include "dqt/trajectory.hpp"

namespace py = pybind11;
using namespace dqt;

namespace {

template <typename T>
py::array_t<T> make_array(const std::vector<T>& v, const std::vector<uint64_t>& shape) {
    std::vector<py::ssize_t> dims(shape.begin(), shape.end());
    if (dims.empty()) dims.push_back(py::ssize_t(v.size()));
    py::array_t<T> out(dims);
    std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(T));
    return out;
}

std::vector<float> flat_f32(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    const float* p = a.data();
    return std::vector<float>(p, p + a.size());
}

NamedTensor make_tensor(const std::string& name,
                        const py::array_t<float, py::array::c_style | py::array::forcecast>& data,
                        LayerType type) {
    NamedTensor t;
    t.name = name;
    t.type = type;
    for (py::ssize_t i = 0; i < data.ndim(); ++i) t.shape.push_back(uint64_t(data.shape(i)));
    if (t.shape.empty()) t.shape.push_back(uint64_t(data.size()));
    t.data = flat_f32(data);
    return t;
}

}  // namespace

PYBIND11_MODULE(_dqt, m) {
    m.doc() = "Checkpoint compression: importance-aware quantization, config search, delta chains";

    auto err = py::register_exception<Error>(m, "Error");
    py::register_exception<ChainCorrupt>(m, "ChainCorrupt", err);
    py::register_exception<ChecksumMismatch>(m, "ChecksumMismatch", err);
    py::register_exception<UnknownStep>(m, "UnknownStep", err);
    py::register_exception<ExternalEvaluatorFailed>(m, "ExternalEvaluatorFailed", err);
    py::register_exception<TooFewDistinctPoints>(m, "TooFewDistinctPoints", err);

    py::enum_<LayerType>(m, "LayerType")
        .value("CONV", LayerType::Conv)
        .value("LINEAR", LayerType::Linear)
        .value("ATTENTION", LayerType::Attention)
        .value("NORM", LayerType::Norm)
        .value("EMBEDDING", LayerType::Embedding)
        .value("BIAS", LayerType::Bias)
        .value("OTHER", LayerType::Other);

    py::enum_<PruneMetric>(m, "PruneMetric")
        .value("MAGNITUDE", PruneMetric::Magnitude)
        .value("SENSITIVITY", PruneMetric::Sensitivity);

    py::class_<NamedTensor>(m, "NamedTensor")
        .def(py::init(&make_tensor), py::arg("name"), py::arg("data"),
             py::arg("type") = LayerType::Other)
        .def_readwrite("name", &NamedTensor::name)
        .def_readwrite("type", &NamedTensor::type)
        .def_property_readonly("shape",
                               [](const NamedTensor& t) {
                                   py::tuple out(t.shape.size());
                                   for (size_t i = 0; i < t.shape.size(); ++i)
                                       out[i] = t.shape[i];
                                   return out;
                               })
        .def_property_readonly(
            "data", [](const NamedTensor& t) { return make_array(t.data, t.shape); },
            "Row-major copy with the tensor's shape")
        .def("size", &NamedTensor::size)
        .def("__eq__", [](const NamedTensor& a, const NamedTensor& b) { return a == b; })
        .def("__repr__", [](const NamedTensor& t) {
            return "NamedTensor(name='" + t.name + "', type=" + layer_type_name(t.type) +
                   ", size=" + std::to_string(t.size()) + ")";
        });

    py::class_<Checkpoint>(m, "Checkpoint")
        .def(py::init<>())
        .def_readwrite("step", &Checkpoint::step)
        .def_readwrite("meta", &Checkpoint::meta, "Copied on access; assign to replace")
        .def_readwrite("tensors", &Checkpoint::tensors, "Copied on access; assign to replace")
        .def("add_tensor",
             [](Checkpoint& c, const std::string& name,
                const py::array_t<float, py::array::c_style | py::array::forcecast>& data,
                LayerType type) { c.tensors.push_back(make_tensor(name, data, type)); },
             py::arg("name"), py::arg("data"), py::arg("type") = LayerType::Other)
        .def("find",
             [](const Checkpoint& c, const std::string& name) -> std::optional<NamedTensor> {
                 const NamedTensor* t = c.find(name);
                 if (!t) return std::nullopt;
                 return *t;
             })
        .def("param_count", &Checkpoint::param_count)
        .def("__eq__", [](const Checkpoint& a, const Checkpoint& b) { return a == b; });

    m.def("write_checkpoint", &write_checkpoint, py::arg("path"), py::arg("checkpoint"),
          py::call_guard<py::gil_scoped_release>());
    m.def("read_checkpoint", &read_checkpoint, py::arg("path"),
          py::call_guard<py::gil_scoped_release>());

    py::class_<LayerRule>(m, "LayerRule")
        .def(py::init([](const std::string& pattern, LayerType type) {
                 return LayerRule{pattern, type};
             }),
             py::arg("pattern"), py::arg("type"))
        .def_readwrite("pattern", &LayerRule::pattern)
        .def_readwrite("type", &LayerRule::type);
    m.def("default_layer_rules", &default_layer_rules);
    m.def("load_layer_rules", &load_layer_rules, py::arg("path"));
    m.def("classify_layer_type", &classify_layer_type, py::arg("name"), py::arg("rules"));
    m.def("apply_layer_rules", &apply_layer_rules, py::arg("checkpoint"), py::arg("rules"));

    py::class_<Histogram>(m, "Histogram")
        .def_property_readonly(
            "keys", [](const Histogram& h) { return make_array(h.keys, {}); })
        .def_property_readonly(
            "counts", [](const Histogram& h) { return make_array(h.counts, {}); })
        .def("total", &Histogram::total);

    py::class_<Sketch>(m, "Sketch")
        .def(py::init<double>(), py::arg("alpha"))
        .def_property_readonly("alpha", &Sketch::alpha)
        .def_property_readonly("gamma", &Sketch::gamma)
        .def("total", &Sketch::total)
        .def("bucket_count", &Sketch::bucket_count)
        .def("zero_count", &Sketch::zero_count)
        .def("add", &Sketch::add, py::arg("x"))
        .def("merge", &Sketch::merge, py::arg("other"))
        .def("quantile", &Sketch::quantile, py::arg("q"))
        .def("histogram", &Sketch::histogram)
        .def("__eq__", [](const Sketch& a, const Sketch& b) { return a == b; });
    m.def("sketch_build",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
             double alpha) {
              py::gil_scoped_release release;
              return sketch_build(x.data(), size_t(x.size()), alpha);
          },
          py::arg("values"), py::arg("alpha"));
    m.def("sketch_merge", &sketch_merge, py::arg("a"), py::arg("b"));
    m.def("sketch_quantile", &sketch_quantile, py::arg("sketch"), py::arg("q"));

    py::class_<EmaState>(m, "EmaState")
        .def_readonly("beta", &EmaState::beta)
        .def_readonly("step_count", &EmaState::step_count);
    m.def("ema_init", &ema_init, py::arg("beta") = 0.9);
    m.def("ema_update", &ema_update, py::arg("ema"), py::arg("grads"),
          py::call_guard<py::gil_scoped_release>());
    m.def("ema_save", &ema_save, py::arg("path"), py::arg("ema"),
          py::call_guard<py::gil_scoped_release>());
    m.def("ema_load", &ema_load, py::arg("path"), py::call_guard<py::gil_scoped_release>());

    py::class_<ScoreSet>(m, "ScoreSet")
        .def_readonly("has_sensitivity", &ScoreSet::has_sensitivity)
        .def_property_readonly("magnitude",
                               [](const ScoreSet& s) {
                                   py::list out;
                                   for (const auto& v : s.magnitude)
                                       out.append(make_array(v, {}));
                                   return out;
                               })
        .def_property_readonly("sensitivity", [](const ScoreSet& s) {
            py::list out;
            for (const auto& v : s.sensitivity) out.append(make_array(v, {}));
            return out;
        });
    m.def("compute_scores", &compute_scores, py::arg("checkpoint"), py::arg("ema") = nullptr,
          py::call_guard<py::gil_scoped_release>());

    py::class_<QuantConfig>(m, "QuantConfig")
        .def(py::init([](uint32_t bins, uint32_t embed_bins, double prune_frac,
                         double protect_frac, PruneMetric metric, double sigma, double alpha) {
                 QuantConfig c;
                 c.bins = bins;
                 c.embed_bins = embed_bins;
                 c.prune_frac = prune_frac;
                 c.protect_frac = protect_frac;
                 c.metric = metric;
                 c.sigma = sigma;
                 c.alpha = alpha;
                 return c;
             }),
             py::arg("bins") = 16, py::arg("embed_bins") = 32, py::arg("prune_frac") = 0.0,
             py::arg("protect_frac") = 0.005, py::arg("metric") = PruneMetric::Magnitude,
             py::arg("sigma") = 0.2, py::arg("alpha") = 0.01)
        .def_readwrite("bins", &QuantConfig::bins)
        .def_readwrite("embed_bins", &QuantConfig::embed_bins)
        .def_readwrite("prune_frac", &QuantConfig::prune_frac)
        .def_readwrite("protect_frac", &QuantConfig::protect_frac)
        .def_readwrite("metric", &QuantConfig::metric)
        .def_readwrite("sigma", &QuantConfig::sigma)
        .def_readwrite("alpha", &QuantConfig::alpha)
        .def("bins_for", &QuantConfig::bins_for, py::arg("type"))
        .def("__eq__", [](const QuantConfig& a, const QuantConfig& b) { return a == b; })
        .def("__repr__", [](const QuantConfig& c) {
            return "QuantConfig(bins=" + std::to_string(c.bins) +
                   ", embed_bins=" + std::to_string(c.embed_bins) +
                   ", prune_frac=" + std::to_string(c.prune_frac) +
                   ", protect_frac=" + std::to_string(c.protect_frac) + ", metric=" +
                   prune_metric_name(c.metric) + ")";
        });

    m.def("approx_kmeans",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast>& values,
             uint32_t k, double sigma, double alpha, uint64_t seed) {
              std::vector<float> v = flat_f32(values);
              std::vector<float> cb;
              {
                  py::gil_scoped_release release;
                  cb = approx_kmeans(v, k, sigma, alpha, seed);
              }
              return make_array(cb, {});
          },
          py::arg("values"), py::arg("k"), py::arg("sigma") = 0.2, py::arg("alpha") = 0.01,
          py::arg("seed") = 1, "Histogram-weighted clustering; returns the ascending codebook");

    py::class_<ProtectedEntry>(m, "ProtectedEntry")
        .def_readonly("pos", &ProtectedEntry::pos)
        .def_property_readonly("value",
                               [](const ProtectedEntry& e) { return bf16_to_f32(e.value); });

    py::class_<QuantizedTensor>(m, "QuantizedTensor")
        .def_readonly("name", &QuantizedTensor::name)
        .def_readonly("type", &QuantizedTensor::type)
        .def_property_readonly("shape",
                               [](const QuantizedTensor& t) {
                                   py::tuple out(t.shape.size());
                                   for (size_t i = 0; i < t.shape.size(); ++i)
                                       out[i] = t.shape[i];
                                   return out;
                               })
        .def_property_readonly(
            "levels", [](const QuantizedTensor& t) { return make_array(t.levels, t.shape); })
        .def_readonly("protected_values", &QuantizedTensor::protected_values)
        .def("size", &QuantizedTensor::size);

    py::class_<QuantizedCheckpoint>(m, "QuantizedCheckpoint")
        .def_readonly("step", &QuantizedCheckpoint::step)
        .def_readonly("config", &QuantizedCheckpoint::config)
        .def_readonly("tensors", &QuantizedCheckpoint::tensors)
        .def("codebook",
             [](const QuantizedCheckpoint& q, LayerType t) {
                 return make_array(q.codebooks[size_t(t)], {});
             },
             py::arg("type"))
        .def("levels_for", &QuantizedCheckpoint::levels_for, py::arg("type"))
        .def("max_levels", &QuantizedCheckpoint::max_levels)
        .def("param_count", &QuantizedCheckpoint::param_count)
        .def("__eq__",
             [](const QuantizedCheckpoint& a, const QuantizedCheckpoint& b) { return a == b; });

    m.def("quantize_checkpoint", &quantize_checkpoint, py::arg("checkpoint"), py::arg("scores"),
          py::arg("config"), py::arg("seed") = 1, py::call_guard<py::gil_scoped_release>());
    m.def("dequantize_checkpoint", &dequantize_checkpoint, py::arg("quantized"),
          py::call_guard<py::gil_scoped_release>());

    m.def("encode_delta_record",
          [](const QuantizedCheckpoint& target, const QuantizedCheckpoint* base,
             double quality_delta) {
              std::vector<uint8_t> rec;
              {
                  py::gil_scoped_release release;
                  rec = encode_delta_record(base, target, quality_delta);
              }
              return py::bytes(reinterpret_cast<const char*>(rec.data()), rec.size());
          },
          py::arg("target"), py::arg("base") = nullptr, py::arg("quality_delta") = 0.0,
          "FULL record when base is None, delta record otherwise");
    m.def("decode_delta_record",
          [](const py::bytes& record, const QuantizedCheckpoint* base) {
              std::string buf = record;
              std::vector<uint8_t> rec(buf.begin(), buf.end());
              py::gil_scoped_release release;
              return decode_delta_record(rec, base);
          },
          py::arg("record"), py::arg("base") = nullptr);

    py::class_<ChainEntry>(m, "ChainEntry")
        .def_readonly("step", &ChainEntry::step)
        .def_readonly("full", &ChainEntry::full)
        .def_readonly("filename", &ChainEntry::filename)
        .def_readonly("base_step", &ChainEntry::base_step);

    py::class_<Chain>(m, "Chain")
        .def_static("open", &Chain::open, py::arg("dir"), py::arg("full_every") = 50,
                    py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("dir", &Chain::dir)
        .def_property_readonly("id", &Chain::id)
        .def_property_readonly("entries", &Chain::entries)
        .def("empty", &Chain::empty)
        .def("latest_step", &Chain::latest_step)
        .def("record_path", &Chain::record_path, py::arg("entry"))
        .def("append", &Chain::append, py::arg("quantized"), py::arg("quality_delta") = 0.0,
             py::call_guard<py::gil_scoped_release>())
        .def("restore", &Chain::restore, py::arg("step"),
             py::call_guard<py::gil_scoped_release>())
        .def("restore_latest", &Chain::restore_latest,
             py::call_guard<py::gil_scoped_release>())
        .def("verify", &Chain::verify, py::call_guard<py::gil_scoped_release>());

    py::class_<TrajectorySpec>(m, "TrajectorySpec")
        .def(py::init([](uint64_t params, uint32_t steps, double lr0, double decay, double noise,
                         uint64_t seed) {
                 TrajectorySpec s;
                 s.params = params;
                 s.steps = steps;
                 s.lr0 = lr0;
                 s.decay = decay;
                 s.noise = noise;
                 s.seed = seed;
                 return s;
             }),
             py::arg("params") = 100000, py::arg("steps") = 50, py::arg("lr0") = 0.1,
             py::arg("decay") = 0.9, py::arg("noise") = 0.05, py::arg("seed") = 1)
        .def_readwrite("params", &TrajectorySpec::params)
        .def_readwrite("steps", &TrajectorySpec::steps)
        .def_readwrite("lr0", &TrajectorySpec::lr0)
        .def_readwrite("decay", &TrajectorySpec::decay)
        .def_readwrite("noise", &TrajectorySpec::noise)
        .def_readwrite("seed", &TrajectorySpec::seed)
        .def_readwrite("layout", &TrajectorySpec::layout);

    py::class_<TrajectoryStep>(m, "TrajectoryStep")
        .def_readonly("weights", &TrajectoryStep::weights)
        .def_readonly("grads", &TrajectoryStep::grads);
    m.def("generate_trajectory", &generate_trajectory, py::arg("spec"),
          py::call_guard<py::gil_scoped_release>());
    m.def("default_layout", &default_layout, py::arg("params"));

    py::class_<ConfigCube>(m, "ConfigCube")
        .def(py::init<>())
        .def_readwrite("bins", &ConfigCube::bins)
        .def_readwrite("prune_frac", &ConfigCube::prune_frac)
        .def_readwrite("protect_frac", &ConfigCube::protect_frac)
        .def_readwrite("embed_bins", &ConfigCube::embed_bins)
        .def_readwrite("sigma", &ConfigCube::sigma)
        .def_readwrite("alpha", &ConfigCube::alpha)
        .def("config_at", &ConfigCube::config_at, py::arg("bin_idx"), py::arg("prune_idx"),
             py::arg("protect_idx"), py::arg("metric"), py::arg("embed_bins"))
        .def("grid_size", &ConfigCube::grid_size);

    py::class_<SearchParams>(m, "SearchParams")
        .def(py::init([](double threshold, uint32_t parallelism, uint64_t seed) {
                 return SearchParams{threshold, parallelism, seed};
             }),
             py::arg("threshold") = 0.05, py::arg("parallelism") = 1, py::arg("seed") = 1)
        .def_readwrite("threshold", &SearchParams::threshold)
        .def_readwrite("parallelism", &SearchParams::parallelism)
        .def_readwrite("seed", &SearchParams::seed);

    py::class_<SearchOutcome>(m, "SearchOutcome")
        .def_readonly("config", &SearchOutcome::config)
        .def_readonly("quality_delta", &SearchOutcome::quality_delta)
        .def_readonly("est_compression", &SearchOutcome::est_compression)
        .def_readonly("evaluations_used", &SearchOutcome::evaluations_used)
        .def_readonly("feasible", &SearchOutcome::feasible);

    py::class_<Evaluator>(m, "Evaluator");
    py::class_<ProxyEvaluator, Evaluator>(m, "ProxyEvaluator").def(py::init<>());
    py::class_<ExternalEvaluator, Evaluator>(m, "ExternalEvaluator")
        .def(py::init<std::string>(), py::arg("command_template"),
             "Shell command; '{ckpt}' expands to the dequantized checkpoint path");

    m.def("guided_exhaustive_search", &guided_exhaustive_search, py::arg("checkpoint"),
          py::arg("scores"), py::arg("cube"), py::arg("evaluator"), py::arg("params"),
          py::call_guard<py::gil_scoped_release>());
    m.def("delta_neighborhood_search", &delta_neighborhood_search, py::arg("checkpoint"),
          py::arg("scores"), py::arg("cube"), py::arg("evaluator"), py::arg("prev"),
          py::arg("e"), py::arg("params"), py::call_guard<py::gil_scoped_release>());
    m.def("estimate_compression", &estimate_compression, py::arg("checkpoint"),
          py::arg("quantized"));
    m.def("proxy_quality_delta", &proxy_quality_delta, py::arg("original"),
          py::arg("reconstructed"), py::call_guard<py::gil_scoped_release>());
}
