#pragma once

// Run configuration and the .ffm model container.
//
// Container layout (all integers little-endian):
//   0   8 bytes  magic "FFCNNMDL"
//   8   u32      format version
//   12  u32      reserved, zero
//   16  u64      header length H
//   24  H bytes  UTF-8 JSON header (keys sorted)
//   ... zero padding to an 8-byte boundary
//   payload: arrays back to back, row-major, at the offsets listed in
//            header["arrays"] (relative to the payload start)
// docs/model_format.md describes every header field and array name.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ffcnn/convnet.hpp"
#include "ffcnn/datasets.hpp"
#include "ffcnn/fclsr.hpp"

namespace ffcnn {

static_assert(std::endian::native == std::endian::little, "model I/O assumes a little-endian host");

using nlohmann::json;

enum class DatasetKind { mnist, cifar10 };

inline std::string_view to_string(DatasetKind d) { return d == DatasetKind::mnist ? "mnist" : "cifar10"; }

inline DatasetKind parse_dataset(std::string_view s) {
  if (s == "mnist") return DatasetKind::mnist;
  if (s == "cifar10" || s == "cifar-10") return DatasetKind::cifar10;
  throw Error(ErrorKind::config, detail::concat("unknown dataset '", s, "' (expected mnist|cifar10)"));
}

inline int dataset_channels(DatasetKind d) { return d == DatasetKind::mnist ? 1 : 3; }

// Seed purposes for derive_seed(root, purpose, index).
constexpr std::uint32_t kSeedSubsample = 1;
constexpr std::uint32_t kSeedPseudoLabels = 2;

/// Everything that determines a fitted model. Paths are deliberately not part
/// of it, so the same settings written to different files give equal bytes.
struct RunConfig {
  DatasetKind dataset = DatasetKind::mnist;
  std::string arch = "lenet5";  // lenet5 | modified_lenet5 | custom
  std::vector<ConvLayerSpec> custom_layers;
  std::vector<int> fc_widths{120, 84, 10};
  // Per hidden stage; an empty or missing entry means an even split.
  std::vector<std::vector<int>> clusters_per_class;
  KMeansInit init = KMeansInit::kmeanspp;
  std::uint64_t seed = 7;
  std::optional<std::size_t> sample_cap;
  std::optional<double> ridge;
  double delta_rel = 1e-4;
  int q_hidden = 32;
  int q_output = 16;

  static RunConfig defaults_for(DatasetKind d) {
    RunConfig c;
    c.dataset = d;
    if (d == DatasetKind::cifar10) {
      c.arch = "modified_lenet5";
      c.fc_widths = {200, 100, 10};
    }
    return c;
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline std::vector<ConvLayerSpec> layer_specs(const RunConfig& c) {
  if (c.arch == "lenet5") return lenet5_specs();
  if (c.arch == "modified_lenet5") return modified_lenet5_specs();
  if (c.arch == "custom") return c.custom_layers;
  throw Error(ErrorKind::config, detail::concat("unknown arch '", c.arch, "'"));
}

inline void validate(const RunConfig& c) {
  const auto specs = layer_specs(c);
  require(!specs.empty(), ErrorKind::config, "arch '", c.arch, "' has no layers");
  if (c.arch == "lenet5")
    require(c.dataset == DatasetKind::mnist, ErrorKind::config, "arch lenet5 takes 1-channel mnist input");
  if (c.arch == "modified_lenet5")
    require(c.dataset == DatasetKind::cifar10, ErrorKind::config,
            "arch modified_lenet5 takes 3-channel cifar10 input");
  shape_chain(Shape3{32, 32, dataset_channels(c.dataset)}, specs);
  require(!c.fc_widths.empty() && c.fc_widths.back() == 10, ErrorKind::config,
          "fc_widths must end with the 10 output classes");
  for (int w : c.fc_widths) require(w >= 1, ErrorKind::config, "fc widths must be positive");
  require(c.clusters_per_class.size() < c.fc_widths.size(), ErrorKind::config,
          "clusters_per_class given for ", c.clusters_per_class.size(), " stages but only ",
          c.fc_widths.size() - 1, " are hidden");
  for (std::size_t s = 0; s < c.clusters_per_class.size(); ++s) {
    const auto& v = c.clusters_per_class[s];
    if (v.empty()) continue;
    require(v.size() == 10, ErrorKind::config, "stage ", s, " clusters_per_class needs 10 entries");
    int total = 0;
    for (int q : v) {
      require(q >= 1, ErrorKind::config, "stage ", s, " has a class with ", q, " clusters");
      total += q;
    }
    require(total == c.fc_widths[s], ErrorKind::config, "stage ", s, " clusters sum to ", total,
            " but the stage width is ", c.fc_widths[s]);
  }
  require(!c.sample_cap || *c.sample_cap >= 1, ErrorKind::config, "sample_cap must be >= 1");
  require(!c.ridge || *c.ridge >= 0.0, ErrorKind::config, "ridge must be >= 0");
  require(c.delta_rel > 0.0, ErrorKind::config, "delta_rel must be > 0");
  require(c.q_hidden >= 1 && c.q_output >= 1, ErrorKind::config, "interval counts must be >= 1");
}

inline std::vector<PseudoLabelScheme> pseudo_label_schemes(const RunConfig& c) {
  std::vector<PseudoLabelScheme> out;
  for (std::size_t s = 0; s + 1 < c.fc_widths.size(); ++s) {
    const std::uint64_t seed = derive_seed(c.seed, kSeedPseudoLabels, static_cast<std::uint32_t>(s));
    if (s < c.clusters_per_class.size() && !c.clusters_per_class[s].empty())
      out.push_back(PseudoLabelScheme{c.clusters_per_class[s], c.init, seed});
    else
      out.push_back(PseudoLabelScheme::even(c.fc_widths.back(), c.fc_widths[s], c.init, seed));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON conversions

inline void to_json(json& j, const ConvLayerSpec& s) {
  j = json{{"window", {s.window.height, s.window.width}}, {"stride", s.stride},
           {"num_kernels", s.num_kernels}};
  j["use_bias"] = s.use_bias ? json(*s.use_bias) : json(nullptr);
  j["pool"] = s.pool ? json{{"size", s.pool->size}, {"stride", s.pool->stride}} : json(nullptr);
}

inline void from_json(const json& j, ConvLayerSpec& s) {
  s = ConvLayerSpec{};
  if (j.contains("window")) {
    const auto& w = j.at("window");
    s.window = w.is_array() ? Window{w.at(0).get<int>(), w.at(1).get<int>()}
                            : Window{w.get<int>(), w.get<int>()};
  }
  s.stride = j.value("stride", 1);
  s.num_kernels = j.at("num_kernels").get<int>();
  if (j.contains("use_bias") && !j.at("use_bias").is_null()) s.use_bias = j.at("use_bias").get<bool>();
  if (j.contains("pool")) {
    if (j.at("pool").is_null()) s.pool.reset();
    else s.pool = PoolSpec{j.at("pool").value("size", 2), j.at("pool").value("stride", 2)};
  }
}

inline json config_to_json(const RunConfig& c) {
  json j;
  j["dataset"] = std::string(to_string(c.dataset));
  j["arch"] = c.arch;
  j["custom_layers"] = c.custom_layers;
  j["fc_widths"] = c.fc_widths;
  j["clusters_per_class"] = c.clusters_per_class;
  j["init"] = std::string(to_string(c.init));
  j["seed"] = c.seed;
  j["sample_cap"] = c.sample_cap ? json(*c.sample_cap) : json(nullptr);
  j["ridge"] = c.ridge ? json(*c.ridge) : json(nullptr);
  j["delta_rel"] = c.delta_rel;
  j["q_hidden"] = c.q_hidden;
  j["q_output"] = c.q_output;
  return j;
}

/// Missing keys keep the dataset defaults.
inline RunConfig config_from_json(const json& j) {
  try {
    RunConfig c = RunConfig::defaults_for(parse_dataset(j.value("dataset", std::string("mnist"))));
    c.arch = j.value("arch", c.arch);
    if (j.contains("custom_layers")) c.custom_layers = j.at("custom_layers").get<std::vector<ConvLayerSpec>>();
    if (j.contains("fc_widths")) c.fc_widths = j.at("fc_widths").get<std::vector<int>>();
    if (j.contains("clusters_per_class"))
      c.clusters_per_class = j.at("clusters_per_class").get<std::vector<std::vector<int>>>();
    if (j.contains("init")) c.init = parse_kmeans_init(j.at("init").get<std::string>());
    c.seed = j.value("seed", c.seed);
    if (j.contains("sample_cap") && !j.at("sample_cap").is_null())
      c.sample_cap = j.at("sample_cap").get<std::size_t>();
    if (j.contains("ridge") && !j.at("ridge").is_null()) c.ridge = j.at("ridge").get<double>();
    c.delta_rel = j.value("delta_rel", c.delta_rel);
    c.q_hidden = j.value("q_hidden", c.q_hidden);
    c.q_output = j.value("q_output", c.q_output);
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, detail::concat("bad run config: ", e.what()));
  }
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// FNV-1a 64 of the compact, key-sorted JSON form of the config.
inline std::string config_hash(const RunConfig& c) {
  const std::string s = config_to_json(c).dump();
  return hex64(detail::fnv1a64(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

// ---------------------------------------------------------------------------
// Model

constexpr std::uint32_t kFormatVersion = 1;
constexpr char kModelMagic[8] = {'F', 'F', 'C', 'N', 'N', 'M', 'D', 'L'};

struct FfModel {
  RunConfig config;
  FeatureExtractor extractor;
  FcClassifier classifier;

  std::vector<Index> fc_parameter_counts() const {
    std::vector<Index> v;
    for (const auto& s : classifier.stages) v.push_back(s.parameter_count());
    return v;
  }
  /// Kernel weights plus one bias per kernel.
  std::vector<Index> conv_parameter_counts() const {
    std::vector<Index> v;
    for (const auto& l : extractor.layers) v.push_back(l.saab.kernels.size() + l.saab.num_kernels);
    return v;
  }
};

namespace detail {

struct ArrayWriter {
  json index = json::array();
  std::vector<unsigned char> payload;

  void add(const std::string& name, const MatrixXd& m) {
    // Row-major, shape [rows, cols].
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    push(name, {m.rows(), m.cols()}, rm.data(), static_cast<std::size_t>(rm.size()));
  }
  void add(const std::string& name, const VectorXd& v) {
    push(name, {v.size()}, v.data(), static_cast<std::size_t>(v.size()));
  }
  void add_scalar(const std::string& name, double x) { push(name, {1}, &x, 1); }

 private:
  void push(const std::string& name, std::vector<Index> shape, const double* data, std::size_t n) {
    const std::size_t nbytes = n * sizeof(double);
    index.push_back({{"name", name}, {"dtype", "f64"}, {"shape", shape}, {"offset", payload.size()},
                     {"nbytes", nbytes}});
    const auto* p = reinterpret_cast<const unsigned char*>(data);
    payload.insert(payload.end(), p, p + nbytes);
  }
};

struct ArrayReader {
  std::map<std::string, std::pair<std::vector<Index>, const double*>> arrays;

  ArrayReader(const json& index, std::span<const unsigned char> payload, std::vector<double>& storage) {
    std::size_t total = 0;
    for (const auto& a : index) total += a.at("nbytes").get<std::size_t>() / sizeof(double);
    storage.resize(total);
    std::size_t at = 0;
    for (const auto& a : index) {
      require(a.at("dtype") == "f64", ErrorKind::data, "unsupported array dtype ", a.at("dtype").dump());
      const auto off = a.at("offset").get<std::size_t>();
      const auto nbytes = a.at("nbytes").get<std::size_t>();
      const auto shape = a.at("shape").get<std::vector<Index>>();
      Index count = 1;
      for (Index s : shape) count *= s;
      require(static_cast<std::size_t>(count) * sizeof(double) == nbytes, ErrorKind::data, "array ",
              a.at("name").get<std::string>(), ": shape and byte size disagree");
      require(off + nbytes <= payload.size(), ErrorKind::data, "array ", a.at("name").get<std::string>(),
              " runs past the end of the file (offset ", off, ", ", nbytes, " bytes)");
      if (nbytes > 0) std::memcpy(storage.data() + at, payload.data() + off, nbytes);
      arrays[a.at("name").get<std::string>()] = {shape, storage.data() + at};
      at += nbytes / sizeof(double);
    }
  }

  const std::pair<std::vector<Index>, const double*>& get(const std::string& name) const {
    auto it = arrays.find(name);
    require(it != arrays.end(), ErrorKind::data, "model file lacks array '", name, "'");
    return it->second;
  }
  MatrixXd matrix(const std::string& name) const {
    const auto& [shape, p] = get(name);
    require(shape.size() == 2, ErrorKind::data, "array '", name, "' is not 2-D");
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        p, shape[0], shape[1]);
  }
  VectorXd vector(const std::string& name) const {
    const auto& [shape, p] = get(name);
    require(shape.size() == 1, ErrorKind::data, "array '", name, "' is not 1-D");
    return Eigen::Map<const VectorXd>(p, shape[0]);
  }
  double scalar(const std::string& name) const {
    const VectorXd v = vector(name);
    require(v.size() == 1, ErrorKind::data, "array '", name, "' is not a scalar");
    return v(0);
  }
};

inline json shape_json(const Shape3& s) { return {s.height, s.width, s.channels}; }

inline Shape3 shape_from_json(const json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

template <typename T>
T get_le(std::span<const unsigned char> in, std::size_t off) {
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  return v;
}

}  // namespace detail

inline std::vector<unsigned char> serialize(const FfModel& m) {
  detail::ArrayWriter arrays;
  json ex;
  ex["input_shape"] = detail::shape_json(m.extractor.input_shape);
  ex["drop_dc_at_output"] = m.extractor.drop_dc_at_output;
  ex["layers"] = json::array();
  for (std::size_t i = 0; i < m.extractor.layers.size(); ++i) {
    const FittedConvLayer& l = m.extractor.layers[i];
    const std::string p = "conv" + std::to_string(i) + ".";
    json lj = l.spec;
    lj["input_shape"] = detail::shape_json(l.input_shape);
    lj["input_dim"] = l.saab.input_dim;
    ex["layers"].push_back(lj);
    arrays.add(p + "kernels", l.saab.kernels);
    arrays.add(p + "energies", l.saab.energies);
    arrays.add_scalar(p + "bias", l.saab.bias);
    arrays.add_scalar(p + "max_norm", l.saab.max_training_norm);
  }
  json clf;
  clf["class_count"] = m.classifier.class_count;
  clf["stages"] = json::array();
  for (std::size_t i = 0; i < m.classifier.stages.size(); ++i) {
    const LsrStage& s = m.classifier.stages[i];
    json sj{{"n_in", s.n_in()}, {"n_out", s.n_out()}, {"rectify", s.rectify},
            {"diagnostics", {{"rank", s.diagnostics.rank},
                             {"rank_deficient", s.diagnostics.rank_deficient},
                             {"ridge", s.diagnostics.ridge}}}};
    sj["scheme"] = s.scheme ? json{{"clusters_per_class", s.scheme->clusters_per_class},
                                   {"init", std::string(to_string(s.scheme->init))},
                                   {"seed", s.scheme->seed}}
                            : json(nullptr);
    clf["stages"].push_back(sj);
    arrays.add("fc" + std::to_string(i) + ".weights", s.weights);
  }

  json header;
  header["format"] = "ffcnn-model";
  header["format_version"] = kFormatVersion;
  header["config"] = config_to_json(m.config);
  header["config_hash"] = config_hash(m.config);
  header["extractor"] = ex;
  header["classifier"] = clf;
  header["stats"] = {{"fc_parameters", m.fc_parameter_counts()},
                     {"conv_parameters", m.conv_parameter_counts()}};
  header["arrays"] = arrays.index;
  const std::string text = header.dump();

  std::vector<unsigned char> out(kModelMagic, kModelMagic + 8);
  detail::put_le<std::uint32_t>(out, kFormatVersion);
  detail::put_le<std::uint32_t>(out, 0);
  detail::put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.resize((out.size() + 7) / 8 * 8, 0);
  out.insert(out.end(), arrays.payload.begin(), arrays.payload.end());
  return out;
}

inline FfModel deserialize(std::span<const unsigned char> bytes) {
  require(bytes.size() >= 24 && std::memcmp(bytes.data(), kModelMagic, 8) == 0, ErrorKind::data,
          "not an ffcnn model file (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(bytes, 8);
  require(version == kFormatVersion, ErrorKind::config, "model format version ", version,
          " is not supported (this build reads version ", kFormatVersion, ")");
  const auto header_len = detail::get_le<std::uint64_t>(bytes, 16);
  require(24 + header_len <= bytes.size(), ErrorKind::data, "model header of ", header_len,
          " bytes runs past the end of the file");
  json header;
  try {
    header = json::parse(bytes.begin() + 24, bytes.begin() + 24 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::data, detail::concat("model header is not valid JSON: ", e.what()));
  }
  const std::size_t payload_at = (24 + header_len + 7) / 8 * 8;
  require(payload_at <= bytes.size(), ErrorKind::data, "model payload missing");

  try {
    FfModel m;
    m.config = config_from_json(header.at("config"));
    require(header.at("config_hash").get<std::string>() == config_hash(m.config), ErrorKind::data,
            "stored config hash ", header.at("config_hash").get<std::string>(),
            " does not match the embedded config (", config_hash(m.config), ")");
    std::vector<double> storage;
    detail::ArrayReader arrays(header.at("arrays"), bytes.subspan(payload_at), storage);

    const json& ex = header.at("extractor");
    m.extractor.input_shape = detail::shape_from_json(ex.at("input_shape"));
    m.extractor.drop_dc_at_output = ex.at("drop_dc_at_output").get<bool>();
    for (std::size_t i = 0; i < ex.at("layers").size(); ++i) {
      const json& lj = ex.at("layers").at(i);
      const std::string p = "conv" + std::to_string(i) + ".";
      FittedConvLayer l;
      l.spec = lj.get<ConvLayerSpec>();
      l.input_shape = detail::shape_from_json(lj.at("input_shape"));
      l.saab.kernels = arrays.matrix(p + "kernels");
      l.saab.energies = arrays.vector(p + "energies");
      l.saab.bias = arrays.scalar(p + "bias");
      l.saab.max_training_norm = arrays.scalar(p + "max_norm");
      l.saab.num_kernels = l.saab.kernels.rows();
      l.saab.input_dim = l.saab.kernels.cols();
      l.saab.use_bias = l.spec.use_bias.value_or(false);
      require(l.saab.input_dim == lj.at("input_dim").get<Index>() && l.saab.num_kernels == l.spec.num_kernels,
              ErrorKind::data, "conv layer ", i, ": kernel array shape disagrees with its spec");
      m.extractor.layers.push_back(std::move(l));
    }
    const json& clf = header.at("classifier");
    m.classifier.class_count = clf.at("class_count").get<int>();
    for (std::size_t i = 0; i < clf.at("stages").size(); ++i) {
      const json& sj = clf.at("stages").at(i);
      LsrStage s;
      s.weights = arrays.matrix("fc" + std::to_string(i) + ".weights");
      s.rectify = sj.at("rectify").get<bool>();
      s.diagnostics.rank = sj.at("diagnostics").at("rank").get<Index>();
      s.diagnostics.rank_deficient = sj.at("diagnostics").at("rank_deficient").get<bool>();
      s.diagnostics.ridge = sj.at("diagnostics").at("ridge").get<double>();
      if (!sj.at("scheme").is_null())
        s.scheme = PseudoLabelScheme{sj.at("scheme").at("clusters_per_class").get<std::vector<int>>(),
                                     parse_kmeans_init(sj.at("scheme").at("init").get<std::string>()),
                                     sj.at("scheme").at("seed").get<std::uint64_t>()};
      require(s.n_in() == sj.at("n_in").get<Index>() && s.n_out() == sj.at("n_out").get<Index>(),
              ErrorKind::data, "fc stage ", i, ": weight shape disagrees with header");
      m.classifier.stages.push_back(std::move(s));
    }
    const auto recorded = header.at("stats").at("fc_parameters").get<std::vector<Index>>();
    require(recorded == m.fc_parameter_counts(), ErrorKind::data,
            "recorded FC parameter counts do not match the stored matrices");
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::data, detail::concat("malformed model header: ", e.what()));
  }
}

inline void write_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::data, "cannot write ", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::data, "short write to ", path.string());
}

inline void write_model(const FfModel& m, const std::filesystem::path& path) {
  write_bytes(path, serialize(m));
}

inline FfModel read_model(const std::filesystem::path& path) {
  return deserialize(detail::read_file(path));
}

}  // namespace ffcnn
