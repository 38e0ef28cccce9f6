#pragma once

// Command implementations shared by the CLI and the acceptance suite.

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "ffcnn/analysis.hpp"
#include "ffcnn/model.hpp"

namespace ffcnn::app {

/// Explicit flag, then $FFCNN_DATA_ROOT, then ./data.
inline std::filesystem::path resolve_data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("FFCNN_DATA_ROOT"); env && *env) return env;
  return "data";
}

/// Expects <root>/mnist/*-ubyte or <root>/cifar10/*.bin.
inline LabeledImageSet load_dataset(DatasetKind kind, const std::filesystem::path& root, Split split) {
  return kind == DatasetKind::mnist ? load_mnist(root / "mnist", split) : load_cifar10(root / "cifar10", split);
}

inline FeatureExtractor fit_extractor_for(const RunConfig& cfg, const LabeledImageSet& train) {
  validate(cfg);
  require(train.shape.channels == dataset_channels(cfg.dataset), ErrorKind::data, "dataset '", train.name,
          "' has ", train.shape.channels, " channels");
  return fit_extractor(train.images, layer_specs(cfg),
                       ExtractorFitOptions{cfg.sample_cap, derive_seed(cfg.seed, kSeedSubsample, 0),
                                           cfg.delta_rel, true});
}

inline FcClassifier fit_classifier_for(const RunConfig& cfg, const MatrixXd& features,
                                       const std::vector<int>& labels) {
  return fit_classifier(features, labels,
                        ClassifierFitOptions{cfg.fc_widths, pseudo_label_schemes(cfg), cfg.ridge});
}

inline FfModel fit_model(const RunConfig& cfg, const LabeledImageSet& train) {
  FfModel m;
  m.config = cfg;
  m.extractor = fit_extractor_for(cfg, train);
  m.classifier = fit_classifier_for(cfg, extract_features(m.extractor, train.images), train.labels);
  return m;
}

struct EvalReport {
  std::string dataset;
  std::string split;
  double accuracy = 0.0;
  std::int64_t n_samples = 0;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]

  json to_json() const {
    return {{"dataset", dataset}, {"split", split}, {"accuracy", accuracy}, {"n_samples", n_samples},
            {"confusion_matrix", confusion}};
  }
};

inline EvalReport evaluate_features(const FcClassifier& clf, const MatrixXd& features,
                                    const std::vector<int>& labels) {
  const std::vector<int> pred = predict_labels(clf, features);
  EvalReport r;
  r.n_samples = static_cast<std::int64_t>(labels.size());
  r.confusion.assign(static_cast<std::size_t>(clf.class_count),
                     std::vector<std::int64_t>(static_cast<std::size_t>(clf.class_count), 0));
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred[i])];
    correct += pred[i] == labels[i];
  }
  r.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  return r;
}

inline EvalReport evaluate(const FfModel& m, const LabeledImageSet& data, Split split) {
  EvalReport r = evaluate_features(m.classifier, extract_features(m.extractor, data.images), data.labels);
  r.dataset = std::string(to_string(m.config.dataset));
  r.split = std::string(to_string(split));
  return r;
}

inline void write_json(const json& j, const std::filesystem::path& path) {
  const std::string s = j.dump(2) + "\n";
  write_bytes(path, std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

// ---------------------------------------------------------------------------
// Commands

inline FfModel cmd_fit(const RunConfig& cfg, const std::filesystem::path& data_root,
                       const std::filesystem::path& out) {
  validate(cfg);
  const LabeledImageSet train = load_dataset(cfg.dataset, data_root, Split::train);
  FfModel m = fit_model(cfg, train);
  write_model(m, out);
  log::info("wrote ", out.string(), " (config ", config_hash(cfg), ")");
  return m;
}

inline EvalReport cmd_eval(const std::filesystem::path& model_path, Split split,
                           const std::filesystem::path& data_root, const std::filesystem::path& report_path) {
  const FfModel m = read_model(model_path);
  const EvalReport r = evaluate(m, load_dataset(m.config.dataset, data_root, split), split);
  if (!report_path.empty()) write_json(r.to_json(), report_path);
  return r;
}

/// Writes <out_dir>/<space>.csv for each profiled space plus summary.json.
inline std::vector<CrossEntropyProfile> cmd_profile(const std::filesystem::path& model_path, Split split,
                                                    const std::filesystem::path& data_root,
                                                    const std::filesystem::path& out_dir,
                                                    std::optional<int> q = std::nullopt) {
  const FfModel m = read_model(model_path);
  const LabeledImageSet data = load_dataset(m.config.dataset, data_root, split);
  ProfileOptions opts{q.value_or(m.config.q_hidden), q.value_or(m.config.q_output), m.config.seed};
  auto profiles = profile_report(m.extractor, m.classifier, data, opts);
  std::filesystem::create_directories(out_dir);
  for (const auto& p : profiles) write_profile_csv(p, out_dir / (p.space_name + ".csv"));
  write_json(profile_summary(profiles), out_dir / "summary.json");
  return profiles;
}

struct VariantSpec {
  std::string name;
  KMeansInit init = KMeansInit::kmeanspp;
  std::vector<int> stage1_clusters;  // empty: even split
};

/// ff1: k-means++; ff2: random init; ff3: classes 0-4 at 13 clusters and
/// 5-9 at 11 in the first hidden stage, k-means++.
inline VariantSpec builtin_variant(std::string_view name) {
  if (name == "ff1") return {"ff1", KMeansInit::kmeanspp, {}};
  if (name == "ff2") return {"ff2", KMeansInit::random, {}};
  if (name == "ff3") return {"ff3", KMeansInit::kmeanspp, {13, 13, 13, 13, 13, 11, 11, 11, 11, 11}};
  throw Error(ErrorKind::config, detail::concat("unknown variant '", name, "' (expected ff1|ff2|ff3)"));
}

inline RunConfig variant_config(RunConfig cfg, const VariantSpec& v) {
  cfg.init = v.init;
  if (!v.stage1_clusters.empty()) {
    if (cfg.clusters_per_class.empty()) cfg.clusters_per_class.resize(1);
    cfg.clusters_per_class[0] = v.stage1_clusters;
  }
  validate(cfg);
  return cfg;
}

/// Fits one extractor and one classifier per variant on the shared features.
inline std::vector<FfModel> fit_variants(const RunConfig& base, const LabeledImageSet& train,
                                         const std::vector<VariantSpec>& variants) {
  require(!variants.empty(), ErrorKind::config, "no variants requested");
  std::vector<RunConfig> configs;
  for (const auto& v : variants) configs.push_back(variant_config(base, v));
  const FeatureExtractor ex = fit_extractor_for(base, train);
  const MatrixXd features = extract_features(ex, train.images);
  std::vector<FfModel> out;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    log::info("fitting variant ", variants[i].name);
    out.push_back(FfModel{configs[i], ex, fit_classifier_for(configs[i], features, train.labels)});
  }
  return out;
}

inline std::vector<std::filesystem::path> cmd_variants(const RunConfig& base, const std::vector<VariantSpec>& variants,
                                                       const std::filesystem::path& data_root,
                                                       const std::filesystem::path& out_dir) {
  validate(base);
  const LabeledImageSet train = load_dataset(base.dataset, data_root, Split::train);
  const std::vector<FfModel> models = fit_variants(base, train, variants);
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < models.size(); ++i) {
    paths.push_back(out_dir / (variants[i].name + ".ffm"));
    write_model(models[i], paths.back());
  }
  return paths;
}

}  // namespace ffcnn::app
