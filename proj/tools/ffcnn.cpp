// ffcnn: fit, evaluate, profile and build variants of feedforward-designed
// convolutional classifiers.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "ffcnn/app.hpp"

namespace {

using namespace ffcnn;

struct ConfigFlags {
  std::string config_file;
  std::string dataset;
  std::string arch;
  std::vector<int> fc_widths;
  std::string init;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> sample_cap;
  std::optional<double> ridge;
  std::optional<double> delta_rel;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON run configuration");
    cmd->add_option("--dataset", dataset, "mnist | cifar10");
    cmd->add_option("--arch", arch, "lenet5 | modified_lenet5 | custom");
    cmd->add_option("--fc-widths", fc_widths, "FC stage widths, last must be 10")->delimiter(',');
    cmd->add_option("--init", init, "k-means init: kmeanspp | random");
    cmd->add_option("--seed", seed, "root seed");
    cmd->add_option("--sample-cap", sample_cap, "images used for conv covariance fitting");
    cmd->add_option("--ridge", ridge, "LSR ridge (default 1e-8 * trace/(n+1))");
    cmd->add_option("--delta-rel", delta_rel, "relative bias margin");
  }

  RunConfig build() const {
    RunConfig cfg;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      require(static_cast<bool>(in), ErrorKind::config, "cannot open config ", config_file);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw Error(ErrorKind::config, detail::concat(config_file, ": ", e.what()));
      }
      if (!dataset.empty()) j["dataset"] = dataset;
      cfg = config_from_json(j);
    } else if (!dataset.empty()) {
      cfg = RunConfig::defaults_for(parse_dataset(dataset));
    }
    if (!arch.empty()) cfg.arch = arch;
    if (!fc_widths.empty()) cfg.fc_widths = fc_widths;
    if (!init.empty()) cfg.init = parse_kmeans_init(init);
    if (seed) cfg.seed = *seed;
    if (sample_cap) cfg.sample_cap = *sample_cap;
    if (ridge) cfg.ridge = *ridge;
    if (delta_rel) cfg.delta_rel = *delta_rel;
    validate(cfg);
    return cfg;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feedforward-designed CNN classifiers"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string data_dir;
  bool quiet = false;
  app.add_option("--data-dir", data_dir, "dataset root (default $FFCNN_DATA_ROOT or ./data)");
  app.add_flag("-q,--quiet", quiet, "suppress info logging");

  ConfigFlags fit_flags;
  std::string fit_out = "model.ffm";
  auto* fit = app.add_subcommand("fit", "fit a model and write it to a .ffm file");
  fit_flags.attach(fit);
  fit->add_option("-o,--output", fit_out, "model path");

  std::string eval_model, eval_split = "test", eval_report;
  auto* eval = app.add_subcommand("eval", "report accuracy and the confusion matrix");
  eval->add_option("model", eval_model, "model file")->required();
  eval->add_option("--split", eval_split, "train | test");
  eval->add_option("--report", eval_report, "write the JSON report here");

  std::string prof_model, prof_split = "train", prof_out = "profile";
  std::optional<int> prof_q;
  auto* profile = app.add_subcommand("profile", "per-dimension cross-entropy of each layer space");
  profile->add_option("model", prof_model, "model file")->required();
  profile->add_option("--split", prof_split, "train | test");
  profile->add_option("-Q,--intervals", prof_q, "interval count for every space");
  profile->add_option("--out-dir", prof_out, "directory for CSVs and summary.json");

  ConfigFlags var_flags;
  std::string var_list = "ff1,ff2,ff3", var_out = "variants";
  auto* variants = app.add_subcommand("variants", "fit FC variants over one shared extractor");
  var_flags.attach(variants);
  variants->add_option("--variants", var_list, "comma-separated: ff1,ff2,ff3");
  variants->add_option("--out-dir", var_out, "directory for <name>.ffm");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (quiet) log::set_sink([](log::Level level, const std::string& msg) {
    if (level == log::Level::warn) std::cerr << "[warn] " << msg << '\n';
  });

  try {
    const auto root = app::resolve_data_root(data_dir);
    if (*fit) {
      const FfModel m = app::cmd_fit(fit_flags.build(), root, fit_out);
      json counts = m.fc_parameter_counts();
      std::cout << json{{"model", fit_out}, {"config_hash", config_hash(m.config)}, {"fc_parameters", counts}}.dump()
                << '\n';
    } else if (*eval) {
      const auto r = app::cmd_eval(eval_model, parse_split(eval_split), root, eval_report);
      std::cout << r.to_json().dump() << '\n';
    } else if (*profile) {
      const auto profiles = app::cmd_profile(prof_model, parse_split(prof_split), root, prof_out, prof_q);
      std::cout << profile_summary(profiles).dump() << '\n';
    } else if (*variants) {
      std::vector<app::VariantSpec> specs;
      for (const auto& name : split_list(var_list)) specs.push_back(app::builtin_variant(name));
      const auto paths = app::cmd_variants(var_flags.build(), specs, root, var_out);
      for (const auto& p : paths) std::cout << p.string() << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
