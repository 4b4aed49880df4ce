// ovadet: command-line front end for splitting, training, prediction and evaluation.
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ovadet/commands.hpp"
#include "ovadet/errors.hpp"

namespace {

using nlohmann::json;
namespace cli = ovadet::cli;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

ovadet::RunConfig resolve_config(const GlobalOptions& g) {
  json doc = json::object();
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw ovadet::ConfigError("cannot read config " + g.config_path);
    doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ovadet::ConfigError("config " + g.config_path + " is not valid JSON");
  }
  for (const auto& o : g.overrides) ovadet::apply_override(doc, o);
  if (g.seed) doc["seed"] = *g.seed;
  return ovadet::run_config_from_json(doc);
}

void print_report(const ovadet::EvaluationReport& r) {
  auto fmt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("undefined"); };
  std::cout << "objects " << r.total_objects << ", matched " << r.matched << ", misdetections " << r.misdetections
            << " (" << r.misdetected_images << " of " << r.total_images << " images)\n"
            << "accuracy " << fmt(r.accuracy) << ", with misdetections " << fmt(r.accuracy_with_misdetections)
            << ", macro-F1 " << fmt(r.macro_f1) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parasite egg detection and classification pipeline"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the run seed");
  app.add_option("--set", g.overrides, "Override a config entry, e.g. --set detector.epochs=5");

  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset");
  std::string synth_spec;
  std::string synth_out;
  synth->add_option("--spec", synth_spec, "key = value generator settings")->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output directory (default: paths.dataset_root)");

  auto* split = app.add_subcommand("split", "Write train/val/test manifests");

  auto* train = app.add_subcommand("train", "Train the detector, the SVM, or both");
  std::string stage = "all";
  train->add_option("--stage", stage, "detector | svm | all")->check(CLI::IsMember({"detector", "svm", "all"}));

  auto* predict = app.add_subcommand("predict", "Run the fused pipeline over images");
  std::string predict_input;
  std::string predict_split;
  std::string predict_out;
  bool strict = false;
  predict->add_option("--input", predict_input, "Image file or directory");
  predict->add_option("--split", predict_split, "Split manifest to predict (default: test)");
  predict->add_option("--out", predict_out, "Predictions file");
  predict->add_flag("--strict", strict, "Exit 1 if any image failed");

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
  std::string eval_predictions;
  std::string eval_truth;
  std::string eval_split;
  std::string eval_out;
  evaluate->add_option("--predictions", eval_predictions, "Predictions file");
  evaluate->add_option("--ground-truth", eval_truth, "Annotation file (default: paths.annotations)");
  evaluate->add_option("--split", eval_split, "Restrict to a split manifest");
  evaluate->add_option("--out", eval_out, "Report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto opt_path = [](const std::string& s) -> std::optional<std::filesystem::path> {
    if (s.empty()) return std::nullopt;
    return std::filesystem::path(s);
  };
  auto opt_str = [](const std::string& s) -> std::optional<std::string> {
    if (s.empty()) return std::nullopt;
    return s;
  };

  try {
    const ovadet::RunConfig config = resolve_config(g);
    if (synth->parsed()) {
      const ovadet::SynthConfig sc = synth_spec.empty() ? ovadet::SynthConfig{} : ovadet::read_synth_config(synth_spec);
      const std::filesystem::path out =
          synth_out.empty() ? std::filesystem::path(config.paths.dataset_root) : std::filesystem::path(synth_out);
      cli::cmd_synth(sc, g.seed.value_or(sc.seed), out);
      std::cout << "wrote " << sc.per_class_count * ovadet::kNumClasses << " images to " << out.string() << '\n';
    } else if (split->parsed()) {
      const auto s = cli::cmd_split(config);
      std::cout << "train " << s.train << ", val " << s.val << ", test " << s.test << '\n';
    } else if (train->parsed()) {
      cli::cmd_train(config, cli::parse_stage(stage));
      std::cout << "training finished (" << stage << ")\n";
    } else if (predict->parsed()) {
      const auto set = cli::cmd_predict(config, {opt_path(predict_input), opt_str(predict_split), opt_path(predict_out)});
      std::cout << set.predictions.size() << " predictions over " << set.images.size() << " images, "
                << set.errors.size() << " errors\n";
      for (const auto& e : set.errors) std::cerr << "error: " << e.file << ": " << e.message << '\n';
      if (strict && !set.errors.empty()) return 1;
    } else if (evaluate->parsed()) {
      const auto report = cli::cmd_evaluate(
          config, {opt_path(eval_predictions), opt_path(eval_truth), opt_str(eval_split), opt_path(eval_out)});
      print_report(report);
    }
  } catch (const ovadet::ItemizedError& e) {
    std::cerr << "error: " << e.what() << '\n';
    for (const auto& item : e.items()) std::cerr << "  - " << item << '\n';
    return 2;
  } catch (const ovadet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ovadet::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
