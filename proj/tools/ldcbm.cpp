// ldcbm: generate synthetic data, train, evaluate and probe concept bottleneck models.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ldcbm/config.hpp"
#include "ldcbm/error.hpp"
#include "ldcbm/evaluation.hpp"
#include "ldcbm/io_util.hpp"
#include "ldcbm/model.hpp"
#include "ldcbm/synth_data.hpp"
#include "ldcbm/trainer.hpp"

namespace fs = std::filesystem;
using namespace ldcbm;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

std::vector<double> parse_rates(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("--rates: cannot parse \"" + item + "\"");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--rates: empty list");
  return out;
}

std::vector<InterventionMode> parse_modes(const std::string& text) {
  std::vector<InterventionMode> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_mode(item));
  if (out.empty()) throw ConfigError("--modes: empty list");
  return out;
}

void print_splits(const DatasetBundle& bundle) {
  std::cout << "train " << bundle.train.count << "\nval " << bundle.val.count << "\ntest "
            << bundle.test.count << "\n";
}

int cmd_gen_data(const std::string& spec_path, const std::string& out) {
  const DatasetSpec spec = load_dataset_spec(spec_path);
  const DatasetBundle bundle = generate(spec);
  save_dataset(bundle, out);
  io::write_text(fs::path(out) / "labels_train.csv", labels_csv(bundle.train, spec.concepts));
  print_splits(bundle);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out) {
  const RunConfig config = load_run_config(config_path);
  const DatasetBundle data = load_dataset(data_dir);
  fs::create_directories(out);
  const fs::path dir(out);
  io::write_text(dir / "resolved_config.json", to_json(config).dump(2) + "\n");

  TrainHooks hooks;
  hooks.on_checkpoint = [&](const Model& model, std::size_t epoch) {
    save_model(dir / ("checkpoint_epoch" + std::to_string(epoch) + ".json"), model, {{"epoch", epoch}});
  };
  hooks.on_epoch = [](const EpochMetrics& m) {
    std::fprintf(stderr, "epoch %zu mean l_total %.6f val c_acc %.4f val a_acc %.4f\n", m.epoch,
                 m.mean_total, m.val_c_acc, m.val_a_acc);
  };
  TrainResult result;
  try {
    result = train(config.train, data, hooks);
  } catch (const TrainingDiverged& e) {
    const auto& l = e.record().loss;
    std::cerr << "error: " << e.what() << "\n"
              << "step,epoch,l_y,l_c,l_g,lambda_c,lambda_g,l_total\n"
              << e.record().step << "," << e.record().epoch << "," << io::format_double(l.l_y) << ","
              << io::format_double(l.l_c) << "," << io::format_double(l.l_g) << ","
              << io::format_double(l.lambda_c) << "," << io::format_double(l.lambda_g) << ","
              << io::format_double(l.l_total) << "\n";
    return kExitNumeric;
  }
  save_model(dir / "checkpoint.json", result.model, {{"epoch", config.train.epochs}});
  io::write_text(dir / "train_log.csv", train_log_csv(result.log));
  io::write_text(dir / "run_summary.json", run_summary(config.train, result.log).dump(2) + "\n");
  const MetricsReport test = evaluate(result.model, data, data.test);
  std::cout << "epochs " << config.train.epochs << "\nsteps " << result.log.steps.size()
            << "\nreclusters " << result.log.reclusters.size() << "\ntest c_acc "
            << io::format_double(test.c_acc) << "\ntest a_acc " << io::format_double(test.a_acc) << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
             std::string out) {
  const Model model = load_model(checkpoint);
  const DatasetBundle data = load_dataset(data_dir);
  const MetricsReport report = evaluate(model, data, data.split(split));
  const std::string text = to_json(report).dump(2) + "\n";
  if (out.empty()) out = (fs::path(checkpoint).parent_path() / ("metrics_" + split + ".json")).string();
  io::write_text(out, text);
  std::cout << text;
  return 0;
}

int cmd_intervene(const std::string& checkpoint, const std::string& data_dir, EvalOptions options,
                  const std::string& out, const std::string& svg) {
  const Model model = load_model(checkpoint);
  const DatasetBundle data = load_dataset(data_dir);
  const auto curve = intervention_curve(model, data, options);
  io::write_text(out, curve_csv(curve));
  if (!svg.empty()) io::write_text(svg, curve_svg(curve));
  std::cout << curve_csv(curve);
  return 0;
}

int cmd_export(const std::string& checkpoint, const std::string& data_dir, const std::string& out,
               std::size_t reference, std::uint64_t seed) {
  const Model model = load_model(checkpoint);
  const DatasetBundle data = load_dataset(data_dir);
  io::write_text(out, export_cluster_embeddings(model, data, reference, seed));
  std::cout << model.assignment.filters() << " filters written to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept bottleneck models with grouped, disentangled filters"};
  app.require_subcommand(1);

  std::string spec_path, out, config_path, data_dir, checkpoint, split = "test", svg;
  std::string rates_text, modes_text, unit_text;
  std::size_t repetitions = 0, reference = 128;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset bundle");
  gen->add_option("--spec", spec_path, "Dataset spec JSON (data section or full run config)");
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config_path, "Run config JSON (defaults when omitted)");
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out, "Run directory")->required();

  auto* ev = app.add_subcommand("eval", "Report concept and class accuracy");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint manifest")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", out, "Metrics JSON path");

  auto* iv = app.add_subcommand("intervene", "Sweep concept interventions");
  iv->add_option("--checkpoint", checkpoint, "Checkpoint manifest")->required();
  iv->add_option("--data", data_dir, "Dataset directory")->required();
  iv->add_option("--config", config_path, "Run config JSON supplying eval defaults");
  iv->add_option("--rates", rates_text, "Comma-separated rates in [0,1]");
  iv->add_option("--modes", modes_text, "Comma-separated modes: correct, incorrect");
  iv->add_option("--unit", unit_text, "concept or group");
  iv->add_option("--repetitions", repetitions, "Repetitions per rate");
  iv->add_option("--seed", seed, "Selection seed");
  iv->add_option("--out", out, "Curve CSV path")->required();
  iv->add_option("--svg", svg, "Optional SVG chart path");

  auto* ex = app.add_subcommand("export-clusters", "Write filter responses with group ids");
  ex->add_option("--checkpoint", checkpoint, "Checkpoint manifest")->required();
  ex->add_option("--data", data_dir, "Dataset directory")->required();
  ex->add_option("--out", out, "CSV path")->required();
  ex->add_option("--reference", reference, "Number of test samples");
  ex->add_option("--seed", seed, "Reference sample seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(spec_path, out);
    if (*tr) return cmd_train(config_path, data_dir, out);
    if (*ev) return cmd_eval(checkpoint, data_dir, split, out);
    if (*iv) {
      EvalOptions options = load_run_config(config_path).eval;
      if (!rates_text.empty()) options.rates = parse_rates(rates_text);
      if (!modes_text.empty()) options.modes = parse_modes(modes_text);
      if (!unit_text.empty()) options.unit = parse_unit(unit_text);
      if (repetitions > 0) options.repetitions = repetitions;
      if (iv->count("--seed") > 0) options.seed = seed;
      options.validate();
      return cmd_intervene(checkpoint, data_dir, options, out, svg);
    }
    if (*ex) {
      if (reference < 2) throw ConfigError("--reference must be >= 2");
      return cmd_export(checkpoint, data_dir, out, reference, seed);
    }
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ClusteringError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
