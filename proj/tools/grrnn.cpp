// Command-line front end: corpus generation, training, evaluation, and
// architecture inspection as subcommands over the header-only library.
#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "grrnn/accounting.hpp"
#include "grrnn/checkpoint.hpp"
#include "grrnn/datagen.hpp"
#include "grrnn/dataset.hpp"
#include "grrnn/evaluation.hpp"
#include "grrnn/model.hpp"
#include "grrnn/training.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct GenArgs {
  std::size_t writers = 0;
  std::size_t words = 0;
  std::uint64_t seed = 0;
  std::string out;
};

struct TrainArgs {
  std::string manifest;
  std::string out;
  std::string variant = "fgrr";
  std::string axis = "horizontal";
  std::string mode = "gray";
  double width = 1.0;
  std::size_t epochs = 50;
  std::size_t batch = 16;
  double lr = 1e-4;
  double decay = 1e-4;
  std::size_t halve = 10;
  double label_eps = 0.1;
  std::uint64_t seed = 0;
  bool no_augment = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  std::string protocol = "all";
  std::string split = "test";
  std::string variant;  // optional cross-check against the checkpoint
  std::string writer_mean = "normalized";
  std::size_t batch = 32;
};

struct InspectArgs {
  std::size_t writers = 0;
  double width = 1.0;
  std::string variant;  // empty = all six
};

std::vector<std::pair<std::string, std::string>> train_config_rows(const TrainArgs& a) {
  return {{"manifest", a.manifest},
          {"out", a.out},
          {"variant", a.variant},
          {"axis", a.axis},
          {"mode", a.mode},
          {"width", grrnn::format_metric(a.width)},
          {"epochs", std::to_string(a.epochs)},
          {"batch", std::to_string(a.batch)},
          {"lr", grrnn::format_metric(a.lr)},
          {"decay", grrnn::format_metric(a.decay)},
          {"halve", std::to_string(a.halve)},
          {"label_eps", grrnn::format_metric(a.label_eps)},
          {"seed", std::to_string(a.seed)},
          {"augment", a.no_augment ? "0" : "1"}};
}

int run_gen(const GenArgs& a) {
  const auto res = grrnn::generate_corpus(a.writers, a.words, a.seed, a.out);
  std::cout << "wrote " << (res.n_train + res.n_test) << " images ("
            << res.n_train << " train / " << res.n_test << " test)\n"
            << "manifest: " << res.manifest_path << "\n";
  return kExitOk;
}

int run_train(const TrainArgs& a) {
  const auto rows = train_config_rows(a);
  for (const auto& [k, v] : rows) std::cout << k << "=" << v << "\n";

  grrnn::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch = a.batch;
  cfg.lr = a.lr;
  cfg.halve_every = a.halve;
  cfg.weight_decay = a.decay;
  cfg.label_eps = a.label_eps;
  cfg.seed = a.seed;
  cfg.augment = !a.no_augment;
  cfg.mode = grrnn::parse_image_mode(a.mode);
  const grrnn::Variant variant = grrnn::parse_variant(a.variant);
  const grrnn::Axis axis = grrnn::parse_axis(a.axis);

  fs::create_directories(a.out);
  {
    std::ofstream cfg_out(fs::path(a.out) / "config.txt");
    if (!cfg_out) throw grrnn::IoError("cannot write config into '" + a.out + "'");
    cfg_out << "# effective configuration\n";
    for (const auto& [k, v] : rows) cfg_out << k << "=" << v << "\n";
  }

  auto ds = grrnn::load_dataset<float>(a.manifest, cfg.mode);
  std::cout << "dataset: " << ds.train.size() << " train / " << ds.test.size()
            << " test images, " << ds.n_writers() << " writers\n";

  grrnn::ModelSpec spec{variant, axis, a.width, ds.n_writers()};
  grrnn::GrrnnModel<float> model(spec);
  model.init(a.seed);

  const auto stats = grrnn::train_model(model, ds.train, cfg, &std::cout);
  grrnn::write_metrics_csv((fs::path(a.out) / "metrics.csv").string(), stats);

  grrnn::CheckpointMeta meta;
  meta.variant = variant;
  meta.axis = axis;
  meta.mode = cfg.mode;
  meta.width = a.width;
  meta.n_writers = ds.n_writers();
  meta.seed = a.seed;
  grrnn::save_checkpoint((fs::path(a.out) / "model.ckpt").string(), model, meta);

  std::cout << "final train top-1: " << grrnn::format_metric(stats.back().train_top1)
            << "\ncheckpoint: " << (fs::path(a.out) / "model.ckpt").string() << "\n";
  return kExitOk;
}

int run_eval(const EvalArgs& a) {
  if (a.protocol != "all" && a.protocol != "word" && a.protocol != "line" &&
      a.protocol != "page" && a.protocol != "feature")
    throw grrnn::ConfigError("unknown protocol '" + a.protocol +
                             "' (expected word|line|page|feature|all)");
  if (a.split != "train" && a.split != "test")
    throw grrnn::ConfigError("unknown split '" + a.split + "' (expected train|test)");
  if (a.writer_mean != "normalized" && a.writer_mean != "raw")
    throw grrnn::ConfigError("unknown writer-mean '" + a.writer_mean +
                             "' (expected normalized|raw)");

  auto ck = grrnn::load_checkpoint<float>(a.checkpoint);
  if (!a.variant.empty() && grrnn::parse_variant(a.variant) != ck.meta.variant)
    throw grrnn::DataError(std::string("checkpoint variant is '") +
                           grrnn::variant_name(ck.meta.variant) +
                           "', not '" + a.variant + "'");

  auto ds = grrnn::load_dataset<float>(a.manifest, ck.meta.mode);
  if (ds.n_writers() != ck.meta.n_writers)
    throw grrnn::DataError("checkpoint expects " +
                           std::to_string(ck.meta.n_writers) + " writers, manifest has " +
                           std::to_string(ds.n_writers()));
  const auto& samples = a.split == "train" ? ds.train : ds.test;
  if (samples.empty()) throw grrnn::DataError("split '" + a.split + "' is empty");

  const std::string variant = grrnn::variant_name(ck.meta.variant);
  const std::string axis = grrnn::axis_name(ck.meta.axis);
  const std::string mode = grrnn::mode_name(ck.meta.mode);

  const bool want_all = a.protocol == "all";
  auto wants = [&](const char* p) { return want_all || a.protocol == p; };

  std::vector<grrnn::ResultRow> results;
  std::vector<std::pair<std::string, std::vector<grrnn::WriterAccuracy>>> per_writer;

  if (wants("word") || wants("line") || wants("page")) {
    const auto records = grrnn::evaluate_classification(ck.model, samples, a.batch);
    auto add = [&](const char* name, const std::vector<grrnn::PredictionRecord>& recs) {
      results.push_back({name, variant, axis, mode, grrnn::topk_accuracy(recs, 1),
                         grrnn::topk_accuracy(recs, 5)});
      per_writer.emplace_back(name, grrnn::per_writer_accuracy(recs));
    };
    if (wants("word")) add("word", records);
    if (wants("line")) add("line", grrnn::aggregate_by_line(records));
    if (wants("page")) add("page", grrnn::aggregate_by_page(records));
  }
  if (wants("feature")) {
    if (ds.train.empty())
      throw grrnn::DataError("feature protocol needs a training split for writer models");
    const auto kind = a.writer_mean == "raw" ? grrnn::WriterMean::kRawMean
                                             : grrnn::WriterMean::kNormalizedThenMean;
    const auto fr = grrnn::evaluate_feature_protocol(ck.model, ds.train, samples, kind,
                                                     a.batch);
    results.push_back({"feature", variant, axis, mode, fr.top1, fr.top5});
    per_writer.emplace_back("feature", fr.per_writer);
  }

  fs::create_directories(a.out);
  const std::string results_path = (fs::path(a.out) / "results.csv").string();
  grrnn::write_results_csv(results_path, results);
  grrnn::write_per_writer_csv((fs::path(a.out) / "per_writer.csv").string(), per_writer);

  std::cout << grrnn::kResultsHeader << "\n";
  for (const auto& r : results)
    std::cout << r.protocol << "," << r.variant << "," << r.axis << "," << r.mode << ","
              << grrnn::format_metric(r.top1) << "," << grrnn::format_metric(r.top5)
              << "\n";
  std::cout << "results: " << results_path << "\n";
  return kExitOk;
}

void print_inspect_row(grrnn::Variant v, std::size_t writers, double width) {
  const auto params = grrnn::count_params(v, writers, width);
  const auto flops = grrnn::count_flops(v, width);
  std::printf("%-9s params=%llu (%.2fM)  flops=%llu (%.2fG MAC)\n",
              grrnn::variant_name(v), static_cast<unsigned long long>(params),
              static_cast<double>(params) / 1e6,
              static_cast<unsigned long long>(flops),
              static_cast<double>(flops) / 1e9);
}

int run_inspect(const InspectArgs& a) {
  std::printf("writers=%zu width=%s\n", a.writers,
              grrnn::format_metric(a.width).c_str());
  if (!a.variant.empty()) {
    print_inspect_row(grrnn::parse_variant(a.variant), a.writers, a.width);
    return kExitOk;
  }
  for (auto v : {grrnn::Variant::kBaseline, grrnn::Variant::kF, grrnn::Variant::kFR,
                 grrnn::Variant::kFRR, grrnn::Variant::kFGR, grrnn::Variant::kFGRR})
    print_inspect_row(v, a.writers, a.width);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Writer-identification pipeline: synthetic corpus generation, "
               "training, evaluation, and architecture inspection"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Plain key=value config file (# comments); "
                                 "command-line flags take precedence");

  GenArgs gen;
  auto* cgen = app.add_subcommand("gen", "Generate a deterministic synthetic corpus");
  cgen->add_option("--writers", gen.writers, "Number of writers")->required();
  cgen->add_option("--words", gen.words, "Words per writer")->required();
  cgen->add_option("--seed", gen.seed, "Master seed");
  cgen->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs train;
  auto* ctrain = app.add_subcommand("train", "Train a model on a manifest");
  ctrain->add_option("--manifest", train.manifest, "Dataset manifest TSV")->required();
  ctrain->add_option("--out", train.out, "Output directory")->required();
  ctrain->add_option("--variant", train.variant,
                     "baseline|f|fr|frr|fgr|fgrr (default fgrr)");
  ctrain->add_option("--axis", train.axis, "horizontal|vertical");
  ctrain->add_option("--mode", train.mode, "gray|binary|contour");
  ctrain->add_option("--width", train.width, "Channel width multiplier");
  ctrain->add_option("--epochs", train.epochs, "Training epochs");
  ctrain->add_option("--batch", train.batch, "Mini-batch size");
  ctrain->add_option("--lr", train.lr, "Initial learning rate");
  ctrain->add_option("--decay", train.decay, "Weight decay");
  ctrain->add_option("--halve", train.halve, "Halve the learning rate every N epochs");
  ctrain->add_option("--label-eps", train.label_eps, "Label smoothing rate");
  ctrain->add_option("--seed", train.seed, "Run seed");
  ctrain->add_flag("--no-augment", train.no_augment, "Disable translation augmentation");

  EvalArgs eval;
  auto* ceval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  ceval->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  ceval->add_option("--manifest", eval.manifest, "Dataset manifest TSV")->required();
  ceval->add_option("--out", eval.out, "Output directory")->required();
  ceval->add_option("--protocol", eval.protocol, "word|line|page|feature|all");
  ceval->add_option("--split", eval.split, "test|train (default test)");
  ceval->add_option("--variant", eval.variant, "Expected variant (cross-check)");
  ceval->add_option("--writer-mean", eval.writer_mean,
                    "normalized|raw writer-model averaging");
  ceval->add_option("--batch", eval.batch, "Evaluation batch size");

  InspectArgs inspect;
  auto* cinspect = app.add_subcommand("inspect", "Report parameter and FLOP counts");
  cinspect->add_option("--writers", inspect.writers, "Number of writers")->required();
  cinspect->add_option("--width", inspect.width, "Channel width multiplier");
  cinspect->add_option("--variant", inspect.variant, "Restrict to one variant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return kExitUsage;
  }

  try {
    if (cgen->parsed()) return run_gen(gen);
    if (ctrain->parsed()) return run_train(train);
    if (ceval->parsed()) return run_eval(eval);
    return run_inspect(inspect);
  } catch (const grrnn::ConfigError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
