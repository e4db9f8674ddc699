// mmnas: command-line front end for the search workflow.
//
// Exit codes: 0 success, 1 usage, 2 data or format error, 3 runtime failure.
// Errors are printed as one line prefixed "error:".

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "json_config.hpp"
#include "mmnas/data.hpp"
#include "mmnas/network.hpp"
#include "mmnas/param_store.hpp"
#include "mmnas/report.hpp"
#include "mmnas/search.hpp"
#include "mmnas/search_space.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

// Anything the user handed us that we could not read or did not parse.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << bytes;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Accepts either a bare architecture or a run record (uses its best spec).
mmnas::ArchitectureSpec load_arch(const fs::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": malformed JSON at byte " + std::to_string(e.byte));
  }
  try {
    if (j.is_object() && j.contains("best_spec")) {
      const auto rec = mmnas::run_record_from_json(text);
      if (!rec.best) throw InputError(path.string() + ": run record has no best architecture");
      return *rec.best;
    }
    return mmnas::deserialize(text);
  } catch (const mmnas::SpecParseError& e) {
    throw InputError(path.string() + ": " + e.what());
  } catch (const InputError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

mmnas::RunRecord load_run(const fs::path& path) {
  try {
    return mmnas::run_record_from_json(read_file(path));
  } catch (const InputError&) {
    throw;
  } catch (const std::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

mmnas::ParamStore load_store(const fs::path& path) {
  try {
    return mmnas::ParamStore::restore(read_file(path));
  } catch (const mmnas::SnapshotError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

struct SpaceFlags {
  int layers = 5;
  int fusion_depth = 3;
  std::vector<int> repeats{3, 3};
  double skip_p = 0.5;
  int width = 16;
  int fusion_width = 64;
  int num_classes = 16;

  void attach(CLI::App* app, bool with_classes) {
    app->add_option("--layers", layers, "layers per cell (L)")->check(CLI::PositiveNumber);
    app->add_option("--fusion-depth", fusion_depth, "fusion layers (D)")->check(CLI::PositiveNumber);
    app->add_option("--repeats", repeats, "cells per modality (C1,C2)")
        ->delimiter(',')
        ->expected(2);
    app->add_option("--skip-p", skip_p, "skip-connection probability")->check(CLI::Range(0.0, 1.0));
    app->add_option("--width", width, "channels inside cells")->check(CLI::PositiveNumber);
    app->add_option("--fusion-width", fusion_width, "fusion layer width")->check(CLI::PositiveNumber);
    if (with_classes)
      app->add_option("--num-classes", num_classes, "output classes")->check(CLI::PositiveNumber);
  }

  mmnas::SearchSpaceConfig config() const {
    mmnas::SearchSpaceConfig s;
    s.layers = layers;
    s.fusion_depth = fusion_depth;
    s.repeats = {repeats.at(0), repeats.at(1)};
    s.skip_probability = skip_p;
    s.width = width;
    s.fusion_width = fusion_width;
    s.num_classes = num_classes;
    if (auto v = s.violations(); !v.empty()) throw CLI::ValidationError("search space", v.front());
    return s;
  }
};

void log_line(const std::string& s) { std::cerr << s << "\n"; }

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal random architecture search with shared weights", "mmnas"};
  app.option_defaults()->always_capture_default()->configurable();
  app.fallthrough();
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<mmnas::cli::JsonConfig>());
  app.set_config("--config", "", "JSON file with option values; explicit flags take precedence");

  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "seed for every random stream of the command");
  bool quiet = false;
  app.add_flag("--quiet", quiet, "do not echo the effective configuration");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write the synthetic bi-modal dataset");
  gen->configurable();
  std::string gen_out;
  mmnas::SyntheticConfig syn;
  std::vector<std::size_t> sizes{syn.sizes.train, syn.sizes.validation, syn.sizes.test};
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--k-a", syn.k_a, "row classes of x")->check(CLI::PositiveNumber);
  gen->add_option("--k-b", syn.k_b, "column classes of y")->check(CLI::PositiveNumber);
  gen->add_option("--sigma", syn.sigma, "pixel noise std")->check(CLI::NonNegativeNumber);
  gen->add_option("--sizes", sizes, "train,validation,test sample counts")
      ->delimiter(',')
      ->expected(3);
  gen->add_option("--image-size", syn.image_size, "side length of both modalities")
      ->check(CLI::PositiveNumber);

  // cardinality
  auto* card = app.add_subcommand("cardinality", "exact size of the cell and fusion spaces");
  card->configurable();
  int card_l = 5, card_d = 3, card_c = 3;
  card->add_option("--L", card_l, "layers per cell")->check(CLI::NonNegativeNumber);
  card->add_option("--D", card_d, "fusion depth")->check(CLI::NonNegativeNumber);
  card->add_option("--C", card_c, "cells per modality")->check(CLI::NonNegativeNumber);

  // sample
  auto* sample = app.add_subcommand("sample", "draw one architecture");
  sample->configurable();
  SpaceFlags sample_space;
  std::string sample_out;
  sample->add_option("--out", sample_out, "write JSON here instead of stdout");
  sample_space.attach(sample, true);

  // search
  auto* search = app.add_subcommand("search", "random search with shared weights");
  search->configurable();
  std::string search_data, search_out, search_store;
  std::string steps_str = "auto";
  mmnas::SearchConfig scfg;
  SpaceFlags search_space;
  bool timing = false;
  search->add_option("--data", search_data, "dataset directory or manifest.json")->required();
  search->add_option("--budget", scfg.budget, "architectures to sample (E)")
      ->check(CLI::PositiveNumber);
  search->add_option("--steps", steps_str, "training steps per architecture, or auto (10% of train)");
  search->add_option("--batch-size", scfg.batch_size, "mini-batch size")->check(CLI::PositiveNumber);
  search->add_option("--lr", scfg.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  search->add_option("--out", search_out, "run record path (stdout when empty)");
  search->add_option("--store-out", search_store, "also write the shared weight store");
  search->add_flag("--timing", timing, "include wall-clock times in the run record");
  search_space.attach(search, false);

  // train
  auto* train = app.add_subcommand("train", "train one architecture from scratch and test it");
  train->configurable();
  std::string train_arch, train_data, train_out, warm_start;
  mmnas::FinalTrainConfig tcfg;
  train->add_option("--arch", train_arch, "architecture JSON or run record")->required();
  train->add_option("--data", train_data, "dataset directory or manifest.json")->required();
  train->add_option("--epochs", tcfg.epochs, "training epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--lr", tcfg.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train->add_option("--batch-size", tcfg.batch_size, "mini-batch size")->check(CLI::PositiveNumber);
  train->add_option("--out", train_out, "parameter snapshot path");
  train->add_option("--warm-start", warm_start, "start from this snapshot instead of fresh weights");

  // eval
  auto* eval = app.add_subcommand("eval", "accuracy of trained weights on one split");
  eval->configurable();
  std::string eval_arch, eval_params, eval_data, eval_split = "test";
  eval->add_option("--arch", eval_arch, "architecture JSON or run record")->required();
  eval->add_option("--params", eval_params, "parameter snapshot")->required();
  eval->add_option("--data", eval_data, "dataset directory or manifest.json")->required();
  eval->add_option("--split", eval_split, "train, validation or test")
      ->check(CLI::IsMember({"train", "validation", "val", "test"}));

  // report
  auto* report = app.add_subcommand("report", "variance tables and architecture summaries");
  report->configurable();
  std::vector<std::string> runs;
  std::string format = "markdown", report_arch, dot_out;
  bool results_table = false;
  auto* runs_opt = report->add_option("--runs", runs, "run records to aggregate");
  report->add_option("--format", format, "markdown or csv")
      ->check(CLI::IsMember({"markdown", "csv"}));
  report->add_flag("--results", results_table, "also print the per-run results table");
  auto* arch_opt = report->add_option("--arch", report_arch, "architecture JSON or run record");
  report->add_option("--dot", dot_out, "write a Graphviz drawing of --arch here")->needs(arch_opt);
  runs_opt->excludes(arch_opt);

  auto* card_cmd = app.add_subcommand("method-card", "print the human-intervention checklist");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const CLI::ConversionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << msg << "\n";
    return kUsage;
  }

  if (!quiet && !card_cmd->parsed()) {
    std::string cfg = app.config_to_str(true, false);
    std::cerr << "config: " << json::parse(cfg).dump() << "\n";
  }

  try {
    if (gen->parsed()) {
      syn.sizes = {sizes.at(0), sizes.at(1), sizes.at(2)};
      syn.seed = seed;
      const auto data = mmnas::generate_synthetic(syn);
      mmnas::save(data, gen_out);
      log_line("wrote " + std::to_string(data.size()) + " samples, " +
               std::to_string(data.num_classes) + " classes, to " + gen_out);
      std::cout << "unimodal ceiling x " << fixed(syn.ceiling_x()) << ", y " << fixed(syn.ceiling_y())
                << "\n";
    } else if (card->parsed()) {
      std::cout << "cell " << mmnas::cell_cardinality(card_l) << "\n";
      std::cout << "fusion " << mmnas::fusion_cardinality(card_d, card_c) << "\n";
    } else if (sample->parsed()) {
      mmnas::Rng rng(seed);
      const auto spec = mmnas::sample_architecture(sample_space.config(), rng);
      const std::string text = mmnas::serialize(spec) + "\n";
      if (sample_out.empty())
        std::cout << text;
      else
        write_file(sample_out, text);
    } else if (search->parsed()) {
      const auto data = mmnas::load_manifest(search_data);
      search_space.num_classes = data.num_classes;
      scfg.space = search_space.config();
      scfg.seed = seed;
      if (steps_str != "auto") {
        try {
          std::size_t used = 0;
          scfg.steps = std::stoi(steps_str, &used);
          if (used != steps_str.size() || *scfg.steps < 1) throw std::invalid_argument("");
        } catch (const std::exception&) {
          std::cerr << "error: --steps: expected a positive integer or auto, got " << steps_str
                    << "\n";
          return kUsage;
        }
      }
      log_line("search: budget " + std::to_string(scfg.budget) + ", steps " +
               std::to_string(scfg.resolved_steps(data.split_size(mmnas::Split::Train))) +
               " per architecture");
      mmnas::ParamStore store(mmnas::derive_seed(seed, mmnas::kInitStream));
      const auto rec = mmnas::run_search(scfg, data, store);
      const std::string text = mmnas::to_json_text(rec, timing);
      if (search_out.empty())
        std::cout << text;
      else
        write_file(search_out, text);
      if (!search_store.empty()) write_file(search_store, store.snapshot());
      log_line("best architecture " + std::to_string(rec.best_index) + " (" +
               (rec.best ? mmnas::hash_hex(mmnas::canonical_hash(*rec.best)) : "none") +
               "), validation accuracy " + fixed(rec.best_val_accuracy));
    } else if (train->parsed()) {
      const auto spec = load_arch(train_arch);
      const auto data = mmnas::load_manifest(train_data);
      tcfg.seed = seed;
      std::optional<mmnas::ParamStore> warm;
      if (!warm_start.empty()) warm = load_store(warm_start);
      const auto t0 = std::chrono::steady_clock::now();
      auto result = mmnas::final_train(spec, data, tcfg, std::move(warm));
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
        log_line("epoch " + std::to_string(e + 1) + " loss " + fixed(result.epoch_losses[e], 6));
      log_line("trained in " + fixed(secs, 1) + " s");
      if (!train_out.empty()) write_file(train_out, result.store.snapshot());
      std::cout << "test_accuracy " << fixed(result.test_accuracy) << "\n";
    } else if (eval->parsed()) {
      const auto spec = load_arch(eval_arch);
      auto store = load_store(eval_params);
      const auto data = mmnas::load_manifest(eval_data);
      for (const auto& key : mmnas::param_keys(spec))
        if (!store.contains(key))
          throw InputError(eval_params + ": no weights for " + key.str());
      const auto net = mmnas::build(spec, data.input_shapes(), store);
      const auto split = mmnas::parse_split(eval_split);
      std::cout << "accuracy " << fixed(mmnas::evaluate(net, data, split)) << "\n";
    } else if (report->parsed()) {
      if (!runs.empty()) {
        std::vector<mmnas::RunRecord> records;
        for (const auto& r : runs) records.push_back(load_run(r));
        const auto table = mmnas::aggregate(records);
        std::cout << mmnas::emit_table(table, format == "csv" ? mmnas::TableFormat::Csv
                                                              : mmnas::TableFormat::Markdown);
        if (results_table) std::cout << "\n" << mmnas::emit_results_table(records);
      } else if (!report_arch.empty()) {
        const auto spec = load_arch(report_arch);
        std::cout << mmnas::emit_arch_summary(spec);
        if (!dot_out.empty()) write_file(dot_out, mmnas::emit_arch_dot(spec));
      } else {
        std::cerr << "error: report needs --runs or --arch\n";
        return kUsage;
      }
    } else if (card_cmd->parsed()) {
      std::cout << mmnas::emit_method_card();
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const mmnas::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const mmnas::BuildError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const mmnas::ParamShapeConflict& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
