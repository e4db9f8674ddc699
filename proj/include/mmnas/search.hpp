#ifndef MMNAS_SEARCH_HPP
#define MMNAS_SEARCH_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmnas/adam.hpp"
#include "mmnas/data.hpp"
#include "mmnas/network.hpp"
#include "mmnas/param_store.hpp"
#include "mmnas/search_space.hpp"

namespace mmnas {

// Stream tags for derive_seed(seed, tag). The architecture sampler uses the
// raw seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kShuffleStream = 2;
inline constexpr std::uint64_t kFinalInitStream = 3;
inline constexpr std::uint64_t kFinalShuffleStream = 4;

struct SearchConfig {
  int budget = 100;               // E
  std::optional<int> steps;       // S; empty = ceil(10% of train / batch_size)
  int batch_size = 32;
  double lr = 1e-4;
  int final_epochs = 50;
  std::uint64_t seed = 0;
  SearchSpaceConfig space;

  int resolved_steps(std::size_t train_size) const;
};

struct ArchLogEntry {
  int index = 0;  // 1-based draw number
  std::string spec_hash;
  bool trained = false;
  std::string skip_reason;
  double val_accuracy = 0.0;
  int steps = 0;
  double last_loss = 0.0;
  std::size_t new_params = 0;
  double wall_seconds = 0.0;
};

struct RunRecord {
  static constexpr int kSchemaVersion = 1;

  std::uint64_t seed = 0;
  SearchConfig config;
  std::vector<ArchLogEntry> log;
  std::optional<ArchitectureSpec> best;
  int best_index = 0;
  double best_val_accuracy = 0.0;
  std::optional<double> test_accuracy;  // after final training
  ParamSplit best_params;
  std::size_t store_params = 0;
  double search_seconds = 0.0;
};

// Wall-clock fields are omitted unless include_timing is set, so identical
// runs serialize to identical bytes.
std::string to_json_text(const RunRecord& record, bool include_timing = false);
RunRecord run_record_from_json(std::string_view text);

// Exactly `steps` Adam updates on consecutive batches of `batches`.
// Returns the loss of each step.
std::vector<double> train_steps(const CompiledNet<float>& net, BatchStream& batches, int steps,
                                const AdamConfig& adam);

// correct / total over the whole split; ties in the logits go to the lowest
// class index.
double evaluate(const CompiledNet<float>& net, const BiModalDataset& data, Split split,
                std::size_t batch_size = 256);

// Random search with shared weights: draws `budget` architectures, trains
// each for S steps against `store`, ranks by validation accuracy and keeps
// the later one on ties.
RunRecord run_search(const SearchConfig& cfg, const BiModalDataset& data, ParamStore& store);

// Fresh store seeded from cfg.seed.
RunRecord run_search(const SearchConfig& cfg, const BiModalDataset& data);

struct FinalTrainConfig {
  int epochs = 50;
  double lr = 1e-4;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

struct FinalResult {
  ParamStore store;
  double test_accuracy = 0.0;
  std::vector<double> epoch_losses;  // mean training loss per epoch
};

// Trains `spec` for whole epochs over the training split and reports test
// accuracy. Starts from a freshly initialized store unless warm_start holds
// one (e.g. the search store).
FinalResult final_train(const ArchitectureSpec& spec, const BiModalDataset& data,
                        const FinalTrainConfig& cfg,
                        std::optional<ParamStore> warm_start = std::nullopt);

// One independent search (own store) per seed, each followed by final
// training of its best architecture for cfg.final_epochs.
std::vector<RunRecord> run_multi_seed(const SearchConfig& cfg, const BiModalDataset& data,
                                      const std::vector<std::uint64_t>& seeds);

}  // namespace mmnas

#endif  // MMNAS_SEARCH_HPP
