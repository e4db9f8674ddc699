#ifndef MMNAS_SEARCH_SPACE_HPP
#define MMNAS_SEARCH_SPACE_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "mmnas/rng.hpp"

namespace mmnas {

enum class OperationKind : std::uint8_t {
  Conv3x3,
  Conv5x5,
  SepConv3x3,
  SepConv5x5,
  MaxPool3x3,
  AvgPool3x3,
};

enum class ActivationKind : std::uint8_t {
  ReLU,
  Tanh,
  Identity,
  Sigmoid,
};

inline constexpr std::array<OperationKind, 6> kAllOperations = {
    OperationKind::Conv3x3,    OperationKind::Conv5x5,    OperationKind::SepConv3x3,
    OperationKind::SepConv5x5, OperationKind::MaxPool3x3, OperationKind::AvgPool3x3};

inline constexpr std::array<ActivationKind, 4> kAllActivations = {
    ActivationKind::ReLU, ActivationKind::Tanh, ActivationKind::Identity,
    ActivationKind::Sigmoid};

std::string_view to_string(OperationKind op);
std::string_view to_string(ActivationKind act);
std::optional<OperationKind> parse_operation(std::string_view name);
std::optional<ActivationKind> parse_activation(std::string_view name);

// Kernel size of the spatial stage (pools use 3).
int kernel_size(OperationKind op);
bool is_separable(OperationKind op);
bool is_pool(OperationKind op);

// One node of a cell. skips[j] refers to node j of the cell, where node 0 is
// the cell input and node k is the output of layer k. The immediate
// predecessor is always connected, so layer l carries l-1 optional edges.
struct LayerSpec {
  OperationKind op = OperationKind::Conv3x3;
  ActivationKind activation = ActivationKind::ReLU;
  std::vector<std::uint8_t> skips;

  bool operator==(const LayerSpec&) const = default;
};

struct CellSpec {
  std::vector<LayerSpec> layers;

  bool operator==(const CellSpec&) const = default;
};

// taps_x[c] selects cell c+1 of the first modality (global-pooled output).
struct FusionLayerSpec {
  ActivationKind activation = ActivationKind::ReLU;
  std::vector<std::uint8_t> taps_x;
  std::vector<std::uint8_t> taps_y;

  bool operator==(const FusionLayerSpec&) const = default;
};

struct FusionSpec {
  std::vector<FusionLayerSpec> layers;

  bool operator==(const FusionSpec&) const = default;
};

struct ArchitectureSpec {
  static constexpr int kSchemaVersion = 1;

  CellSpec cell_x;
  CellSpec cell_y;
  std::array<int, 2> repeats{3, 3};
  FusionSpec fusion;
  int width = 16;
  int fusion_width = 64;
  int num_classes = 16;

  bool operator==(const ArchitectureSpec&) const = default;
};

struct SearchSpaceConfig {
  int layers = 5;           // L
  int fusion_depth = 3;     // D
  std::array<int, 2> repeats{3, 3};  // C1, C2
  double skip_probability = 0.5;     // p
  int width = 16;
  int fusion_width = 64;
  int num_classes = 16;

  // Empty when valid.
  std::vector<std::string> violations() const;
};

// Number of tap bits at fusion depth d (1-based) for a modality with
// `cells` stacked cells.
constexpr int taps_at_depth(int d, int cells) noexcept { return d < cells ? d : cells; }

// Draw order per layer: op, activation, then one Bernoulli per skip bit.
CellSpec sample_cell(const SearchSpaceConfig& cfg, Rng& rng, int modality = 0);

// Draw order per depth: for c = 1..max(min(d,C1), min(d,C2)) the x bit (if
// c <= min(d,C1)) then the y bit (if c <= min(d,C2)), then the activation.
// An all-zero tap set at depth 1 is redrawn; with p = 0 taps_x[0] is forced
// on without consuming draws.
FusionSpec sample_fusion(const SearchSpaceConfig& cfg, Rng& rng);

// cell (modality x), cell (modality y), fusion, in that rng order.
ArchitectureSpec sample_architecture(const SearchSpaceConfig& cfg, Rng& rng);

using BigInt = boost::multiprecision::cpp_int;

// 6^L * 4^L * 2^(L(L-1)/2)
BigInt cell_cardinality(int layers);

// 4^D * 2^(2 * sum_{d=1..D} min(d, C)): raw sampler space, before the
// depth-1 resampling rule.
BigInt fusion_cardinality(int depth, int cells);

// Every violated invariant of `spec` (and its consistency with `cfg`).
std::vector<std::string> validate(const ArchitectureSpec& spec,
                                  const SearchSpaceConfig& cfg);

// Structural checks only (no config to compare against).
std::vector<std::string> validate(const ArchitectureSpec& spec);

// The config an architecture was sampled from (p is not recoverable).
SearchSpaceConfig config_of(const ArchitectureSpec& spec, double skip_probability = 0.5);

class SpecParseError : public std::runtime_error {
 public:
  SpecParseError(std::string position, std::string field, const std::string& what)
      : std::runtime_error("at " + position + " (" + field + "): " + what),
        position_(std::move(position)),
        field_(std::move(field)) {}

  const std::string& position() const noexcept { return position_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string position_;
  std::string field_;
};

// Canonical JSON: sorted keys, no whitespace, integers only.
std::string serialize(const ArchitectureSpec& spec);
ArchitectureSpec deserialize(std::string_view text);

// FNV-1a over the canonical bytes.
std::uint64_t canonical_hash(const ArchitectureSpec& spec);
std::string hash_hex(std::uint64_t digest);

}  // namespace mmnas

#endif  // MMNAS_SEARCH_SPACE_HPP
