#ifndef MMNAS_PARAM_STORE_HPP
#define MMNAS_PARAM_STORE_HPP

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mmnas/adam.hpp"
#include "mmnas/autodiff.hpp"
#include "mmnas/rng.hpp"
#include "mmnas/search_space.hpp"

namespace mmnas {

enum class ParamScope : std::uint8_t { Feature, Fusion, Head };

// Structural position of a parameter group. Feature keys carry the op kind
// but not the skip pattern, so every cell sampled with the same op at the
// same (modality, cell, layer) reuses one set of weights.
struct ParamKey {
  ParamScope scope = ParamScope::Feature;
  int modality = 0;  // 1-based; feature scope
  int cell = 0;      // 1-based; 0 marks the stem
  int layer = 0;     // 1-based
  OperationKind op = OperationKind::Conv3x3;
  int depth = 0;     // 1-based; fusion scope

  static ParamKey stem(int modality);
  static ParamKey node(int modality, int cell, int layer, OperationKind op);
  static ParamKey fusion(int depth);
  static ParamKey head();

  // "feature/m1/stem", "feature/m1/c2/l3/conv3x3", "fusion/d2", "head"
  std::string str() const;
  static ParamKey parse(std::string_view text);

  auto operator<=>(const ParamKey&) const = default;
};

struct TensorSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1;
  bool zero_init = false;  // biases
};

template <class T>
struct Parameter {
  std::string name;
  Var<T> var;
  AdamState<T> adam;
};

template <class T>
struct ParamEntry {
  std::vector<Parameter<T>> tensors;

  Parameter<T>& get(std::string_view name);
  const Parameter<T>& get(std::string_view name) const;
  std::size_t count() const;
};

class ParamShapeConflict : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SnapshotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Registry of shared weights keyed by structural position. Tensors are
// allocated on first request and never reshaped; optimizer moments live
// next to each tensor so they persist across architectures too.
template <class T>
class BasicParamStore {
 public:
  static constexpr std::uint32_t kSnapshotVersion = 1;

  explicit BasicParamStore(std::uint64_t init_seed = 0) : rng_(init_seed) {}

  // Parameters are shared nodes; copying would alias them. Use clone().
  BasicParamStore(const BasicParamStore&) = delete;
  BasicParamStore& operator=(const BasicParamStore&) = delete;
  BasicParamStore(BasicParamStore&&) noexcept = default;
  BasicParamStore& operator=(BasicParamStore&&) noexcept = default;

  BasicParamStore clone() const;

  // Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)); zero_init tensors start at 0.
  ParamEntry<T>& get_or_init(const ParamKey& key, const std::vector<TensorSpec>& specs, Rng& rng);
  ParamEntry<T>& get_or_init(const ParamKey& key, const std::vector<TensorSpec>& specs) {
    return get_or_init(key, specs, rng_);
  }

  bool contains(const ParamKey& key) const { return entries_.count(key) != 0; }
  ParamEntry<T>* find(const ParamKey& key);
  const ParamEntry<T>* find(const ParamKey& key) const;
  const std::map<ParamKey, ParamEntry<T>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t count_params(std::optional<ParamScope> scope = std::nullopt) const;

  // Versioned little-endian image of every tensor, its Adam state and the
  // init generator state. restore(snapshot()) is bit-identical.
  std::string snapshot() const;
  static BasicParamStore restore(std::string_view image);

  Rng& init_rng() noexcept { return rng_; }

 private:
  std::map<ParamKey, ParamEntry<T>> entries_;
  Rng rng_;
};

using ParamStore = BasicParamStore<float>;

std::string_view to_string(ParamScope scope);

}  // namespace mmnas

#endif  // MMNAS_PARAM_STORE_HPP
