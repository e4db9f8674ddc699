#ifndef MMNAS_NETWORK_HPP
#define MMNAS_NETWORK_HPP

#include <array>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mmnas/param_store.hpp"
#include "mmnas/search_space.hpp"

namespace mmnas {

struct InputShape {
  int channels = 1;
  int height = 16;
  int width = 16;

  bool operator==(const InputShape&) const = default;
};

class BuildError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class NetNodeKind { Input, Stem, Layer, Reduce, Tap, Fusion, Head };

// One step of the compiled program. `inputs` index earlier nodes, so the
// node list is itself a topological order.
struct NetNode {
  NetNodeKind kind = NetNodeKind::Input;
  int modality = 0;  // 1 or 2; 0 for fusion/head
  int cell = 0;
  int layer = 0;
  int depth = 0;
  OperationKind op = OperationKind::Conv3x3;
  ActivationKind activation = ActivationKind::Identity;
  std::vector<int> inputs;
  std::vector<std::uint8_t> mask_x, mask_y;  // fusion blocks
  bool has_params = false;
  ParamKey key;
  Shape shape;  // per-sample output shape (C,H,W) or (F)
};

// Parameter tensor layouts for each kind of key.
std::vector<TensorSpec> stem_tensors(int in_channels, int width);
std::vector<TensorSpec> node_tensors(OperationKind op, int width);
std::vector<TensorSpec> fusion_tensors(int depth, const std::array<int, 2>& repeats, int width,
                                       int fusion_width);
std::vector<TensorSpec> head_tensors(int fusion_width, int num_classes);

// Input width of fusion layer d: every possible tap block plus the carry-in.
int fusion_input_width(int depth, const std::array<int, 2>& repeats, int width, int fusion_width);

// Keys an architecture touches: stems, parametric cell nodes, fusion, head.
std::vector<ParamKey> param_keys(const ArchitectureSpec& spec);

// Smallest spatial extent that survives the inter-cell reductions.
int min_input_size(int cells);

template <class T>
class CompiledNet {
 public:
  struct Outputs {
    Var<T> logits;
    std::vector<Var<T>> taps_x, taps_y;  // N x width per cell
  };

  // x: N x Cx x Hx x Wx, y: N x Cy x Hy x Wy
  Outputs forward(const Tensor<T>& x, const Tensor<T>& y) const;
  Var<T> logits(const Tensor<T>& x, const Tensor<T>& y) const { return forward(x, y).logits; }

  // f_d = act_d(W_d [x_d; y_d; f_{d-1}]) with unselected tap blocks zeroed,
  // then the linear head on f_D.
  Var<T> forward_fusion(std::span<const Var<T>> taps_x, std::span<const Var<T>> taps_y) const;

  const std::vector<NetNode>& nodes() const noexcept { return nodes_; }
  const ArchitectureSpec& spec() const noexcept { return spec_; }
  const std::array<InputShape, 2>& input_shapes() const noexcept { return inputs_; }
  const std::vector<ParamKey>& keys() const noexcept { return keys_; }

  // Every trainable tensor the net reads, in key order.
  std::vector<Parameter<T>*> parameters() const;

  std::string to_dot() const;

 private:
  template <class U>
  friend CompiledNet<U> build(const ArchitectureSpec&, const std::array<InputShape, 2>&,
                              BasicParamStore<U>&);

  Var<T> run_layer(const NetNode& node, const Var<T>& in) const;
  ParamEntry<T>& entry(const ParamKey& key) const;

  ArchitectureSpec spec_;
  std::array<InputShape, 2> inputs_{};
  std::vector<NetNode> nodes_;
  std::vector<ParamKey> keys_;
  std::map<ParamKey, ParamEntry<T>*> entries_;
};

// Stem 3x3 conv per modality, C_m stacked cells with a 2x2 stride-2 max-pool
// between consecutive cells, one global-pooled tap per cell, the fusion
// stack and a linear head. Missing parameters are allocated in `store`.
template <class T>
CompiledNet<T> build(const ArchitectureSpec& spec, const std::array<InputShape, 2>& inputs,
                     BasicParamStore<T>& store);

struct ParamSplit {
  std::size_t feature = 0;
  std::size_t fusion = 0;  // fusion layers and head

  bool operator==(const ParamSplit&) const = default;
};

// Counts over the keys `spec` touches; the spec must have been built
// against `store`.
template <class T>
ParamSplit param_count_split(const ArchitectureSpec& spec, const BasicParamStore<T>& store);

}  // namespace mmnas

#endif  // MMNAS_NETWORK_HPP
