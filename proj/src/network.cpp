#include "mmnas/network.hpp"

#include <set>
#include <sstream>

namespace mmnas {

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

const char* activation_color(ActivationKind a) {
  switch (a) {
    case ActivationKind::Identity:
      return "orange";
    case ActivationKind::Tanh:
      return "yellow";
    case ActivationKind::Sigmoid:
      return "green";
    case ActivationKind::ReLU:
      return "pink";
  }
  return "white";
}

}  // namespace

std::vector<TensorSpec> stem_tensors(int in_channels, int width) {
  return {{"weight", {sz(width), sz(in_channels), 3, 3}, sz(in_channels * 9), false},
          {"bias", {sz(width)}, 1, true}};
}

std::vector<TensorSpec> node_tensors(OperationKind op, int width) {
  const int k = kernel_size(op);
  if (is_pool(op)) return {};
  if (is_separable(op)) {
    return {{"depthwise", {sz(width), 1, sz(k), sz(k)}, sz(k * k), false},
            {"pointwise", {sz(width), sz(width), 1, 1}, sz(width), false},
            {"bias", {sz(width)}, 1, true}};
  }
  return {{"weight", {sz(width), sz(width), sz(k), sz(k)}, sz(width * k * k), false},
          {"bias", {sz(width)}, 1, true}};
}

int fusion_input_width(int depth, const std::array<int, 2>& repeats, int width,
                       int fusion_width) {
  return (taps_at_depth(depth, repeats[0]) + taps_at_depth(depth, repeats[1])) * width +
         (depth > 1 ? fusion_width : 0);
}

std::vector<TensorSpec> fusion_tensors(int depth, const std::array<int, 2>& repeats, int width,
                                       int fusion_width) {
  const int in = fusion_input_width(depth, repeats, width, fusion_width);
  return {{"weight", {sz(fusion_width), sz(in)}, sz(in), false},
          {"bias", {sz(fusion_width)}, 1, true}};
}

std::vector<TensorSpec> head_tensors(int fusion_width, int num_classes) {
  return {{"weight", {sz(num_classes), sz(fusion_width)}, sz(fusion_width), false},
          {"bias", {sz(num_classes)}, 1, true}};
}

std::vector<ParamKey> param_keys(const ArchitectureSpec& spec) {
  std::set<ParamKey> keys;
  const std::array<const CellSpec*, 2> cells = {&spec.cell_x, &spec.cell_y};
  for (int m = 0; m < 2; ++m) {
    keys.insert(ParamKey::stem(m + 1));
    for (int c = 1; c <= spec.repeats[m]; ++c) {
      for (std::size_t l = 0; l < cells[m]->layers.size(); ++l) {
        const auto op = cells[m]->layers[l].op;
        if (!is_pool(op)) keys.insert(ParamKey::node(m + 1, c, static_cast<int>(l) + 1, op));
      }
    }
  }
  for (std::size_t d = 1; d <= spec.fusion.layers.size(); ++d)
    keys.insert(ParamKey::fusion(static_cast<int>(d)));
  keys.insert(ParamKey::head());
  return {keys.begin(), keys.end()};
}

int min_input_size(int cells) { return 1 << std::max(0, cells - 1); }

template <class T>
CompiledNet<T> build(const ArchitectureSpec& spec, const std::array<InputShape, 2>& inputs,
                     BasicParamStore<T>& store) {
  if (auto problems = validate(spec); !problems.empty()) {
    std::string msg = "build: invalid architecture:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw BuildError(msg);
  }
  for (int m = 0; m < 2; ++m) {
    const int need = min_input_size(spec.repeats[m]);
    const auto& in = inputs[m];
    if (in.channels < 1 || in.height < need || in.width < need)
      throw BuildError("build: modality " + std::to_string(m + 1) + " input " +
                       std::to_string(in.channels) + "x" + std::to_string(in.height) + "x" +
                       std::to_string(in.width) + " too small for " +
                       std::to_string(spec.repeats[m]) + " cells: spatial size must be >= 2^(" +
                       std::to_string(spec.repeats[m]) + "-1) = " + std::to_string(need));
  }

  CompiledNet<T> net;
  net.spec_ = spec;
  net.inputs_ = inputs;
  auto& nodes = net.nodes_;
  auto add_node = [&](NetNode n) {
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  };
  auto attach = [&](const ParamKey& key, const std::vector<TensorSpec>& tensors) {
    net.entries_[key] = &store.get_or_init(key, tensors);
  };

  std::array<std::vector<int>, 2> taps;
  const std::array<const CellSpec*, 2> cells = {&spec.cell_x, &spec.cell_y};
  const auto width = sz(spec.width);
  for (int m = 0; m < 2; ++m) {
    const int modality = m + 1;
    std::size_t h = sz(inputs[m].height);
    std::size_t w = sz(inputs[m].width);
    NetNode input{.kind = NetNodeKind::Input, .modality = modality};
    input.shape = {sz(inputs[m].channels), h, w};
    int cur = add_node(input);

    NetNode stem{.kind = NetNodeKind::Stem, .modality = modality, .inputs = {cur}};
    stem.has_params = true;
    stem.key = ParamKey::stem(modality);
    stem.shape = {width, h, w};
    attach(stem.key, stem_tensors(inputs[m].channels, spec.width));
    cur = add_node(stem);

    for (int c = 1; c <= spec.repeats[m]; ++c) {
      if (c > 1) {
        h /= 2;
        w /= 2;
        NetNode reduce{.kind = NetNodeKind::Reduce, .modality = modality, .cell = c,
                       .inputs = {cur}};
        reduce.shape = {width, h, w};
        cur = add_node(reduce);
      }
      std::vector<int> outs{cur};  // node 0 is the cell input
      const auto& layers = cells[m]->layers;
      for (std::size_t li = 0; li < layers.size(); ++li) {
        const auto& ls = layers[li];
        NetNode node{.kind = NetNodeKind::Layer,
                     .modality = modality,
                     .cell = c,
                     .layer = static_cast<int>(li) + 1,
                     .op = ls.op,
                     .activation = ls.activation};
        node.inputs.push_back(outs.back());
        for (std::size_t j = 0; j + 1 < outs.size(); ++j)
          if (ls.skips[j]) node.inputs.push_back(outs[j]);
        node.shape = {width, h, w};
        if (!is_pool(ls.op)) {
          node.has_params = true;
          node.key = ParamKey::node(modality, c, node.layer, ls.op);
          attach(node.key, node_tensors(ls.op, spec.width));
        }
        outs.push_back(add_node(std::move(node)));
      }
      cur = outs.back();
      NetNode tap{.kind = NetNodeKind::Tap, .modality = modality, .cell = c, .inputs = {cur}};
      tap.shape = {width};
      taps[m].push_back(add_node(tap));
    }
  }

  int prev = -1;
  for (int d = 1; d <= static_cast<int>(spec.fusion.layers.size()); ++d) {
    const auto& fs = spec.fusion.layers[d - 1];
    NetNode fusion{.kind = NetNodeKind::Fusion, .depth = d, .activation = fs.activation};
    fusion.mask_x = fs.taps_x;
    fusion.mask_y = fs.taps_y;
    for (std::size_t c = 0; c < fs.taps_x.size(); ++c)
      if (fs.taps_x[c]) fusion.inputs.push_back(taps[0][c]);
    for (std::size_t c = 0; c < fs.taps_y.size(); ++c)
      if (fs.taps_y[c]) fusion.inputs.push_back(taps[1][c]);
    if (prev >= 0) fusion.inputs.push_back(prev);
    fusion.has_params = true;
    fusion.key = ParamKey::fusion(d);
    fusion.shape = {sz(spec.fusion_width)};
    attach(fusion.key, fusion_tensors(d, spec.repeats, spec.width, spec.fusion_width));
    prev = add_node(std::move(fusion));
  }
  NetNode head{.kind = NetNodeKind::Head, .inputs = {prev}};
  head.has_params = true;
  head.key = ParamKey::head();
  head.shape = {sz(spec.num_classes)};
  attach(head.key, head_tensors(spec.fusion_width, spec.num_classes));
  add_node(std::move(head));

  for (const auto& [key, entry] : net.entries_) net.keys_.push_back(key);
  return net;
}

template <class T>
ParamEntry<T>& CompiledNet<T>::entry(const ParamKey& key) const {
  return *entries_.at(key);
}

template <class T>
Var<T> CompiledNet<T>::run_layer(const NetNode& node, const Var<T>& in) const {
  const int k = kernel_size(node.op);
  Var<T> out;
  switch (node.op) {
    case OperationKind::Conv3x3:
    case OperationKind::Conv5x5: {
      auto& e = entry(node.key);
      out = conv2d(in, e.get("weight").var, e.get("bias").var, 1, k / 2);
      break;
    }
    case OperationKind::SepConv3x3:
    case OperationKind::SepConv5x5: {
      auto& e = entry(node.key);
      out = sep_conv2d(in, e.get("depthwise").var, e.get("pointwise").var, e.get("bias").var,
                       k / 2);
      break;
    }
    case OperationKind::MaxPool3x3:
      out = max_pool2d(in, 3, 1, 1);
      break;
    case OperationKind::AvgPool3x3:
      out = avg_pool2d(in, 3, 1, 1);
      break;
  }
  return activate(out, node.activation);
}

template <class T>
typename CompiledNet<T>::Outputs CompiledNet<T>::forward(const Tensor<T>& x,
                                                         const Tensor<T>& y) const {
  const std::array<const Tensor<T>*, 2> batch = {&x, &y};
  for (int m = 0; m < 2; ++m) {
    const auto& s = batch[m]->shape();
    const auto& want = inputs_[m];
    if (s.size() != 4 || s[1] != sz(want.channels) || s[2] != sz(want.height) ||
        s[3] != sz(want.width))
      throw ShapeError("forward: modality " + std::to_string(m + 1) + " batch " + shape_str(s) +
                       " does not match N x " + std::to_string(want.channels) + " x " +
                       std::to_string(want.height) + " x " + std::to_string(want.width));
  }
  if (x.dim(0) != y.dim(0))
    throw ShapeError("forward: batch sizes differ (" + std::to_string(x.dim(0)) + " vs " +
                     std::to_string(y.dim(0)) + ")");

  Outputs out;
  std::vector<Var<T>> values(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& node = nodes_[i];
    switch (node.kind) {
      case NetNodeKind::Input:
        values[i] = Var<T>::constant(*batch[node.modality - 1]);
        break;
      case NetNodeKind::Stem: {
        auto& e = entry(node.key);
        values[i] = conv2d(values[node.inputs[0]], e.get("weight").var, e.get("bias").var, 1, 1);
        break;
      }
      case NetNodeKind::Layer: {
        std::vector<Var<T>> terms;
        terms.reserve(node.inputs.size());
        for (int src : node.inputs) terms.push_back(values[src]);
        values[i] = run_layer(node, add_n<T>(terms));
        break;
      }
      case NetNodeKind::Reduce:
        values[i] = max_pool2d(values[node.inputs[0]], 2, 2, 0);
        break;
      case NetNodeKind::Tap:
        values[i] = global_avg_pool(values[node.inputs[0]]);
        (node.modality == 1 ? out.taps_x : out.taps_y).push_back(values[i]);
        break;
      case NetNodeKind::Fusion:
      case NetNodeKind::Head:
        break;
    }
  }
  out.logits = forward_fusion(out.taps_x, out.taps_y);
  return out;
}

template <class T>
Var<T> CompiledNet<T>::forward_fusion(std::span<const Var<T>> taps_x,
                                      std::span<const Var<T>> taps_y) const {
  if (taps_x.size() != sz(spec_.repeats[0]) || taps_y.size() != sz(spec_.repeats[1]))
    throw ShapeError("forward_fusion: expected " + std::to_string(spec_.repeats[0]) + " + " +
                     std::to_string(spec_.repeats[1]) + " taps, got " +
                     std::to_string(taps_x.size()) + " + " + std::to_string(taps_y.size()));
  const std::size_t n = taps_x.empty() ? 0 : taps_x[0].value().dim(0);
  const Var<T> zeros = Var<T>::constant(Tensor<T>({n, sz(spec_.width)}));
  Var<T> carry;
  for (std::size_t d = 0; d < spec_.fusion.layers.size(); ++d) {
    const auto& fs = spec_.fusion.layers[d];
    std::vector<Var<T>> blocks;
    for (std::size_t c = 0; c < fs.taps_x.size(); ++c)
      blocks.push_back(fs.taps_x[c] ? taps_x[c] : zeros);
    for (std::size_t c = 0; c < fs.taps_y.size(); ++c)
      blocks.push_back(fs.taps_y[c] ? taps_y[c] : zeros);
    if (carry) blocks.push_back(carry);
    auto& e = entry(ParamKey::fusion(static_cast<int>(d) + 1));
    carry = activate(linear(concat<T>(blocks, 1), e.get("weight").var, e.get("bias").var),
                     fs.activation);
  }
  auto& head = entry(ParamKey::head());
  return linear(carry, head.get("weight").var, head.get("bias").var);
}

template <class T>
std::vector<Parameter<T>*> CompiledNet<T>::parameters() const {
  std::vector<Parameter<T>*> out;
  for (const auto& [key, e] : entries_)
    for (auto& p : e->tensors) out.push_back(&p);
  return out;
}

template <class T>
std::string CompiledNet<T>::to_dot() const {
  std::ostringstream os;
  os << "digraph architecture {\n  rankdir=TB;\n  node [style=filled, shape=box];\n";
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    os << "  n" << i << " [label=\"";
    switch (n.kind) {
      case NetNodeKind::Input:
        os << (n.modality == 1 ? "input x" : "input y") << "\", fillcolor=lightgray";
        break;
      case NetNodeKind::Stem:
        os << "stem conv3x3 m" << n.modality << "\", fillcolor=lightgray";
        break;
      case NetNodeKind::Layer:
        os << "m" << n.modality << " c" << n.cell << " l" << n.layer << "\\n" << to_string(n.op)
           << "\", fillcolor=" << activation_color(n.activation);
        break;
      case NetNodeKind::Reduce:
        os << "max_pool2x2/2\", fillcolor=lightgray";
        break;
      case NetNodeKind::Tap:
        os << "tap m" << n.modality << " c" << n.cell << "\", shape=ellipse, fillcolor=white";
        break;
      case NetNodeKind::Fusion:
        os << "fusion d" << n.depth << "\", fillcolor=" << activation_color(n.activation);
        break;
      case NetNodeKind::Head:
        os << "head\", fillcolor=lightgray";
        break;
    }
    os << "];\n";
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    for (int src : nodes_[i].inputs) os << "  n" << src << " -> n" << i << ";\n";
  os << "}\n";
  return os.str();
}

template <class T>
ParamSplit param_count_split(const ArchitectureSpec& spec, const BasicParamStore<T>& store) {
  ParamSplit split;
  for (const auto& key : param_keys(spec)) {
    const auto* e = store.find(key);
    if (!e)
      throw std::logic_error("param_count_split: key " + key.str() +
                             " not allocated; build the spec against this store first");
    (key.scope == ParamScope::Feature ? split.feature : split.fusion) += e->count();
  }
  return split;
}

template class CompiledNet<float>;
template class CompiledNet<double>;
template CompiledNet<float> build<float>(const ArchitectureSpec&, const std::array<InputShape, 2>&,
                                         BasicParamStore<float>&);
template CompiledNet<double> build<double>(const ArchitectureSpec&,
                                           const std::array<InputShape, 2>&,
                                           BasicParamStore<double>&);
template ParamSplit param_count_split<float>(const ArchitectureSpec&,
                                             const BasicParamStore<float>&);
template ParamSplit param_count_split<double>(const ArchitectureSpec&,
                                              const BasicParamStore<double>&);

}  // namespace mmnas
