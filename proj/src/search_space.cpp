#include "mmnas/search_space.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include <json.hpp>

namespace mmnas {

namespace {

constexpr std::array<std::string_view, 6> kOpNames = {
    "conv3x3", "conv5x5", "sep_conv3x3", "sep_conv5x5", "max_pool3x3", "avg_pool3x3"};
constexpr std::array<std::string_view, 4> kActNames = {"relu", "tanh", "identity",
                                                       "sigmoid"};

std::vector<std::uint8_t> draw_bits(Rng& rng, int n, double p) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(n));
  for (auto& b : bits) b = rng.bernoulli(p) ? 1 : 0;
  return bits;
}

bool any_set(const std::vector<std::uint8_t>& v) {
  return std::any_of(v.begin(), v.end(), [](std::uint8_t b) { return b != 0; });
}

void draw_taps(const SearchSpaceConfig& cfg, Rng& rng, int d, FusionLayerSpec& layer) {
  const int nx = taps_at_depth(d, cfg.repeats[0]);
  const int ny = taps_at_depth(d, cfg.repeats[1]);
  layer.taps_x.assign(static_cast<std::size_t>(nx), 0);
  layer.taps_y.assign(static_cast<std::size_t>(ny), 0);
  for (int c = 0; c < std::max(nx, ny); ++c) {
    if (c < nx) layer.taps_x[c] = rng.bernoulli(cfg.skip_probability) ? 1 : 0;
    if (c < ny) layer.taps_y[c] = rng.bernoulli(cfg.skip_probability) ? 1 : 0;
  }
}

void check_bits(const std::vector<std::uint8_t>& bits, const std::string& where,
                std::vector<std::string>& out) {
  for (auto b : bits) {
    if (b > 1) {
      out.push_back(where + ": bit value not 0/1");
      return;
    }
  }
}

}  // namespace

std::string_view to_string(OperationKind op) { return kOpNames[static_cast<int>(op)]; }
std::string_view to_string(ActivationKind act) { return kActNames[static_cast<int>(act)]; }

std::optional<OperationKind> parse_operation(std::string_view name) {
  for (std::size_t i = 0; i < kOpNames.size(); ++i)
    if (kOpNames[i] == name) return kAllOperations[i];
  return std::nullopt;
}

std::optional<ActivationKind> parse_activation(std::string_view name) {
  for (std::size_t i = 0; i < kActNames.size(); ++i)
    if (kActNames[i] == name) return kAllActivations[i];
  return std::nullopt;
}

int kernel_size(OperationKind op) {
  switch (op) {
    case OperationKind::Conv5x5:
    case OperationKind::SepConv5x5:
      return 5;
    default:
      return 3;
  }
}

bool is_separable(OperationKind op) {
  return op == OperationKind::SepConv3x3 || op == OperationKind::SepConv5x5;
}

bool is_pool(OperationKind op) {
  return op == OperationKind::MaxPool3x3 || op == OperationKind::AvgPool3x3;
}

std::vector<std::string> SearchSpaceConfig::violations() const {
  std::vector<std::string> v;
  if (layers < 1) v.emplace_back("layers per cell must be >= 1");
  if (repeats[0] < 1 || repeats[1] < 1) v.emplace_back("cell repeats must be >= 1");
  if (fusion_depth < std::max(repeats[0], repeats[1]))
    v.emplace_back("fusion depth below cell count");
  if (!(skip_probability >= 0.0 && skip_probability <= 1.0))
    v.emplace_back("skip probability outside [0, 1]");
  if (width < 1) v.emplace_back("width must be >= 1");
  if (fusion_width < 1) v.emplace_back("fusion width must be >= 1");
  if (num_classes < 2) v.emplace_back("num_classes must be >= 2");
  return v;
}

CellSpec sample_cell(const SearchSpaceConfig& cfg, Rng& rng, int /*modality*/) {
  CellSpec cell;
  cell.layers.reserve(static_cast<std::size_t>(cfg.layers));
  for (int l = 1; l <= cfg.layers; ++l) {
    LayerSpec layer;
    layer.op = kAllOperations[rng.uniform_int(kAllOperations.size())];
    layer.activation = kAllActivations[rng.uniform_int(kAllActivations.size())];
    layer.skips = draw_bits(rng, l - 1, cfg.skip_probability);
    cell.layers.push_back(std::move(layer));
  }
  return cell;
}

FusionSpec sample_fusion(const SearchSpaceConfig& cfg, Rng& rng) {
  FusionSpec fusion;
  for (int d = 1; d <= cfg.fusion_depth; ++d) {
    FusionLayerSpec layer;
    if (d == 1 && cfg.skip_probability <= 0.0) {
      layer.taps_x.assign(static_cast<std::size_t>(taps_at_depth(1, cfg.repeats[0])), 0);
      layer.taps_y.assign(static_cast<std::size_t>(taps_at_depth(1, cfg.repeats[1])), 0);
      layer.taps_x[0] = 1;
    } else {
      do {
        draw_taps(cfg, rng, d, layer);
      } while (d == 1 && !any_set(layer.taps_x) && !any_set(layer.taps_y));
    }
    layer.activation = kAllActivations[rng.uniform_int(kAllActivations.size())];
    fusion.layers.push_back(std::move(layer));
  }
  return fusion;
}

ArchitectureSpec sample_architecture(const SearchSpaceConfig& cfg, Rng& rng) {
  ArchitectureSpec spec;
  spec.cell_x = sample_cell(cfg, rng, 0);
  spec.cell_y = sample_cell(cfg, rng, 1);
  spec.fusion = sample_fusion(cfg, rng);
  spec.repeats = cfg.repeats;
  spec.width = cfg.width;
  spec.fusion_width = cfg.fusion_width;
  spec.num_classes = cfg.num_classes;
  return spec;
}

BigInt cell_cardinality(int layers) {
  if (layers < 1) throw std::invalid_argument("cell_cardinality: layers must be >= 1");
  BigInt six_four = boost::multiprecision::pow(BigInt(24), static_cast<unsigned>(layers));
  const auto edges = static_cast<unsigned>(layers * (layers - 1) / 2);
  return six_four << edges;
}

BigInt fusion_cardinality(int depth, int cells) {
  if (cells < 1 || depth < cells)
    throw std::invalid_argument("fusion_cardinality: requires depth >= cells >= 1");
  unsigned bits = 0;
  for (int d = 1; d <= depth; ++d) bits += 2U * static_cast<unsigned>(taps_at_depth(d, cells));
  return boost::multiprecision::pow(BigInt(4), static_cast<unsigned>(depth)) << bits;
}

std::vector<std::string> validate(const ArchitectureSpec& spec) {
  std::vector<std::string> out;
  const std::array<const CellSpec*, 2> cells = {&spec.cell_x, &spec.cell_y};
  for (int m = 0; m < 2; ++m) {
    const std::string tag = "cell " + std::to_string(m + 1);
    if (cells[m]->layers.empty()) out.push_back(tag + ": no layers");
    for (std::size_t l = 0; l < cells[m]->layers.size(); ++l) {
      const auto& layer = cells[m]->layers[l];
      const std::string where = tag + " layer " + std::to_string(l + 1);
      if (layer.skips.size() != l)
        out.push_back(where + ": skip vector length " + std::to_string(layer.skips.size()) +
                      ", expected " + std::to_string(l));
      check_bits(layer.skips, where, out);
      if (static_cast<int>(layer.op) >= 6) out.push_back(where + ": unknown operation");
      if (static_cast<int>(layer.activation) >= 4) out.push_back(where + ": unknown activation");
    }
    if (spec.repeats[m] < 1) out.push_back(tag + ": repeats must be >= 1");
  }
  const int depth = static_cast<int>(spec.fusion.layers.size());
  if (depth < std::max(spec.repeats[0], spec.repeats[1]))
    out.emplace_back("fusion depth below cell count");
  for (int d = 1; d <= depth; ++d) {
    const auto& layer = spec.fusion.layers[d - 1];
    const std::string where = "fusion depth " + std::to_string(d);
    const auto nx = static_cast<std::size_t>(taps_at_depth(d, spec.repeats[0]));
    const auto ny = static_cast<std::size_t>(taps_at_depth(d, spec.repeats[1]));
    if (layer.taps_x.size() != nx)
      out.push_back(where + ": taps_x length " + std::to_string(layer.taps_x.size()) +
                    ", expected " + std::to_string(nx));
    if (layer.taps_y.size() != ny)
      out.push_back(where + ": taps_y length " + std::to_string(layer.taps_y.size()) +
                    ", expected " + std::to_string(ny));
    check_bits(layer.taps_x, where + " taps_x", out);
    check_bits(layer.taps_y, where + " taps_y", out);
    if (d == 1 && !any_set(layer.taps_x) && !any_set(layer.taps_y))
      out.push_back(where + ": no taps selected");
    if (static_cast<int>(layer.activation) >= 4) out.push_back(where + ": unknown activation");
  }
  if (spec.width < 1) out.emplace_back("width must be >= 1");
  if (spec.fusion_width < 1) out.emplace_back("fusion width must be >= 1");
  if (spec.num_classes < 2) out.emplace_back("num_classes must be >= 2");
  return out;
}

std::vector<std::string> validate(const ArchitectureSpec& spec, const SearchSpaceConfig& cfg) {
  auto out = cfg.violations();
  for (auto& v : out) v = "config: " + v;
  auto structural = validate(spec);
  out.insert(out.end(), structural.begin(), structural.end());
  auto mismatch = [&](const char* what, long have, long want) {
    if (have != want)
      out.push_back(std::string("config mismatch: ") + what + " is " + std::to_string(have) +
                    ", config says " + std::to_string(want));
  };
  mismatch("cell x layers", static_cast<long>(spec.cell_x.layers.size()), cfg.layers);
  mismatch("cell y layers", static_cast<long>(spec.cell_y.layers.size()), cfg.layers);
  mismatch("fusion depth", static_cast<long>(spec.fusion.layers.size()), cfg.fusion_depth);
  mismatch("repeats x", spec.repeats[0], cfg.repeats[0]);
  mismatch("repeats y", spec.repeats[1], cfg.repeats[1]);
  mismatch("width", spec.width, cfg.width);
  mismatch("fusion_width", spec.fusion_width, cfg.fusion_width);
  mismatch("num_classes", spec.num_classes, cfg.num_classes);
  return out;
}

SearchSpaceConfig config_of(const ArchitectureSpec& spec, double skip_probability) {
  SearchSpaceConfig cfg;
  cfg.layers = static_cast<int>(spec.cell_x.layers.size());
  cfg.fusion_depth = static_cast<int>(spec.fusion.layers.size());
  cfg.repeats = spec.repeats;
  cfg.skip_probability = skip_probability;
  cfg.width = spec.width;
  cfg.fusion_width = spec.fusion_width;
  cfg.num_classes = spec.num_classes;
  return cfg;
}

// ---------------------------------------------------------------------------
// Canonical JSON

namespace {

using nlohmann::json;

json bits_json(const std::vector<std::uint8_t>& bits) {
  json arr = json::array();
  for (auto b : bits) arr.push_back(static_cast<int>(b));
  return arr;
}

json cell_json(const CellSpec& cell) {
  json arr = json::array();
  for (const auto& layer : cell.layers) {
    arr.push_back({{"activation", std::string(to_string(layer.activation))},
                   {"op", std::string(to_string(layer.op))},
                   {"skips", bits_json(layer.skips)}});
  }
  return arr;
}

class Reader {
 public:
  [[noreturn]] static void fail(const std::string& path, const std::string& field,
                                const std::string& what) {
    throw SpecParseError(path.empty() ? "/" : path, field, what);
  }

  static const json& member(const json& obj, const std::string& path, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) fail(path, key, "missing field");
    return *it;
  }

  static void expect_keys(const json& obj, const std::string& path,
                          std::initializer_list<const char*> keys) {
    if (!obj.is_object()) fail(path, "", "expected object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (auto it = obj.begin(); it != obj.end(); ++it)
      if (!allowed.count(it.key())) fail(path + "/" + it.key(), it.key(), "unknown field");
    for (const char* k : keys)
      if (!obj.contains(k)) fail(path, k, "missing field");
  }

  static int integer(const json& v, const std::string& path, const char* field) {
    if (!v.is_number_integer()) fail(path, field, "expected integer");
    const auto x = v.get<long long>();
    if (x < 0 || x > (1LL << 30)) fail(path, field, "integer out of range");
    return static_cast<int>(x);
  }

  static std::vector<std::uint8_t> bits(const json& v, const std::string& path,
                                        const char* field) {
    if (!v.is_array()) fail(path, field, "expected array of 0/1");
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto& b = v[i];
      const std::string p = path + "/" + std::to_string(i);
      if (!b.is_number_integer()) fail(p, field, "expected integer 0 or 1");
      const auto x = b.get<long long>();
      if (x != 0 && x != 1) fail(p, field, "expected integer 0 or 1");
      out.push_back(static_cast<std::uint8_t>(x));
    }
    return out;
  }

  static ActivationKind activation(const json& v, const std::string& path) {
    if (!v.is_string()) fail(path, "activation", "expected string");
    auto a = parse_activation(v.get<std::string>());
    if (!a) fail(path, "activation", "unknown activation '" + v.get<std::string>() + "'");
    return *a;
  }

  static CellSpec cell(const json& v, const std::string& path) {
    if (!v.is_array()) fail(path, "cells", "expected array of layers");
    CellSpec cell;
    for (std::size_t l = 0; l < v.size(); ++l) {
      const std::string p = path + "/" + std::to_string(l);
      expect_keys(v[l], p, {"activation", "op", "skips"});
      LayerSpec layer;
      const auto& op = v[l]["op"];
      if (!op.is_string()) fail(p + "/op", "op", "expected string");
      auto parsed = parse_operation(op.get<std::string>());
      if (!parsed) fail(p + "/op", "op", "unknown operation '" + op.get<std::string>() + "'");
      layer.op = *parsed;
      layer.activation = activation(v[l]["activation"], p + "/activation");
      layer.skips = bits(v[l]["skips"], p + "/skips", "skips");
      cell.layers.push_back(std::move(layer));
    }
    return cell;
  }
};

}  // namespace

std::string serialize(const ArchitectureSpec& spec) {
  json fusion = json::array();
  for (const auto& layer : spec.fusion.layers) {
    fusion.push_back({{"activation", std::string(to_string(layer.activation))},
                      {"taps_x", bits_json(layer.taps_x)},
                      {"taps_y", bits_json(layer.taps_y)}});
  }
  json doc = {{"schema_version", ArchitectureSpec::kSchemaVersion},
              {"cells", json::array({cell_json(spec.cell_x), cell_json(spec.cell_y)})},
              {"repeats", json::array({spec.repeats[0], spec.repeats[1]})},
              {"fusion", fusion},
              {"width", spec.width},
              {"fusion_width", spec.fusion_width},
              {"num_classes", spec.num_classes}};
  return doc.dump();
}

ArchitectureSpec deserialize(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SpecParseError("byte " + std::to_string(e.byte), "", "malformed JSON");
  }
  Reader::expect_keys(doc, "", {"cells", "fusion", "fusion_width", "num_classes", "repeats",
                                "schema_version", "width"});
  const int version = Reader::integer(doc["schema_version"], "/schema_version", "schema_version");
  if (version != ArchitectureSpec::kSchemaVersion)
    Reader::fail("/schema_version", "schema_version",
                 "unsupported version " + std::to_string(version));

  ArchitectureSpec spec;
  const auto& cells = doc["cells"];
  if (!cells.is_array() || cells.size() != 2)
    Reader::fail("/cells", "cells", "expected exactly two cells");
  spec.cell_x = Reader::cell(cells[0], "/cells/0");
  spec.cell_y = Reader::cell(cells[1], "/cells/1");

  const auto& repeats = doc["repeats"];
  if (!repeats.is_array() || repeats.size() != 2)
    Reader::fail("/repeats", "repeats", "expected two integers");
  spec.repeats = {Reader::integer(repeats[0], "/repeats/0", "repeats"),
                  Reader::integer(repeats[1], "/repeats/1", "repeats")};

  const auto& fusion = doc["fusion"];
  if (!fusion.is_array()) Reader::fail("/fusion", "fusion", "expected array");
  for (std::size_t d = 0; d < fusion.size(); ++d) {
    const std::string p = "/fusion/" + std::to_string(d);
    Reader::expect_keys(fusion[d], p, {"activation", "taps_x", "taps_y"});
    FusionLayerSpec layer;
    layer.activation = Reader::activation(fusion[d]["activation"], p + "/activation");
    layer.taps_x = Reader::bits(fusion[d]["taps_x"], p + "/taps_x", "taps_x");
    layer.taps_y = Reader::bits(fusion[d]["taps_y"], p + "/taps_y", "taps_y");
    spec.fusion.layers.push_back(std::move(layer));
  }
  spec.width = Reader::integer(doc["width"], "/width", "width");
  spec.fusion_width = Reader::integer(doc["fusion_width"], "/fusion_width", "fusion_width");
  spec.num_classes = Reader::integer(doc["num_classes"], "/num_classes", "num_classes");
  return spec;
}

std::uint64_t canonical_hash(const ArchitectureSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize(spec)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

}  // namespace mmnas
