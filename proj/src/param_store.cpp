#include "mmnas/param_store.hpp"

#include <bit>
#include <charconv>
#include <cmath>

namespace mmnas {

namespace {

constexpr char kMagic[4] = {'R', 'N', 'P', 'S'};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n)
      throw SnapshotError("snapshot: truncated image at byte " + std::to_string(pos_));
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

int parse_index(std::string_view field, char prefix, std::string_view whole) {
  int v = 0;
  if (field.size() < 2 || field[0] != prefix ||
      std::from_chars(field.data() + 1, field.data() + field.size(), v).ec != std::errc() ||
      v < 0)
    throw std::invalid_argument("param key: malformed component '" + std::string(field) +
                                "' in '" + std::string(whole) + "'");
  return v;
}

}  // namespace

std::string_view to_string(ParamScope scope) {
  switch (scope) {
    case ParamScope::Feature:
      return "feature";
    case ParamScope::Fusion:
      return "fusion";
    case ParamScope::Head:
      return "head";
  }
  return "?";
}

ParamKey ParamKey::stem(int modality) {
  ParamKey k;
  k.modality = modality;
  return k;
}

ParamKey ParamKey::node(int modality, int cell, int layer, OperationKind op) {
  ParamKey k;
  k.modality = modality;
  k.cell = cell;
  k.layer = layer;
  k.op = op;
  return k;
}

ParamKey ParamKey::fusion(int depth) {
  ParamKey k;
  k.scope = ParamScope::Fusion;
  k.depth = depth;
  return k;
}

ParamKey ParamKey::head() {
  ParamKey k;
  k.scope = ParamScope::Head;
  return k;
}

std::string ParamKey::str() const {
  switch (scope) {
    case ParamScope::Feature:
      if (cell == 0) return "feature/m" + std::to_string(modality) + "/stem";
      return "feature/m" + std::to_string(modality) + "/c" + std::to_string(cell) + "/l" +
             std::to_string(layer) + "/" + std::string(to_string(op));
    case ParamScope::Fusion:
      return "fusion/d" + std::to_string(depth);
    case ParamScope::Head:
      return "head";
  }
  return {};
}

ParamKey ParamKey::parse(std::string_view text) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto slash = text.find('/', start);
    parts.push_back(text.substr(start, slash - start));
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  if (parts.size() == 1 && parts[0] == "head") return head();
  if (parts.size() == 2 && parts[0] == "fusion") return fusion(parse_index(parts[1], 'd', text));
  if (parts.size() == 3 && parts[0] == "feature" && parts[2] == "stem")
    return stem(parse_index(parts[1], 'm', text));
  if (parts.size() == 5 && parts[0] == "feature") {
    auto op = parse_operation(parts[4]);
    if (!op) throw std::invalid_argument("param key: unknown op in '" + std::string(text) + "'");
    return node(parse_index(parts[1], 'm', text), parse_index(parts[2], 'c', text),
                parse_index(parts[3], 'l', text), *op);
  }
  throw std::invalid_argument("param key: cannot parse '" + std::string(text) + "'");
}

template <class T>
Parameter<T>& ParamEntry<T>::get(std::string_view name) {
  for (auto& p : tensors)
    if (p.name == name) return p;
  throw std::out_of_range("parameter entry has no tensor '" + std::string(name) + "'");
}

template <class T>
const Parameter<T>& ParamEntry<T>::get(std::string_view name) const {
  for (const auto& p : tensors)
    if (p.name == name) return p;
  throw std::out_of_range("parameter entry has no tensor '" + std::string(name) + "'");
}

template <class T>
std::size_t ParamEntry<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : tensors) n += p.var.value().size();
  return n;
}

template <class T>
ParamEntry<T>& BasicParamStore<T>::get_or_init(const ParamKey& key,
                                               const std::vector<TensorSpec>& specs, Rng& rng) {
  if (auto it = entries_.find(key); it != entries_.end()) {
    auto& entry = it->second;
    bool same = entry.tensors.size() == specs.size();
    for (std::size_t i = 0; same && i < specs.size(); ++i)
      same = entry.tensors[i].name == specs[i].name &&
             entry.tensors[i].var.shape() == specs[i].shape;
    if (!same) {
      std::string have, want;
      for (const auto& p : entry.tensors) have += " " + p.name + shape_str(p.var.shape());
      for (const auto& s : specs) want += " " + s.name + shape_str(s.shape);
      throw ParamShapeConflict("param store: key " + key.str() + " allocated as{" + have +
                               " } but requested as{" + want + " }");
    }
    return entry;
  }
  ParamEntry<T> entry;
  for (const auto& s : specs) {
    Tensor<T> t(s.shape);
    if (!s.zero_init) {
      const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(1, s.fan_in)));
      for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    }
    entry.tensors.push_back({s.name, Var<T>::parameter(std::move(t)), {}});
  }
  return entries_.emplace(key, std::move(entry)).first->second;
}

template <class T>
ParamEntry<T>* BasicParamStore<T>::find(const ParamKey& key) {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

template <class T>
const ParamEntry<T>* BasicParamStore<T>::find(const ParamKey& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

template <class T>
std::size_t BasicParamStore<T>::count_params(std::optional<ParamScope> scope) const {
  std::size_t n = 0;
  for (const auto& [key, entry] : entries_)
    if (!scope || key.scope == *scope) n += entry.count();
  return n;
}

template <class T>
BasicParamStore<T> BasicParamStore<T>::clone() const {
  BasicParamStore copy(0);
  copy.rng_ = rng_;
  for (const auto& [key, entry] : entries_) {
    ParamEntry<T> dup;
    for (const auto& p : entry.tensors)
      dup.tensors.push_back({p.name, Var<T>::parameter(p.var.value()), p.adam});
    copy.entries_.emplace(key, std::move(dup));
  }
  return copy;
}

template <class T>
std::string BasicParamStore<T>::snapshot() const {
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kSnapshotVersion);
  w.u64(rng_.state());
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [key, entry] : entries_) {
    w.str(key.str());
    w.u32(static_cast<std::uint32_t>(entry.tensors.size()));
    for (const auto& p : entry.tensors) {
      const auto& value = p.var.value();
      w.str(p.name);
      w.u32(static_cast<std::uint32_t>(value.rank()));
      for (auto d : value.shape()) w.u64(d);
      for (std::size_t i = 0; i < value.size(); ++i) w.f32(static_cast<float>(value[i]));
      w.u64(static_cast<std::uint64_t>(p.adam.step));
      const bool moments = p.adam.m.size() == value.size();
      w.u8(moments ? 1 : 0);
      if (moments) {
        for (std::size_t i = 0; i < value.size(); ++i) w.f32(static_cast<float>(p.adam.m[i]));
        for (std::size_t i = 0; i < value.size(); ++i) w.f32(static_cast<float>(p.adam.v[i]));
      }
    }
  }
  return w.take();
}

template <class T>
BasicParamStore<T> BasicParamStore<T>::restore(std::string_view image) {
  ByteReader r(image);
  if (r.raw(4) != std::string_view(kMagic, 4))
    throw SnapshotError("snapshot: bad magic (expected RNPS)");
  const auto version = r.u32();
  if (version != kSnapshotVersion)
    throw SnapshotError("snapshot: unsupported version " + std::to_string(version) +
                        " (reader supports " + std::to_string(kSnapshotVersion) + ")");
  BasicParamStore store(0);
  store.rng_.set_state(r.u64());
  const auto n_entries = r.u32();
  for (std::uint32_t e = 0; e < n_entries; ++e) {
    const std::string key_text = r.str();
    ParamKey key;
    try {
      key = ParamKey::parse(key_text);
    } catch (const std::invalid_argument& ex) {
      throw SnapshotError(std::string("snapshot: ") + ex.what());
    }
    ParamEntry<T> entry;
    const auto n_tensors = r.u32();
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
      Parameter<T> p;
      p.name = r.str();
      const auto rank = r.u32();
      if (rank > 8) throw SnapshotError("snapshot: implausible rank " + std::to_string(rank));
      Shape shape(rank);
      std::size_t count = 1;
      for (auto& d : shape) {
        d = static_cast<std::size_t>(r.u64());
        if (d != 0 && count > image.size() / d)
          throw SnapshotError("snapshot: tensor dims exceed image size");
        count *= d;
      }
      if (count * 4 > image.size()) throw SnapshotError("snapshot: tensor larger than image");
      Tensor<T> value(shape);
      for (std::size_t i = 0; i < count; ++i) value[i] = static_cast<T>(r.f32());
      p.adam.step = static_cast<std::int64_t>(r.u64());
      const auto moments = r.u8();
      if (moments > 1) throw SnapshotError("snapshot: bad moment flag");
      if (moments) {
        p.adam.m = Tensor<T>(shape);
        p.adam.v = Tensor<T>(shape);
        for (std::size_t i = 0; i < count; ++i) p.adam.m[i] = static_cast<T>(r.f32());
        for (std::size_t i = 0; i < count; ++i) p.adam.v[i] = static_cast<T>(r.f32());
      }
      p.var = Var<T>::parameter(std::move(value));
      entry.tensors.push_back(std::move(p));
    }
    if (!store.entries_.emplace(key, std::move(entry)).second)
      throw SnapshotError("snapshot: duplicate key " + key_text);
  }
  if (!r.done()) throw SnapshotError("snapshot: trailing bytes after last entry");
  return store;
}

template struct ParamEntry<float>;
template struct ParamEntry<double>;
template class BasicParamStore<float>;
template class BasicParamStore<double>;

}  // namespace mmnas
