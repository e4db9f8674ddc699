#include "mmnas/data.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

#include <json.hpp>

namespace mmnas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kTensorMagic[4] = {'R', 'N', 'T', 'F'};
constexpr std::uint32_t kTensorVersion = 1;
constexpr int kManifestVersion = 1;
constexpr std::array<const char*, 3> kSplitKeys = {"train", "validation", "test"};
constexpr std::array<const char*, 3> kFileKeys = {"x", "y", "labels"};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::string header_bytes(TensorDType dtype, const std::vector<std::uint64_t>& dims) {
  std::string h(kTensorMagic, 4);
  put_u32(h, kTensorVersion);
  put_u32(h, static_cast<std::uint32_t>(dtype));
  put_u32(h, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u64(h, d);
  return h;
}

void write_file(const fs::path& path, const std::string& header, const std::string& payload) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

std::uint64_t product(const std::vector<std::uint64_t>& dims) {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string read_payload(const fs::path& path, const TensorHeader& h) {
  const std::uint64_t bytes = product(h.dims) * 4;
  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(h.payload_offset));
  std::string buf(bytes, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::uint64_t>(in.gcount()) != bytes)
    throw ShortFileError(path.string() + ": payload truncated");
  return buf;
}

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw ManifestError("manifest: missing '" + std::string(key) + "' in " + where);
  return obj.at(key);
}

std::size_t manifest_count(const json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ManifestError("manifest: " + where + " must be a non-negative integer");
  return static_cast<std::size_t>(v.get<long long>());
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Validation:
      return "validation";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "validation" || name == "val") return Split::Validation;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

std::pair<std::size_t, std::size_t> BiModalDataset::range(Split split) const {
  switch (split) {
    case Split::Train:
      return {0, splits.train};
    case Split::Validation:
      return {splits.train, splits.train + splits.validation};
    case Split::Test:
      return {splits.train + splits.validation, splits.total()};
  }
  return {0, 0};
}

std::size_t BiModalDataset::split_size(Split split) const {
  auto [b, e] = range(split);
  return e - b;
}

InputShape BiModalDataset::shape_x() const {
  return {static_cast<int>(x.dim(1)), static_cast<int>(x.dim(2)), static_cast<int>(x.dim(3))};
}

InputShape BiModalDataset::shape_y() const {
  return {static_cast<int>(y.dim(1)), static_cast<int>(y.dim(2)), static_cast<int>(y.dim(3))};
}

void BiModalDataset::check() const {
  if (x.rank() != 4 || y.rank() != 4)
    throw ShapeMismatchError("dataset: modality tensors must be N x C x H x W, got " +
                             shape_str(x.shape()) + " and " + shape_str(y.shape()));
  if (x.dim(0) != labels.size() || y.dim(0) != labels.size())
    throw ShapeMismatchError("dataset: misaligned lengths x=" + std::to_string(x.dim(0)) +
                             " y=" + std::to_string(y.dim(0)) +
                             " labels=" + std::to_string(labels.size()));
  if (splits.total() != labels.size())
    throw ShapeMismatchError("dataset: splits cover " + std::to_string(splits.total()) +
                             " rows, dataset has " + std::to_string(labels.size()));
  if (num_classes < 2) throw DataError("dataset: num_classes must be >= 2");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw DataError("dataset: label " + std::to_string(labels[i]) + " at row " +
                      std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
}

Batch BiModalDataset::gather(std::span<const std::size_t> rows) const {
  const std::size_t sx = x.size() / std::max<std::size_t>(1, x.dim(0));
  const std::size_t sy = y.size() / std::max<std::size_t>(1, y.dim(0));
  Batch b;
  b.x = Tensor<float>({rows.size(), x.dim(1), x.dim(2), x.dim(3)});
  b.y = Tensor<float>({rows.size(), y.dim(1), y.dim(2), y.dim(3)});
  b.labels.reserve(rows.size());
  b.indices.assign(rows.begin(), rows.end());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    std::copy_n(x.ptr() + r * sx, sx, b.x.ptr() + i * sx);
    std::copy_n(y.ptr() + r * sy, sy, b.y.ptr() + i * sy);
    b.labels.push_back(labels[r]);
  }
  return b;
}

BiModalDataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.k_a < 2 || cfg.k_b < 2)
    throw std::invalid_argument("synthetic: k_a and k_b must be >= 2");
  if (cfg.image_size < cfg.k_a || cfg.image_size < cfg.k_b)
    throw std::invalid_argument("synthetic: image size " + std::to_string(cfg.image_size) +
                                " cannot hold " + std::to_string(std::max(cfg.k_a, cfg.k_b)) +
                                " band blocks");
  if (!(cfg.sigma >= 0.0)) throw std::invalid_argument("synthetic: sigma must be >= 0");

  const std::size_t n = cfg.sizes.total();
  const auto s = static_cast<std::size_t>(cfg.image_size);
  BiModalDataset d;
  d.x = Tensor<float>({n, 1, s, s});
  d.y = Tensor<float>({n, 1, s, s});
  d.labels.resize(n);
  d.splits = cfg.sizes;
  d.num_classes = cfg.num_classes();

  Rng rng(cfg.seed);
  const std::size_t plane = s * s;
  for (std::size_t i = 0; i < n; ++i) {
    const int z = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(d.num_classes)));
    d.labels[i] = z;
    const std::size_t row_block = static_cast<std::size_t>(z % cfg.k_a);
    const std::size_t col_block = static_cast<std::size_t>(z / cfg.k_a);
    const std::size_t r0 = row_block * s / cfg.k_a, r1 = (row_block + 1) * s / cfg.k_a;
    const std::size_t c0 = col_block * s / cfg.k_b, c1 = (col_block + 1) * s / cfg.k_b;
    float* xp = d.x.ptr() + i * plane;
    float* yp = d.y.ptr() + i * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t r = p / s;
      xp[p] = static_cast<float>((r >= r0 && r < r1 ? 1.0 : 0.0) + cfg.sigma * rng.normal());
    }
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t c = p % s;
      yp[p] = static_cast<float>((c >= c0 && c < c1 ? 1.0 : 0.0) + cfg.sigma * rng.normal());
    }
  }
  return d;
}

void write_tensor_file(const fs::path& path, const Tensor<float>& t) {
  std::vector<std::uint64_t> dims(t.shape().begin(), t.shape().end());
  std::string payload;
  payload.reserve(t.size() * 4);
  for (float v : t.data()) put_u32(payload, std::bit_cast<std::uint32_t>(v));
  write_file(path, header_bytes(TensorDType::F32, dims), payload);
}

void write_label_file(const fs::path& path, std::span<const int> labels) {
  std::string payload;
  payload.reserve(labels.size() * 4);
  for (int v : labels) put_u32(payload, static_cast<std::uint32_t>(v));
  write_file(path, header_bytes(TensorDType::I32, {labels.size()}), payload);
}

TensorHeader read_tensor_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tensor file " + path.string());
  unsigned char fixed[16];
  in.read(reinterpret_cast<char*>(fixed), sizeof fixed);
  if (in.gcount() >= 4 && std::string_view(reinterpret_cast<char*>(fixed), 4) !=
                              std::string_view(kTensorMagic, 4))
    throw BadMagicError(path.string() + ": bad magic (expected RNTF)");
  if (in.gcount() != sizeof fixed) throw ShortFileError(path.string() + ": truncated header");
  if (get_u32(fixed + 4) != kTensorVersion)
    throw DataError(path.string() + ": unsupported tensor version " +
                    std::to_string(get_u32(fixed + 4)));
  TensorHeader h;
  const auto dtype = get_u32(fixed + 8);
  if (dtype != 1 && dtype != 2)
    throw DataError(path.string() + ": unknown dtype code " + std::to_string(dtype));
  h.dtype = static_cast<TensorDType>(dtype);
  const auto rank = get_u32(fixed + 12);
  if (rank > 8) throw DataError(path.string() + ": implausible rank " + std::to_string(rank));
  std::vector<unsigned char> dims(rank * 8);
  in.read(reinterpret_cast<char*>(dims.data()), static_cast<std::streamsize>(dims.size()));
  if (static_cast<std::size_t>(in.gcount()) != dims.size())
    throw ShortFileError(path.string() + ": truncated header");
  for (std::uint32_t i = 0; i < rank; ++i) h.dims.push_back(get_u64(dims.data() + 8 * i));
  h.payload_offset = 16 + 8 * static_cast<std::uint64_t>(rank);
  const auto actual = fs::file_size(path);
  const auto expected = h.payload_offset + product(h.dims) * 4;
  if (actual < expected)
    throw ShortFileError(path.string() + ": " + std::to_string(actual) + " bytes, header needs " +
                         std::to_string(expected));
  if (actual > expected)
    throw ShapeMismatchError(path.string() + ": " + std::to_string(actual - expected) +
                             " trailing bytes beyond declared shape");
  return h;
}

Tensor<float> read_tensor_file(const fs::path& path) {
  const auto h = read_tensor_header(path);
  if (h.dtype != TensorDType::F32) throw DataError(path.string() + ": expected f32 tensor");
  const std::string buf = read_payload(path, h);
  Shape shape(h.dims.begin(), h.dims.end());
  Tensor<float> t(shape);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  return t;
}

std::vector<int> read_label_file(const fs::path& path) {
  const auto h = read_tensor_header(path);
  if (h.dtype != TensorDType::I32 || h.dims.size() != 1)
    throw DataError(path.string() + ": expected rank-1 i32 label tensor");
  const std::string buf = read_payload(path, h);
  std::vector<int> labels(h.dims[0]);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<int>(get_u32(p + 4 * i));
  return labels;
}

void save(const BiModalDataset& data, const fs::path& dir) {
  data.check();
  fs::create_directories(dir);
  json splits = json::object();
  const std::array<Split, 3> all = {Split::Train, Split::Validation, Split::Test};
  for (std::size_t s = 0; s < all.size(); ++s) {
    auto [b, e] = data.range(all[s]);
    std::vector<std::size_t> rows(e - b);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = b + i;
    const Batch part = data.gather(rows);
    const std::string tag = kSplitKeys[s];
    write_tensor_file(dir / ("x_" + tag + ".rntf"), part.x);
    write_tensor_file(dir / ("y_" + tag + ".rntf"), part.y);
    write_label_file(dir / ("labels_" + tag + ".rntf"), part.labels);
    splits[tag] = {{"count", rows.size()},
                   {"x", "x_" + tag + ".rntf"},
                   {"y", "y_" + tag + ".rntf"},
                   {"labels", "labels_" + tag + ".rntf"}};
  }
  json manifest = {
      {"schema_version", kManifestVersion},
      {"num_classes", data.num_classes},
      {"modalities",
       {{"x", {data.x.dim(1), data.x.dim(2), data.x.dim(3)}},
        {"y", {data.y.dim(1), data.y.dim(2), data.y.dim(3)}}}},
      {"splits", splits}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
}

ManifestInfo inspect_manifest(const fs::path& manifest_or_dir) {
  const fs::path path =
      fs::is_directory(manifest_or_dir) ? manifest_or_dir / "manifest.json" : manifest_or_dir;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ManifestError("manifest " + path.string() + ": malformed JSON at byte " +
                        std::to_string(e.byte));
  }
  ManifestInfo info;
  info.root = path.parent_path();
  const auto& version = field(doc, "schema_version", "manifest");
  if (!version.is_number_integer() || version.get<int>() != kManifestVersion)
    throw ManifestError("manifest: unsupported schema_version");
  const auto classes = manifest_count(field(doc, "num_classes", "manifest"), "num_classes");
  if (classes < 2) throw ManifestError("manifest: num_classes must be >= 2");
  info.num_classes = static_cast<int>(classes);
  const auto& modalities = field(doc, "modalities", "manifest");
  for (int m = 0; m < 2; ++m) {
    const char* name = m == 0 ? "x" : "y";
    const auto& shape = field(modalities, name, "modalities");
    if (!shape.is_array() || shape.size() != 3)
      throw ManifestError(std::string("manifest: modalities.") + name + " must be [C, H, W]");
    for (int i = 0; i < 3; ++i)
      info.sample_shape[m][i] =
          manifest_count(shape[i], std::string("modalities.") + name + " dimension");
  }
  const auto& splits = field(doc, "splits", "manifest");
  std::array<std::size_t*, 3> counts = {&info.splits.train, &info.splits.validation,
                                        &info.splits.test};
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string where = std::string("splits.") + kSplitKeys[s];
    const auto& split = field(splits, kSplitKeys[s], "splits");
    const std::size_t count = manifest_count(field(split, "count", where), where + ".count");
    *counts[s] = count;
    for (std::size_t f = 0; f < 3; ++f) {
      const auto& name = field(split, kFileKeys[f], where);
      if (!name.is_string()) throw ManifestError("manifest: " + where + " file names must be strings");
      const fs::path file = info.root / name.get<std::string>();
      info.files[s][f] = file;
      const auto h = read_tensor_header(file);
      std::vector<std::uint64_t> want;
      if (f < 2) {
        want = {count, info.sample_shape[f][0], info.sample_shape[f][1], info.sample_shape[f][2]};
        if (h.dtype != TensorDType::F32)
          throw ShapeMismatchError(file.string() + ": modality tensor must be f32");
      } else {
        want = {count};
        if (h.dtype != TensorDType::I32)
          throw ShapeMismatchError(file.string() + ": label tensor must be i32");
      }
      if (h.dims != want) {
        Shape have(h.dims.begin(), h.dims.end()), expect(want.begin(), want.end());
        throw ShapeMismatchError(file.string() + ": shape " + shape_str(have) +
                                 " does not match manifest " + shape_str(expect));
      }
    }
  }
  return info;
}

BiModalDataset load_manifest(const fs::path& manifest_or_dir) {
  const ManifestInfo info = inspect_manifest(manifest_or_dir);
  BiModalDataset d;
  d.num_classes = info.num_classes;
  d.splits = info.splits;
  const std::size_t n = info.splits.total();
  std::array<Tensor<float>*, 2> dst = {&d.x, &d.y};
  for (int m = 0; m < 2; ++m) {
    const auto& s = info.sample_shape[m];
    *dst[m] = Tensor<float>({n, s[0], s[1], s[2]});
  }
  std::size_t row = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (int m = 0; m < 2; ++m) {
      const auto part = read_tensor_file(info.files[s][m]);
      std::copy(part.data().begin(), part.data().end(),
                dst[m]->ptr() + row * (dst[m]->size() / std::max<std::size_t>(1, n)));
    }
    const auto labels = read_label_file(info.files[s][2]);
    d.labels.insert(d.labels.end(), labels.begin(), labels.end());
    row += labels.size();
  }
  d.check();
  return d;
}

BatchStream::BatchStream(const BiModalDataset& data, Split split, std::size_t batch_size, Rng rng)
    : data_(&data), batch_size_(batch_size), rng_(rng) {
  auto [b, e] = data.range(split);
  if (e == b) throw DataError("batches: split '" + std::string(to_string(split)) + "' is empty");
  if (batch_size == 0) throw std::invalid_argument("batches: batch size must be >= 1");
  begin_ = b;
  order_.resize(e - b);
  cursor_ = order_.size();
}

void BatchStream::reshuffle() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = begin_ + i;
  for (std::size_t i = order_.size(); i > 1; --i)
    std::swap(order_[i - 1], order_[rng_.uniform_int(i)]);
  cursor_ = 0;
  ++epochs_;
}

Batch BatchStream::next() {
  if (cursor_ >= order_.size()) reshuffle();
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::span<const std::size_t> rows(order_.data() + cursor_, end - cursor_);
  cursor_ = end;
  return data_->gather(rows);
}

std::vector<Batch> BatchStream::epoch() {
  if (cursor_ >= order_.size()) reshuffle();
  std::vector<Batch> out;
  while (cursor_ < order_.size()) out.push_back(next());
  return out;
}

std::size_t BatchStream::batches_per_epoch() const noexcept {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

}  // namespace mmnas
