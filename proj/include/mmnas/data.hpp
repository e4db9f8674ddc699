#ifndef MMNAS_DATA_HPP
#define MMNAS_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmnas/network.hpp"
#include "mmnas/rng.hpp"
#include "mmnas/tensor.hpp"

namespace mmnas {

enum class Split { Train, Validation, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;

  std::size_t total() const noexcept { return train + validation + test; }
  bool operator==(const SplitSizes&) const = default;
};

struct Batch {
  Tensor<float> x;
  Tensor<float> y;
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // dataset rows
};

// Aligned (x, y; z) samples. Rows are stored train, then validation, then
// test, so the splits are contiguous, disjoint and exhaustive.
struct BiModalDataset {
  Tensor<float> x;  // N x Cx x Hx x Wx
  Tensor<float> y;  // N x Cy x Hy x Wy
  std::vector<int> labels;
  SplitSizes splits;
  int num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::pair<std::size_t, std::size_t> range(Split split) const;
  std::size_t split_size(Split split) const;
  InputShape shape_x() const;
  InputShape shape_y() const;
  std::array<InputShape, 2> input_shapes() const { return {shape_x(), shape_y()}; }

  // Throws DataError on any broken invariant.
  void check() const;

  Batch gather(std::span<const std::size_t> rows) const;

  bool operator==(const BiModalDataset&) const = default;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public DataError {
 public:
  using DataError::DataError;
};
class ShortFileError : public DataError {
 public:
  using DataError::DataError;
};
class ShapeMismatchError : public DataError {
 public:
  using DataError::DataError;
};
class ManifestError : public DataError {
 public:
  using DataError::DataError;
};

struct SyntheticConfig {
  int k_a = 4;
  int k_b = 4;
  int image_size = 16;
  double sigma = 0.25;
  SplitSizes sizes{4000, 500, 2000};
  std::uint64_t seed = 0;

  int num_classes() const noexcept { return k_a * k_b; }
  // Bayes-optimal accuracy from one modality alone.
  double ceiling_x() const noexcept { return 1.0 / k_b; }
  double ceiling_y() const noexcept { return 1.0 / k_a; }
};

// z ~ U{0..K-1}; x has a bright horizontal band at row block z mod k_a, y a
// bright vertical band at column block z / k_a, both plus N(0, sigma^2)
// pixel noise. Per sample the generator draws the label, then x noise, then
// y noise, in row-major order.
BiModalDataset generate_synthetic(const SyntheticConfig& cfg);

// ---------------------------------------------------------------------------
// Files: a manifest.json beside one .rntf tensor file per modality per split
// (plus one for labels).

enum class TensorDType : std::uint32_t { F32 = 1, I32 = 2 };

struct TensorHeader {
  TensorDType dtype = TensorDType::F32;
  std::vector<std::uint64_t> dims;
  std::uint64_t payload_offset = 0;
};

void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t);
void write_label_file(const std::filesystem::path& path, std::span<const int> labels);
TensorHeader read_tensor_header(const std::filesystem::path& path);
Tensor<float> read_tensor_file(const std::filesystem::path& path);
std::vector<int> read_label_file(const std::filesystem::path& path);

struct ManifestInfo {
  int num_classes = 0;
  std::array<std::array<std::size_t, 3>, 2> sample_shape{};  // C, H, W per modality
  SplitSizes splits;
  std::filesystem::path root;
  std::array<std::array<std::filesystem::path, 3>, 3> files{};  // [split][x, y, labels]
};

// Writes manifest.json and the tensor files into `dir` (created if needed).
void save(const BiModalDataset& data, const std::filesystem::path& dir);

// Parses the manifest and checks every file header and size against it
// without reading payloads.
ManifestInfo inspect_manifest(const std::filesystem::path& manifest_or_dir);

BiModalDataset load_manifest(const std::filesystem::path& manifest_or_dir);

// Seeded mini-batch stream over one split. Every epoch is a fresh
// Fisher-Yates shuffle; the last partial batch is kept.
class BatchStream {
 public:
  BatchStream(const BiModalDataset& data, Split split, std::size_t batch_size, Rng rng);

  Batch next();
  std::vector<Batch> epoch();  // remaining batches of the current epoch
  std::size_t batches_per_epoch() const noexcept;
  std::size_t epochs_started() const noexcept { return epochs_; }

 private:
  void reshuffle();

  const BiModalDataset* data_;
  std::size_t begin_ = 0;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epochs_ = 0;
};

}  // namespace mmnas

#endif  // MMNAS_DATA_HPP
