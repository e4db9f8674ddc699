#include <doctest.h>

#include <fstream>
#include <set>

#include "mmnas/data.hpp"
#include "test_util.hpp"

using namespace mmnas;
namespace fs = std::filesystem;

namespace {

std::string fnv1a_hex(const void* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return hash_hex(h);
}

BiModalDataset random_dataset(std::uint64_t seed) {
  Rng rng(seed);
  const SplitSizes sizes{1 + rng.uniform_int(5), rng.uniform_int(4), 1 + rng.uniform_int(4)};
  const std::size_t n = sizes.total();
  BiModalDataset d;
  d.x = testutil::random_tensor<float>({n, 1 + rng.uniform_int(3), 2 + rng.uniform_int(5),
                                        2 + rng.uniform_int(5)},
                                       rng, -3, 3);
  d.y = testutil::random_tensor<float>({n, 1 + rng.uniform_int(2), 1 + rng.uniform_int(7),
                                        3 + rng.uniform_int(4)},
                                       rng, -3, 3);
  d.num_classes = 2 + static_cast<int>(rng.uniform_int(9));
  for (std::size_t i = 0; i < n; ++i)
    d.labels.push_back(static_cast<int>(rng.uniform_int(std::uint64_t(d.num_classes))));
  d.splits = sizes;
  return d;
}

// Header only: the payload is a sparse hole of the right length.
void write_sparse_tensor(const fs::path& path, TensorDType dtype,
                         const std::vector<std::uint64_t>& dims) {
  std::string h = "RNTF";
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) h.push_back(char((v >> (8 * i)) & 0xff));
  };
  auto u64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) h.push_back(char((v >> (8 * i)) & 0xff));
  };
  u32(1);
  u32(static_cast<std::uint32_t>(dtype));
  u32(static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) u64(d);
  {
    std::ofstream out(path, std::ios::binary);
    out << h;
  }
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  fs::resize_file(path, h.size() + 4 * n);
}

}  // namespace

TEST_CASE("synthetic: matches the independent generator") {
  const auto golden = testutil::read_json(testutil::golden("synthetic_seed13_n100.json"));
  const auto d = testutil::tiny_synthetic(13, {60, 20, 20}, golden["sigma"].get<double>());
  REQUIRE(d.size() == 100);
  CHECK(fnv1a_hex(d.x.ptr(), d.x.size() * 4) == golden["fnv1a_x"].get<std::string>());
  CHECK(fnv1a_hex(d.y.ptr(), d.y.size() * 4) == golden["fnv1a_y"].get<std::string>());
  std::vector<std::int32_t> labels(d.labels.begin(), d.labels.end());
  CHECK(fnv1a_hex(labels.data(), labels.size() * 4) == golden["fnv1a_labels"].get<std::string>());
  for (std::size_t i = 0; i < golden["labels_head"].size(); ++i)
    CHECK(d.labels[i] == golden["labels_head"][i].get<int>());
  for (std::size_t i = 0; i < golden["x0_head"].size(); ++i)
    CHECK(d.x[i] == static_cast<float>(golden["x0_head"][i].get<double>()));
}

TEST_CASE("synthetic: noiseless bands encode the label factors") {
  SyntheticConfig cfg;
  cfg.sigma = 0;
  cfg.sizes = {200, 20, 20};
  cfg.seed = 5;
  const auto d = generate_synthetic(cfg);
  CHECK(d.num_classes == 16);
  CHECK(d.shape_x() == InputShape{1, 16, 16});
  std::set<int> seen;
  for (std::size_t n = 0; n < d.size(); ++n) {
    const int z = d.labels[n];
    seen.insert(z);
    const int a = z % cfg.k_a, b = z / cfg.k_a;
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c) {
        CHECK(d.x.at(n, 0, r, c) == (int(r) / 4 == a ? 1.0f : 0.0f));
        CHECK(d.y.at(n, 0, r, c) == (int(c) / 4 == b ? 1.0f : 0.0f));
      }
  }
  CHECK(seen.size() == 16);
  // x alone cannot tell labels that share a row band apart.
  CHECK(cfg.ceiling_x() == doctest::Approx(0.25));
  CHECK(d.range(Split::Validation) == std::pair<std::size_t, std::size_t>{200, 220});
  CHECK(d.split_size(Split::Test) == 20);
}

TEST_CASE("synthetic: determinism and config errors") {
  CHECK(testutil::tiny_synthetic(3, {10, 2, 2}) == testutil::tiny_synthetic(3, {10, 2, 2}));
  CHECK_FALSE(testutil::tiny_synthetic(3, {10, 2, 2}) == testutil::tiny_synthetic(4, {10, 2, 2}));
  SyntheticConfig cfg;
  cfg.k_a = 1;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  cfg = {};
  cfg.image_size = 3;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  cfg = {};
  cfg.sigma = -1;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
}

TEST_CASE("dataset check: broken invariants") {
  auto d = testutil::tiny_synthetic(1, {4, 2, 2});
  CHECK_NOTHROW(d.check());
  auto bad = d;
  bad.labels[3] = 99;
  CHECK_THROWS_AS(bad.check(), DataError);
  bad = d;
  bad.splits.test = 5;
  CHECK_THROWS_AS(bad.check(), ShapeMismatchError);
  bad = d;
  bad.labels.pop_back();
  CHECK_THROWS_AS(bad.check(), ShapeMismatchError);
  CHECK(parse_split("validation") == Split::Validation);
  CHECK_THROWS(parse_split("dev"));
}

TEST_CASE("tensor files and manifests round trip") {
  testutil::TempDir tmp("data_rt");
  for (std::uint64_t s = 0; s < 10; ++s) {
    CAPTURE(s);
    const auto d = random_dataset(s);
    const auto dir = tmp / ("ds" + std::to_string(s));
    save(d, dir);
    const auto back = load_manifest(dir);
    CHECK(back == d);
    const auto info = inspect_manifest(dir / "manifest.json");
    CHECK(info.splits == d.splits);
    CHECK(info.num_classes == d.num_classes);

    write_tensor_file(tmp / "t.rntf", d.x);
    CHECK(read_tensor_file(tmp / "t.rntf") == d.x);
  }
  const std::vector<int> labels{0, -1, 7, 2147483647};
  write_label_file(tmp / "l.rntf", labels);
  CHECK(read_label_file(tmp / "l.rntf") == labels);
  CHECK(read_tensor_header(tmp / "l.rntf").dtype == TensorDType::I32);
}

TEST_CASE("tensor files: each corruption has its own error") {
  testutil::TempDir tmp("data_bad");
  Rng rng(1);
  const auto t = testutil::random_tensor<float>({2, 3}, rng);
  const auto good = tmp / "good.rntf";
  write_tensor_file(good, t);
  const std::string bytes = testutil::slurp(good);
  auto put = [&](const std::string& name, const std::string& b) {
    std::ofstream(tmp / name, std::ios::binary) << b;
    return tmp / name;
  };
  CHECK_THROWS_AS(read_tensor_file(put("magic.rntf", "XNTF" + bytes.substr(4))), BadMagicError);
  CHECK_THROWS_AS(read_tensor_file(put("short.rntf", bytes.substr(0, bytes.size() - 4))),
                  ShortFileError);
  CHECK_THROWS_AS(read_tensor_file(put("hdr.rntf", bytes.substr(0, 10))), ShortFileError);
  CHECK_THROWS_AS(read_tensor_file(put("long.rntf", bytes + "abcd")), ShapeMismatchError);
  CHECK_THROWS_AS(read_label_file(good), DataError);
  CHECK_THROWS_AS(read_tensor_file(tmp / "absent.rntf"), DataError);

  // Manifest-level failures.
  const auto d = random_dataset(2);
  save(d, tmp / "ds");
  const auto manifest = testutil::slurp(tmp / "ds" / "manifest.json");
  put("ds/manifest.json", manifest.substr(0, manifest.size() / 2));
  CHECK_THROWS_AS(load_manifest(tmp / "ds"), ManifestError);
  auto doc = nlohmann::json::parse(manifest);
  doc.erase("num_classes");
  put("ds/manifest.json", doc.dump());
  CHECK_THROWS_WITH_AS(load_manifest(tmp / "ds"), doctest::Contains("num_classes"), ManifestError);
  doc = nlohmann::json::parse(manifest);
  doc["splits"]["train"]["count"] = d.splits.train + 1;
  put("ds/manifest.json", doc.dump());
  CHECK_THROWS_AS(load_manifest(tmp / "ds"), ShapeMismatchError);
}

TEST_CASE("inspect_manifest: full-size AV-MNIST layout without payloads") {
  testutil::TempDir tmp("avmnist");
  const std::array<std::pair<const char*, std::uint64_t>, 3> splits{
      {{"train", 55000}, {"validation", 5000}, {"test", 10000}}};
  nlohmann::json s = nlohmann::json::object();
  for (const auto& [name, n] : splits) {
    const std::string tag = name;
    write_sparse_tensor(tmp / ("x_" + tag + ".rntf"), TensorDType::F32, {n, 1, 28, 28});
    write_sparse_tensor(tmp / ("y_" + tag + ".rntf"), TensorDType::F32, {n, 1, 112, 112});
    write_sparse_tensor(tmp / ("labels_" + tag + ".rntf"), TensorDType::I32, {n});
    s[tag] = {{"count", n},
              {"x", "x_" + tag + ".rntf"},
              {"y", "y_" + tag + ".rntf"},
              {"labels", "labels_" + tag + ".rntf"}};
  }
  nlohmann::json m = {{"schema_version", 1},
                      {"num_classes", 10},
                      {"modalities", {{"x", {1, 28, 28}}, {"y", {1, 112, 112}}}},
                      {"splits", s}};
  std::ofstream(tmp / "manifest.json") << m.dump();
  const auto info = inspect_manifest(tmp.path);
  CHECK(info.splits == SplitSizes{55000, 5000, 10000});
  CHECK(info.sample_shape[1] == std::array<std::size_t, 3>{1, 112, 112});
  CHECK(info.num_classes == 10);

  write_sparse_tensor(tmp / "y_test.rntf", TensorDType::F32, {10000, 1, 112, 111});
  CHECK_THROWS_WITH_AS(inspect_manifest(tmp.path), doctest::Contains("y_test"), ShapeMismatchError);
}

TEST_CASE("BatchStream: epochs are seeded permutations of the split") {
  const auto d = testutil::tiny_synthetic(2, {10, 3, 7});
  BatchStream a(d, Split::Train, 4, Rng(9));
  BatchStream b(d, Split::Train, 4, Rng(9));
  CHECK(a.batches_per_epoch() == 3);
  for (int e = 0; e < 3; ++e) {
    const auto ea = a.epoch();
    const auto eb = b.epoch();
    REQUIRE(ea.size() == 3);
    CHECK(ea.back().labels.size() == 2);  // partial batch kept
    std::multiset<std::size_t> rows;
    for (std::size_t i = 0; i < ea.size(); ++i) {
      CHECK(ea[i].indices == eb[i].indices);
      CHECK(ea[i].x.dim(0) == ea[i].labels.size());
      for (std::size_t k = 0; k < ea[i].indices.size(); ++k) {
        const auto r = ea[i].indices[k];
        rows.insert(r);
        CHECK(ea[i].labels[k] == d.labels[r]);
        CHECK(ea[i].y.at(k, 0, 3, 5) == d.y.at(r, 0, 3, 5));
      }
    }
    CHECK(rows == std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  }
  CHECK(a.epochs_started() == 3);

  BatchStream t(d, Split::Test, 100, Rng(1));
  const auto batch = t.next();
  CHECK(batch.indices.size() == 7);
  for (auto r : batch.indices) CHECK(r >= 13);

  CHECK_THROWS_AS(BatchStream(d, Split::Train, 0, Rng(1)), std::invalid_argument);
  auto empty = testutil::tiny_synthetic(2, {10, 0, 7});
  CHECK_THROWS_AS(BatchStream(empty, Split::Validation, 2, Rng(1)), DataError);
}
