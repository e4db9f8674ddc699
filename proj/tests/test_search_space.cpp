#include <doctest.h>

#include <set>

#include "mmnas/search_space.hpp"
#include "test_util.hpp"

using namespace mmnas;

namespace {

SearchSpaceConfig space(int layers, int depth, int cells, double p) {
  SearchSpaceConfig c;
  c.layers = layers;
  c.fusion_depth = depth;
  c.repeats = {cells, cells};
  c.skip_probability = p;
  return c;
}

std::vector<std::uint8_t> bits_of(const nlohmann::json& j) {
  return j.get<std::vector<std::uint8_t>>();
}

// Every bit vector of length n.
std::vector<std::vector<std::uint8_t>> all_masks(int n) {
  std::vector<std::vector<std::uint8_t>> out;
  for (int m = 0; m < (1 << n); ++m) {
    std::vector<std::uint8_t> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = (m >> i) & 1;
    out.push_back(v);
  }
  return out;
}

void enumerate_cells(int layers, CellSpec& cur, std::set<std::string>& seen) {
  const int l = static_cast<int>(cur.layers.size()) + 1;
  if (l > layers) {
    ArchitectureSpec s;
    s.cell_x = cur;
    seen.insert(serialize(s));
    return;
  }
  for (auto op : kAllOperations)
    for (auto act : kAllActivations)
      for (const auto& skips : all_masks(l - 1)) {
        cur.layers.push_back({op, act, skips});
        enumerate_cells(layers, cur, seen);
        cur.layers.pop_back();
      }
}

void enumerate_fusion(int depth, int cells, FusionSpec& cur, std::set<std::string>& seen) {
  const int d = static_cast<int>(cur.layers.size()) + 1;
  if (d > depth) {
    ArchitectureSpec s;
    s.fusion = cur;
    seen.insert(serialize(s));
    return;
  }
  const int n = taps_at_depth(d, cells);
  for (auto act : kAllActivations)
    for (const auto& tx : all_masks(n))
      for (const auto& ty : all_masks(n)) {
        cur.layers.push_back({act, tx, ty});
        enumerate_fusion(depth, cells, cur, seen);
        cur.layers.pop_back();
      }
}

}  // namespace

TEST_CASE("rng: published SplitMix64 sequence") {
  // First outputs for seed 0 and 1234567 from the reference C implementation.
  Rng r(0);
  CHECK(r.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(r.next_u64() == 0x6e789e6aa1b965f4ULL);
  CHECK(r.next_u64() == 0x06c45d188009454fULL);
  Rng s(1234567);
  CHECK(s.next_u64() == 6457827717110365317ULL);
  CHECK(s.next_u64() == 3203168211198807973ULL);
}

TEST_CASE("rng: uniform range and integer draws") {
  Rng r(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.uniform_int(6) < 6);
  }
  Rng a(9), b(9);
  a.uniform_int(1000);
  b.next_u64();
  CHECK(a.state() == b.state());  // one draw per integer
  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 1) != derive_seed(2, 1));
}

TEST_CASE("sample_cell: degenerate skip probabilities") {
  Rng r(3);
  auto c0 = sample_cell(space(5, 3, 3, 0.0), r);
  for (const auto& l : c0.layers)
    for (auto b : l.skips) CHECK(b == 0);
  auto c1 = sample_cell(space(3, 3, 3, 1.0), r);
  REQUIRE(c1.layers.size() == 3);
  CHECK(c1.layers[2].skips == std::vector<std::uint8_t>{1, 1});
}

TEST_CASE("sample_cell: draw count is op, activation, then l-1 bits") {
  Rng r(77), ref(77);
  sample_cell(space(5, 3, 3, 0.5), r);
  for (int i = 0; i < 5 * 2 + (0 + 1 + 2 + 3 + 4); ++i) ref.next_u64();
  CHECK(r.state() == ref.state());
}

TEST_CASE("sample_cell: golden fixture seed 42") {
  const auto g = testutil::read_json(testutil::golden("cell_L5_p05_seed42.json"));
  Rng r(g["seed"].get<std::uint64_t>());
  const auto cell = sample_cell(space(g["layers"], 3, 3, g["p"]), r);
  REQUIRE(cell.layers.size() == g["cell"].size());
  for (std::size_t l = 0; l < cell.layers.size(); ++l) {
    CHECK(to_string(cell.layers[l].op) == g["cell"][l]["op"].get<std::string>());
    CHECK(to_string(cell.layers[l].activation) == g["cell"][l]["activation"].get<std::string>());
    CHECK(cell.layers[l].skips == bits_of(g["cell"][l]["skips"]));
  }
}

TEST_CASE("sample_fusion: golden fixture seed 7") {
  const auto g = testutil::read_json(testutil::golden("fusion_D3_C3_p05_seed7.json"));
  Rng r(g["seed"].get<std::uint64_t>());
  const auto f = sample_fusion(space(5, g["depth"], g["cells"], g["p"]), r);
  REQUIRE(f.layers.size() == 3);
  for (std::size_t d = 0; d < 3; ++d) {
    CHECK(to_string(f.layers[d].activation) == g["fusion"][d]["activation"].get<std::string>());
    CHECK(f.layers[d].taps_x == bits_of(g["fusion"][d]["taps_x"]));
    CHECK(f.layers[d].taps_y == bits_of(g["fusion"][d]["taps_y"]));
  }
}

TEST_CASE("sample_fusion: degenerate probabilities") {
  Rng r(1);
  auto full = sample_fusion(space(5, 3, 3, 1.0), r);
  int expected[] = {2, 4, 6};
  for (int d = 0; d < 3; ++d) {
    int set = 0;
    for (auto b : full.layers[d].taps_x) set += b;
    for (auto b : full.layers[d].taps_y) set += b;
    CHECK(set == expected[d]);
  }
  Rng z(1), untouched(1);
  auto none = sample_fusion(space(5, 2, 2, 0.0), z);
  CHECK(none.layers[0].taps_x == std::vector<std::uint8_t>{1});
  CHECK(none.layers[0].taps_y == std::vector<std::uint8_t>{0});
  CHECK(none.layers[1].taps_x == std::vector<std::uint8_t>{0, 0});
  // p = 0: depth 1 consumes only its activation draw, depth 2 its 4 bits and activation.
  for (int i = 0; i < 1 + 4 + 1; ++i) untouched.next_u64();
  CHECK(z.state() == untouched.state());
}

TEST_CASE("sample_fusion: depth-1 masks are never empty") {
  for (std::uint64_t s = 0; s < 500; ++s) {
    Rng r(s);
    auto f = sample_fusion(space(5, 3, 3, 0.25), r);
    CHECK((f.layers[0].taps_x[0] | f.layers[0].taps_y[0]) == 1);
  }
}

TEST_CASE("sample_architecture: determinism and distinctness") {
  const auto cfg = space(5, 3, 3, 0.5);
  Rng a(42), b(42);
  CHECK(serialize(sample_architecture(cfg, a)) == serialize(sample_architecture(cfg, b)));
  std::set<std::uint64_t> hashes;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng r(s);
    hashes.insert(canonical_hash(sample_architecture(cfg, r)));
  }
  CHECK(hashes.size() >= 99);
}

TEST_CASE("sample_architecture: composes cell x, cell y, fusion in order") {
  const auto cfg = space(4, 3, 3, 0.5);
  Rng r(11), manual(11);
  const auto spec = sample_architecture(cfg, r);
  CHECK(spec.cell_x == sample_cell(cfg, manual, 0));
  CHECK(spec.cell_y == sample_cell(cfg, manual, 1));
  CHECK(spec.fusion == sample_fusion(cfg, manual));
  CHECK(r.state() == manual.state());
}

TEST_CASE("cardinality: closed forms") {
  CHECK(cell_cardinality(1) == 24);
  CHECK(cell_cardinality(2) == 1152);
  CHECK(cell_cardinality(5) == BigInt("8153726976"));
  CHECK(fusion_cardinality(1, 1) == 16);
  CHECK(fusion_cardinality(2, 1) == 256);
  CHECK(fusion_cardinality(3, 3) == 262144);
  CHECK(cell_cardinality(20) > BigInt("18446744073709551616"));
  CHECK_THROWS_AS(cell_cardinality(0), std::invalid_argument);
  CHECK_THROWS_AS(fusion_cardinality(1, 2), std::invalid_argument);
}

TEST_CASE("cardinality: brute-force enumeration agrees") {
  for (int L = 1; L <= 2; ++L) {
    std::set<std::string> seen;
    CellSpec cur;
    enumerate_cells(L, cur, seen);
    CHECK(BigInt(seen.size()) == cell_cardinality(L));
  }
  for (auto [D, C] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{2, 2}}) {
    std::set<std::string> seen;
    FusionSpec cur;
    enumerate_fusion(D, C, cur, seen);
    CHECK(BigInt(seen.size()) == fusion_cardinality(D, C));
  }
}

TEST_CASE("cardinality: the sampler reaches every enumerated configuration") {
  // L = 2: all 1152 cells.
  {
    std::set<std::string> seen;
    Rng r(5);
    const auto cfg = space(2, 3, 3, 0.5);
    for (int i = 0; i < 40000; ++i) {
      ArchitectureSpec s;
      s.cell_x = sample_cell(cfg, r);
      seen.insert(serialize(s));
    }
    CHECK(BigInt(seen.size()) == cell_cardinality(2));
  }
  // (D, C) = (2, 2): raw count minus the depth-1 empty masks the sampler redraws
  // (4 activations x 1 empty mask x 4^1 x 2^4 for depth 2 = 256).
  {
    std::set<std::string> seen;
    Rng r(6);
    const auto cfg = space(2, 2, 2, 0.5);
    for (int i = 0; i < 40000; ++i) {
      ArchitectureSpec s;
      s.fusion = sample_fusion(cfg, r);
      seen.insert(serialize(s));
    }
    CHECK(BigInt(seen.size()) == fusion_cardinality(2, 2) - 256);
  }
}

TEST_CASE("sampler uniformity within 3 binomial sigma") {
  for (double p : {0.25, 0.5, 0.75}) {
    Rng r(2024);
    const auto cfg = space(5, 3, 3, p);
    std::array<int, 6> ops{};
    std::array<int, 4> acts{};
    long bits = 0, ones = 0, layers = 0;
    while (layers < 10000) {
      for (const auto& l : sample_cell(cfg, r).layers) {
        ++ops[static_cast<std::size_t>(l.op)];
        ++acts[static_cast<std::size_t>(l.activation)];
        for (auto b : l.skips) {
          ++bits;
          ones += b;
        }
        ++layers;
      }
    }
    auto within = [](double count, double n, double q) {
      return std::abs(count - n * q) <= 3.0 * std::sqrt(n * q * (1 - q));
    };
    for (int c : ops) CHECK(within(c, layers, 1.0 / 6));
    for (int c : acts) CHECK(within(c, layers, 0.25));
    CHECK(within(static_cast<double>(ones), static_cast<double>(bits), p));
  }
}

TEST_CASE("validate") {
  const auto cfg = space(5, 3, 3, 0.5);
  Rng r(8);
  auto spec = sample_architecture(cfg, r);
  CHECK(validate(spec).empty());
  CHECK(validate(spec, cfg).empty());

  auto shallow = spec;
  shallow.fusion.layers.pop_back();
  auto v = validate(shallow);
  CHECK(std::find(v.begin(), v.end(), "fusion depth below cell count") != v.end());

  auto bad = spec;
  bad.cell_x.layers[2].skips.push_back(0);  // layer 3 with 3 skip bits
  bad.cell_y.layers[1].skips.clear();
  v = validate(bad);
  REQUIRE(v.size() == 2);  // every violation, not just the first
  CHECK(v[0].find("skip vector length 3") != std::string::npos);
  CHECK(v[1].find("skip vector length 0") != std::string::npos);

  auto other = space(4, 3, 3, 0.5);
  CHECK_FALSE(validate(spec, other).empty());

  SearchSpaceConfig broken = cfg;
  broken.fusion_depth = 2;
  broken.skip_probability = 1.5;
  CHECK(broken.violations().size() == 2);
}

TEST_CASE("serialize: canonical bytes and round trip") {
  const auto cfg = space(5, 3, 3, 0.5);
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Rng r(s);
    const auto spec = sample_architecture(cfg, r);
    const auto text = serialize(spec);
    const auto back = deserialize(text);
    CHECK(back == spec);
    CHECK(serialize(back) == text);
  }
  Rng r(1);
  const auto spec = sample_architecture(cfg, r);
  const auto text = serialize(spec);
  CHECK(text.find(' ') == std::string::npos);
  CHECK(text.find('\n') == std::string::npos);
  CHECK(nlohmann::json::parse(text).dump() == text);  // nlohmann sorts keys
  // Whitespace and key order in the input do not matter.
  CHECK(deserialize(nlohmann::json::parse(text).dump(3)) == spec);

  auto flipped = spec;
  flipped.cell_x.layers[4].skips[0] ^= 1;
  CHECK(canonical_hash(flipped) != canonical_hash(spec));
  CHECK(hash_hex(canonical_hash(spec)).size() == 16);
}

TEST_CASE("deserialize: reports position and field") {
  Rng r(1);
  auto j = nlohmann::json::parse(serialize(sample_architecture(space(5, 3, 3, 0.5), r)));
  auto expect_error = [](const nlohmann::json& doc, const std::string& position) {
    try {
      deserialize(doc.dump());
      FAIL("accepted malformed spec");
    } catch (const SpecParseError& e) {
      CHECK(e.position() == position);
    }
  };
  auto a = j;
  a["cells"][0][2]["op"] = "conv7x7";
  expect_error(a, "/cells/0/2/op");
  auto b = j;
  b["fusion"][1]["taps_y"][0] = 2;
  expect_error(b, "/fusion/1/taps_y/0");
  auto c = j;
  c["extra"] = 1;
  expect_error(c, "/extra");
  auto d = j;
  d["schema_version"] = 99;
  expect_error(d, "/schema_version");
  CHECK_THROWS_AS(deserialize("{not json"), SpecParseError);
}

TEST_CASE("golden spec file parses to the committed spec") {
  const auto text = testutil::slurp(testutil::golden("arch_seed42.json"));
  Rng r(42);
  const auto spec = sample_architecture(SearchSpaceConfig{}, r);
  CHECK(deserialize(text) == spec);
  CHECK(serialize(spec) + "\n" == text);
}
