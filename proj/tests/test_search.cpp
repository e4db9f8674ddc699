#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mmnas/search.hpp"
#include "test_util.hpp"

using namespace mmnas;

namespace {

SearchConfig small_search(std::uint64_t seed, int budget, int steps, int classes = 16) {
  SearchConfig cfg;
  cfg.seed = seed;
  cfg.budget = budget;
  cfg.steps = steps;
  cfg.batch_size = 16;
  cfg.lr = 1e-3;
  cfg.space.layers = 2;
  cfg.space.width = 4;
  cfg.space.fusion_width = 8;
  cfg.space.num_classes = classes;
  return cfg;
}

void zero(Tensor<float>& t) { std::fill(t.storage().begin(), t.storage().end(), 0.0f); }

}  // namespace

TEST_CASE("resolved_steps: ten percent of an epoch, rounded up") {
  SearchConfig cfg;
  CHECK(cfg.resolved_steps(4000) == 13);  // 400 samples / 32
  CHECK(cfg.resolved_steps(55000) == 172);
  cfg.steps = 7;
  CHECK(cfg.resolved_steps(4000) == 7);
}

TEST_CASE("evaluate and the first-step loss on uniform logits") {
  auto data = testutil::tiny_synthetic(1, {40, 10, 10});
  const auto cfg = small_search(1, 1, 1);
  Rng rng(3);
  const auto spec = sample_architecture(cfg.space, rng);
  ParamStore store(4);
  const auto net = build(spec, data.input_shapes(), store);
  auto& head = *store.find(ParamKey::head());
  zero(head.get("weight").var.mutable_value());

  // Zero head: logits are the bias everywhere, so argmax is constant.
  head.get("bias").var.mutable_value()[5] = 1.0f;
  std::fill(data.labels.begin(), data.labels.end(), 5);
  CHECK(evaluate(net, data, Split::Test) == 1.0);
  CHECK(evaluate(net, data, Split::Validation, 3) == 1.0);
  std::fill(data.labels.begin(), data.labels.end(), 4);
  CHECK(evaluate(net, data, Split::Test) == 0.0);

  // All-equal logits: the argmax tie goes to class 0.
  zero(head.get("bias").var.mutable_value());
  std::fill(data.labels.begin(), data.labels.end(), 0);
  CHECK(evaluate(net, data, Split::Test) == 1.0);

  data = testutil::tiny_synthetic(1, {40, 10, 10});
  BatchStream batches(data, Split::Train, 8, Rng(1));
  const auto losses = train_steps(net, batches, 3, AdamConfig{.lr = 1e-3});
  REQUIRE(losses.size() == 3);
  CHECK(std::abs(losses[0] - std::log(16.0)) < 1e-6);
  CHECK(losses[1] != losses[0]);  // the update took effect
}

TEST_CASE("train_steps: 20-step windowed loss falls over 200 steps") {
  const auto data = generate_synthetic(SyntheticConfig{});
  SearchSpaceConfig space;
  Rng rng(7);
  const auto spec = sample_architecture(space, rng);
  ParamStore store(derive_seed(7, kInitStream));
  const auto net = build(spec, data.input_shapes(), store);
  BatchStream batches(data, Split::Train, 32, Rng(7));
  const auto losses = train_steps(net, batches, 200, AdamConfig{});
  std::vector<double> windows;
  for (int w = 0; w < 10; ++w) {
    double s = 0;
    for (int i = 0; i < 20; ++i) s += losses[std::size_t(w * 20 + i)];
    windows.push_back(s / 20);
  }
  CAPTURE(windows);
  for (std::size_t w = 1; w < windows.size(); ++w) CHECK(windows[w] < windows[w - 1]);
}

TEST_CASE("run_search: budget exactness and incumbent replay") {
  const auto data = testutil::tiny_synthetic(2, {64, 2, 16});
  const auto cfg = small_search(11, 12, 3);
  const auto rec = run_search(cfg, data);
  REQUIRE(rec.log.size() == 12);
  double best = -1;
  int last_best = 0;
  for (const auto& e : rec.log) {
    CHECK(e.trained);
    CHECK(e.steps == 3);
    if (e.val_accuracy >= best) {
      best = e.val_accuracy;
      last_best = e.index;
    }
  }
  // A two-sample validation split makes ties routine; the later one wins.
  CHECK(rec.best_index == last_best);
  CHECK(rec.best_val_accuracy == best);

  Rng replay(cfg.seed);
  ArchitectureSpec spec;
  for (int e = 1; e <= rec.best_index; ++e) spec = sample_architecture(cfg.space, replay);
  REQUIRE(rec.best);
  CHECK(*rec.best == spec);
  CHECK(hash_hex(canonical_hash(spec)) == rec.log[std::size_t(rec.best_index - 1)].spec_hash);
  CHECK(rec.best_params.feature + rec.best_params.fusion <= rec.store_params);
  // First draw allocates, and new params never exceed what the store holds.
  CHECK(rec.log[0].new_params > 0);
  std::size_t total = 0;
  for (const auto& e : rec.log) total += e.new_params;
  CHECK(total == rec.store_params);
}

TEST_CASE("run_search: E=1 keeps the only draw") {
  const auto data = testutil::tiny_synthetic(3, {32, 8, 8});
  const auto cfg = small_search(5, 1, 1);
  const auto rec = run_search(cfg, data);
  Rng rng(5);
  REQUIRE(rec.best);
  CHECK(*rec.best == sample_architecture(cfg.space, rng));
  CHECK(rec.best_index == 1);
}

TEST_CASE("run_search: failed builds are logged and never win") {
  SyntheticConfig sc;
  sc.k_a = sc.k_b = 2;
  sc.image_size = 2;  // three cells need 4x4
  sc.sizes = {16, 4, 4};
  const auto data = generate_synthetic(sc);
  auto cfg = small_search(1, 3, 1, 4);
  const auto rec = run_search(cfg, data);
  REQUIRE(rec.log.size() == 3);
  for (const auto& e : rec.log) {
    CHECK_FALSE(e.trained);
    CHECK(e.skip_reason.find("spatial size") != std::string::npos);
  }
  CHECK_FALSE(rec.best);
  CHECK(rec.best_index == 0);
}

TEST_CASE("run_search: argument errors") {
  const auto data = testutil::tiny_synthetic(3, {32, 8, 8});
  auto cfg = small_search(1, 0, 1);
  CHECK_THROWS_AS(run_search(cfg, data), std::invalid_argument);
  cfg = small_search(1, 1, 1, 10);
  CHECK_THROWS_WITH_AS(run_search(cfg, data), doctest::Contains("classes"), std::invalid_argument);
  const auto no_val = testutil::tiny_synthetic(3, {32, 0, 8});
  CHECK_THROWS_AS(run_search(small_search(1, 1, 1), no_val), DataError);
}

TEST_CASE("run records: deterministic bytes and JSON round trip") {
  const auto data = testutil::tiny_synthetic(4, {48, 8, 8});
  const auto cfg = small_search(21, 3, 2);
  const auto a = run_search(cfg, data);
  const auto b = run_search(cfg, data);
  const auto text = to_json_text(a);
  CHECK(text == to_json_text(b));
  CHECK(text.find("wall_seconds") == std::string::npos);
  CHECK(to_json_text(a, true).find("search_seconds") != std::string::npos);
  const auto back = run_record_from_json(text);
  CHECK(to_json_text(back) == text);
  CHECK(back.best == a.best);
  CHECK(back.config.steps == 2);
  CHECK(to_json_text(run_search(small_search(22, 3, 2), data)) != text);
  CHECK_THROWS(run_record_from_json("{\"seed\": 1}"));
}

TEST_CASE("final_train: fresh, zero epochs and warm start") {
  const auto data = testutil::tiny_synthetic(5, {64, 16, 400});
  const auto cfg = small_search(8, 2, 4);
  ParamStore store(derive_seed(8, kInitStream));
  const auto rec = run_search(cfg, data, store);
  REQUIRE(rec.best);

  // Untrained: chance level, 1/16 +- 4 binomial sigma on 400 samples.
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const auto fin = final_train(*rec.best, data, {.epochs = 0, .seed = s});
    CHECK(fin.epoch_losses.empty());
    CHECK(std::abs(fin.test_accuracy - 1.0 / 16) < 4 * std::sqrt(1.0 / 16 * 15 / 16 / 400));
    CHECK(fin.store.count_params() == rec.best_params.feature + rec.best_params.fusion);
  }

  // Warm start at zero epochs is exactly the search store's accuracy.
  const auto net = build(*rec.best, data.input_shapes(), store);
  const double shared_acc = evaluate(net, data, Split::Test);
  const auto warm = final_train(*rec.best, data, {.epochs = 0}, store.clone());
  CHECK(warm.test_accuracy == shared_acc);
  CHECK(warm.store.count_params() == store.count_params());

  const auto trained = final_train(*rec.best, data, {.epochs = 2, .lr = 1e-3, .seed = 1});
  CHECK(trained.epoch_losses.size() == 2);
  CHECK(trained.epoch_losses[1] < trained.epoch_losses[0]);
  const auto again = final_train(*rec.best, data, {.epochs = 2, .lr = 1e-3, .seed = 1});
  CHECK(again.test_accuracy == trained.test_accuracy);
  CHECK(again.store.snapshot() == trained.store.snapshot());
}

TEST_CASE("run_multi_seed: independent and reproducible per seed") {
  const auto data = testutil::tiny_synthetic(6, {48, 8, 8});
  auto cfg = small_search(0, 2, 2);
  cfg.final_epochs = 1;
  const auto recs = run_multi_seed(cfg, data, {3, 3, 4});
  REQUIRE(recs.size() == 3);
  CHECK(to_json_text(recs[0]) == to_json_text(recs[1]));
  CHECK(to_json_text(recs[0]) != to_json_text(recs[2]));
  for (const auto& r : recs) CHECK(r.test_accuracy.has_value());
  CHECK(recs[2].seed == 4);
  // Same as a standalone search with that seed: stores are not shared.
  auto single = cfg;
  single.seed = 4;
  CHECK(run_search(single, data).best == recs[2].best);
  CHECK_THROWS_AS(run_multi_seed(cfg, data, {1}), std::invalid_argument);
}
