#include "mmnas/search.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <json.hpp>

namespace mmnas {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

json space_json(const SearchSpaceConfig& s) {
  return {{"layers", s.layers},
          {"fusion_depth", s.fusion_depth},
          {"repeats", {s.repeats[0], s.repeats[1]}},
          {"skip_probability", s.skip_probability},
          {"width", s.width},
          {"fusion_width", s.fusion_width},
          {"num_classes", s.num_classes}};
}

SearchSpaceConfig space_from(const json& j) {
  SearchSpaceConfig s;
  s.layers = j.at("layers").get<int>();
  s.fusion_depth = j.at("fusion_depth").get<int>();
  s.repeats = {j.at("repeats").at(0).get<int>(), j.at("repeats").at(1).get<int>()};
  s.skip_probability = j.at("skip_probability").get<double>();
  s.width = j.at("width").get<int>();
  s.fusion_width = j.at("fusion_width").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  return s;
}

void apply_gradients(const CompiledNet<float>& net, const AdamConfig& adam) {
  for (Parameter<float>* p : net.parameters()) {
    Var<float>& v = p->var;
    if (v.grad().size() != v.value().size()) {
      v.zero_grad();
      v.mutable_grad();
    }
    adam_step(v.mutable_value(), v.grad(), p->adam, adam);
    v.zero_grad();
  }
}

}  // namespace

int SearchConfig::resolved_steps(std::size_t train_size) const {
  if (steps) return *steps;
  const auto tenth = static_cast<double>(train_size) * 0.1;
  return std::max(1, static_cast<int>(std::ceil(tenth / static_cast<double>(batch_size))));
}

std::string to_json_text(const RunRecord& r, bool include_timing) {
  json log = json::array();
  for (const auto& e : r.log) {
    json j = {{"index", e.index},
              {"spec_hash", e.spec_hash},
              {"status", e.trained ? "trained" : "skipped"},
              {"val_accuracy", e.val_accuracy},
              {"steps", e.steps},
              {"last_loss", e.last_loss},
              {"new_params", e.new_params}};
    if (!e.trained) j["skip_reason"] = e.skip_reason;
    if (include_timing) j["wall_seconds"] = e.wall_seconds;
    log.push_back(std::move(j));
  }
  const auto& c = r.config;
  json doc = {
      {"schema_version", RunRecord::kSchemaVersion},
      {"seed", r.seed},
      {"config",
       {{"budget", c.budget},
        {"steps", c.steps ? json(*c.steps) : json("auto")},
        {"batch_size", c.batch_size},
        {"lr", c.lr},
        {"final_epochs", c.final_epochs},
        {"space", space_json(c.space)}}},
      {"log", log},
      {"best_index", r.best_index},
      {"best_val_accuracy", r.best_val_accuracy},
      {"best_spec", r.best ? json::parse(serialize(*r.best)) : json(nullptr)},
      {"best_spec_hash", r.best ? json(hash_hex(canonical_hash(*r.best))) : json(nullptr)},
      {"test_accuracy", r.test_accuracy ? json(*r.test_accuracy) : json(nullptr)},
      {"feature_params", r.best_params.feature},
      {"fusion_params", r.best_params.fusion},
      {"store_params", r.store_params}};
  if (include_timing) doc["search_seconds"] = r.search_seconds;
  return doc.dump(2) + "\n";
}

RunRecord run_record_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("run record: malformed JSON at byte " + std::to_string(e.byte));
  }
  try {
    if (doc.at("schema_version").get<int>() != RunRecord::kSchemaVersion)
      throw std::runtime_error("run record: unsupported schema_version");
    RunRecord r;
    r.seed = doc.at("seed").get<std::uint64_t>();
    const auto& c = doc.at("config");
    r.config.budget = c.at("budget").get<int>();
    if (c.at("steps").is_number_integer()) r.config.steps = c.at("steps").get<int>();
    r.config.batch_size = c.at("batch_size").get<int>();
    r.config.lr = c.at("lr").get<double>();
    r.config.final_epochs = c.at("final_epochs").get<int>();
    r.config.space = space_from(c.at("space"));
    r.config.seed = r.seed;
    for (const auto& j : doc.at("log")) {
      ArchLogEntry e;
      e.index = j.at("index").get<int>();
      e.spec_hash = j.at("spec_hash").get<std::string>();
      e.trained = j.at("status").get<std::string>() == "trained";
      if (!e.trained) e.skip_reason = j.value("skip_reason", "");
      e.val_accuracy = j.at("val_accuracy").get<double>();
      e.steps = j.at("steps").get<int>();
      e.last_loss = j.at("last_loss").get<double>();
      e.new_params = j.at("new_params").get<std::size_t>();
      e.wall_seconds = j.value("wall_seconds", 0.0);
      r.log.push_back(std::move(e));
    }
    r.best_index = doc.at("best_index").get<int>();
    r.best_val_accuracy = doc.at("best_val_accuracy").get<double>();
    if (!doc.at("best_spec").is_null()) r.best = deserialize(doc.at("best_spec").dump());
    if (!doc.at("test_accuracy").is_null()) r.test_accuracy = doc.at("test_accuracy").get<double>();
    r.best_params.feature = doc.at("feature_params").get<std::size_t>();
    r.best_params.fusion = doc.at("fusion_params").get<std::size_t>();
    r.store_params = doc.at("store_params").get<std::size_t>();
    r.search_seconds = doc.value("search_seconds", 0.0);
    return r;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("run record: ") + e.what());
  }
}

std::vector<double> train_steps(const CompiledNet<float>& net, BatchStream& batches, int steps,
                                const AdamConfig& adam) {
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(std::max(0, steps)));
  for (int s = 0; s < steps; ++s) {
    const Batch batch = batches.next();
    auto loss = softmax_cross_entropy(net.logits(batch.x, batch.y),
                                      std::span<const int>(batch.labels));
    backward(loss);
    apply_gradients(net, adam);
    losses.push_back(loss.value()[0]);
  }
  return losses;
}

double evaluate(const CompiledNet<float>& net, const BiModalDataset& data, Split split,
                std::size_t batch_size) {
  auto [begin, end] = data.range(split);
  if (end == begin)
    throw DataError("evaluate: split '" + std::string(to_string(split)) + "' is empty");
  NoGradGuard no_grad;
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  for (std::size_t b = begin; b < end; b += batch_size) {
    rows.clear();
    for (std::size_t i = b; i < std::min(end, b + batch_size); ++i) rows.push_back(i);
    const Batch batch = data.gather(rows);
    const auto logits = net.logits(batch.x, batch.y);
    const std::size_t k = logits.value().dim(1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const float* row = logits.value().ptr() + i * k;
      const auto arg = static_cast<int>(std::max_element(row, row + k) - row);
      if (arg == batch.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(end - begin);
}

RunRecord run_search(const SearchConfig& cfg, const BiModalDataset& data, ParamStore& store) {
  if (cfg.budget < 1) throw std::invalid_argument("search: budget must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("search: batch size must be >= 1");
  if (auto v = cfg.space.violations(); !v.empty())
    throw std::invalid_argument("search: invalid search space: " + v.front());
  if (data.split_size(Split::Train) == 0 || data.split_size(Split::Validation) == 0)
    throw DataError("search: dataset needs non-empty train and validation splits");
  if (cfg.space.num_classes != data.num_classes)
    throw std::invalid_argument("search: space has " + std::to_string(cfg.space.num_classes) +
                                " classes, dataset has " + std::to_string(data.num_classes));
  const int steps = cfg.resolved_steps(data.split_size(Split::Train));
  if (steps < 1) throw std::invalid_argument("search: steps must be >= 1");

  const auto t0 = Clock::now();
  RunRecord rec;
  rec.seed = cfg.seed;
  rec.config = cfg;
  rec.config.steps = steps;

  Rng arch_rng(cfg.seed);
  BatchStream train(data, Split::Train, static_cast<std::size_t>(cfg.batch_size),
                    Rng(derive_seed(cfg.seed, kShuffleStream)));
  const AdamConfig adam{.lr = cfg.lr};
  double best_acc = -std::numeric_limits<double>::infinity();

  for (int e = 1; e <= cfg.budget; ++e) {
    const auto te = Clock::now();
    const ArchitectureSpec spec = sample_architecture(cfg.space, arch_rng);
    ArchLogEntry entry;
    entry.index = e;
    entry.spec_hash = hash_hex(canonical_hash(spec));
    const std::size_t before = store.count_params();
    try {
      const auto net = build(spec, data.input_shapes(), store);
      entry.new_params = store.count_params() - before;
      const auto losses = train_steps(net, train, steps, adam);
      entry.trained = true;
      entry.steps = steps;
      entry.last_loss = losses.back();
      entry.val_accuracy = evaluate(net, data, Split::Validation);
      if (entry.val_accuracy >= best_acc) {
        best_acc = entry.val_accuracy;
        rec.best = spec;
        rec.best_index = e;
        rec.best_val_accuracy = entry.val_accuracy;
      }
    } catch (const BuildError& err) {
      entry.trained = false;
      entry.skip_reason = err.what();
    }
    entry.wall_seconds = seconds_since(te);
    rec.log.push_back(std::move(entry));
  }
  if (rec.best) rec.best_params = param_count_split(*rec.best, store);
  rec.store_params = store.count_params();
  rec.search_seconds = seconds_since(t0);
  return rec;
}

RunRecord run_search(const SearchConfig& cfg, const BiModalDataset& data) {
  ParamStore store(derive_seed(cfg.seed, kInitStream));
  return run_search(cfg, data, store);
}

FinalResult final_train(const ArchitectureSpec& spec, const BiModalDataset& data,
                        const FinalTrainConfig& cfg, std::optional<ParamStore> warm_start) {
  if (cfg.epochs < 0) throw std::invalid_argument("final_train: epochs must be >= 0");
  FinalResult result{warm_start ? std::move(*warm_start)
                                : ParamStore(derive_seed(cfg.seed, kFinalInitStream)),
                     0.0,
                     {}};
  const auto net = build(spec, data.input_shapes(), result.store);
  if (cfg.epochs > 0) {
    BatchStream train(data, Split::Train, static_cast<std::size_t>(cfg.batch_size),
                      Rng(derive_seed(cfg.seed, kFinalShuffleStream)));
    const AdamConfig adam{.lr = cfg.lr};
    const auto per_epoch = static_cast<int>(train.batches_per_epoch());
    for (int ep = 0; ep < cfg.epochs; ++ep) {
      const auto losses = train_steps(net, train, per_epoch, adam);
      double sum = 0;
      for (double l : losses) sum += l;
      result.epoch_losses.push_back(sum / static_cast<double>(losses.size()));
    }
  }
  result.test_accuracy = evaluate(net, data, Split::Test);
  return result;
}

std::vector<RunRecord> run_multi_seed(const SearchConfig& cfg, const BiModalDataset& data,
                                      const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2) throw std::invalid_argument("multi-seed: need at least two seeds");
  std::vector<RunRecord> records;
  for (auto seed : seeds) {
    SearchConfig run = cfg;
    run.seed = seed;
    RunRecord rec = run_search(run, data);
    if (rec.best) {
      const auto fin = final_train(*rec.best, data,
                                   {.epochs = cfg.final_epochs,
                                    .lr = cfg.lr,
                                    .batch_size = cfg.batch_size,
                                    .seed = seed});
      rec.test_accuracy = fin.test_accuracy;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace mmnas
