#include "stoodx/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include <json.hpp>

#include "stoodx/util.hpp"

namespace stoodx {

namespace {

constexpr const char* kModule = "detector";

// Pooled self-distances of the neighbors, ascending. Distances are
// non-negative float32, so their bit patterns (sign masked off for -0) sort
// like the values; three 11-bit LSD radix passes beat a comparison sort on the
// k*k pool by an order of magnitude.
std::vector<float> pooled_sorted(const SelfDistanceTable& table,
                                  const std::vector<std::size_t>& ids) {
  std::vector<std::uint32_t> keys;
  keys.reserve(ids.size() * table.k());
  for (std::size_t id : ids) {
    const auto list = table.list_for_row(id);
    for (float v : list) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      keys.push_back(bits & 0x7fffffffu);
    }
  }
  std::vector<std::uint32_t> scratch(keys.size());
  std::vector<std::size_t> count(1u << 11);
  for (int shift : {0, 11, 22}) {
    std::fill(count.begin(), count.end(), 0);
    for (std::uint32_t k : keys) ++count[(k >> shift) & 0x7ffu];
    std::size_t sum = 0;
    for (auto& c : count) sum += std::exchange(c, sum);
    for (std::uint32_t k : keys) scratch[count[(k >> shift) & 0x7ffu]++] = k;
    keys.swap(scratch);
  }
  std::vector<float> out(keys.size());
  std::memcpy(out.data(), keys.data(), keys.size() * sizeof(float));
  return out;
}

ScoreRecord finish(const DetectorState& state, const PoolModel& model, NeighborList neighbors,
                   const std::string& sample_id, std::optional<int> pool) {
  if (neighbors.size() == 0)
    throw Error(Errc::DegeneratePool, kModule, "query has no neighbors in its pool");
  // Both samples are compared at the table's float32 precision.
  std::vector<float> a(neighbors.distances.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(neighbors.distances[i]);
  std::sort(a.begin(), a.end());

  const std::vector<float> b = pooled_sorted(model.table, neighbors.ids);
  if (b.empty())
    throw Error(Errc::DegeneratePool, kModule, "neighbors have empty self-distance lists");

  const stats::MwResult mw = stats::mann_whitney_greater_sorted(std::span<const float>(a), std::span<const float>(b));
  ScoreRecord r;
  r.sample_id = sample_id;
  r.p = mw.p;
  r.u = mw.u;
  r.z = mw.z;
  r.degenerate = mw.degenerate;
  r.decision = classify(mw.p, state.config().alpha);
  r.neighbors = std::move(neighbors);
  r.config_hash = state.config_hash();
  r.pool = pool;
  return r;
}

std::optional<int> resolve_pool(const DetectorState& state, std::optional<int> predicted) {
  if (state.config().mode == DetectorMode::global) return std::nullopt;
  if (!predicted)
    throw Error(Errc::InvalidArgument, kModule, "predicted class required in predicted_class mode");
  return predicted;
}

}  // namespace

std::string_view decision_name(Decision d) { return d == Decision::ID ? "ID" : "OOD"; }

std::string_view mode_name(DetectorMode m) {
  return m == DetectorMode::global ? "global" : "predicted_class";
}

void DetectorConfig::validate() const {
  if (k < 1) throw Error(Errc::InvalidArgument, kModule, "k must be >= 1");
  if (!(feature_fraction > 0.0 && feature_fraction <= 1.0))
    throw Error(Errc::InvalidArgument, kModule, "feature_fraction must be in (0, 1]");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error(Errc::InvalidArgument, kModule, "alpha must be in (0, 1)");
  if (ranking_scope == RankingScope::per_class && mode == DetectorMode::global)
    throw Error(Errc::InvalidArgument, kModule, "per-class ranking requires predicted_class mode");
}

std::uint64_t DetectorConfig::hash() const {
  Fnv1a h;
  h.str("stoodx-detector/v1");
  h.value(static_cast<std::uint64_t>(k)).value(feature_fraction).value(alpha);
  h.value(static_cast<int>(mode)).value(static_cast<int>(ranking_scope));
  return h.digest();
}

Decision classify(double p, double alpha) { return p >= alpha ? Decision::ID : Decision::OOD; }

const PoolModel& DetectorState::model_for(std::optional<int> predicted) const {
  if (global_model_) return *global_model_;
  const auto it = class_models_.find(predicted.value_or(-1));
  if (it == class_models_.end())
    throw Error(Errc::UnknownClass, kModule,
                "no pool for class " + (predicted ? std::to_string(*predicted) : "<none>"));
  return *it->second;
}

std::shared_ptr<const DetectorState> prepare(const FeatureStore& store,
                                             const DetectorConfig& config, std::size_t threads) {
  config.validate();
  const auto train = store.train_rows();
  if (train.empty()) throw Error(Errc::EmptyTrainSplit, kModule, "store has no train rows");
  for (std::size_t r : train)
    if (!store.record(r).label)
      throw Error(Errc::MissingField, kModule,
                  "train row " + std::to_string(r) + " ('" + store.record(r).sample_id +
                      "') has no label");

  auto state = std::make_shared<DetectorState>();
  state->config_ = config;
  state->store_hash_ = store.fingerprint();
  Fnv1a h;
  h.value(config.hash()).value(state->store_hash_);
  state->config_hash_ = hex64(h.digest());
  state->input_dim_ = store.dim();
  state->pool_size_ = train.size();
  state->sample_ids_.reserve(store.size());
  for (const auto& r : store.records()) state->sample_ids_.push_back(r.sample_id);

  const PoolMode pool_mode =
      config.mode == DetectorMode::global ? PoolMode::global : PoolMode::per_class;
  const bool full = config.feature_fraction >= 1.0;

  auto build = [&](std::optional<std::vector<std::size_t>> subset,
                   std::optional<std::vector<std::size_t>> pool) {
    auto model = std::make_shared<PoolModel>();
    model->index = build_index(store, pool_mode, subset, pool);
    if (subset)
      model->subset = *subset;
    else
      for (std::size_t j = 0; j < store.dim(); ++j) model->subset.push_back(j);
    model->table = self_knn_table(model->index, config.k, threads);
    return std::shared_ptr<const PoolModel>(std::move(model));
  };

  state->ranking_ = rank_features(store, RankingScope::global);
  if (config.ranking_scope == RankingScope::global) {
    std::optional<std::vector<std::size_t>> subset;
    if (!full) subset = top_dimensions(state->ranking_, config.feature_fraction);
    state->global_model_ = build(subset, std::nullopt);
  } else {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t r : train) by_class[*store.record(r).label].push_back(r);
    for (auto& [label, rows] : by_class) {
      auto ranking = rank_features(store, RankingScope::per_class, label);
      std::optional<std::vector<std::size_t>> subset;
      if (!full) subset = top_dimensions(ranking, config.feature_fraction);
      state->class_models_[label] = build(subset, rows);
      state->class_rankings_.emplace(label, std::move(ranking));
    }
  }
  return state;
}

ScoreRecord score(const DetectorState& state, const ScoreQuery& query) {
  const auto pool = resolve_pool(state, query.predicted);
  const PoolModel& model = state.model_for(pool);
  if (query.features.size() != state.input_dim())
    throw Error(Errc::DimMismatch, kModule,
                "query dim " + std::to_string(query.features.size()) + ", store dim " +
                    std::to_string(state.input_dim()));
  QueryOptions options;
  options.class_id = pool;
  options.exclude_row = query.exclude_row;
  NeighborList neighbors = query_knn(model.index, query.features, state.config().k, options);
  return finish(state, model, std::move(neighbors), query.sample_id, pool);
}

ScoreRecord score(const DetectorState& state, std::span<const float> q,
                  std::optional<int> predicted, std::string sample_id) {
  return score(state, ScoreQuery{q, predicted, std::move(sample_id), std::nullopt});
}

std::vector<ScoreOutcome> score_batch(const DetectorState& state,
                                      std::span<const ScoreQuery> queries, std::size_t threads) {
  std::vector<std::optional<ScoreOutcome>> slots(queries.size());

  // Resolve pools and prepare queries; failures stay with their element.
  struct Pending {
    std::size_t position;
    const PoolModel* model;
    std::optional<int> pool;
    std::vector<double> unit;
  };
  std::map<const PoolModel*, std::vector<Pending>> groups;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    try {
      const auto pool = resolve_pool(state, queries[i].predicted);
      const PoolModel& model = state.model_for(pool);
      if (queries[i].features.size() != state.input_dim())
        throw Error(Errc::DimMismatch, kModule,
                    "query dim " + std::to_string(queries[i].features.size()) + ", store dim " +
                        std::to_string(state.input_dim()));
      if (pool && !model.index.class_rows().count(*pool))
        throw Error(Errc::UnknownClass, kModule,
                    "class " + std::to_string(*pool) + " has no pool rows");
      groups[&model].push_back({i, &model, pool, model.index.prepare_query(queries[i].features)});
    } catch (const Error& e) {
      slots[i] = e;
    }
  }

  for (auto& [model, pending] : groups) {
    std::vector<std::vector<double>> units;
    std::vector<QueryOptions> options;
    units.reserve(pending.size());
    for (auto& p : pending) {
      units.push_back(std::move(p.unit));
      options.push_back({p.pool, queries[p.position].exclude_row});
    }
    auto lists =
        query_knn_batch_prepared(model->index, units, state.config().k, options, threads);
    parallel_for(pending.size(), threads, [&](std::size_t j) {
      const auto& p = pending[j];
      try {
        slots[p.position] =
            finish(state, *model, std::move(lists[j]), queries[p.position].sample_id, p.pool);
      } catch (const Error& e) {
        slots[p.position] = e;
      }
    });
  }

  std::vector<ScoreOutcome> out;
  out.reserve(queries.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::string score_record_to_json(const ScoreRecord& r) {
  nlohmann::ordered_json j;
  j["sample_id"] = r.sample_id;
  j["p"] = r.p;
  j["u"] = r.u;
  j["z"] = r.z;
  j["decision"] = std::string(decision_name(r.decision));
  if (r.pool)
    j["pool"] = *r.pool;
  else
    j["pool"] = "global";
  j["neighbor_ids"] = r.neighbors.ids;
  j["neighbor_distances"] = r.neighbors.distances;
  j["config_hash"] = r.config_hash;
  return j.dump();
}

}  // namespace stoodx
