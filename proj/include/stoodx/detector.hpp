#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "stoodx/error.hpp"
#include "stoodx/featurestore.hpp"
#include "stoodx/knn.hpp"
#include "stoodx/stats.hpp"

namespace stoodx {

enum class DetectorMode { global, predicted_class };
enum class Decision { ID, OOD };

std::string_view decision_name(Decision d);
std::string_view mode_name(DetectorMode m);

struct DetectorConfig {
  std::size_t k = 500;
  double feature_fraction = 1.0;
  DetectorMode mode = DetectorMode::predicted_class;
  double alpha = 0.05;
  RankingScope ranking_scope = RankingScope::global;

  void validate() const;
  /// Stable hash of the fields above.
  std::uint64_t hash() const;
};

struct ScoreRecord {
  std::string sample_id;
  double p = 0.5;
  double u = 0.0;
  double z = 0.0;
  Decision decision = Decision::ID;
  NeighborList neighbors;
  std::string config_hash;
  std::optional<int> pool;  // class id, or global when empty
  bool degenerate = false;
};

/// ID iff p >= alpha.
Decision classify(double p, double alpha);

/// Index, self-distance table and feature ranking for one pool. Global
/// ranking shares a single model; per-class ranking gets one per class.
struct PoolModel {
  std::vector<std::size_t> subset;
  NeighborIndex index;
  SelfDistanceTable table;
};

/// Everything `score` needs, built once by `prepare`. Immutable.
class DetectorState {
 public:
  const DetectorConfig& config() const { return config_; }
  const FeatureRanking& ranking() const { return ranking_; }
  std::uint64_t store_hash() const { return store_hash_; }
  const std::string& config_hash() const { return config_hash_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t pool_size() const { return pool_size_; }

  /// Model serving queries for a given predicted class (or the global one).
  const PoolModel& model_for(std::optional<int> predicted) const;
  /// The class rankings (per-class scope) or the single global ranking.
  const std::map<int, FeatureRanking>& class_rankings() const { return class_rankings_; }
  /// Store row -> sample_id, kept so explanations need not re-open the store.
  const std::vector<std::string>& sample_ids() const { return sample_ids_; }

 private:
  friend std::shared_ptr<const DetectorState> prepare(const FeatureStore&, const DetectorConfig&,
                                                      std::size_t);
  DetectorConfig config_;
  FeatureRanking ranking_;
  std::map<int, FeatureRanking> class_rankings_;
  std::shared_ptr<const PoolModel> global_model_;
  std::map<int, std::shared_ptr<const PoolModel>> class_models_;
  std::uint64_t store_hash_ = 0;
  std::string config_hash_;
  std::size_t input_dim_ = 0;
  std::size_t pool_size_ = 0;
  std::vector<std::string> sample_ids_;
};

/// Ranks features, keeps the top ceil(fraction * d) dimensions, builds the
/// neighbor index on them and materializes the k-NN self-distance table.
/// With fraction == 1 no subset is applied at all.
std::shared_ptr<const DetectorState> prepare(const FeatureStore& store,
                                             const DetectorConfig& config,
                                             std::size_t threads = 0);

struct ScoreQuery {
  std::span<const float> features;
  std::optional<int> predicted;
  std::string sample_id;
  /// Set when the query is itself a pool row (leave-one-out scoring).
  std::optional<std::size_t> exclude_row;
};

/// Sample A: the k query-to-neighbor distances; sample B: the pooled k*k
/// self-distances of those neighbors. p = one-sided WMW p-value of A > B.
ScoreRecord score(const DetectorState& state, const ScoreQuery& query);
ScoreRecord score(const DetectorState& state, std::span<const float> q,
                  std::optional<int> predicted, std::string sample_id = {});

using ScoreOutcome = std::variant<ScoreRecord, Error>;

/// Element i equals score(state, queries[i]); failures are collected per
/// element rather than aborting the batch.
std::vector<ScoreOutcome> score_batch(const DetectorState& state,
                                      std::span<const ScoreQuery> queries,
                                      std::size_t threads = 0);

std::string score_record_to_json(const ScoreRecord& r);

}  // namespace stoodx
