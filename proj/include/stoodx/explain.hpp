#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stoodx/detector.hpp"
#include "stoodx/featurestore.hpp"

namespace stoodx {

struct NeighborEvidence {
  std::string sample_id;
  std::size_t row = 0;
  double distance = 0.0;
  std::optional<int> label;
  std::optional<std::string> asset;

  friend bool operator==(const NeighborEvidence&, const NeighborEvidence&) = default;
};

struct FeatureContribution {
  std::size_t dim = 0;
  double mean_contribution = 0.0;

  friend bool operator==(const FeatureContribution&, const FeatureContribution&) = default;
};

struct Explanation {
  std::string sample_id;
  double p = 0.5;
  Decision decision = Decision::ID;
  std::string config_hash;
  std::vector<NeighborEvidence> neighbors;
  /// Retained dimensions, in the order used by every contribution vector.
  std::vector<std::size_t> dims;
  /// neighbor sample_id -> per-dimension share of cosine similarity.
  std::map<std::string, std::vector<double>> contributions;
  std::vector<FeatureContribution> top_features;
  std::string generated_at;

  friend bool operator==(const Explanation&, const Explanation&) = default;
};

/// q_hat_j * v_hat_j over the subset, with both vectors normalized on the
/// subset. Sums to the cosine similarity. Empty subset means all dims.
std::vector<double> cosine_contributions(std::span<const float> q, std::span<const float> v,
                                         std::span<const std::size_t> subset = {});

struct ExplainOptions {
  std::size_t n_neighbors = 3;
  std::size_t m_features = 3;
};

/// Evidence bundle for one scored query: its nearest neighbors and the
/// dimensions that carry most of the similarity to them.
Explanation build_explanation(const DetectorState& state, const ScoreRecord& record,
                              const FeatureStore& store, std::span<const float> query,
                              const ExplainOptions& options = {});

enum class ReportFormat { json, html };

std::string render_report(const Explanation& e, ReportFormat format);
Explanation parse_explanation_json(const std::string& text);

}  // namespace stoodx
