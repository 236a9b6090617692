#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "stoodx/featurestore.hpp"
#include "stoodx/knn.hpp"

namespace stoodx::baselines {

/// Negative distance to the k-th nearest neighbor (higher = more ID).
double knn_score(const NeighborIndex& index, std::span<const float> q, std::size_t k,
                 const QueryOptions& options = {});

struct MdsModel {
  std::map<int, std::vector<double>> class_means;
  std::vector<double> precision;  // d x d, row-major inverse of the tied covariance
  std::size_t dim = 0;
  double ridge = 0.0;
  std::optional<std::vector<std::size_t>> subset;
};

/// Class means plus one covariance pooled over within-class deviations, with
/// ridge_scale * trace / d added to the diagonal before inversion.
MdsModel mds_fit(const FeatureStore& store, double ridge_scale = 1e-6,
                 std::optional<std::vector<std::size_t>> subset = std::nullopt);

/// max over classes of -(q - mu_c)^T Sigma^-1 (q - mu_c).
double mds_score(const MdsModel& model, std::span<const float> q);

}  // namespace stoodx::baselines
