#include "stoodx/baselines.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "stoodx/error.hpp"

namespace stoodx::baselines {

namespace {
constexpr const char* kModule = "baselines";
}

double knn_score(const NeighborIndex& index, std::span<const float> q, std::size_t k,
                 const QueryOptions& options) {
  const NeighborList list = query_knn(index, q, k, options);
  return -list.distances.back();
}

MdsModel mds_fit(const FeatureStore& store, double ridge_scale,
                 std::optional<std::vector<std::size_t>> subset) {
  std::vector<std::size_t> dims;
  if (subset) {
    dims = *subset;
  } else {
    dims.resize(store.dim());
    for (std::size_t j = 0; j < dims.size(); ++j) dims[j] = j;
  }
  const auto d = static_cast<Eigen::Index>(dims.size());

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t r : store.train_rows()) by_class[*store.record(r).label].push_back(r);
  if (by_class.empty()) throw Error(Errc::EmptyTrainSplit, kModule, "no train rows");
  for (const auto& [label, rows] : by_class)
    if (rows.size() < 2)
      throw Error(Errc::InvalidArgument, kModule,
                  "class " + std::to_string(label) + " has fewer than 2 train rows");

  MdsModel model;
  model.dim = dims.size();
  model.subset = std::move(subset);
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
  std::size_t total = 0;
  for (const auto& [label, rows] : by_class) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto row = store.row(rows[i]);
      for (Eigen::Index j = 0; j < d; ++j)
        x(static_cast<Eigen::Index>(i), j) = row[dims[static_cast<std::size_t>(j)]];
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    model.class_means[label] = std::vector<double>(mean.data(), mean.data() + d);
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    scatter.noalias() += centered.transpose() * centered;
    total += rows.size();
  }
  Eigen::MatrixXd cov = scatter / static_cast<double>(total);
  model.ridge = ridge_scale * cov.trace() / static_cast<double>(d);
  cov.diagonal().array() += model.ridge;

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= std::numeric_limits<double>::epsilon() * cov.trace())
    throw Error(Errc::SingularCovariance, kModule, "covariance not invertible after ridge");
  const Eigen::MatrixXd precision = ldlt.solve(Eigen::MatrixXd::Identity(d, d));
  model.precision.resize(static_cast<std::size_t>(d * d));
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      model.precision[static_cast<std::size_t>(i * d + j)] = 0.5 * (precision(i, j) + precision(j, i));
  return model;
}

double mds_score(const MdsModel& model, std::span<const float> q) {
  std::vector<double> x;
  if (model.subset) {
    for (auto j : *model.subset) {
      if (j >= q.size()) throw Error(Errc::DimMismatch, kModule, "query too short for subset");
      x.push_back(q[j]);
    }
  } else {
    if (q.size() != model.dim)
      throw Error(Errc::DimMismatch, kModule,
                  "query dim " + std::to_string(q.size()) + ", model dim " +
                      std::to_string(model.dim));
    x.assign(q.begin(), q.end());
  }
  const std::size_t d = model.dim;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> diff(d);
  for (const auto& [label, mean] : model.class_means) {
    for (std::size_t j = 0; j < d; ++j) diff[j] = x[j] - mean[j];
    double quad = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < d; ++j) row += model.precision[i * d + j] * diff[j];
      quad += diff[i] * row;
    }
    best = std::max(best, -quad);
  }
  return best;
}

}  // namespace stoodx::baselines
