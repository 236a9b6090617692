#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stoodx/config.hpp"
#include "stoodx/detector.hpp"
#include "stoodx/featurestore.hpp"

namespace stoodx::eval {

enum class OodGroup { near, far };
std::string_view group_name(OodGroup g);
OodGroup parse_group(std::string_view s);

struct OodSetSpec {
  std::string name;
  OodGroup group = OodGroup::far;
  std::filesystem::path path;
};

enum class MethodKind { stoodx, knn, mds };

struct MethodSpec {
  MethodKind kind = MethodKind::stoodx;
  DetectorConfig detector;  // stoodx only
  std::size_t k = 50;       // knn only
  double ridge_scale = 1e-6;

  std::string name() const;
};

struct BenchmarkSpec {
  std::filesystem::path id_store;
  std::vector<OodSetSpec> ood_sets;
  std::vector<MethodSpec> methods;
  std::filesystem::path output;
  std::size_t threads = 0;
  double review_upper = 0.2;

  void validate() const;
};

/// Reads the key/value spec document (see README for keys).
BenchmarkSpec load_benchmark_spec(const std::filesystem::path& path);
BenchmarkSpec benchmark_spec_from(const config::Document& doc,
                                  const std::filesystem::path& base_dir = {});

struct OodSet {
  std::string name;
  OodGroup group = OodGroup::far;
  FeatureStore store;
};

/// In-memory benchmark: train rows of `id_store` form the pool, its test rows
/// are the ID queries, every row of each OOD store is an OOD query.
struct Benchmark {
  FeatureStore id_store;
  std::vector<OodSet> ood_sets;
  std::vector<MethodSpec> methods;
  std::size_t threads = 0;
};

Benchmark load_benchmark(const BenchmarkSpec& spec);

struct MetricsRow {
  std::string method;
  std::string ood_set;  // "mean" on aggregate rows
  OodGroup group = OodGroup::far;
  std::optional<std::size_t> k;  // effective k
  std::optional<std::size_t> requested_k;
  std::optional<double> fraction;
  double auroc = 0.0;
  double fpr95 = 0.0;
  double wall_time_ms = 0.0;
  bool aggregate = false;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;

  std::vector<const MetricsRow*> cells() const;
  std::vector<const MetricsRow*> aggregates() const;
  const MetricsRow* find(const std::string& method, const std::string& ood_set,
                         std::optional<std::size_t> k = std::nullopt,
                         std::optional<double> fraction = std::nullopt) const;
};

/// Scores for one method over the ID queries and every OOD set.
struct MethodScores {
  std::vector<double> id_scores;
  std::vector<std::vector<double>> ood_scores;  // parallel to Benchmark::ood_sets
  double id_ms = 0.0;
  std::vector<double> ood_ms;
  std::size_t effective_k = 0;
};

MethodScores score_method(const Benchmark& bench, const MethodSpec& method);

MetricsTable run_benchmark(const Benchmark& bench);
MetricsTable run_benchmark(const BenchmarkSpec& spec);

/// One stoodx row group per k (the other detector fields come from the
/// benchmark's first stoodx method, or defaults).
MetricsTable sweep_k(const Benchmark& bench, const std::vector<std::size_t>& k_list);
MetricsTable sweep_features(const Benchmark& bench, const std::vector<double>& fractions);

std::string to_csv(const MetricsTable& table);
std::string to_markdown(const MetricsTable& table);
std::string to_json(const MetricsTable& table);

}  // namespace stoodx::eval
