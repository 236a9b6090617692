#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stoodx/npy.hpp"

namespace stoodx {

enum class Split { train, test, ood };

std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct SampleRecord {
  std::size_t index = 0;
  std::string sample_id;
  std::optional<int> label;
  std::optional<int> predicted;
  Split split = Split::train;
  std::optional<std::string> asset;
  bool validated = false;
  std::optional<std::string> validated_at;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// The embedding matrix plus one metadata record per row. Immutable once
/// constructed; appends produce a new store.
class FeatureStore {
 public:
  FeatureStore() = default;

  /// Validates every invariant (shape, zero rows, label range, unique ids)
  /// and reassigns record indices to 0..N-1. `declared_class_count`
  /// overrides the inferred 1 + max label.
  static FeatureStore create(Matrix<float> features, std::vector<SampleRecord> records,
                             std::optional<int> declared_class_count = std::nullopt);

  std::size_t size() const { return records_.size(); }
  std::size_t dim() const { return features_.cols; }
  int class_count() const { return class_count_; }
  bool empty() const { return records_.empty(); }

  std::span<const float> row(std::size_t i) const { return features_.row(i); }
  const Matrix<float>& features() const { return features_; }
  const std::vector<SampleRecord>& records() const { return records_; }
  const SampleRecord& record(std::size_t i) const { return records_[i]; }

  std::optional<std::size_t> find(std::string_view sample_id) const;
  std::vector<std::size_t> train_rows() const;
  bool class_declared() const { return class_declared_; }

  /// Hash over the raw feature bytes and every metadata field.
  std::uint64_t fingerprint() const;
  /// Hash over the first `n` feature rows only.
  std::uint64_t rows_hash(std::size_t n) const;

 private:
  Matrix<float> features_;
  std::vector<SampleRecord> records_;
  int class_count_ = 0;
  bool class_declared_ = false;
};

FeatureStore load_store(const std::filesystem::path& features_path,
                        const std::filesystem::path& metadata_path);
/// Loads `<dir>/features.npy` and `<dir>/metadata.jsonl`.
FeatureStore load_store_dir(const std::filesystem::path& dir);
void save_store(const FeatureStore& store, const std::filesystem::path& features_path,
                const std::filesystem::path& metadata_path);
void save_store_dir(const FeatureStore& store, const std::filesystem::path& dir);

std::string record_to_json_line(const SampleRecord& r);
SampleRecord record_from_json_line(std::string_view line, std::size_t line_no);

/// Append-only JSON Lines audit trail: {timestamp, action, sample_id, actor}.
/// An empty path keeps entries in memory only.
class AuditLog {
 public:
  AuditLog() = default;
  explicit AuditLog(std::filesystem::path path) : path_(std::move(path)) {}

  void record(std::string_view action, std::string_view sample_id, std::string_view actor);
  const std::vector<std::string>& lines() const { return lines_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::vector<std::string> lines_;
};

/// Returns a new store with the rows appended. Appended records must be
/// validated train rows; existing rows are copied untouched.
FeatureStore append_samples(const FeatureStore& store, const Matrix<float>& new_features,
                            std::vector<SampleRecord> new_records, AuditLog* audit = nullptr,
                            std::string_view actor = "system");

/// New store made of the given rows (in the given order), optionally
/// re-tagging their split.
FeatureStore select_rows(const FeatureStore& store, std::span<const std::size_t> rows,
                         std::optional<Split> split = std::nullopt);

/// Rows of `a` followed by rows of `b`; sample ids must stay unique.
FeatureStore concat_stores(const FeatureStore& a, const FeatureStore& b);

enum class RankingScope { global, per_class };

struct FeatureRanking {
  std::vector<std::size_t> order;
  std::vector<double> importance;
  RankingScope scope = RankingScope::global;
  std::optional<int> class_id;
};

/// Dimensions by descending mean absolute activation over the in-scope train
/// rows; ties by ascending dimension index.
FeatureRanking rank_features(const FeatureStore& store, RankingScope scope,
                             std::optional<int> class_id = std::nullopt);

/// The first ceil(fraction * dim) entries of `ranking.order`, sorted ascending.
std::vector<std::size_t> top_dimensions(const FeatureRanking& ranking, double fraction);

}  // namespace stoodx
