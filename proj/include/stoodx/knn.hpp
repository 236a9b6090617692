#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "stoodx/featurestore.hpp"

namespace stoodx {

enum class PoolMode { global, per_class };

/// 1 - <u,v>/(|u||v|), clamped to [0, 2]. Accumulates in double.
double cosine_distance(std::span<const float> u, std::span<const float> v);
double cosine_distance(std::span<const double> u, std::span<const double> v);

struct NeighborList {
  std::vector<std::size_t> ids;  // store row indices
  std::vector<double> distances;

  std::size_t size() const { return ids.size(); }
};

/// Unit-normalized train rows (optionally projected onto a dimension subset),
/// partitioned by class. Exact search only.
class NeighborIndex {
 public:
  std::size_t input_dim() const { return input_dim_; }
  std::size_t dim() const { return dim_; }
  PoolMode mode() const { return mode_; }
  const std::optional<std::vector<std::size_t>>& subset() const { return subset_; }

  /// Store rows in the pool, ascending.
  const std::vector<std::size_t>& pool_rows() const { return pool_rows_; }
  const std::map<int, std::vector<std::size_t>>& class_rows() const { return class_rows_; }
  std::size_t pool_size() const { return pool_rows_.size(); }
  int label_of_slot(std::size_t slot) const { return slot_labels_[slot]; }

  /// Position of a store row inside the pool, if present.
  std::optional<std::size_t> slot_of(std::size_t store_row) const;
  std::span<const double> normalized_row(std::size_t slot) const {
    return {normalized_.data() + slot * dim_, dim_};
  }

  /// Projects and normalizes a raw query. Throws ZeroVector.
  std::vector<double> prepare_query(std::span<const float> q) const;

  std::uint64_t fingerprint() const;

 private:
  friend NeighborIndex build_index(const FeatureStore&, PoolMode,
                                   std::optional<std::vector<std::size_t>>,
                                   std::optional<std::vector<std::size_t>>);
  friend class KnnSearcher;

  std::size_t input_dim_ = 0;
  std::size_t dim_ = 0;
  PoolMode mode_ = PoolMode::global;
  std::optional<std::vector<std::size_t>> subset_;
  std::vector<double> normalized_;  // pool_size x dim
  std::vector<std::size_t> pool_rows_;
  std::vector<int> slot_labels_;
  std::vector<std::size_t> row_to_slot_;  // store row -> slot, npos if absent
  std::map<int, std::vector<std::size_t>> class_rows_;
};

/// Builds the index over the store's train rows, or over `pool` when given
/// (must be train rows). Rows that become all-zero after projection are
/// dropped from the pool with a warning.
NeighborIndex build_index(const FeatureStore& store, PoolMode mode,
                          std::optional<std::vector<std::size_t>> subset = std::nullopt,
                          std::optional<std::vector<std::size_t>> pool = std::nullopt);

struct QueryOptions {
  std::optional<int> class_id;
  /// Store row to leave out (the query's own row when it is a pool member).
  std::optional<std::size_t> exclude_row;
};

/// k smallest cosine distances, ties by ascending row index. k is clamped to
/// the pool size with a warning.
NeighborList query_knn(const NeighborIndex& index, std::span<const float> q, std::size_t k,
                       const QueryOptions& options = {});
NeighborList query_knn_prepared(const NeighborIndex& index, std::span<const double> q_unit,
                                std::size_t k, const QueryOptions& options = {});

/// Blocked batch search; element i equals query_knn_prepared(q_units[i], k,
/// options[i]).
std::vector<NeighborList> query_knn_batch_prepared(const NeighborIndex& index,
                                                   std::span<const std::vector<double>> q_units,
                                                   std::size_t k,
                                                   std::span<const QueryOptions> options,
                                                   std::size_t threads = 0);

/// Per pool row: distances to its k nearest neighbors within its own pool,
/// itself excluded. Stored as float32, padded with NaN beyond each row's
/// effective length.
class SelfDistanceTable {
 public:
  SelfDistanceTable() = default;
  SelfDistanceTable(PoolMode mode, std::size_t k, std::vector<std::size_t> rows,
                    std::vector<std::uint32_t> lengths, std::vector<float> distances);

  PoolMode mode() const { return mode_; }
  std::size_t k() const { return k_; }
  std::size_t rows() const { return rows_.size(); }
  /// Store row for each table row (ascending).
  const std::vector<std::size_t>& store_rows() const { return rows_; }
  std::optional<std::size_t> position_of(std::size_t store_row) const;
  std::span<const float> list(std::size_t position) const {
    return {distances_.data() + position * k_, lengths_[position]};
  }
  std::span<const float> list_for_row(std::size_t store_row) const;
  const std::vector<float>& raw() const { return distances_; }

  friend bool operator==(const SelfDistanceTable&, const SelfDistanceTable&);

 private:
  PoolMode mode_ = PoolMode::global;
  std::size_t k_ = 0;
  std::vector<std::size_t> rows_;
  std::vector<std::uint32_t> lengths_;
  std::vector<float> distances_;
};

/// `rows` restricts the table to a subset of pool rows (store indices);
/// defaults to every pool row. Throws DegeneratePool if a needed pool has
/// fewer than two rows.
SelfDistanceTable self_knn_table(const NeighborIndex& index, std::size_t k,
                                 std::size_t threads = 0,
                                 std::optional<std::vector<std::size_t>> rows = std::nullopt);

// Binary cache: "SXST", u32 version, u64 N, u64 k, u32 mode, N x u64 store
// rows, then N x k float32 row-major (NaN padded).
void save_self_table(const SelfDistanceTable& table, const std::filesystem::path& path);
SelfDistanceTable load_self_table(const std::filesystem::path& path);
std::string self_table_cache_key(std::uint64_t store_hash, std::size_t k, PoolMode mode,
                                 const std::optional<std::vector<std::size_t>>& subset);

}  // namespace stoodx
