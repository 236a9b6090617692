#include "stoodx/knn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "stoodx/error.hpp"
#include "stoodx/util.hpp"

namespace stoodx {

namespace {

constexpr const char* kModule = "knn";
constexpr double kMinNorm = 1e-12;
constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

// Fixed 4-lane accumulation; every caller goes through this so a distance
// between the same two rows is bit-identical no matter which path computed it.
inline double dot(const double* a, const double* b, std::size_t d) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t j = 0;
  for (; j + 4 <= d; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  for (; j < d; ++j) s0 += a[j] * b[j];
  return (s0 + s1) + (s2 + s3);
}

inline double to_distance(double similarity) { return std::clamp(1.0 - similarity, 0.0, 2.0); }

template <typename T>
double cosine_distance_impl(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size())
    throw Error(Errc::LengthMismatch, kModule,
                "vector lengths " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = u[i], b = v[i];
    uv += a * b;
    uu += a * a;
    vv += b * b;
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu < kMinNorm || nv < kMinNorm) throw Error(Errc::ZeroVector, kModule, "zero-norm vector");
  return to_distance(uv / (nu * nv));
}

struct Candidate {
  double distance;
  std::size_t slot;
};

inline bool closer(const Candidate& a, const Candidate& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.slot < b.slot);
}

// Keeps the k best candidates sorted by (distance, slot).
void select_top(std::vector<Candidate>& cands, std::size_t k) {
  k = std::min(k, cands.size());
  if (k < cands.size()) {
    std::nth_element(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(),
                     closer);
    cands.resize(k);
  }
  std::sort(cands.begin(), cands.end(), closer);
}

}  // namespace

double cosine_distance(std::span<const float> u, std::span<const float> v) {
  return cosine_distance_impl(u, v);
}

double cosine_distance(std::span<const double> u, std::span<const double> v) {
  return cosine_distance_impl(u, v);
}

std::optional<std::size_t> NeighborIndex::slot_of(std::size_t store_row) const {
  if (store_row >= row_to_slot_.size() || row_to_slot_[store_row] == kNone) return std::nullopt;
  return row_to_slot_[store_row];
}

std::vector<double> NeighborIndex::prepare_query(std::span<const float> q) const {
  if (q.size() != input_dim_)
    throw Error(Errc::DimMismatch, kModule,
                "query dim " + std::to_string(q.size()) + ", index expects " +
                    std::to_string(input_dim_));
  std::vector<double> out;
  if (subset_) {
    out.reserve(subset_->size());
    for (std::size_t j : *subset_) out.push_back(q[j]);
  } else {
    out.assign(q.begin(), q.end());
  }
  double ss = 0.0;
  for (double v : out) ss += v * v;
  const double norm = std::sqrt(ss);
  if (norm < kMinNorm) throw Error(Errc::ZeroVector, kModule, "query has zero norm");
  for (double& v : out) v /= norm;
  return out;
}

std::uint64_t NeighborIndex::fingerprint() const {
  Fnv1a h;
  h.value(input_dim_).value(dim_).value(static_cast<int>(mode_));
  if (subset_)
    for (auto j : *subset_) h.value(j);
  h.bytes(normalized_.data(), normalized_.size() * sizeof(double));
  for (auto r : pool_rows_) h.value(r);
  for (auto l : slot_labels_) h.value(l);
  return h.digest();
}

NeighborIndex build_index(const FeatureStore& store, PoolMode mode,
                          std::optional<std::vector<std::size_t>> subset,
                          std::optional<std::vector<std::size_t>> pool) {
  const std::size_t d = store.dim();
  if (subset) {
    if (subset->empty()) throw Error(Errc::InvalidArgument, kModule, "empty dimension subset");
    for (std::size_t i = 0; i < subset->size(); ++i) {
      if ((*subset)[i] >= d)
        throw Error(Errc::InvalidArgument, kModule, "subset index out of range");
      if (i > 0 && (*subset)[i] <= (*subset)[i - 1])
        throw Error(Errc::InvalidArgument, kModule, "subset must be strictly increasing");
    }
  }
  std::vector<std::size_t> candidates = pool ? *pool : store.train_rows();
  std::sort(candidates.begin(), candidates.end());
  if (candidates.empty()) throw Error(Errc::EmptyTrainSplit, kModule, "no train rows in pool");

  NeighborIndex index;
  index.input_dim_ = d;
  index.dim_ = subset ? subset->size() : d;
  index.mode_ = mode;
  index.subset_ = std::move(subset);
  index.row_to_slot_.assign(store.size(), kNone);
  index.normalized_.reserve(candidates.size() * index.dim_);

  std::vector<double> buf(index.dim_);
  for (std::size_t r : candidates) {
    const auto& rec = store.record(r);
    if (rec.split != Split::train || !rec.label)
      throw Error(Errc::InvalidArgument, kModule,
                  "pool row " + std::to_string(r) + " is not a labeled train row");
    const auto row = store.row(r);
    if (index.subset_) {
      for (std::size_t j = 0; j < index.dim_; ++j) buf[j] = row[(*index.subset_)[j]];
    } else {
      for (std::size_t j = 0; j < d; ++j) buf[j] = row[j];
    }
    double ss = 0.0;
    for (double v : buf) ss += v * v;
    const double norm = std::sqrt(ss);
    if (norm < kMinNorm) {
      warn(kModule, "ZeroRowAfterProjection: row " + std::to_string(r) + " ('" + rec.sample_id +
                        "') dropped from pool");
      continue;
    }
    for (double v : buf) index.normalized_.push_back(v / norm);
    index.row_to_slot_[r] = index.pool_rows_.size();
    index.pool_rows_.push_back(r);
    index.slot_labels_.push_back(*rec.label);
    index.class_rows_[*rec.label].push_back(r);
  }
  if (index.pool_rows_.empty())
    throw Error(Errc::EmptyTrainSplit, kModule, "every pool row vanished after projection");
  return index;
}

// Search helper shared by queries and the self table.
class KnnSearcher {
 public:
  explicit KnnSearcher(const NeighborIndex& index) : index_(index) {}

  std::vector<std::size_t> pool_slots(std::optional<int> class_id) const {
    std::vector<std::size_t> slots;
    if (!class_id) {
      slots.resize(index_.pool_size());
      std::iota(slots.begin(), slots.end(), std::size_t{0});
      return slots;
    }
    const auto it = index_.class_rows_.find(*class_id);
    if (it == index_.class_rows_.end())
      throw Error(Errc::UnknownClass, kModule,
                  "class " + std::to_string(*class_id) + " has no pool rows");
    slots.reserve(it->second.size());
    for (std::size_t r : it->second) slots.push_back(index_.row_to_slot_[r]);
    return slots;
  }

  std::vector<Candidate> top(const double* q, std::span<const std::size_t> slots, std::size_t k,
                             std::size_t exclude_slot) const {
    std::vector<Candidate> cands;
    cands.reserve(slots.size());
    const std::size_t d = index_.dim_;
    for (std::size_t s : slots) {
      if (s == exclude_slot) continue;
      cands.push_back({to_distance(dot(q, index_.normalized_.data() + s * d, d)), s});
    }
    select_top(cands, k);
    return cands;
  }

  // Blocked variant: each pool row is loaded once per block of queries.
  // Produces exactly what `top` would for every query.
  std::vector<std::vector<Candidate>> top_block(std::span<const double* const> queries,
                                                std::span<const std::size_t> slots,
                                                std::size_t k,
                                                std::span<const std::size_t> exclude) const {
    const std::size_t nq = queries.size();
    const std::size_t d = index_.dim_;
    std::vector<std::vector<Candidate>> cands(nq);
    for (auto& c : cands) c.reserve(slots.size());
    for (std::size_t s : slots) {
      const double* row = index_.normalized_.data() + s * d;
      for (std::size_t qi = 0; qi < nq; ++qi) {
        if (s == exclude[qi]) continue;
        cands[qi].push_back({to_distance(dot(queries[qi], row, d)), s});
      }
    }
    for (auto& c : cands) select_top(c, k);
    return cands;
  }

 private:
  const NeighborIndex& index_;
};

NeighborList query_knn_prepared(const NeighborIndex& index, std::span<const double> q_unit,
                                std::size_t k, const QueryOptions& options) {
  if (k == 0) throw Error(Errc::InvalidArgument, kModule, "k must be >= 1");
  if (q_unit.size() != index.dim())
    throw Error(Errc::DimMismatch, kModule, "prepared query has wrong dimension");
  KnnSearcher searcher(index);
  const auto slots = searcher.pool_slots(options.class_id);
  std::size_t exclude = kNone;
  if (options.exclude_row)
    if (auto s = index.slot_of(*options.exclude_row)) exclude = *s;
  const std::size_t available =
      slots.size() - (exclude != kNone && std::binary_search(slots.begin(), slots.end(), exclude));
  if (k > available) {
    warn(kModule, "k=" + std::to_string(k) + " clamped to pool size " + std::to_string(available));
    k = available;
  }
  const auto best = searcher.top(q_unit.data(), slots, k, exclude);
  NeighborList out;
  out.ids.reserve(best.size());
  out.distances.reserve(best.size());
  for (const auto& c : best) {
    out.ids.push_back(index.pool_rows()[c.slot]);
    out.distances.push_back(c.distance);
  }
  return out;
}

std::vector<NeighborList> query_knn_batch_prepared(const NeighborIndex& index,
                                                   std::span<const std::vector<double>> q_units,
                                                   std::size_t k,
                                                   std::span<const QueryOptions> options,
                                                   std::size_t threads) {
  if (k == 0) throw Error(Errc::InvalidArgument, kModule, "k must be >= 1");
  if (options.size() != q_units.size())
    throw Error(Errc::LengthMismatch, kModule, "one QueryOptions per query required");
  KnnSearcher searcher(index);

  // Group queries by pool, then run fixed-size blocks of each group.
  constexpr std::size_t kBlock = 16;
  std::map<int, std::vector<std::size_t>> by_pool;
  std::map<int, std::vector<std::size_t>> pool_slots;
  for (std::size_t i = 0; i < q_units.size(); ++i) {
    if (q_units[i].size() != index.dim())
      throw Error(Errc::DimMismatch, kModule, "prepared query has wrong dimension");
    const int key = options[i].class_id ? *options[i].class_id : -1;
    if (!pool_slots.count(key))
      pool_slots.emplace(key, searcher.pool_slots(options[i].class_id));
    by_pool[key].push_back(i);
  }
  std::vector<std::pair<int, std::vector<std::size_t>>> blocks;
  for (auto& [key, members] : by_pool)
    for (std::size_t b = 0; b < members.size(); b += kBlock)
      blocks.emplace_back(key, std::vector<std::size_t>(
                                   members.begin() + static_cast<std::ptrdiff_t>(b),
                                   members.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(b + kBlock, members.size()))));

  std::vector<NeighborList> out(q_units.size());
  std::vector<char> clamped(q_units.size(), 0);
  parallel_for(blocks.size(), threads, [&](std::size_t bi) {
    const auto& [key, members] = blocks[bi];
    const auto& slots = pool_slots.at(key);
    std::vector<const double*> queries;
    std::vector<std::size_t> exclude;
    for (std::size_t i : members) {
      queries.push_back(q_units[i].data());
      std::size_t ex = kNone;
      if (options[i].exclude_row)
        if (auto s = index.slot_of(*options[i].exclude_row)) ex = *s;
      exclude.push_back(ex);
    }
    const auto best = searcher.top_block(queries, slots, k, exclude);
    for (std::size_t qi = 0; qi < members.size(); ++qi) {
      auto& list = out[members[qi]];
      for (const auto& c : best[qi]) {
        list.ids.push_back(index.pool_rows()[c.slot]);
        list.distances.push_back(c.distance);
      }
      if (list.size() < k) clamped[members[qi]] = 1;
    }
  });
  const auto n_clamped = std::count(clamped.begin(), clamped.end(), 1);
  if (n_clamped > 0)
    warn(kModule, "k=" + std::to_string(k) + " clamped to pool size for " +
                      std::to_string(n_clamped) + " queries");
  return out;
}

NeighborList query_knn(const NeighborIndex& index, std::span<const float> q, std::size_t k,
                       const QueryOptions& options) {
  const auto prepared = index.prepare_query(q);
  return query_knn_prepared(index, prepared, k, options);
}

SelfDistanceTable::SelfDistanceTable(PoolMode mode, std::size_t k, std::vector<std::size_t> rows,
                                     std::vector<std::uint32_t> lengths,
                                     std::vector<float> distances)
    : mode_(mode),
      k_(k),
      rows_(std::move(rows)),
      lengths_(std::move(lengths)),
      distances_(std::move(distances)) {
  if (lengths_.size() != rows_.size() || distances_.size() != rows_.size() * k_)
    throw Error(Errc::ShapeMismatch, kModule, "inconsistent self-distance table");
}

std::optional<std::size_t> SelfDistanceTable::position_of(std::size_t store_row) const {
  const auto it = std::lower_bound(rows_.begin(), rows_.end(), store_row);
  if (it == rows_.end() || *it != store_row) return std::nullopt;
  return static_cast<std::size_t>(it - rows_.begin());
}

std::span<const float> SelfDistanceTable::list_for_row(std::size_t store_row) const {
  const auto pos = position_of(store_row);
  if (!pos)
    throw Error(Errc::NotFound, kModule,
                "row " + std::to_string(store_row) + " has no self-distance list");
  return list(*pos);
}

bool operator==(const SelfDistanceTable& a, const SelfDistanceTable& b) {
  return a.mode_ == b.mode_ && a.k_ == b.k_ && a.rows_ == b.rows_ && a.lengths_ == b.lengths_ &&
         a.distances_.size() == b.distances_.size() &&
         std::memcmp(a.distances_.data(), b.distances_.data(),
                     a.distances_.size() * sizeof(float)) == 0;
}

SelfDistanceTable self_knn_table(const NeighborIndex& index, std::size_t k, std::size_t threads,
                                 std::optional<std::vector<std::size_t>> rows) {
  if (k == 0) throw Error(Errc::InvalidArgument, kModule, "k must be >= 1");
  std::vector<std::size_t> targets;
  if (rows) {
    targets = *rows;
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    for (auto r : targets)
      if (!index.slot_of(r))
        throw Error(Errc::NotFound, kModule, "row " + std::to_string(r) + " is not in the pool");
  } else {
    targets = index.pool_rows();
  }

  KnnSearcher searcher(index);
  // Pool per target, resolved up front so degenerate pools fail before work.
  std::map<int, std::vector<std::size_t>> class_slots;
  std::vector<std::size_t> global_slots;
  if (index.mode() == PoolMode::global) {
    global_slots = searcher.pool_slots(std::nullopt);
    if (global_slots.size() < 2)
      throw Error(Errc::DegeneratePool, kModule, "global pool has fewer than 2 rows");
  } else {
    for (auto r : targets) {
      const int label = index.label_of_slot(*index.slot_of(r));
      if (class_slots.count(label)) continue;
      auto slots = searcher.pool_slots(label);
      if (slots.size() < 2)
        throw Error(Errc::DegeneratePool, kModule,
                    "class " + std::to_string(label) + " pool has fewer than 2 rows");
      class_slots.emplace(label, std::move(slots));
    }
  }

  bool clamped = false;
  std::size_t smallest_pool = std::numeric_limits<std::size_t>::max();
  if (index.mode() == PoolMode::global) {
    smallest_pool = global_slots.size();
  } else {
    for (const auto& [label, slots] : class_slots) smallest_pool = std::min(smallest_pool, slots.size());
  }
  if (k > smallest_pool - 1) clamped = true;

  std::vector<std::uint32_t> lengths(targets.size());
  std::vector<float> distances(targets.size() * k, std::numeric_limits<float>::quiet_NaN());

  // Targets are ascending store rows; group them into blocks that share a pool.
  constexpr std::size_t kBlock = 16;
  std::map<int, std::vector<std::size_t>> by_pool;  // pool key -> target positions
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int key = index.mode() == PoolMode::global
                        ? -1
                        : index.label_of_slot(*index.slot_of(targets[i]));
    by_pool[key].push_back(i);
  }
  struct Block {
    int pool;
    std::vector<std::size_t> positions;
  };
  std::vector<Block> blocks;
  for (auto& [key, positions] : by_pool)
    for (std::size_t b = 0; b < positions.size(); b += kBlock)
      blocks.push_back({key, std::vector<std::size_t>(
                                 positions.begin() + static_cast<std::ptrdiff_t>(b),
                                 positions.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(b + kBlock, positions.size())))});

  parallel_for(blocks.size(), threads, [&](std::size_t bi) {
    const Block& block = blocks[bi];
    const auto& slots = block.pool < 0 ? global_slots : class_slots.at(block.pool);
    std::vector<const double*> queries;
    std::vector<std::size_t> exclude;
    for (std::size_t pos : block.positions) {
      const std::size_t slot = *index.slot_of(targets[pos]);
      queries.push_back(index.normalized_row(slot).data());
      exclude.push_back(slot);
    }
    const auto best = searcher.top_block(queries, slots, k, exclude);
    for (std::size_t qi = 0; qi < block.positions.size(); ++qi) {
      const std::size_t i = block.positions[qi];
      lengths[i] = static_cast<std::uint32_t>(best[qi].size());
      for (std::size_t j = 0; j < best[qi].size(); ++j)
        distances[i * k + j] = static_cast<float>(best[qi][j].distance);
    }
  });
  if (clamped)
    warn(kModule, "self-table k=" + std::to_string(k) + " clamped to pool_size-1 for small pools");
  return SelfDistanceTable(index.mode(), k, std::move(targets), std::move(lengths),
                           std::move(distances));
}

namespace {

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw Error(Errc::MalformedHeader, kModule, path.string() + ": truncated cache");
  return v;
}

}  // namespace

void save_self_table(const SelfDistanceTable& table, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, kModule, "cannot write " + path.string());
  out.write("SXST", 4);
  put(out, std::uint32_t{1});
  put(out, static_cast<std::uint64_t>(table.rows()));
  put(out, static_cast<std::uint64_t>(table.k()));
  put(out, static_cast<std::uint32_t>(table.mode()));
  for (auto r : table.store_rows()) put(out, static_cast<std::uint64_t>(r));
  out.write(reinterpret_cast<const char*>(table.raw().data()),
            static_cast<std::streamsize>(table.raw().size() * sizeof(float)));
  if (!out) throw Error(Errc::IoError, kModule, "short write to " + path.string());
}

SelfDistanceTable load_self_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, kModule, "cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "SXST", 4) != 0)
    throw Error(Errc::MalformedHeader, kModule, path.string() + ": bad magic");
  if (get<std::uint32_t>(in, path) != 1)
    throw Error(Errc::MalformedHeader, kModule, path.string() + ": unsupported version");
  const auto n = get<std::uint64_t>(in, path);
  const auto k = get<std::uint64_t>(in, path);
  const auto mode = get<std::uint32_t>(in, path);
  if (mode > 1) throw Error(Errc::MalformedHeader, kModule, path.string() + ": bad pool mode");
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = get<std::uint64_t>(in, path);
  std::vector<float> distances(n * k);
  if (!in.read(reinterpret_cast<char*>(distances.data()),
               static_cast<std::streamsize>(distances.size() * sizeof(float))))
    throw Error(Errc::MalformedHeader, kModule, path.string() + ": truncated distances");
  std::vector<std::uint32_t> lengths(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t len = 0;
    while (len < k && !std::isnan(distances[i * k + len])) ++len;
    lengths[i] = len;
  }
  return SelfDistanceTable(static_cast<PoolMode>(mode), k, std::move(rows), std::move(lengths),
                           std::move(distances));
}

std::string self_table_cache_key(std::uint64_t store_hash, std::size_t k, PoolMode mode,
                                 const std::optional<std::vector<std::size_t>>& subset) {
  Fnv1a subset_hash;
  if (subset)
    for (auto j : *subset) subset_hash.value(static_cast<std::uint64_t>(j));
  else
    subset_hash.str("all");
  Fnv1a key;
  key.value(store_hash).value(static_cast<std::uint64_t>(k)).value(static_cast<int>(mode));
  key.value(subset_hash.digest());
  return "selftable-" + hex64(key.digest()) + ".sxst";
}

}  // namespace stoodx
