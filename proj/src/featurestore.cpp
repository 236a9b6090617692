#include "stoodx/featurestore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "stoodx/error.hpp"
#include "stoodx/util.hpp"

namespace stoodx {

using nlohmann::json;

namespace {

constexpr const char* kModule = "featurestore";
constexpr double kMinRowNorm = 1e-12;

double row_norm(std::span<const float> row) {
  double acc = 0.0;
  for (float v : row) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::ood: return "ood";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "ood") return Split::ood;
  throw Error(Errc::InvalidArgument, kModule, "unknown split '" + std::string(s) + "'");
}

FeatureStore FeatureStore::create(Matrix<float> features, std::vector<SampleRecord> records,
                                  std::optional<int> declared_class_count) {
  if (features.rows != records.size())
    throw Error(Errc::ShapeMismatch, kModule,
                "feature rows vs metadata records: " + std::to_string(features.rows) + " vs " +
                    std::to_string(records.size()));
  if (features.data.size() != features.rows * features.cols)
    throw Error(Errc::ShapeMismatch, kModule, "feature buffer does not match its shape");

  for (std::size_t i = 0; i < features.rows; ++i)
    if (row_norm(features.row(i)) < kMinRowNorm)
      throw Error(Errc::ZeroRow, kModule, "zero embedding at row " + std::to_string(i));

  int max_label = -1;
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    r.index = i;
    if (r.sample_id.empty())
      throw Error(Errc::MissingField, kModule, "row " + std::to_string(i) + " has no sample_id");
    if (!ids.insert(r.sample_id).second)
      throw Error(Errc::DuplicateSampleId, kModule, "duplicate sample_id '" + r.sample_id + "'");
    for (const auto& lab : {r.label, r.predicted}) {
      if (!lab) continue;
      if (*lab < 0)
        throw Error(Errc::UnknownLabel, kModule,
                    "negative label " + std::to_string(*lab) + " at row " + std::to_string(i));
      max_label = std::max(max_label, *lab);
    }
    if (r.split == Split::train && !r.label)
      throw Error(Errc::MissingField, kModule,
                  "train row " + std::to_string(i) + " ('" + r.sample_id + "') has no label");
  }

  FeatureStore store;
  if (declared_class_count) {
    if (max_label >= *declared_class_count)
      throw Error(Errc::UnknownLabel, kModule,
                  "label " + std::to_string(max_label) + " outside declared class_count " +
                      std::to_string(*declared_class_count));
    store.class_count_ = *declared_class_count;
    store.class_declared_ = true;
  } else {
    store.class_count_ = max_label + 1;
  }
  store.features_ = std::move(features);
  store.records_ = std::move(records);
  return store;
}

std::optional<std::size_t> FeatureStore::find(std::string_view sample_id) const {
  for (const auto& r : records_)
    if (r.sample_id == sample_id) return r.index;
  return std::nullopt;
}

std::vector<std::size_t> FeatureStore::train_rows() const {
  std::vector<std::size_t> out;
  for (const auto& r : records_)
    if (r.split == Split::train) out.push_back(r.index);
  return out;
}

std::uint64_t FeatureStore::fingerprint() const {
  Fnv1a h;
  h.value(features_.rows).value(features_.cols);
  h.bytes(features_.data.data(), features_.data.size() * sizeof(float));
  h.value(class_count_);
  for (const auto& r : records_) h.str(record_to_json_line(r));
  return h.digest();
}

std::uint64_t FeatureStore::rows_hash(std::size_t n) const {
  n = std::min(n, features_.rows);
  Fnv1a h;
  h.bytes(features_.data.data(), n * features_.cols * sizeof(float));
  return h.digest();
}

std::string record_to_json_line(const SampleRecord& r) {
  json j;
  j["sample_id"] = r.sample_id;
  if (r.label) j["label"] = *r.label;
  if (r.predicted) j["predicted"] = *r.predicted;
  j["split"] = std::string(split_name(r.split));
  if (r.asset) j["asset"] = *r.asset;
  j["validated"] = r.validated;
  if (r.validated_at) j["validated_at"] = *r.validated_at;
  return j.dump();
}

SampleRecord record_from_json_line(std::string_view line, std::size_t line_no) {
  const std::string where = "metadata line " + std::to_string(line_no);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(Errc::MalformedHeader, kModule, where + ": " + e.what());
  }
  if (!j.is_object()) throw Error(Errc::MalformedHeader, kModule, where + ": not an object");

  SampleRecord r;
  try {
    if (!j.contains("sample_id") || !j["sample_id"].is_string())
      throw Error(Errc::MissingField, kModule, where + ": sample_id (string) is required");
    r.sample_id = j["sample_id"].get<std::string>();
    if (!j.contains("split") || !j["split"].is_string())
      throw Error(Errc::MissingField, kModule, where + ": split is required");
    r.split = parse_split(j["split"].get<std::string>());
    if (j.contains("label") && !j["label"].is_null()) r.label = j["label"].get<int>();
    if (j.contains("predicted") && !j["predicted"].is_null())
      r.predicted = j["predicted"].get<int>();
    if (j.contains("asset") && !j["asset"].is_null()) r.asset = j["asset"].get<std::string>();
    if (j.contains("validated")) r.validated = j["validated"].get<bool>();
    if (j.contains("validated_at") && !j["validated_at"].is_null())
      r.validated_at = j["validated_at"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedHeader, kModule, where + ": " + e.what());
  }
  return r;
}

FeatureStore load_store(const std::filesystem::path& features_path,
                        const std::filesystem::path& metadata_path) {
  Matrix<float> features = npy::load_f32(features_path);

  std::ifstream in(metadata_path);
  if (!in) throw Error(Errc::IoError, kModule, "cannot open " + metadata_path.string());
  std::vector<SampleRecord> records;
  std::optional<int> declared;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    // Optional first line: {"_header": {"class_count": C}}
    if (records.empty() && !declared && line.find("\"_header\"") != std::string::npos) {
      try {
        const json h = json::parse(line).at("_header");
        declared = h.at("class_count").get<int>();
      } catch (const json::exception& e) {
        throw Error(Errc::MalformedHeader, kModule,
                    "metadata header: " + std::string(e.what()));
      }
      continue;
    }
    records.push_back(record_from_json_line(line, line_no));
  }
  return FeatureStore::create(std::move(features), std::move(records), declared);
}

FeatureStore load_store_dir(const std::filesystem::path& dir) {
  return load_store(dir / "features.npy", dir / "metadata.jsonl");
}

void save_store(const FeatureStore& store, const std::filesystem::path& features_path,
                const std::filesystem::path& metadata_path) {
  npy::save_f32(features_path, store.features());
  std::ofstream out(metadata_path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, kModule, "cannot write " + metadata_path.string());
  if (store.class_declared())
    out << json{{"_header", {{"class_count", store.class_count()}}}}.dump() << '\n';
  for (const auto& r : store.records()) out << record_to_json_line(r) << '\n';
  if (!out) throw Error(Errc::IoError, kModule, "short write to " + metadata_path.string());
}

void save_store_dir(const FeatureStore& store, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::StoreWriteError, kModule, "cannot create " + dir.string() + ": " + ec.message());
  save_store(store, dir / "features.npy", dir / "metadata.jsonl");
}

void AuditLog::record(std::string_view action, std::string_view sample_id,
                      std::string_view actor) {
  const json entry = {{"timestamp", utc_timestamp()},
                      {"action", action},
                      {"sample_id", sample_id},
                      {"actor", actor}};
  std::string line = entry.dump();
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error(Errc::StoreWriteError, kModule, "cannot append to " + path_.string());
    out << line << '\n';
  }
  lines_.push_back(std::move(line));
}

FeatureStore append_samples(const FeatureStore& store, const Matrix<float>& new_features,
                            std::vector<SampleRecord> new_records, AuditLog* audit,
                            std::string_view actor) {
  if (new_features.cols != store.dim() && !store.empty())
    throw Error(Errc::DimMismatch, kModule,
                "appended rows have dim " + std::to_string(new_features.cols) + ", store has " +
                    std::to_string(store.dim()));
  if (new_features.rows != new_records.size())
    throw Error(Errc::ShapeMismatch, kModule,
                "appended rows vs records: " + std::to_string(new_features.rows) + " vs " +
                    std::to_string(new_records.size()));
  for (const auto& r : new_records) {
    if (store.find(r.sample_id))
      throw Error(Errc::DuplicateSampleId, kModule,
                  "sample_id '" + r.sample_id + "' already in store");
    if (!r.validated || r.split != Split::train)
      throw Error(Errc::InvalidArgument, kModule,
                  "appended record '" + r.sample_id + "' must be a validated train row");
  }

  Matrix<float> features(store.size() + new_features.rows,
                         store.empty() ? new_features.cols : store.dim());
  std::copy(store.features().data.begin(), store.features().data.end(), features.data.begin());
  std::copy(new_features.data.begin(), new_features.data.end(),
            features.data.begin() + static_cast<std::ptrdiff_t>(store.features().data.size()));

  std::vector<SampleRecord> records = store.records();
  const std::string now = utc_timestamp();
  for (auto& r : new_records) {
    if (!r.validated_at) r.validated_at = now;
    records.push_back(r);
  }
  std::optional<int> declared;
  if (store.class_declared()) declared = store.class_count();
  FeatureStore grown = FeatureStore::create(std::move(features), std::move(records), declared);
  if (audit)
    for (std::size_t i = store.size(); i < grown.size(); ++i)
      audit->record("append", grown.record(i).sample_id, actor);
  return grown;
}

FeatureStore select_rows(const FeatureStore& store, std::span<const std::size_t> rows,
                         std::optional<Split> split) {
  Matrix<float> features(rows.size(), store.dim());
  std::vector<SampleRecord> records;
  records.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = store.row(rows[i]);
    std::copy(src.begin(), src.end(), features.row(i).begin());
    SampleRecord r = store.record(rows[i]);
    if (split) r.split = *split;
    records.push_back(std::move(r));
  }
  std::optional<int> declared;
  if (store.class_declared()) declared = store.class_count();
  return FeatureStore::create(std::move(features), std::move(records), declared);
}

FeatureStore concat_stores(const FeatureStore& a, const FeatureStore& b) {
  if (a.dim() != b.dim())
    throw Error(Errc::DimMismatch, kModule,
                "cannot concatenate dim " + std::to_string(a.dim()) + " and " +
                    std::to_string(b.dim()));
  Matrix<float> features(a.size() + b.size(), a.dim());
  std::copy(a.features().data.begin(), a.features().data.end(), features.data.begin());
  std::copy(b.features().data.begin(), b.features().data.end(),
            features.data.begin() + static_cast<std::ptrdiff_t>(a.features().data.size()));
  std::vector<SampleRecord> records = a.records();
  records.insert(records.end(), b.records().begin(), b.records().end());
  std::optional<int> declared;
  if (a.class_declared() || b.class_declared()) declared = std::max(a.class_count(), b.class_count());
  return FeatureStore::create(std::move(features), std::move(records), declared);
}

FeatureRanking rank_features(const FeatureStore& store, RankingScope scope,
                             std::optional<int> class_id) {
  if (scope == RankingScope::per_class && !class_id)
    throw Error(Errc::InvalidArgument, kModule, "per_class ranking needs a class id");
  const std::size_t d = store.dim();
  std::vector<double> sums(d, 0.0);
  std::size_t count = 0;
  for (const auto& r : store.records()) {
    if (r.split != Split::train) continue;
    if (scope == RankingScope::per_class && r.label != class_id) continue;
    const auto row = store.row(r.index);
    for (std::size_t j = 0; j < d; ++j) sums[j] += std::fabs(static_cast<double>(row[j]));
    ++count;
  }
  if (count == 0)
    throw Error(Errc::EmptyScope, kModule,
                scope == RankingScope::global
                    ? std::string("no train rows to rank features over")
                    : "class " + std::to_string(*class_id) + " has no train rows");

  FeatureRanking out;
  out.scope = scope;
  out.class_id = scope == RankingScope::per_class ? class_id : std::nullopt;
  out.importance.resize(d);
  for (std::size_t j = 0; j < d; ++j) out.importance[j] = sums[j] / static_cast<double>(count);
  out.order.resize(d);
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  std::stable_sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
    return out.importance[a] > out.importance[b];
  });
  return out;
}

std::vector<std::size_t> top_dimensions(const FeatureRanking& ranking, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw Error(Errc::InvalidArgument, kModule, "feature fraction must be in (0, 1]");
  const std::size_t d = ranking.order.size();
  auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(d) - 1e-9));
  keep = std::clamp<std::size_t>(keep, 1, d);
  std::vector<std::size_t> dims(ranking.order.begin(),
                                ranking.order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(dims.begin(), dims.end());
  return dims;
}

}  // namespace stoodx
