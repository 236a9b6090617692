#include "stoodx/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "stoodx/baselines.hpp"
#include "stoodx/error.hpp"
#include "stoodx/stats.hpp"

namespace stoodx::eval {

namespace {

constexpr const char* kModule = "eval";

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  const double ms = std::chrono::duration<double, std::milli>(Clock::now() - since).count();
  return std::max(ms, 1e-3);
}

std::vector<std::size_t> rows_with_split(const FeatureStore& store, Split split) {
  std::vector<std::size_t> out;
  for (const auto& r : store.records())
    if (r.split == split) out.push_back(r.index);
  return out;
}

std::vector<double> stoodx_scores(const DetectorState& state, const FeatureStore& store,
                                  const std::vector<std::size_t>& rows, std::size_t threads,
                                  std::size_t& max_k, const std::string& where) {
  std::vector<ScoreQuery> queries;
  queries.reserve(rows.size());
  for (auto r : rows) {
    const auto& rec = store.record(r);
    queries.push_back({store.row(r), rec.predicted, rec.sample_id, std::nullopt});
  }
  auto outcomes = score_batch(state, queries, threads);
  std::vector<double> scores;
  scores.reserve(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (const auto* err = std::get_if<Error>(&outcomes[i]))
      throw Error(err->code(), err->module(),
                  where + ", sample '" + queries[i].sample_id + "': " + err->what());
    const auto& rec = std::get<ScoreRecord>(outcomes[i]);
    max_k = std::max(max_k, rec.neighbors.size());
    scores.push_back(rec.p);
  }
  return scores;
}

void check_dims(const Benchmark& bench) {
  for (const auto& set : bench.ood_sets)
    if (set.store.dim() != bench.id_store.dim())
      throw Error(Errc::DimMismatch, kModule,
                  "OOD set '" + set.name + "' has dim " + std::to_string(set.store.dim()) +
                      ", ID store has " + std::to_string(bench.id_store.dim()));
}

void append_cells(MetricsTable& table, const Benchmark& bench, const MethodSpec& method,
                  const MethodScores& scores, std::optional<std::size_t> requested_k,
                  std::optional<double> fraction) {
  std::map<OodGroup, std::vector<MetricsRow>> by_group;
  for (std::size_t s = 0; s < bench.ood_sets.size(); ++s) {
    MetricsRow row;
    row.method = method.name();
    row.ood_set = bench.ood_sets[s].name;
    row.group = bench.ood_sets[s].group;
    if (method.kind != MethodKind::mds) row.k = scores.effective_k;
    row.requested_k = requested_k;
    row.fraction = fraction;
    row.auroc = stats::auroc(scores.id_scores, scores.ood_scores[s]);
    row.fpr95 = stats::fpr_at_tpr(scores.id_scores, scores.ood_scores[s], 0.95);
    row.wall_time_ms = scores.id_ms + scores.ood_ms[s];
    by_group[row.group].push_back(row);
  }
  for (auto& [group, rows] : by_group) {
    std::sort(rows.begin(), rows.end(),
              [](const MetricsRow& a, const MetricsRow& b) { return a.ood_set < b.ood_set; });
    MetricsRow mean = rows.front();
    mean.ood_set = "mean";
    mean.aggregate = true;
    mean.auroc = mean.fpr95 = mean.wall_time_ms = 0.0;
    for (const auto& r : rows) {
      mean.auroc += r.auroc;
      mean.fpr95 += r.fpr95;
      mean.wall_time_ms += r.wall_time_ms;
      table.rows.push_back(r);
    }
    const auto n = static_cast<double>(rows.size());
    mean.auroc /= n;
    mean.fpr95 /= n;
    mean.wall_time_ms /= n;
    table.rows.push_back(mean);
  }
}

DetectorConfig base_detector(const Benchmark& bench) {
  for (const auto& m : bench.methods)
    if (m.kind == MethodKind::stoodx) return m.detector;
  return DetectorConfig{};
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

std::string_view group_name(OodGroup g) { return g == OodGroup::near ? "near" : "far"; }

OodGroup parse_group(std::string_view s) {
  if (s == "near") return OodGroup::near;
  if (s == "far") return OodGroup::far;
  throw Error(Errc::InvalidArgument, kModule, "OOD group must be near or far, got '" +
                                                  std::string(s) + "'");
}

std::string MethodSpec::name() const {
  switch (kind) {
    case MethodKind::stoodx: return "stoodx";
    case MethodKind::knn: return "knn";
    case MethodKind::mds: return "mds";
  }
  return "unknown";
}

void BenchmarkSpec::validate() const {
  if (ood_sets.empty()) throw Error(Errc::InvalidArgument, kModule, "at least one OOD set needed");
  if (methods.empty()) throw Error(Errc::InvalidArgument, kModule, "at least one method needed");
  for (const auto& m : methods)
    if (m.kind == MethodKind::stoodx) m.detector.validate();
}

BenchmarkSpec benchmark_spec_from(const config::Document& doc,
                                  const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  BenchmarkSpec spec;
  const auto store = doc.get_string("store");
  if (!store) throw Error(Errc::MissingField, kModule, "spec needs `store`");
  spec.id_store = resolve(*store);
  if (auto out = doc.get_string("out")) spec.output = resolve(*out);
  if (auto t = doc.get_int("threads")) spec.threads = static_cast<std::size_t>(*t);
  if (auto r = doc.get_double("review_upper")) spec.review_upper = *r;

  DetectorConfig det;
  if (auto k = doc.get_int("k")) det.k = static_cast<std::size_t>(*k);
  if (auto f = doc.get_double("fraction")) det.feature_fraction = *f;
  if (auto a = doc.get_double("alpha")) det.alpha = *a;
  if (auto m = doc.get_string("mode")) {
    if (*m == "global")
      det.mode = DetectorMode::global;
    else if (*m == "predicted" || *m == "predicted_class")
      det.mode = DetectorMode::predicted_class;
    else
      throw Error(Errc::InvalidArgument, kModule, "mode must be global or predicted");
  }
  if (auto r = doc.get_string("ranking")) {
    if (*r == "per_class")
      det.ranking_scope = RankingScope::per_class;
    else if (*r != "global")
      throw Error(Errc::InvalidArgument, kModule, "ranking must be global or per_class");
  }

  std::vector<std::string> names = {"stoodx"};
  if (const auto* v = doc.find("methods")) {
    names.clear();
    for (const auto& item : v->as_array()) names.push_back(item.as_string());
  }
  for (const auto& name : names) {
    MethodSpec m;
    if (name == "stoodx") {
      m.kind = MethodKind::stoodx;
      m.detector = det;
    } else if (name == "knn") {
      m.kind = MethodKind::knn;
      m.k = static_cast<std::size_t>(doc.get_int("knn_k").value_or(static_cast<std::int64_t>(det.k)));
    } else if (name == "mds") {
      m.kind = MethodKind::mds;
      if (auto r = doc.get_double("ridge_scale")) m.ridge_scale = *r;
    } else {
      throw Error(Errc::InvalidArgument, kModule, "unknown method '" + name + "'");
    }
    spec.methods.push_back(m);
  }

  const auto it = doc.array_tables.find("ood");
  if (it != doc.array_tables.end()) {
    for (const auto& t : it->second) {
      OodSetSpec set;
      const auto get = [&](const char* key) -> std::string {
        const auto f = t.find(key);
        if (f == t.end()) throw Error(Errc::MissingField, kModule, std::string("[[ood]] needs ") + key);
        return f->second.as_string();
      };
      set.path = resolve(get("path"));
      set.name = t.count("name") ? t.at("name").as_string() : set.path.filename().string();
      set.group = t.count("group") ? parse_group(t.at("group").as_string()) : OodGroup::far;
      spec.ood_sets.push_back(std::move(set));
    }
  }
  spec.validate();
  return spec;
}

BenchmarkSpec load_benchmark_spec(const std::filesystem::path& path) {
  return benchmark_spec_from(config::parse_file(path), path.parent_path());
}

Benchmark load_benchmark(const BenchmarkSpec& spec) {
  spec.validate();
  Benchmark bench;
  bench.id_store = load_store_dir(spec.id_store);
  for (const auto& set : spec.ood_sets)
    bench.ood_sets.push_back({set.name, set.group, load_store_dir(set.path)});
  bench.methods = spec.methods;
  bench.threads = spec.threads;
  return bench;
}

MethodScores score_method(const Benchmark& bench, const MethodSpec& method) {
  check_dims(bench);
  const auto id_rows = rows_with_split(bench.id_store, Split::test);
  if (id_rows.empty())
    throw Error(Errc::EmptyScope, kModule, "ID store has no test rows to use as ID queries");
  MethodScores out;
  out.ood_scores.resize(bench.ood_sets.size());
  out.ood_ms.resize(bench.ood_sets.size());

  auto all_rows = [](const FeatureStore& s) {
    std::vector<std::size_t> rows(s.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return rows;
  };

  switch (method.kind) {
    case MethodKind::stoodx: {
      const auto state = prepare(bench.id_store, method.detector, bench.threads);
      auto t0 = Clock::now();
      out.id_scores = stoodx_scores(*state, bench.id_store, id_rows, bench.threads,
                                    out.effective_k, "ID test split");
      out.id_ms = elapsed_ms(t0);
      for (std::size_t s = 0; s < bench.ood_sets.size(); ++s) {
        t0 = Clock::now();
        const auto& set = bench.ood_sets[s];
        out.ood_scores[s] = stoodx_scores(*state, set.store, all_rows(set.store), bench.threads,
                                          out.effective_k, "OOD set '" + set.name + "'");
        out.ood_ms[s] = elapsed_ms(t0);
      }
      break;
    }
    case MethodKind::knn: {
      const NeighborIndex index = build_index(bench.id_store, PoolMode::global);
      out.effective_k = std::min(method.k, index.pool_size());
      auto run = [&](const FeatureStore& store, const std::vector<std::size_t>& rows) {
        std::vector<double> scores(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
          scores[i] = baselines::knn_score(index, store.row(rows[i]), out.effective_k);
        return scores;
      };
      auto t0 = Clock::now();
      out.id_scores = run(bench.id_store, id_rows);
      out.id_ms = elapsed_ms(t0);
      for (std::size_t s = 0; s < bench.ood_sets.size(); ++s) {
        t0 = Clock::now();
        out.ood_scores[s] = run(bench.ood_sets[s].store, all_rows(bench.ood_sets[s].store));
        out.ood_ms[s] = elapsed_ms(t0);
      }
      break;
    }
    case MethodKind::mds: {
      const auto model = baselines::mds_fit(bench.id_store, method.ridge_scale);
      auto run = [&](const FeatureStore& store, const std::vector<std::size_t>& rows) {
        std::vector<double> scores(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
          scores[i] = baselines::mds_score(model, store.row(rows[i]));
        return scores;
      };
      auto t0 = Clock::now();
      out.id_scores = run(bench.id_store, id_rows);
      out.id_ms = elapsed_ms(t0);
      for (std::size_t s = 0; s < bench.ood_sets.size(); ++s) {
        t0 = Clock::now();
        out.ood_scores[s] = run(bench.ood_sets[s].store, all_rows(bench.ood_sets[s].store));
        out.ood_ms[s] = elapsed_ms(t0);
      }
      break;
    }
  }
  return out;
}

MetricsTable run_benchmark(const Benchmark& bench) {
  if (bench.ood_sets.empty())
    throw Error(Errc::InvalidArgument, kModule, "at least one OOD set needed");
  MetricsTable table;
  for (const auto& method : bench.methods) {
    const MethodScores scores = score_method(bench, method);
    std::optional<double> fraction;
    std::optional<std::size_t> requested;
    if (method.kind == MethodKind::stoodx) {
      fraction = method.detector.feature_fraction;
      requested = method.detector.k;
    } else if (method.kind == MethodKind::knn) {
      requested = method.k;
    }
    append_cells(table, bench, method, scores, requested, fraction);
  }
  return table;
}

MetricsTable run_benchmark(const BenchmarkSpec& spec) { return run_benchmark(load_benchmark(spec)); }

MetricsTable sweep_k(const Benchmark& bench, const std::vector<std::size_t>& k_list) {
  if (k_list.empty()) throw Error(Errc::InvalidArgument, kModule, "k list is empty");
  if (!std::is_sorted(k_list.begin(), k_list.end()))
    throw Error(Errc::InvalidArgument, kModule, "k list must be ascending");
  MetricsTable table;
  for (std::size_t k : k_list) {
    MethodSpec m;
    m.kind = MethodKind::stoodx;
    m.detector = base_detector(bench);
    m.detector.k = k;
    const MethodScores scores = score_method(bench, m);
    if (scores.effective_k < k)
      warn(kModule, "sweep k=" + std::to_string(k) + " ran with effective k=" +
                        std::to_string(scores.effective_k));
    append_cells(table, bench, m, scores, k, m.detector.feature_fraction);
  }
  return table;
}

MetricsTable sweep_features(const Benchmark& bench, const std::vector<double>& fractions) {
  if (fractions.empty()) throw Error(Errc::InvalidArgument, kModule, "fraction list is empty");
  if (!std::is_sorted(fractions.begin(), fractions.end()))
    throw Error(Errc::InvalidArgument, kModule, "fraction list must be ascending");
  MetricsTable table;
  for (double f : fractions) {
    MethodSpec m;
    m.kind = MethodKind::stoodx;
    m.detector = base_detector(bench);
    m.detector.feature_fraction = f;
    const MethodScores scores = score_method(bench, m);
    append_cells(table, bench, m, scores, m.detector.k, f);
  }
  return table;
}

std::vector<const MetricsRow*> MetricsTable::cells() const {
  std::vector<const MetricsRow*> out;
  for (const auto& r : rows)
    if (!r.aggregate) out.push_back(&r);
  return out;
}

std::vector<const MetricsRow*> MetricsTable::aggregates() const {
  std::vector<const MetricsRow*> out;
  for (const auto& r : rows)
    if (r.aggregate) out.push_back(&r);
  return out;
}

const MetricsRow* MetricsTable::find(const std::string& method, const std::string& ood_set,
                                     std::optional<std::size_t> k,
                                     std::optional<double> fraction) const {
  for (const auto& r : rows) {
    if (r.method != method || r.ood_set != ood_set) continue;
    if (k && r.requested_k != k) continue;
    if (fraction && r.fraction != fraction) continue;
    return &r;
  }
  return nullptr;
}

std::string to_csv(const MetricsTable& table) {
  std::ostringstream os;
  os << "method,ood_set,group,k,fraction,auroc,fpr95,wall_time_ms\n";
  for (const auto& r : table.rows) {
    os << r.method << ',' << r.ood_set << ',' << group_name(r.group) << ',';
    if (r.k) os << *r.k;
    os << ',';
    if (r.fraction) os << fmt(*r.fraction, 4);
    os << ',' << fmt(r.auroc) << ',' << fmt(r.fpr95) << ',' << fmt(r.wall_time_ms, 3) << '\n';
  }
  return os.str();
}

std::string to_markdown(const MetricsTable& table) {
  std::ostringstream os;
  os << "| method | ood_set | group | k | fraction | auroc | fpr95 | wall_time_ms |\n"
     << "|---|---|---|---|---|---|---|---|\n";
  std::vector<std::string> notes;
  for (const auto& r : table.rows) {
    const std::string set = r.aggregate ? "**mean**" : r.ood_set;
    os << "| " << r.method << " | " << set << " | " << group_name(r.group) << " | "
       << (r.k ? std::to_string(*r.k) : "") << " | " << (r.fraction ? fmt(*r.fraction, 4) : "")
       << " | " << fmt(r.auroc, 4) << " | " << fmt(r.fpr95, 4) << " | "
       << fmt(r.wall_time_ms, 1) << " |\n";
    if (r.k && r.requested_k && *r.k < *r.requested_k && !r.aggregate) {
      std::string note = "k=" + std::to_string(*r.requested_k) + " clamped to " +
                         std::to_string(*r.k) + " (" + r.method + ")";
      if (std::find(notes.begin(), notes.end(), note) == notes.end()) notes.push_back(note);
    }
  }
  for (const auto& n : notes) os << "\nNote: " << n;
  if (!notes.empty()) os << '\n';
  return os.str();
}

std::string to_json(const MetricsTable& table) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : table.rows) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["ood_set"] = r.ood_set;
    j["group"] = std::string(group_name(r.group));
    j["k"] = r.k ? nlohmann::ordered_json(*r.k) : nlohmann::ordered_json(nullptr);
    j["fraction"] = r.fraction ? nlohmann::ordered_json(*r.fraction) : nlohmann::ordered_json(nullptr);
    j["auroc"] = r.auroc;
    j["fpr95"] = r.fpr95;
    j["wall_time_ms"] = r.wall_time_ms;
    j["aggregate"] = r.aggregate;
    rows.push_back(std::move(j));
  }
  return rows.dump();
}

}  // namespace stoodx::eval
