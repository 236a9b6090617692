#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "stoodx/baselines.hpp"
#include "stoodx/config.hpp"
#include "stoodx/detector.hpp"
#include "stoodx/error.hpp"
#include "stoodx/eval.hpp"
#include "stoodx/explain.hpp"
#include "stoodx/featurestore.hpp"
#include "stoodx/knn.hpp"
#include "stoodx/service.hpp"
#include "stoodx/synth.hpp"
#include "stoodx/util.hpp"

namespace fs = std::filesystem;
using namespace stoodx;

namespace {

// Flag values as typed on the command line; empty optionals fall back to the
// spec file, then to built-in defaults.
struct Flags {
  std::string store, query, out, spec, format, bind = "127.0.0.1:8080", mode, ranking;
  std::string features, metadata, static_dir, audit, sample_id;
  std::vector<std::string> ood;
  std::optional<std::size_t> k;
  std::optional<double> fraction, alpha, review_upper;
  std::optional<int> predicted;
  std::size_t threads = 0;
  std::uint64_t seed = 7;
  std::string k_list = "9,18,36,72,144,288,500";
  std::string fraction_list = "0.125,0.25,0.375,0.5,0.625,0.75,0.875,1.0";
  // synth
  int classes = 2, per_class = 100, dim = 16, informative = 0, n = 500;
  double separation = 8.0, sigma = 1.0, noise = 0.2;
  std::string split = "train", prefix;
  std::optional<float> lift;
  int test_per_class = 100, ood_count = 200;
  // explain
  std::size_t neighbors = 3, top = 3;
};

[[noreturn]] void usage_error(const std::string& msg) { throw CLI::ValidationError(msg); }

void print_hash(const std::string& hash) { std::cerr << "config_hash=" << hash << "\n"; }

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cli", "cannot write " + path);
  out << text;
}

DetectorMode parse_mode(const std::string& m) {
  if (m == "global") return DetectorMode::global;
  if (m == "predicted" || m == "predicted_class") return DetectorMode::predicted_class;
  usage_error("--mode must be global or predicted");
}

// Detector config resolution: defaults, then spec file keys, then flags.
DetectorConfig detector_config(const Flags& f) {
  DetectorConfig c;
  if (!f.spec.empty()) {
    const auto doc = config::parse_file(f.spec);
    if (auto k = doc.get_int("k")) c.k = static_cast<std::size_t>(*k);
    if (auto v = doc.get_double("fraction")) c.feature_fraction = *v;
    if (auto v = doc.get_double("alpha")) c.alpha = *v;
    if (auto v = doc.get_string("mode")) c.mode = parse_mode(*v);
    if (auto v = doc.get_string("ranking"))
      c.ranking_scope = *v == "per_class" ? RankingScope::per_class : RankingScope::global;
  }
  if (f.k) c.k = *f.k;
  if (f.fraction) c.feature_fraction = *f.fraction;
  if (f.alpha) c.alpha = *f.alpha;
  if (!f.mode.empty()) c.mode = parse_mode(f.mode);
  if (!f.ranking.empty())
    c.ranking_scope = f.ranking == "per_class" ? RankingScope::per_class : RankingScope::global;
  c.validate();
  return c;
}

std::string run_hash(const DetectorConfig& c, const FeatureStore& store) {
  return hex64(Fnv1a().value(c.hash()).value(store.fingerprint()).digest());
}

FeatureStore require_store(const Flags& f) {
  if (f.store.empty()) usage_error("--store is required");
  return load_store_dir(f.store);
}

struct Queries {
  Matrix<float> features;
  std::vector<std::string> ids;
  std::vector<std::optional<int>> predicted;
};

// A query set is either a store directory or a bare .npy matrix.
Queries load_queries(const Flags& f) {
  if (f.query.empty()) usage_error("--query is required");
  Queries q;
  if (fs::is_directory(f.query)) {
    const FeatureStore s = load_store_dir(f.query);
    q.features = s.features();
    for (const auto& r : s.records()) {
      q.ids.push_back(r.sample_id);
      q.predicted.push_back(f.predicted ? f.predicted : r.predicted);
    }
    return q;
  }
  q.features = npy::load_f32(f.query);
  for (std::size_t i = 0; i < q.features.rows; ++i) {
    q.ids.push_back("q" + std::to_string(i));
    q.predicted.push_back(f.predicted);
  }
  return q;
}

// Bare feature queries carry no model prediction; in predicted-class mode the
// label of the nearest train row stands in for it.
void fill_predictions(Queries& q, const FeatureStore& store, const DetectorConfig& c) {
  if (c.mode != DetectorMode::predicted_class) return;
  std::optional<NeighborIndex> index;
  std::size_t filled = 0;
  for (std::size_t i = 0; i < q.ids.size(); ++i) {
    if (q.predicted[i]) continue;
    if (!index) index = build_index(store, PoolMode::global);
    try {
      const auto nn = query_knn(*index, q.features.row(i), 1);
      q.predicted[i] = store.record(nn.ids[0]).label;
      ++filled;
    } catch (const Error&) {
      // left empty; scoring reports the error for this row
    }
  }
  if (filled > 0)
    warn("cli", std::to_string(filled) +
                    " queries had no predicted class; using the nearest train row's label");
}

int cmd_ingest(const Flags& f) {
  if (f.features.empty() || f.metadata.empty() || f.out.empty())
    usage_error("ingest needs --features, --metadata and --out");
  const FeatureStore s = load_store(f.features, f.metadata);
  save_store_dir(s, f.out);
  print_hash(hex64(s.fingerprint()));
  std::cout << "rows=" << s.size() << " dim=" << s.dim() << " classes=" << s.class_count()
            << "\n";
  return 0;
}

int cmd_synth(const Flags& f, const std::string& kind) {
  if (f.out.empty()) usage_error("synth needs --out");
  FeatureStore s;
  if (kind == "blobs" || kind == "blob-benchmark") {
    synth::BlobSpec spec;
    spec.n_classes = f.classes;
    spec.n_per_class = f.per_class;
    spec.dim = f.dim;
    spec.center_separation = f.separation;
    spec.noise_sigma = f.sigma;
    spec.seed = f.seed;
    spec.informative_dims = f.informative;
    spec.split = parse_split(f.split);
    if (!f.prefix.empty()) spec.id_prefix = f.prefix;
    if (kind == "blob-benchmark") {
      // Writes <out>/id (train + test rows) and <out>/ood.
      const auto b = synth::make_blob_benchmark({spec, f.test_per_class, f.ood_count});
      save_store_dir(b.id_store, fs::path(f.out) / "id");
      save_store_dir(b.ood_store, fs::path(f.out) / "ood");
      print_hash(hex64(b.id_store.fingerprint()));
      return 0;
    }
    s = synth::make_blobs(spec);
  } else if (kind == "sine") {
    auto d = synth::make_sine(f.n, f.noise, 0.0, 6.283185307179586, f.seed, parse_split(f.split),
                              f.prefix.empty() ? "sine" : f.prefix);
    s = f.lift ? synth::lift_constant(d.store, *f.lift) : std::move(d.store);
  } else {
    usage_error("synth kind must be blobs, blob-benchmark or sine");
  }
  save_store_dir(s, f.out);
  print_hash(hex64(s.fingerprint()));
  return 0;
}

int cmd_index(const Flags& f) {
  const FeatureStore store = require_store(f);
  const DetectorConfig c = detector_config(f);
  print_hash(run_hash(c, store));
  const auto state = prepare(store, c, f.threads);
  nlohmann::ordered_json j;
  j["config_hash"] = state->config_hash();
  j["pool_size"] = state->pool_size();
  j["k"] = c.k;
  j["mode"] = std::string(mode_name(c.mode));
  j["caches"] = nlohmann::ordered_json::array();
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    std::vector<std::pair<std::string, const PoolModel*>> models;
    if (c.mode == DetectorMode::global) {
      models.emplace_back("global", &state->model_for(std::nullopt));
    } else {
      std::set<int> classes;
      for (std::size_t row : store.train_rows()) classes.insert(*store.record(row).label);
      for (int cls : classes) models.emplace_back(std::to_string(cls), &state->model_for(cls));
    }
    std::set<const PoolModel*> written;
    for (const auto& [name, model] : models) {
      if (!written.insert(model).second) continue;
      const fs::path path = fs::path(f.out) / self_table_cache_key(store.fingerprint(), c.k,
                                                                  model->index.mode(),
                                                                  model->index.subset());
      save_self_table(model->table, path);
      j["caches"].push_back(path.string());
    }
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_score(const Flags& f) {
  const FeatureStore store = require_store(f);
  const DetectorConfig c = detector_config(f);
  Queries q = load_queries(f);
  print_hash(run_hash(c, store));
  if (q.features.cols != store.dim())
    throw Error(Errc::DimMismatch, "cli",
                "query dim " + std::to_string(q.features.cols) + " vs store dim " +
                    std::to_string(store.dim()));
  fill_predictions(q, store, c);
  const auto state = prepare(store, c, f.threads);
  std::vector<ScoreQuery> queries;
  for (std::size_t i = 0; i < q.ids.size(); ++i)
    queries.push_back({q.features.row(i), q.predicted[i], q.ids[i], std::nullopt});
  const auto outcomes = score_batch(*state, queries, f.threads);
  std::ostringstream out;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (const auto* rec = std::get_if<ScoreRecord>(&outcomes[i])) {
      out << score_record_to_json(*rec) << "\n";
    } else {
      const auto& e = std::get<Error>(outcomes[i]);
      std::cerr << "error [" << e.module() << "] " << errc_name(e.code()) << ": " << q.ids[i]
                << ": " << e.what() << "\n";
      ++failed;
    }
  }
  write_text(f.out, out.str());
  return failed ? 2 : 0;
}

eval::Benchmark benchmark_from(const Flags& f) {
  eval::BenchmarkSpec spec;
  if (!f.spec.empty()) {
    spec = eval::load_benchmark_spec(f.spec);
  } else {
    if (f.store.empty()) usage_error("eval needs --spec or --store");
    spec.id_store = f.store;
    spec.methods = {eval::MethodSpec{}};
  }
  if (!f.store.empty()) spec.id_store = f.store;
  for (const auto& o : f.ood) {
    // [near:|far:]path
    eval::OodSetSpec set;
    std::string path = o;
    if (o.rfind("near:", 0) == 0 || o.rfind("far:", 0) == 0) {
      const auto colon = o.find(':');
      set.group = eval::parse_group(o.substr(0, colon));
      path = o.substr(colon + 1);
    }
    set.path = path;
    set.name = fs::path(path).lexically_normal().filename().string();
    if (set.name.empty()) set.name = fs::path(path).lexically_normal().parent_path().filename().string();
    spec.ood_sets.push_back(std::move(set));
  }
  const DetectorConfig c = detector_config(f);
  for (auto& m : spec.methods) {
    if (m.kind == eval::MethodKind::stoodx) m.detector = c;
    if (m.kind == eval::MethodKind::knn && f.k) m.k = *f.k;
  }
  if (f.threads) spec.threads = f.threads;
  spec.validate();
  return eval::load_benchmark(spec);
}

std::string bench_hash(const eval::Benchmark& b) {
  Fnv1a h;
  h.value(b.id_store.fingerprint());
  for (const auto& s : b.ood_sets) h.str(s.name).value(s.group).value(s.store.fingerprint());
  for (const auto& m : b.methods) h.str(m.name()).value(m.detector.hash()).value(m.k).value(m.ridge_scale);
  return hex64(h.digest());
}

void emit_table(const Flags& f, const eval::MetricsTable& t) {
  if (f.format == "csv") return write_text(f.out, eval::to_csv(t));
  if (f.format == "md") return write_text(f.out, eval::to_markdown(t));
  if (f.format == "json") return write_text(f.out, eval::to_json(t));
  // both human and machine forms
  if (f.out.empty() || f.out == "-") {
    std::cout << eval::to_csv(t) << "\n" << eval::to_markdown(t);
    return;
  }
  const fs::path base(f.out);
  write_text(fs::path(base).replace_extension(".csv").string(), eval::to_csv(t));
  write_text(fs::path(base).replace_extension(".md").string(), eval::to_markdown(t));
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      if constexpr (std::is_same_v<T, double>)
        out.push_back(std::stod(item));
      else
        out.push_back(static_cast<T>(std::stoull(item)));
    } catch (const std::exception&) {
      usage_error(std::string("bad ") + what + " list: " + s);
    }
  }
  if (out.empty()) usage_error(std::string("empty ") + what + " list");
  if (!std::is_sorted(out.begin(), out.end()))
    usage_error(std::string(what) + " list must be ascending");
  return out;
}

int cmd_eval(const Flags& f) {
  const auto bench = benchmark_from(f);
  print_hash(bench_hash(bench));
  emit_table(f, eval::run_benchmark(bench));
  return 0;
}

int cmd_sweep_k(const Flags& f, const std::string& k_list) {
  const auto ks = parse_list<std::size_t>(k_list, "k");
  const auto bench = benchmark_from(f);
  print_hash(bench_hash(bench));
  emit_table(f, eval::sweep_k(bench, ks));
  return 0;
}

int cmd_sweep_features(const Flags& f, const std::string& list) {
  const auto fractions = parse_list<double>(list, "fraction");
  const auto bench = benchmark_from(f);
  print_hash(bench_hash(bench));
  emit_table(f, eval::sweep_features(bench, fractions));
  return 0;
}

int cmd_explain(const Flags& f) {
  const FeatureStore store = require_store(f);
  const DetectorConfig c = detector_config(f);
  Queries q = load_queries(f);
  print_hash(run_hash(c, store));
  if (q.features.cols != store.dim()) throw Error(Errc::DimMismatch, "cli", "query dim mismatch");
  std::size_t row = 0;
  if (!f.sample_id.empty()) {
    const auto it = std::find(q.ids.begin(), q.ids.end(), f.sample_id);
    if (it == q.ids.end()) throw Error(Errc::NotFound, "cli", "no query '" + f.sample_id + "'");
    row = static_cast<std::size_t>(it - q.ids.begin());
  } else if (q.ids.size() != 1) {
    usage_error("explain needs --id when the query set has more than one row");
  }
  fill_predictions(q, store, c);
  const auto state = prepare(store, c, f.threads);
  const ScoreRecord rec = score(*state, q.features.row(row), q.predicted[row], q.ids[row]);
  const Explanation e =
      build_explanation(*state, rec, store, q.features.row(row), {f.neighbors, f.top});
  write_text(f.out, render_report(e, f.format == "html" ? ReportFormat::html : ReportFormat::json) +
                        (f.format == "html" ? "" : "\n"));
  return 0;
}

service::HttpServer* g_server = nullptr;

int cmd_serve(const Flags& f) {
  FeatureStore store = require_store(f);
  const DetectorConfig c = detector_config(f);
  FeatureStore candidates = f.query.empty() ? FeatureStore{} : load_store_dir(f.query);
  service::ServiceOptions opts;
  if (!f.spec.empty())
    if (auto r = config::parse_file(f.spec).get_double("review_upper")) opts.review_upper = *r;
  if (f.review_upper) opts.review_upper = *f.review_upper;
  opts.store_dir = fs::path(f.store);
  if (!f.audit.empty()) opts.audit_path = fs::path(f.audit);
  else opts.audit_path = fs::path(f.store) / "audit.jsonl";
  if (!f.static_dir.empty()) opts.static_dir = fs::path(f.static_dir);
  opts.threads = f.threads;
  print_hash(run_hash(c, store));
  service::ReviewService svc(std::move(store), std::move(candidates), c, opts);
  service::HttpServer server(svc);
  const auto [host, port] = service::parse_bind(f.bind);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "listening on " << host << ":" << port << "\n";
  server.run(host, port);
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stoodx: rank-test OOD detection over feature embeddings"};
  app.require_subcommand(1);
  Flags f;

  auto detector_flags = [&](CLI::App* sub) {
    sub->add_option("--store", f.store, "store directory (features.npy + metadata.jsonl)");
    sub->add_option("--spec", f.spec, "key/value spec file; flags override its keys");
    sub->add_option("--k", f.k, "neighbors per query")->check(CLI::PositiveNumber);
    sub->add_option("--fraction", f.fraction, "fraction of top-ranked dims kept");
    sub->add_option("--mode", f.mode, "global|predicted")
        ->check(CLI::IsMember({"global", "predicted", "predicted_class"}));
    sub->add_option("--ranking", f.ranking, "feature ranking scope")
        ->check(CLI::IsMember({"global", "per_class"}));
    sub->add_option("--alpha", f.alpha, "significance level");
    sub->add_option("--threads", f.threads, "worker threads (0 = all cores)");
    sub->add_option("--seed", f.seed, "RNG seed (unused by deterministic subcommands)");
  };

  auto* ingest = app.add_subcommand("ingest", "validate an NPY + JSONL pair into a store directory");
  ingest->add_option("--features", f.features)->required();
  ingest->add_option("--metadata", f.metadata)->required();
  ingest->add_option("--out", f.out)->required();

  auto* synth = app.add_subcommand("synth", "write a synthetic store");
  std::string synth_kind;
  synth->add_option("kind", synth_kind, "blobs|blob-benchmark|sine")
      ->required()
      ->check(CLI::IsMember({"blobs", "blob-benchmark", "sine"}));
  synth->add_option("--out", f.out)->required();
  synth->add_option("--seed", f.seed);
  synth->add_option("--classes", f.classes)->check(CLI::PositiveNumber);
  synth->add_option("--per-class", f.per_class)->check(CLI::PositiveNumber);
  synth->add_option("--dim", f.dim)->check(CLI::Range(2, 1 << 20));
  synth->add_option("--separation", f.separation);
  synth->add_option("--sigma", f.sigma);
  synth->add_option("--informative", f.informative);
  synth->add_option("--n", f.n);
  synth->add_option("--noise", f.noise);
  synth->add_option("--lift", f.lift, "append a constant coordinate (sine)");
  synth->add_option("--split", f.split)->check(CLI::IsMember({"train", "test", "ood"}));
  synth->add_option("--prefix", f.prefix, "sample_id prefix");
  synth->add_option("--test-per-class", f.test_per_class)->check(CLI::PositiveNumber);
  synth->add_option("--ood-count", f.ood_count)->check(CLI::PositiveNumber);

  auto* index = app.add_subcommand("index", "build the index and self-distance cache");
  detector_flags(index);
  index->add_option("--out", f.out, "cache directory");

  auto* score_cmd = app.add_subcommand("score", "score queries; JSON Lines on stdout");
  detector_flags(score_cmd);
  score_cmd->add_option("--query", f.query, "query .npy or store directory")->required();
  score_cmd->add_option("--predicted", f.predicted, "predicted class for every query");
  score_cmd->add_option("--out", f.out, "output file (default stdout)");

  auto table_flags = [&](CLI::App* sub) {
    detector_flags(sub);
    sub->add_option("--ood", f.ood, "OOD store directory, optionally prefixed near: or far:");
    sub->add_option("--out", f.out, "output file (default stdout)");
    sub->add_option("--format", f.format)->check(CLI::IsMember({"csv", "md", "json"}));
  };
  auto* eval_cmd = app.add_subcommand("eval", "run the benchmark");
  table_flags(eval_cmd);
  auto* sweep_k = app.add_subcommand("sweep-k", "benchmark over a k grid");
  table_flags(sweep_k);
  sweep_k->remove_option(sweep_k->get_option("--k"));
  sweep_k->add_option("--k", f.k_list, "comma-separated ascending k values");
  auto* sweep_f = app.add_subcommand("sweep-features", "benchmark over a feature-fraction grid");
  table_flags(sweep_f);
  sweep_f->remove_option(sweep_f->get_option("--fraction"));
  sweep_f->add_option("--fraction", f.fraction_list, "comma-separated ascending fractions");

  auto* explain = app.add_subcommand("explain", "neighbor and feature evidence for one query");
  detector_flags(explain);
  explain->add_option("--query", f.query, "query .npy or store directory")->required();
  explain->add_option("--id", f.sample_id, "sample_id within the query set");
  explain->add_option("--predicted", f.predicted);
  explain->add_option("--neighbors", f.neighbors);
  explain->add_option("--top", f.top);
  explain->add_option("--format", f.format)->check(CLI::IsMember({"json", "html"}));
  explain->add_option("--out", f.out);

  auto* serve = app.add_subcommand("serve", "HTTP review service");
  detector_flags(serve);
  serve->add_option("--query", f.query, "candidate store directory to review");
  serve->add_option("--bind", f.bind, "host:port");
  serve->add_option("--review-upper", f.review_upper, "upper p bound of the borderline band");
  serve->add_option("--static", f.static_dir, "frontend asset directory served at /");
  serve->add_option("--audit", f.audit, "audit log path (default <store>/audit.jsonl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*ingest) return cmd_ingest(f);
    if (*synth) return cmd_synth(f, synth_kind);
    if (*index) return cmd_index(f);
    if (*score_cmd) return cmd_score(f);
    if (*eval_cmd) return cmd_eval(f);
    if (*sweep_k) return cmd_sweep_k(f, f.k_list);
    if (*sweep_f) return cmd_sweep_features(f, f.fraction_list);
    if (*explain) return cmd_explain(f);
    if (*serve) return cmd_serve(f);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error [" << e.module() << "] " << errc_name(e.code()) << ": " << e.what() << "\n";
    return e.code() == Errc::InvalidArgument ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
