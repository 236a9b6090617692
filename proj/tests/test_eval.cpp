#include "helpers.hpp"

#include <fstream>
#include <json.hpp>

#include "stoodx/error.hpp"
#include "stoodx/eval.hpp"
#include "stoodx/synth.hpp"

using namespace stoodx;
using namespace stoodx::eval;

namespace {

synth::BlobBenchmark small_bench(int dim = 16, std::uint64_t seed = 7) {
  synth::BlobBenchmarkSpec spec;
  spec.id.n_per_class = 60;
  spec.id.dim = dim;
  spec.id.seed = seed;
  spec.test_per_class = 30;
  spec.ood_count = 40;
  return synth::make_blob_benchmark(spec);
}

MethodSpec stoodx_method(std::size_t k) {
  MethodSpec m;
  m.detector.k = k;
  return m;
}

Benchmark two_sets() {
  auto b = small_bench();
  // Second OOD set: a near-ish copy, the ID test rows re-tagged.
  std::vector<std::size_t> test_rows;
  for (const auto& r : b.id_store.records())
    if (r.split == Split::test) test_rows.push_back(r.index);
  auto near = select_rows(b.id_store, test_rows, Split::ood);
  Benchmark bench{b.id_store, {{"displaced", OodGroup::far, b.ood_store}, {"copy", OodGroup::near, near}},
                  {stoodx_method(10)}, 1};
  return bench;
}

bool same_metrics(const MetricsTable& a, const MetricsTable& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto &x = a.rows[i], &y = b.rows[i];
    if (x.method != y.method || x.ood_set != y.ood_set || x.group != y.group || x.k != y.k ||
        x.fraction != y.fraction || x.auroc != y.auroc || x.fpr95 != y.fpr95 ||
        x.aggregate != y.aggregate)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("blob benchmark generator") {
  const auto b = small_bench();
  CHECK(b.id_store.size() == 180);
  CHECK(b.id_store.train_rows().size() == 120);
  CHECK(b.ood_store.size() == 40);
  for (const auto& r : b.ood_store.records()) {
    CHECK_FALSE(r.label.has_value());
    REQUIRE(r.predicted.has_value());
    CHECK(*r.predicted >= 0);
    CHECK(*r.predicted < 2);
  }
}

TEST_CASE("shape: one method, two OOD sets in two groups") {
  const auto t = run_benchmark(two_sets());
  CHECK(t.cells().size() == 2);
  CHECK(t.aggregates().size() == 2);
  for (const auto* agg : t.aggregates()) {
    const auto* cell = t.find("stoodx", agg->group == OodGroup::near ? "copy" : "displaced");
    REQUIRE(cell != nullptr);
    CHECK(agg->auroc == cell->auroc);
  }
  for (const auto& r : t.rows) {
    CHECK(r.wall_time_ms > 0.0);
    CHECK(r.auroc >= 0.0);
    CHECK(r.auroc <= 1.0);
    CHECK(r.fpr95 >= 0.0);
    CHECK(r.fpr95 <= 1.0);
  }
}

TEST_CASE("separable instance") {
  const auto b = small_bench();
  Benchmark bench{b.id_store, {{"displaced", OodGroup::far, b.ood_store}}, {stoodx_method(20)}, 0};
  const auto t = run_benchmark(bench);
  const auto* cell = t.find("stoodx", "displaced");
  REQUIRE(cell != nullptr);
  CHECK(cell->auroc == 1.0);
  CHECK(cell->fpr95 == 0.0);
}

TEST_CASE("determinism and OOD-set order invariance") {
  auto bench = two_sets();
  const auto a = run_benchmark(bench);
  const auto b = run_benchmark(bench);
  CHECK(same_metrics(a, b));
  std::swap(bench.ood_sets[0], bench.ood_sets[1]);
  CHECK(same_metrics(a, run_benchmark(bench)));
}

TEST_CASE("group aggregates are means") {
  auto b = small_bench();
  Benchmark bench{b.id_store,
                  {{"x", OodGroup::far, b.ood_store},
                   {"y", OodGroup::far, synth::make_blob_benchmark({[] {
                                                                     synth::BlobSpec s;
                                                                     s.n_per_class = 10;
                                                                     s.sample_seed = 99;
                                                                     return s;
                                                                   }(),
                                                                   5, 25})
                                            .ood_store}},
                  {stoodx_method(8), MethodSpec{MethodKind::knn, {}, 8}, MethodSpec{MethodKind::mds}},
                  0};
  const auto t = run_benchmark(bench);
  CHECK(t.cells().size() == 6);
  CHECK(t.aggregates().size() == 3);
  for (const auto* agg : t.aggregates()) {
    const auto* x = t.find(agg->method, "x");
    const auto* y = t.find(agg->method, "y");
    CHECK(std::abs(agg->auroc - (x->auroc + y->auroc) / 2) <= 1e-12);
    CHECK(std::abs(agg->fpr95 - (x->fpr95 + y->fpr95) / 2) <= 1e-12);
  }
}

TEST_CASE("sweep_k: one row group per k") {
  const auto b = small_bench();
  Benchmark bench{b.id_store, {{"displaced", OodGroup::far, b.ood_store}}, {stoodx_method(10)}, 0};
  const std::vector<std::size_t> ks{9, 18, 36, 72, 144, 288, 500};
  const auto t = sweep_k(bench, ks);
  CHECK(t.cells().size() == 7);
  for (std::size_t k : ks) CHECK(t.find("stoodx", "displaced", k) != nullptr);
  CHECK(*t.find("stoodx", "displaced", 500)->k == 60);  // class pool of 60
  CHECK_THROWS_AS(sweep_k(bench, {18, 9}), Error);
  CHECK_THROWS_AS(sweep_k(bench, {}), Error);
}

TEST_CASE("sweep_k clamps on a tiny pool and says so") {
  Matrix<float> m(6, 2, {1, 0, 0.9f, 0.1f, 0.8f, 0.3f, 1, 0.2f, 0.95f, 0.05f, 0, 1});
  std::vector<SampleRecord> recs(6);
  for (std::size_t i = 0; i < 6; ++i) {
    recs[i].sample_id = "s" + std::to_string(i);
    recs[i].label = 0;
    recs[i].predicted = 0;
    recs[i].split = i < 4 ? Split::train : Split::test;
  }
  auto id = FeatureStore::create(m, recs);
  const std::vector<std::size_t> ood_rows{5};
  Benchmark bench{id, {{"o", OodGroup::far, select_rows(id, ood_rows, Split::ood)}}, {stoodx_method(5)}, 0};
  ScopedWarningCapture w;
  const auto t = sweep_k(bench, {5});
  CHECK(w.count() >= 1);
  CHECK(*t.find("stoodx", "o", 5)->k == 4);
  const auto md = to_markdown(t);
  CHECK(md.find("k=5 clamped to 4") != std::string::npos);
}

TEST_CASE("sweep_features: fraction 1.0 equals the plain row") {
  const auto b = small_bench();
  Benchmark bench{b.id_store, {{"displaced", OodGroup::far, b.ood_store}}, {stoodx_method(10)}, 0};
  const std::vector<double> fr{0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0};
  const auto t = sweep_features(bench, fr);
  CHECK(t.cells().size() == 8);
  const auto plain = run_benchmark(bench);
  const auto* a = t.find("stoodx", "displaced", std::nullopt, 1.0);
  const auto* p = plain.find("stoodx", "displaced");
  CHECK(a->auroc == p->auroc);
  CHECK(a->fpr95 == p->fpr95);
  const auto sa = score_method(bench, stoodx_method(10));
  auto m = stoodx_method(10);
  m.detector.feature_fraction = 1.0;
  CHECK(score_method(bench, m).id_scores == sa.id_scores);
}

TEST_CASE("output formats") {
  const auto t = run_benchmark(two_sets());
  const auto csv = to_csv(t);
  CHECK(csv.rfind("method,ood_set,group,k,fraction,auroc,fpr95,wall_time_ms\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.find("stoodx,mean,near,") != std::string::npos);
  const auto md = to_markdown(t);
  CHECK(md.rfind("| method | ood_set | group | k | fraction | auroc | fpr95 | wall_time_ms |", 0) == 0);
  const auto j = nlohmann::json::parse(to_json(t));
  CHECK(j.size() == 4);
}

TEST_CASE("mismatched dims and missing test rows are reported") {
  const auto b = small_bench();
  const auto other = small_bench(8);
  Benchmark bad{b.id_store, {{"o", OodGroup::far, other.ood_store}}, {stoodx_method(5)}, 0};
  CHECK_THROWS_AS(run_benchmark(bad), Error);
  Benchmark no_test{b.ood_store, {{"o", OodGroup::far, b.ood_store}}, {stoodx_method(5)}, 0};
  CHECK_THROWS_AS(run_benchmark(no_test), Error);
  Benchmark none{b.id_store, {}, {stoodx_method(5)}, 0};
  CHECK_THROWS_AS(run_benchmark(none), Error);
}

TEST_CASE("spec file") {
  testing::TempDir dir("eval");
  const auto b = small_bench();
  save_store_dir(b.id_store, dir / "id");
  save_store_dir(b.ood_store, dir / "far");
  std::ofstream(dir / "bench.toml") << R"(# blob benchmark
store = "id"
out = "metrics.csv"
k = 12
fraction = 0.5
alpha = 0.05
mode = "predicted"
methods = ["stoodx", "knn", "mds"]
knn_k = 7

[[ood]]
name = "far-blob"
path = "far"
group = "far"
)";
  const auto spec = load_benchmark_spec(dir / "bench.toml");
  CHECK(spec.id_store == dir / "id");
  CHECK(spec.output == dir / "metrics.csv");
  REQUIRE(spec.methods.size() == 3);
  CHECK(spec.methods[0].detector.k == 12);
  CHECK(spec.methods[0].detector.feature_fraction == 0.5);
  CHECK(spec.methods[1].k == 7);
  REQUIRE(spec.ood_sets.size() == 1);
  CHECK(spec.ood_sets[0].name == "far-blob");
  const auto t = run_benchmark(spec);
  CHECK(t.cells().size() == 3);
  CHECK(t.find("stoodx", "far-blob")->auroc >= 0.9);

  std::ofstream(dir / "bad.toml") << "store = \"id\"\nmethods = [\"magic\"]\n";
  CHECK_THROWS_AS(load_benchmark_spec(dir / "bad.toml"), Error);
  std::ofstream(dir / "noood.toml") << "store = \"id\"\n";
  CHECK_THROWS_AS(load_benchmark_spec(dir / "noood.toml"), Error);
}
