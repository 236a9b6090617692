#include "helpers.hpp"

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "stoodx/error.hpp"
#include "stoodx/explain.hpp"
#include "stoodx/synth.hpp"

using namespace stoodx;
using F = std::vector<float>;

namespace {

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

DetectorConfig cfg(std::size_t k, double fraction = 1.0) {
  DetectorConfig c;
  c.k = k;
  c.feature_fraction = fraction;
  return c;
}

}  // namespace

TEST_CASE("cosine_contributions examples") {
  const F u{0.6f, 0.8f};
  const auto self = cosine_contributions(u, u);
  CHECK(self[0] == doctest::Approx(0.36).epsilon(1e-7));
  CHECK(self[1] == doctest::Approx(0.64).epsilon(1e-7));
  CHECK(sum(self) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(sum(cosine_contributions(F{1, 0}, F{0, 1}))) < 1e-15);
  const float h = static_cast<float>(1.0 / std::sqrt(2.0));
  const auto c = cosine_contributions(F{h, h}, F{1, 0});
  CHECK(c[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(c[1] == 0.0);
  CHECK_THROWS_AS(cosine_contributions(F{0, 0}, F{1, 0}), Error);
  const std::vector<std::size_t> sub{1};
  CHECK_THROWS_AS(cosine_contributions(F{1, 0}, F{1, 1}, sub), Error);
  const auto on_sub = cosine_contributions(F{3, 2}, F{1, 5}, sub);
  REQUIRE(on_sub.size() == 1);
  CHECK(on_sub[0] == doctest::Approx(1.0));
}

TEST_CASE("contributions sum to the cosine similarity") {
  const auto rows = testing::random_rows(50, 9, 3);
  for (std::size_t i = 1; i < rows.size(); ++i)
    CHECK(std::abs(sum(cosine_contributions(rows[i - 1], rows[i])) -
                   (1.0 - cosine_distance(rows[i - 1], rows[i]))) <= 1e-9);
}

TEST_CASE("build_explanation layout and identities") {
  const auto s = synth::make_blobs(2, 60, 12, 8.0, 1.0, 5);
  const auto state = prepare(s, cfg(20));
  const auto q = s.row(7);
  const auto rec = score(*state, q, 0, "probe");
  const auto e = build_explanation(*state, rec, s, q, {2, 3});
  CHECK(e.neighbors.size() == 2);
  CHECK(e.top_features.size() == 3);
  CHECK(e.neighbors[0].row == 7);
  CHECK(e.neighbors[0].distance == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(e.neighbors[0].sample_id == s.record(7).sample_id);
  CHECK(e.neighbors[0].label == 0);
  CHECK(sum(e.contributions.at(e.neighbors[0].sample_id)) == doctest::Approx(1.0).epsilon(1e-9));
  for (const auto& n : e.neighbors)
    CHECK(std::abs(sum(e.contributions.at(n.sample_id)) - (1.0 - n.distance)) <= 1e-9);
  for (std::size_t i = 1; i < e.top_features.size(); ++i)
    CHECK(e.top_features[i].mean_contribution <= e.top_features[i - 1].mean_contribution);
  CHECK(e.p == rec.p);
  CHECK(e.config_hash == state->config_hash());
  CHECK(e.dims.size() == 12);
}

TEST_CASE("top features stay inside the retained subset") {
  const auto s = synth::make_blobs(2, 60, 16, 8.0, 1.0, 5);
  const auto state = prepare(s, cfg(10, 0.25));
  const auto& subset = state->model_for(1).subset;
  const auto q = s.row(70);
  const auto e = build_explanation(*state, score(*state, q, 1), s, q);
  CHECK(e.dims == subset);
  for (const auto& f : e.top_features)
    CHECK(std::find(subset.begin(), subset.end(), f.dim) != subset.end());
}

TEST_CASE("single informative dimension leads the ranking") {
  synth::BlobSpec spec;
  spec.n_classes = 1;
  spec.informative_dims = 1;
  spec.n_per_class = 120;
  const auto s = synth::make_blobs(spec);
  const auto state = prepare(s, cfg(15));
  for (std::size_t i = 0; i < s.size(); i += 7) {
    const auto e = build_explanation(*state, score(*state, s.row(i), 0), s, s.row(i));
    CHECK(e.top_features[0].dim == 0);
  }
}

TEST_CASE("top features ignore neighbor order") {
  const auto s = synth::make_blobs(2, 60, 12, 8.0, 1.0, 5);
  const auto state = prepare(s, cfg(6));
  const auto q = testing::random_rows(1, 12, 8)[0];
  auto rec = score(*state, q, 1);
  const auto a = build_explanation(*state, rec, s, q, {6, 4});
  std::reverse(rec.neighbors.ids.begin(), rec.neighbors.ids.end());
  std::reverse(rec.neighbors.distances.begin(), rec.neighbors.distances.end());
  const auto b = build_explanation(*state, rec, s, q, {6, 4});
  CHECK(a.top_features == b.top_features);
}

TEST_CASE("config mismatch is rejected") {
  const auto s = synth::make_blobs(2, 30, 8, 8.0, 1.0, 5);
  const auto a = prepare(s, cfg(5));
  const auto b = prepare(s, cfg(6));
  const auto rec = score(*a, s.row(0), 0);
  CHECK_THROWS_AS(build_explanation(*b, rec, s, s.row(0)), Error);
}

TEST_CASE("json round trip and schema") {
  const auto s = synth::make_blobs(2, 30, 8, 8.0, 1.0, 5);
  const auto state = prepare(s, cfg(5));
  const auto e = build_explanation(*state, score(*state, s.row(3), 0, "x"), s, s.row(3));
  const std::string text = render_report(e, ReportFormat::json);
  CHECK(parse_explanation_json(text) == e);
  const auto j = nlohmann::json::parse(text);
  for (const char* key : {"sample_id", "p", "decision", "neighbors", "top_features", "contributions"})
    CHECK(j.contains(key));
  for (const char* key : {"sample_id", "distance", "label", "asset"})
    CHECK(j["neighbors"][0].contains(key));
  CHECK(j["top_features"][0].contains("dim"));
  CHECK(j["top_features"][0].contains("mean_contribution"));
  CHECK(render_report(e, ReportFormat::json) == text);
}

TEST_CASE("html report") {
  Explanation e;
  e.sample_id = "img-42";
  e.p = 0.02;
  e.decision = Decision::OOD;
  e.neighbors = {{"n1", 0, 0.1, 3, std::nullopt}, {"n2", 1, 0.2, 3, std::nullopt}};
  e.top_features = {{5, 0.3}, {1, 0.1}};
  const auto html = render_report(e, ReportFormat::html);
  CHECK(html.find("OOD") != std::string::npos);
  CHECK(html.find("2.0%") != std::string::npos);
  CHECK(html.find("no image") != std::string::npos);
  CHECK(html.find("<img") == std::string::npos);
  CHECK(html.find("href") == std::string::npos);
  e.neighbors[0].asset = "assets/n1.png";
  e.p = 0.52;
  e.decision = Decision::ID;
  const auto with_asset = render_report(e, ReportFormat::html);
  CHECK(with_asset.find("src=\"assets/n1.png\"") != std::string::npos);
  CHECK(with_asset.find("52.0%") != std::string::npos);
}
