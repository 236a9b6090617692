#include "stoodx/explain.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "stoodx/error.hpp"
#include "stoodx/util.hpp"

namespace stoodx {

namespace {

constexpr const char* kModule = "explain";

std::vector<double> normalized_on(std::span<const float> v, std::span<const std::size_t> dims) {
  std::vector<double> out;
  out.reserve(dims.size());
  for (auto j : dims) out.push_back(v[j]);
  double ss = 0.0;
  for (double x : out) ss += x * x;
  const double norm = std::sqrt(ss);
  if (norm < 1e-12) throw Error(Errc::ZeroVector, kModule, "zero norm on retained dimensions");
  for (double& x : out) x /= norm;
  return out;
}

std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string percent(double p) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << p * 100.0 << '%';
  return os.str();
}

}  // namespace

std::vector<double> cosine_contributions(std::span<const float> q, std::span<const float> v,
                                         std::span<const std::size_t> subset) {
  if (q.size() != v.size()) throw Error(Errc::LengthMismatch, kModule, "vector lengths differ");
  std::vector<std::size_t> all;
  if (subset.empty()) {
    all.resize(q.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    subset = all;
  }
  for (auto j : subset)
    if (j >= q.size()) throw Error(Errc::InvalidArgument, kModule, "subset index out of range");
  const auto qh = normalized_on(q, subset);
  const auto vh = normalized_on(v, subset);
  std::vector<double> out(subset.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = qh[j] * vh[j];
  return out;
}

Explanation build_explanation(const DetectorState& state, const ScoreRecord& record,
                              const FeatureStore& store, std::span<const float> query,
                              const ExplainOptions& options) {
  if (record.config_hash != state.config_hash())
    throw Error(Errc::ConfigMismatch, kModule,
                "score record " + record.config_hash + " does not come from state " +
                    state.config_hash());
  const PoolModel& model = state.model_for(record.pool);

  Explanation e;
  e.sample_id = record.sample_id;
  e.p = record.p;
  e.decision = record.decision;
  e.config_hash = record.config_hash;
  e.dims = model.subset;
  e.generated_at = utc_timestamp();

  const std::size_t shown = std::min(options.n_neighbors, record.neighbors.size());
  std::vector<double> sums(e.dims.size(), 0.0);
  for (std::size_t i = 0; i < shown; ++i) {
    const std::size_t row = record.neighbors.ids[i];
    if (row >= store.size())
      throw Error(Errc::ConfigMismatch, kModule, "neighbor row outside the store");
    const auto& rec = store.record(row);
    e.neighbors.push_back(
        {rec.sample_id, row, record.neighbors.distances[i], rec.label, rec.asset});
    auto contrib = cosine_contributions(query, store.row(row), e.dims);
    for (std::size_t j = 0; j < contrib.size(); ++j) sums[j] += contrib[j];
    e.contributions[rec.sample_id] = std::move(contrib);
  }

  std::vector<std::size_t> order(e.dims.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Positions in `dims` are ascending dimension indices, so stable sort keeps
  // ties in dimension order.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sums[a] > sums[b]; });
  const std::size_t m = std::min(options.m_features, order.size());
  for (std::size_t i = 0; i < m; ++i)
    e.top_features.push_back(
        {e.dims[order[i]], shown ? sums[order[i]] / static_cast<double>(shown) : 0.0});
  return e;
}

namespace {

nlohmann::ordered_json to_json(const Explanation& e) {
  nlohmann::ordered_json j;
  j["sample_id"] = e.sample_id;
  j["p"] = e.p;
  j["decision"] = std::string(decision_name(e.decision));
  j["config_hash"] = e.config_hash;
  j["generated_at"] = e.generated_at;
  j["dims"] = e.dims;
  auto& neighbors = j["neighbors"] = nlohmann::ordered_json::array();
  for (const auto& n : e.neighbors) {
    nlohmann::ordered_json item;
    item["sample_id"] = n.sample_id;
    item["row"] = n.row;
    item["distance"] = n.distance;
    item["label"] = n.label ? nlohmann::ordered_json(*n.label) : nlohmann::ordered_json(nullptr);
    item["asset"] = n.asset ? nlohmann::ordered_json(*n.asset) : nlohmann::ordered_json(nullptr);
    neighbors.push_back(std::move(item));
  }
  auto& top = j["top_features"] = nlohmann::ordered_json::array();
  for (const auto& f : e.top_features)
    top.push_back({{"dim", f.dim}, {"mean_contribution", f.mean_contribution}});
  auto& contrib = j["contributions"] = nlohmann::ordered_json::object();
  for (const auto& [id, values] : e.contributions) contrib[id] = values;
  return j;
}

}  // namespace

std::string render_report(const Explanation& e, ReportFormat format) {
  if (format == ReportFormat::json) return to_json(e).dump();

  const bool ood = e.decision == Decision::OOD;
  std::ostringstream html;
  html << "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\">"
       << "<title>Explanation " << html_escape(e.sample_id) << "</title>"
       << "<style>body{font-family:sans-serif;margin:2em}"
       << ".banner{padding:1em;border-radius:6px;font-size:1.3em}"
       << ".id{background:#d9f2d9}.ood{background:#f7d4d4}"
       << ".cards{display:flex;gap:1em;margin:1em 0}"
       << ".card{border:1px solid #aaa;padding:.5em;width:180px}"
       << ".tile{width:160px;height:120px;background:#ddd;display:flex;align-items:center;"
       << "justify-content:center;color:#555}"
       << ".bar{background:#4a7bd0;height:14px}</style></head><body>\n";
  html << "<div class=\"banner " << (ood ? "ood" : "id") << "\">Sample "
       << html_escape(e.sample_id) << ": <b>" << decision_name(e.decision) << "</b>, ID score "
       << percent(e.p) << "</div>\n";
  html << "<h2>Nearest training samples</h2>\n<div class=\"cards\">\n";
  for (const auto& n : e.neighbors) {
    html << "<div class=\"card\">";
    if (n.asset)
      html << "<a href=\"" << html_escape(*n.asset) << "\"><img src=\"" << html_escape(*n.asset)
           << "\" alt=\"" << html_escape(n.sample_id) << "\" width=\"160\"></a>";
    else
      html << "<div class=\"tile\">no image</div>";
    html << "<div>" << html_escape(n.sample_id) << "</div><div>label "
         << (n.label ? std::to_string(*n.label) : std::string("-")) << "</div><div>distance "
         << std::setprecision(4) << n.distance << "</div></div>\n";
  }
  html << "</div>\n<h2>Shared features</h2>\n<table>\n";
  double max_c = 0.0;
  for (const auto& f : e.top_features) max_c = std::max(max_c, std::fabs(f.mean_contribution));
  for (const auto& f : e.top_features) {
    const double width = max_c > 0 ? 200.0 * std::fabs(f.mean_contribution) / max_c : 0.0;
    html << "<tr><td>dim " << f.dim << "</td><td><div class=\"bar\" style=\"width:"
         << static_cast<int>(width) << "px\"></div></td><td>" << std::setprecision(4)
         << f.mean_contribution << "</td></tr>\n";
  }
  html << "</table>\n<p>config " << html_escape(e.config_hash) << ", generated "
       << html_escape(e.generated_at) << "</p>\n</body></html>\n";
  return html.str();
}

Explanation parse_explanation_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Explanation e;
    e.sample_id = j.at("sample_id").get<std::string>();
    e.p = j.at("p").get<double>();
    e.decision = j.at("decision").get<std::string>() == "OOD" ? Decision::OOD : Decision::ID;
    e.config_hash = j.at("config_hash").get<std::string>();
    e.generated_at = j.at("generated_at").get<std::string>();
    e.dims = j.at("dims").get<std::vector<std::size_t>>();
    for (const auto& n : j.at("neighbors")) {
      NeighborEvidence ev;
      ev.sample_id = n.at("sample_id").get<std::string>();
      ev.row = n.at("row").get<std::size_t>();
      ev.distance = n.at("distance").get<double>();
      if (!n.at("label").is_null()) ev.label = n.at("label").get<int>();
      if (!n.at("asset").is_null()) ev.asset = n.at("asset").get<std::string>();
      e.neighbors.push_back(std::move(ev));
    }
    for (const auto& f : j.at("top_features"))
      e.top_features.push_back(
          {f.at("dim").get<std::size_t>(), f.at("mean_contribution").get<double>()});
    for (const auto& [id, values] : j.at("contributions").items())
      e.contributions[id] = values.get<std::vector<double>>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(Errc::MalformedHeader, kModule, std::string("explanation JSON: ") + ex.what());
  }
}

}  // namespace stoodx
