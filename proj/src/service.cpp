#include "stoodx/service.hpp"

#include <algorithm>
#include <cmath>

#include <httplib.h>
#include <json.hpp>

#include "stoodx/error.hpp"
#include "stoodx/stats.hpp"
#include "stoodx/util.hpp"

namespace stoodx::service {

using nlohmann::ordered_json;

namespace {

constexpr const char* kModule = "service";

ordered_json item_json(const ReviewItem& item) {
  ordered_json j;
  j["sample_id"] = item.sample_id;
  j["p"] = item.p;
  j["decision"] = std::string(decision_name(item.decision));
  j["band"] = std::string(band_name(item.band));
  j["status"] = std::string(status_name(item.status));
  j["reviewed_by"] = item.reviewed_by ? ordered_json(*item.reviewed_by) : ordered_json(nullptr);
  return j;
}

int http_status(Errc code) {
  switch (code) {
    case Errc::NotFound: return 404;
    case Errc::Conflict:
    case Errc::DuplicateSampleId: return 409;
    case Errc::InvalidArgument:
    case Errc::MissingField:
    case Errc::MalformedHeader: return 400;
    default: return 500;
  }
}

void send_error(httplib::Response& res, int status, std::string_view code,
                const std::string& message) {
  res.status = status;
  const ordered_json body = {{"error_code", code}, {"message", message}};
  res.set_content(body.dump(), "application/json");
}

void send_json(httplib::Response& res, const std::string& body) {
  res.status = 200;
  res.set_content(body, "application/json");
}

constexpr const char* kLandingPage = R"(<!DOCTYPE html>
<html lang="en"><head><meta charset="utf-8"><title>stoodx review service</title></head>
<body><h1>stoodx review service</h1>
<p>No frontend assets are installed. JSON API:</p>
<ul>
<li>GET /api/queue?band=&amp;page=&amp;page_size=</li>
<li>GET /api/samples/{id}</li>
<li>GET /api/explanations/{id}</li>
<li>POST /api/validate {"sample_id", "accept", "actor"}</li>
<li>POST /api/rescore</li>
<li>GET /api/metrics</li>
<li>GET /api/healthz</li>
</ul></body></html>
)";

}  // namespace

std::string_view band_name(Band b) {
  switch (b) {
    case Band::confident_id: return "confident_id";
    case Band::borderline: return "borderline";
    case Band::confident_ood: return "confident_ood";
  }
  return "confident_id";
}

std::optional<Band> parse_band(std::string_view s) {
  if (s == "confident_id") return Band::confident_id;
  if (s == "borderline") return Band::borderline;
  if (s == "confident_ood") return Band::confident_ood;
  return std::nullopt;
}

std::string_view status_name(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::pending: return "pending";
    case ReviewStatus::accepted: return "accepted";
    case ReviewStatus::rejected: return "rejected";
  }
  return "pending";
}

Band band_for(double p, double alpha, double review_upper) {
  if (p < alpha) return Band::confident_ood;
  if (p < review_upper) return Band::borderline;
  return Band::confident_id;
}

ReviewService::ReviewService(FeatureStore store, FeatureStore candidates, DetectorConfig config,
                             ServiceOptions options)
    : candidates_(std::move(candidates)), config_(config), options_(std::move(options)) {
  if (!(options_.review_upper > config_.alpha && options_.review_upper <= 1.0))
    throw Error(Errc::InvalidArgument, kModule, "review_upper must lie in (alpha, 1]");
  if (!candidates_.empty() && candidates_.dim() != store.dim())
    throw Error(Errc::DimMismatch, kModule, "candidate and store dimensions differ");
  if (options_.audit_path) audit_ = AuditLog(*options_.audit_path);
  for (const auto& r : candidates_.records())
    status_[r.sample_id] = {ReviewStatus::pending, std::nullopt};
  snapshot_ = compute(std::make_shared<const FeatureStore>(std::move(store)));
}

std::shared_ptr<const ReviewService::Snapshot> ReviewService::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

std::shared_ptr<const FeatureStore> ReviewService::store() const { return snapshot()->store; }
std::shared_ptr<const DetectorState> ReviewService::state() const { return snapshot()->state; }

std::shared_ptr<const ReviewService::Snapshot> ReviewService::compute(
    std::shared_ptr<const FeatureStore> store) const {
  auto snap = std::make_shared<Snapshot>();
  snap->store = std::move(store);
  snap->state = prepare(*snap->store, config_, options_.threads);
  std::vector<ScoreQuery> queries;
  queries.reserve(candidates_.size());
  for (const auto& r : candidates_.records())
    queries.push_back({candidates_.row(r.index), r.predicted, r.sample_id, std::nullopt});
  auto outcomes = score_batch(*snap->state, queries, options_.threads);
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (const auto* err = std::get_if<Error>(&outcomes[i]))
      throw Error(err->code(), err->module(),
                  "scoring candidate '" + queries[i].sample_id + "': " + err->what());
    snap->by_id[queries[i].sample_id] = i;
    snap->scores.push_back(std::move(std::get<ScoreRecord>(outcomes[i])));
  }
  return snap;
}

ReviewItem ReviewService::make_item(const Snapshot& snap, std::size_t i) const {
  const ScoreRecord& rec = snap.scores[i];
  ReviewItem item;
  item.sample_id = rec.sample_id;
  item.p = rec.p;
  item.decision = rec.decision;
  item.band = band_for(rec.p, config_.alpha, options_.review_upper);
  std::shared_lock lock(status_mutex_);
  const auto& [status, by] = status_.at(rec.sample_id);
  item.status = status;
  item.reviewed_by = by;
  return item;
}

QueuePage ReviewService::list_queue(std::optional<Band> band, std::size_t page,
                                    std::size_t page_size) const {
  const auto snap = snapshot();
  std::vector<ReviewItem> all;
  for (std::size_t i = 0; i < snap->scores.size(); ++i) {
    ReviewItem item = make_item(*snap, i);
    if (!band || item.band == *band) all.push_back(std::move(item));
  }
  std::sort(all.begin(), all.end(), [](const ReviewItem& a, const ReviewItem& b) {
    return a.p < b.p || (a.p == b.p && a.sample_id < b.sample_id);
  });
  QueuePage out;
  out.page_size = std::max<std::size_t>(page_size, 1);
  out.page = std::max<std::size_t>(page, 1);
  out.total = all.size();
  out.pages = (all.size() + out.page_size - 1) / out.page_size;
  const std::size_t begin = (out.page - 1) * out.page_size;
  for (std::size_t i = begin; i < std::min(all.size(), begin + out.page_size); ++i)
    out.items.push_back(all[i]);
  return out;
}

std::optional<ReviewItem> ReviewService::item(const std::string& sample_id) const {
  const auto snap = snapshot();
  const auto it = snap->by_id.find(sample_id);
  if (it == snap->by_id.end()) return std::nullopt;
  return make_item(*snap, it->second);
}

std::optional<ScoreRecord> ReviewService::score_of(const std::string& sample_id) const {
  const auto snap = snapshot();
  const auto it = snap->by_id.find(sample_id);
  if (it == snap->by_id.end()) return std::nullopt;
  return snap->scores[it->second];
}

std::string ReviewService::sample_json(const std::string& sample_id) const {
  const auto snap = snapshot();
  const auto it = snap->by_id.find(sample_id);
  if (it == snap->by_id.end())
    throw Error(Errc::NotFound, kModule, "unknown sample '" + sample_id + "'");
  const ScoreRecord& rec = snap->scores[it->second];
  const SampleRecord& meta = candidates_.record(*candidates_.find(sample_id));
  ordered_json j = item_json(make_item(*snap, it->second));
  j["u"] = rec.u;
  j["z"] = rec.z;
  j["pool"] = rec.pool ? ordered_json(*rec.pool) : ordered_json("global");
  j["neighbor_ids"] = rec.neighbors.ids;
  j["neighbor_distances"] = rec.neighbors.distances;
  j["config_hash"] = rec.config_hash;
  j["label"] = meta.label ? ordered_json(*meta.label) : ordered_json(nullptr);
  j["predicted"] = meta.predicted ? ordered_json(*meta.predicted) : ordered_json(nullptr);
  j["split"] = std::string(split_name(meta.split));
  j["asset"] = meta.asset ? ordered_json(*meta.asset) : ordered_json(nullptr);
  j["in_store"] = snap->store->find(sample_id).has_value();
  return j.dump();
}

std::string ReviewService::explanation_json(const std::string& sample_id) {
  const auto snap = snapshot();
  const auto it = snap->by_id.find(sample_id);
  if (it == snap->by_id.end())
    throw Error(Errc::NotFound, kModule, "unknown sample '" + sample_id + "'");
  const ScoreRecord& rec = snap->scores[it->second];
  const auto key = std::make_pair(sample_id, rec.config_hash);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto c = explanation_cache_.find(key); c != explanation_cache_.end()) return c->second;
  }
  const auto query = candidates_.row(*candidates_.find(sample_id));
  const Explanation e = build_explanation(*snap->state, rec, *snap->store, query, options_.explain);
  std::string body = render_report(e, ReportFormat::json);
  std::lock_guard lock(cache_mutex_);
  // A concurrent caller may have filled the slot first; keep its body.
  return explanation_cache_.emplace(key, std::move(body)).first->second;
}

ReviewItem ReviewService::validate(const std::string& sample_id, bool accept,
                                   const std::string& actor) {
  std::lock_guard writer(writer_);
  const auto snap = snapshot();
  const auto it = snap->by_id.find(sample_id);
  if (it == snap->by_id.end())
    throw Error(Errc::NotFound, kModule, "unknown sample '" + sample_id + "'");
  {
    std::shared_lock lock(status_mutex_);
    const auto& [status, by] = status_.at(sample_id);
    if (status != ReviewStatus::pending)
      throw Error(Errc::Conflict, kModule,
                  "sample '" + sample_id + "' already " + std::string(status_name(status)) +
                      (by ? " by " + *by : std::string()));
  }

  if (accept) {
    const std::size_t row = *candidates_.find(sample_id);
    const SampleRecord& meta = candidates_.record(row);
    SampleRecord rec;
    rec.sample_id = meta.sample_id;
    rec.label = meta.predicted ? meta.predicted : meta.label;
    if (!rec.label) {
      if (config_.mode == DetectorMode::predicted_class)
        throw Error(Errc::MissingField, kModule,
                    "sample '" + sample_id + "' has no predicted class to file it under");
      rec.label = 0;
    }
    rec.predicted = meta.predicted;
    rec.split = Split::train;
    rec.asset = meta.asset;
    rec.validated = true;
    Matrix<float> features(1, candidates_.dim());
    const auto src = candidates_.row(row);
    std::copy(src.begin(), src.end(), features.row(0).begin());
    auto grown = std::make_shared<const FeatureStore>(
        append_samples(*snap->store, features, {rec}, &audit_, actor));
    if (options_.store_dir) {
      try {
        save_store_dir(*grown, *options_.store_dir);
      } catch (const Error& e) {
        throw Error(Errc::StoreWriteError, kModule, e.what());
      }
    }
    auto next = std::make_shared<Snapshot>(*snap);
    next->store = std::move(grown);
    std::lock_guard lock(snapshot_mutex_);
    snapshot_ = std::move(next);
  }
  audit_.record(accept ? "accept" : "reject", sample_id, actor);
  {
    std::unique_lock lock(status_mutex_);
    status_[sample_id] = {accept ? ReviewStatus::accepted : ReviewStatus::rejected, actor};
  }
  return *item(sample_id);
}

RescoreSummary ReviewService::rescore() {
  std::lock_guard writer(writer_);
  const auto old = snapshot();
  auto next = compute(old->store);
  RescoreSummary summary;
  summary.config_hash = next->state->config_hash();
  summary.store_size = next->store->size();
  summary.scored = next->scores.size();
  for (std::size_t i = 0; i < next->scores.size(); ++i)
    if (i >= old->scores.size() || next->scores[i].p != old->scores[i].p) ++summary.changed;
  {
    std::lock_guard lock(snapshot_mutex_);
    snapshot_ = std::move(next);
  }
  audit_.record("rescore", "", "system");
  return summary;
}

std::string ReviewService::metrics_json() const {
  const auto snap = snapshot();
  ordered_json j;
  j["config_hash"] = snap->state->config_hash();
  j["store_size"] = snap->store->size();
  j["candidates"] = snap->scores.size();
  std::map<Band, std::size_t> bands;
  std::vector<double> id_scores, ood_scores;
  for (std::size_t i = 0; i < snap->scores.size(); ++i) {
    const double p = snap->scores[i].p;
    ++bands[band_for(p, config_.alpha, options_.review_upper)];
    const Split split = candidates_.record(*candidates_.find(snap->scores[i].sample_id)).split;
    if (split == Split::ood)
      ood_scores.push_back(p);
    else
      id_scores.push_back(p);
  }
  ordered_json band_counts;
  for (Band b : {Band::confident_ood, Band::borderline, Band::confident_id})
    band_counts[std::string(band_name(b))] = bands[b];
  j["bands"] = band_counts;
  if (!id_scores.empty() && !ood_scores.empty()) {
    j["auroc"] = stats::auroc(id_scores, ood_scores);
    j["fpr95"] = stats::fpr_at_tpr(id_scores, ood_scores, 0.95);
  } else {
    j["auroc"] = nullptr;
    j["fpr95"] = nullptr;
  }
  j["alpha"] = config_.alpha;
  j["review_upper"] = options_.review_upper;
  return j.dump();
}

HttpServer::HttpServer(ReviewService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  // Without SO_REUSEPORT a second server on a live port fails to bind.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto& srv = *server_;
  auto guarded = [](auto fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.code()), errc_name(e.code()), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, "InvalidArgument", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "Internal", e.what());
      }
    };
  };

  srv.Get("/api/healthz", guarded([](const httplib::Request&, httplib::Response& res) {
            send_json(res, R"({"status":"ok"})");
          }));

  srv.Get("/api/queue", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::optional<Band> band;
            if (req.has_param("band") && !req.get_param_value("band").empty() &&
                req.get_param_value("band") != "all") {
              band = parse_band(req.get_param_value("band"));
              if (!band)
                throw Error(Errc::InvalidArgument, kModule,
                            "unknown band '" + req.get_param_value("band") + "'");
            }
            auto number = [&](const char* key, std::size_t fallback) -> std::size_t {
              if (!req.has_param(key) || req.get_param_value(key).empty()) return fallback;
              try {
                const long long v = std::stoll(req.get_param_value(key));
                if (v < 1) throw std::invalid_argument(key);
                return static_cast<std::size_t>(v);
              } catch (const std::exception&) {
                throw Error(Errc::InvalidArgument, kModule, std::string("bad ") + key);
              }
            };
            const QueuePage page =
                service_.list_queue(band, number("page", 1), number("page_size", 50));
            ordered_json j;
            j["items"] = ordered_json::array();
            for (const auto& item : page.items) j["items"].push_back(item_json(item));
            j["total"] = page.total;
            j["page"] = page.page;
            j["page_size"] = page.page_size;
            j["pages"] = page.pages;
            send_json(res, j.dump());
          }));

  srv.Get(R"(/api/samples/(.+))",
          guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, service_.sample_json(req.matches[1]));
          }));

  srv.Get(R"(/api/explanations/(.+))",
          guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, service_.explanation_json(req.matches[1]));
          }));

  srv.Post("/api/validate", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const auto body = nlohmann::json::parse(req.body);
             if (!body.contains("sample_id") || !body.contains("accept"))
               throw Error(Errc::MissingField, kModule, "body needs sample_id and accept");
             const std::string actor =
                 body.contains("actor") ? body["actor"].get<std::string>() : "anonymous";
             const ReviewItem item = service_.validate(body["sample_id"].get<std::string>(),
                                                       body["accept"].get<bool>(), actor);
             ordered_json j = item_json(item);
             j["store_size"] = service_.store()->size();
             send_json(res, j.dump());
           }));

  srv.Post("/api/rescore", guarded([this](const httplib::Request&, httplib::Response& res) {
             const RescoreSummary s = service_.rescore();
             const ordered_json j = {{"config_hash", s.config_hash},
                                     {"store_size", s.store_size},
                                     {"scored", s.scored},
                                     {"changed", s.changed}};
             send_json(res, j.dump());
           }));

  srv.Get("/api/metrics", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, service_.metrics_json());
          }));

  const auto& static_dir = service_.options().static_dir;
  if (static_dir && std::filesystem::is_directory(*static_dir)) {
    srv.set_mount_point("/", static_dir->string());
  } else {
    srv.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kLandingPage, "text/html");
    });
  }
}

int HttpServer::start(const std::string& host, int port) {
  if (port == 0)
    port_ = server_->bind_to_any_port(host);
  else
    port_ = server_->bind_to_port(host, port) ? port : -1;
  if (port_ <= 0)
    throw Error(Errc::BindError, kModule, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void HttpServer::run(const std::string& host, int port) {
  if (!server_->bind_to_port(host, port))
    throw Error(Errc::BindError, kModule, "cannot bind " + host + ":" + std::to_string(port));
  port_ = port;
  server_->listen_after_bind();
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) return {bind.empty() ? "127.0.0.1" : bind, 8080};
  const std::string host = colon == 0 ? "127.0.0.1" : bind.substr(0, colon);
  try {
    const int port = std::stoi(bind.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    return {host, port};
  } catch (const std::exception&) {
    throw Error(Errc::InvalidArgument, kModule, "bad bind address '" + bind + "'");
  }
}

}  // namespace stoodx::service
