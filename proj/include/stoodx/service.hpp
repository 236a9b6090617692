#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "stoodx/detector.hpp"
#include "stoodx/explain.hpp"
#include "stoodx/featurestore.hpp"

namespace httplib {
class Server;
}

namespace stoodx::service {

enum class Band { confident_id, borderline, confident_ood };
enum class ReviewStatus { pending, accepted, rejected };

std::string_view band_name(Band b);
std::optional<Band> parse_band(std::string_view s);
std::string_view status_name(ReviewStatus s);

/// confident_ood below alpha, borderline in [alpha, review_upper), else
/// confident_id.
Band band_for(double p, double alpha, double review_upper);

struct ReviewItem {
  std::string sample_id;
  double p = 0.5;
  Decision decision = Decision::ID;
  Band band = Band::confident_id;
  ReviewStatus status = ReviewStatus::pending;
  std::optional<std::string> reviewed_by;
};

struct QueuePage {
  std::vector<ReviewItem> items;
  std::size_t total = 0;
  std::size_t page = 1;
  std::size_t page_size = 50;
  std::size_t pages = 0;
};

struct ServiceOptions {
  double review_upper = 0.2;
  /// When set, every accepted append is persisted to this store directory.
  std::optional<std::filesystem::path> store_dir;
  std::optional<std::filesystem::path> audit_path;
  std::optional<std::filesystem::path> static_dir;
  std::size_t threads = 0;
  ExplainOptions explain;
};

struct RescoreSummary {
  std::string config_hash;
  std::size_t store_size = 0;
  std::size_t scored = 0;
  std::size_t changed = 0;
};

/// Review workflow over an ID store and a set of candidate samples. Reads run
/// against an immutable snapshot; mutations are serialized by one writer lock
/// and publish a new snapshot atomically.
class ReviewService {
 public:
  ReviewService(FeatureStore store, FeatureStore candidates, DetectorConfig config,
                ServiceOptions options = {});

  QueuePage list_queue(std::optional<Band> band, std::size_t page, std::size_t page_size) const;
  std::optional<ReviewItem> item(const std::string& sample_id) const;
  /// JSON body for GET /api/samples/{id}. Throws NotFound.
  std::string sample_json(const std::string& sample_id) const;
  /// JSON body for GET /api/explanations/{id}; cached per (id, config hash).
  std::string explanation_json(const std::string& sample_id);
  /// pending -> accepted/rejected. Throws Conflict if already reviewed.
  ReviewItem validate(const std::string& sample_id, bool accept, const std::string& actor);
  RescoreSummary rescore();
  std::string metrics_json() const;

  std::shared_ptr<const FeatureStore> store() const;
  std::shared_ptr<const DetectorState> state() const;
  std::optional<ScoreRecord> score_of(const std::string& sample_id) const;
  const AuditLog& audit() const { return audit_; }
  double review_upper() const { return options_.review_upper; }
  const ServiceOptions& options() const { return options_; }

 private:
  struct Snapshot {
    std::shared_ptr<const FeatureStore> store;
    std::shared_ptr<const DetectorState> state;
    std::vector<ScoreRecord> scores;  // parallel to candidates
    std::map<std::string, std::size_t> by_id;
  };

  std::shared_ptr<const Snapshot> snapshot() const;
  std::shared_ptr<const Snapshot> compute(std::shared_ptr<const FeatureStore> store) const;
  ReviewItem make_item(const Snapshot& snap, std::size_t i) const;

  const FeatureStore candidates_;
  const DetectorConfig config_;
  const ServiceOptions options_;

  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const Snapshot> snapshot_;

  std::mutex writer_;  // single writer for validate/rescore
  mutable std::shared_mutex status_mutex_;
  std::map<std::string, std::pair<ReviewStatus, std::optional<std::string>>> status_;

  std::mutex cache_mutex_;
  std::map<std::pair<std::string, std::string>, std::string> explanation_cache_;

  AuditLog audit_;
};

/// HTTP front end for ReviewService; all JSON endpoints live under /api.
class HttpServer {
 public:
  explicit HttpServer(ReviewService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  /// Throws BindError.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  void install_routes();

  ReviewService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

/// Splits "host:port" (port defaults to 8080).
std::pair<std::string, int> parse_bind(const std::string& bind);

}  // namespace stoodx::service
