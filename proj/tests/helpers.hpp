#pragma once

#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "stoodx/featurestore.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("stoodx-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Train store from literal rows; label i of `labels` for row i.
inline stoodx::FeatureStore store_from(const std::vector<std::vector<float>>& rows,
                                       const std::vector<int>& labels = {},
                                       stoodx::Split split = stoodx::Split::train) {
  const std::size_t d = rows.empty() ? 0 : rows[0].size();
  stoodx::Matrix<float> m(rows.size(), d);
  std::vector<stoodx::SampleRecord> recs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    stoodx::SampleRecord r;
    r.sample_id = "r" + std::to_string(i);
    r.label = labels.empty() ? 0 : labels[i];
    r.predicted = r.label;
    r.split = split;
    recs.push_back(r);
  }
  return stoodx::FeatureStore::create(std::move(m), std::move(recs));
}

inline std::vector<std::vector<float>> random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<std::vector<float>> rows(n, std::vector<float>(d));
  for (auto& r : rows)
    for (auto& v : r) v = nd(gen);
  return rows;
}

}  // namespace testing
