#pragma once

#include <cmath>
#include <string>

#include "stoodx/detector.hpp"
#include "stoodx/synth.hpp"

namespace testing {

// A 30-row cluster on the unit sphere in 3-d and 12 candidates rotated away
// from its center in 1.5 degree steps. With k = 10 the candidate at 7.5
// degrees ("cand-04") lands in the borderline band; the nearest four are
// ID-split test rows, the rest are OOD.
struct ReviewToy {
  stoodx::FeatureStore store;
  stoodx::FeatureStore candidates;
  stoodx::DetectorConfig config;
  static constexpr const char* borderline_id = "cand-04";
};

inline ReviewToy review_toy() {
  stoodx::synth::BlobSpec spec;
  spec.n_classes = 1;
  spec.n_per_class = 30;
  spec.dim = 3;
  spec.center_separation = 1.0;
  spec.noise_sigma = 0.1;
  spec.seed = 5;
  spec.id_prefix = "toy";
  const auto dir = stoodx::synth::blob_directions(spec)[0];
  const double norm = std::hypot(dir[0], dir[1]);
  const double ortho[3] = {-dir[1] / norm, dir[0] / norm, 0.0};

  constexpr std::size_t n = 12;
  stoodx::Matrix<float> m(n, 3);
  std::vector<stoodx::SampleRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    const double theta = static_cast<double>(i + 1) * 1.5 * M_PI / 180.0;
    for (std::size_t j = 0; j < 3; ++j)
      m.row(i)[j] = static_cast<float>(std::cos(theta) * dir[j] + std::sin(theta) * ortho[j]);
    stoodx::SampleRecord r;
    r.sample_id = (i < 10 ? "cand-0" : "cand-") + std::to_string(i);
    r.predicted = 0;
    r.split = i < 4 ? stoodx::Split::test : stoodx::Split::ood;
    recs.push_back(r);
  }
  stoodx::DetectorConfig config;
  config.k = 10;
  return {stoodx::synth::make_blobs(spec), stoodx::FeatureStore::create(m, recs, 1), config};
}

}  // namespace testing
