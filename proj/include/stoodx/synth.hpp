#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stoodx/featurestore.hpp"

namespace stoodx::synth {

/// Portable generator: mt19937_64 output mapped to doubles without relying on
/// the standard library's (implementation-defined) distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::string_view stream);

  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via inverse CDF.
  double normal();

 private:
  std::mt19937_64 engine_;
};

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9). No erfc refinement: libm erfc differs across platforms.
double normal_quantile(double p);

struct BlobSpec {
  int n_classes = 2;
  int n_per_class = 100;
  int dim = 16;
  double center_separation = 8.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 7;
  /// Seed for the noise draws; defaults to `seed`. Same `seed` with a
  /// different `sample_seed` gives fresh draws around the same centers.
  std::optional<std::uint64_t> sample_seed;
  /// Centers live in the first `informative_dims` coordinates (0 = all).
  int informative_dims = 0;
  Split split = Split::train;
  std::string id_prefix = "blob";
};

/// Unit-norm class directions: Gram-Schmidt on seeded Gaussian vectors while
/// classes fit in the informative subspace, plain random directions after.
std::vector<std::vector<double>> blob_directions(const BlobSpec& spec);

/// Class c rows = separation * direction_c + N(0, sigma^2 I). label == predicted.
FeatureStore make_blobs(const BlobSpec& spec);
FeatureStore make_blobs(int n_classes, int n_per_class, int dim, double center_separation,
                        double noise_sigma, std::uint64_t seed);

/// Train and test rows around the same class centers, plus an OOD cluster on
/// the next (orthogonal) center direction. OOD rows carry no label; their
/// predicted class is the nearest ID center by angle, standing in for a
/// classifier that must answer something.
struct BlobBenchmarkSpec {
  BlobSpec id;  // n_per_class = train rows per class
  int test_per_class = 100;
  int ood_count = 200;
};

struct BlobBenchmark {
  FeatureStore id_store;  // train + test rows
  FeatureStore ood_store;
};

BlobBenchmark make_blob_benchmark(const BlobBenchmarkSpec& spec);

struct SineData {
  FeatureStore store;
  std::array<float, 2> ood_query{2.0f, 0.0f};
};

/// Rows (x, sin(x) + N(0, noise^2)) with x uniform on [x_lo, x_hi]. The OOD
/// query (2, 0) is returned separately and never stored.
SineData make_sine(int n, double noise = 0.2, double x_lo = 0.0,
                   double x_hi = 6.283185307179586, std::uint64_t seed = 3,
                   Split split = Split::train, const std::string& id_prefix = "sine");

/// Appends a constant coordinate to every row. Lifting 2-D data off the
/// origin this way makes cosine distance track planar distance.
FeatureStore lift_constant(const FeatureStore& store, float value);
std::vector<float> lift_constant(std::span<const float> v, float value);

}  // namespace stoodx::synth
