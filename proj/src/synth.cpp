#include "stoodx/synth.hpp"

#include <cmath>

#include "stoodx/error.hpp"
#include "stoodx/util.hpp"

namespace stoodx::synth {

namespace {

constexpr const char* kModule = "synth";

std::uint64_t stream_seed(std::uint64_t seed, std::string_view stream) {
  Fnv1a h;
  h.value(seed).str(stream);
  return h.digest();
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::string_view stream) : engine_(stream_seed(seed, stream)) {}

double Rng::uniform() {
  // 53 random bits, shifted by half an ulp so 0 and 1 are never produced.
  const std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double Rng::normal() { return normal_quantile(uniform()); }

double normal_quantile(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (!(p > 0.0 && p < 1.0))
    throw Error(Errc::InvalidArgument, kModule, "quantile argument must be in (0, 1)");
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

std::vector<std::vector<double>> blob_directions(const BlobSpec& spec) {
  if (spec.n_classes < 1 || spec.dim < 2)
    throw Error(Errc::InvalidArgument, kModule, "make_blobs needs n_classes >= 1 and dim >= 2");
  const int informative =
      spec.informative_dims > 0 ? std::min(spec.informative_dims, spec.dim) : spec.dim;
  Rng rng(spec.seed, "blobs/centers");
  std::vector<std::vector<double>> dirs;
  for (int c = 0; c < spec.n_classes; ++c) {
    std::vector<double> v(static_cast<std::size_t>(spec.dim), 0.0);
    double norm = 0.0;
    // Redraw if Gram-Schmidt leaves (numerically) nothing.
    for (int attempt = 0; attempt < 16 && norm < 1e-6; ++attempt) {
      for (int j = 0; j < informative; ++j) v[static_cast<std::size_t>(j)] = rng.normal();
      if (c < informative) {
        for (const auto& u : dirs) {
          double proj = 0.0;
          for (int j = 0; j < spec.dim; ++j)
            proj += v[static_cast<std::size_t>(j)] * u[static_cast<std::size_t>(j)];
          for (int j = 0; j < spec.dim; ++j)
            v[static_cast<std::size_t>(j)] -= proj * u[static_cast<std::size_t>(j)];
        }
      }
      norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
    }
    for (double& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  return dirs;
}

FeatureStore make_blobs(const BlobSpec& spec) {
  const auto dirs = blob_directions(spec);
  Rng rng(spec.sample_seed.value_or(spec.seed), "blobs/noise");
  const auto d = static_cast<std::size_t>(spec.dim);
  const auto per = static_cast<std::size_t>(spec.n_per_class);
  Matrix<float> features(dirs.size() * per, d);
  std::vector<SampleRecord> records;
  records.reserve(features.rows);
  for (std::size_t c = 0; c < dirs.size(); ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      auto row = features.row(c * per + i);
      for (std::size_t j = 0; j < d; ++j) {
        const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0;
        row[j] = static_cast<float>(spec.center_separation * dirs[c][j] + noise);
      }
      SampleRecord r;
      r.sample_id = spec.id_prefix + "-c" + std::to_string(c) + "-" + std::to_string(i);
      r.label = static_cast<int>(c);
      r.predicted = static_cast<int>(c);
      r.split = spec.split;
      records.push_back(std::move(r));
    }
  }
  return FeatureStore::create(std::move(features), std::move(records), spec.n_classes);
}

FeatureStore make_blobs(int n_classes, int n_per_class, int dim, double center_separation,
                        double noise_sigma, std::uint64_t seed) {
  BlobSpec spec;
  spec.n_classes = n_classes;
  spec.n_per_class = n_per_class;
  spec.dim = dim;
  spec.center_separation = center_separation;
  spec.noise_sigma = noise_sigma;
  spec.seed = seed;
  return make_blobs(spec);
}

BlobBenchmark make_blob_benchmark(const BlobBenchmarkSpec& spec) {
  const std::uint64_t base = spec.id.sample_seed.value_or(spec.id.seed);
  BlobSpec train = spec.id;
  train.split = Split::train;
  train.id_prefix = spec.id.id_prefix + "-train";
  BlobSpec test = spec.id;
  test.n_per_class = spec.test_per_class;
  test.split = Split::test;
  test.sample_seed = base + 1;
  test.id_prefix = spec.id.id_prefix + "-test";

  BlobSpec wide = spec.id;
  wide.n_classes = spec.id.n_classes + 1;
  const auto dirs = blob_directions(wide);
  Rng rng(base + 2, "blobs/ood");
  const auto d = static_cast<std::size_t>(spec.id.dim);
  const auto& center = dirs.back();
  Matrix<float> features(static_cast<std::size_t>(spec.ood_count), d);
  std::vector<SampleRecord> records;
  for (std::size_t i = 0; i < features.rows; ++i) {
    auto row = features.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double noise = spec.id.noise_sigma > 0.0 ? spec.id.noise_sigma * rng.normal() : 0.0;
      row[j] = static_cast<float>(spec.id.center_separation * center[j] + noise);
    }
    int best = 0;
    double best_cos = -2.0;
    for (int c = 0; c < spec.id.n_classes; ++c) {
      double dot = 0.0, nn = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dot += row[j] * dirs[static_cast<std::size_t>(c)][j];
        nn += static_cast<double>(row[j]) * row[j];
      }
      if (dot / std::sqrt(nn) > best_cos) best_cos = dot / std::sqrt(nn), best = c;
    }
    SampleRecord r;
    r.sample_id = spec.id.id_prefix + "-ood-" + std::to_string(i);
    r.predicted = best;
    r.split = Split::ood;
    records.push_back(std::move(r));
  }
  return {concat_stores(make_blobs(train), make_blobs(test)),
          FeatureStore::create(std::move(features), std::move(records), spec.id.n_classes)};
}

SineData make_sine(int n, double noise, double x_lo, double x_hi, std::uint64_t seed,
                   Split split, const std::string& id_prefix) {
  if (n < 10) throw Error(Errc::InvalidArgument, kModule, "make_sine needs n >= 10");
  Rng rng(seed, "sine");
  Matrix<float> features(static_cast<std::size_t>(n), 2);
  std::vector<SampleRecord> records;
  for (int i = 0; i < n; ++i) {
    // x is rounded first so the stored y is a function of the stored x
    const float x = static_cast<float>(rng.uniform(x_lo, x_hi));
    const double eps = noise > 0.0 ? noise * rng.normal() : 0.0;
    auto row = features.row(static_cast<std::size_t>(i));
    row[0] = x;
    row[1] = static_cast<float>(std::sin(static_cast<double>(x)) + eps);
    SampleRecord r;
    r.sample_id = id_prefix + "-" + std::to_string(i);
    r.label = 0;
    r.predicted = 0;
    r.split = split;
    records.push_back(std::move(r));
  }
  // Rows with x and sin(x)+eps both rounding to 0 are astronomically unlikely;
  // FeatureStore::create rejects them if they occur.
  return {FeatureStore::create(std::move(features), std::move(records), 1), {2.0f, 0.0f}};
}

FeatureStore lift_constant(const FeatureStore& store, float value) {
  Matrix<float> features(store.size(), store.dim() + 1);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto src = store.row(i);
    auto dst = features.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
    dst[store.dim()] = value;
  }
  std::optional<int> declared;
  if (store.class_declared()) declared = store.class_count();
  return FeatureStore::create(std::move(features), store.records(), declared);
}

std::vector<float> lift_constant(std::span<const float> v, float value) {
  std::vector<float> out(v.begin(), v.end());
  out.push_back(value);
  return out;
}

}  // namespace stoodx::synth
