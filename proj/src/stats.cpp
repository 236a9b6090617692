#include "stoodx/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stoodx/error.hpp"

namespace stoodx::stats {

namespace {

constexpr const char* kModule = "stats";
constexpr double kPMin = 1e-300;
constexpr double kPMax = 1.0 - 1e-16;
constexpr double kMaxLabelings = 1e7;

template <typename T>
void require_nonempty(std::span<const T> a, std::span<const T> b) {
  if (a.empty() || b.empty())
    throw Error(Errc::InvalidArgument, kModule, "both samples must be nonempty");
}

struct RankSummary {
  double rank_sum_a = 0.0;
  double tie_term = 0.0;  // sum over tie groups of t^3 - t
};

// Walks the merge of two ascending samples tie group by tie group.
template <typename T>
RankSummary summarize_sorted(std::span<const T> a, std::span<const T> b) {
  RankSummary s;
  std::size_t i = 0, j = 0;
  double next_rank = 1.0;
  while (i < a.size() || j < b.size()) {
    T v;
    if (j >= b.size() || (i < a.size() && a[i] <= b[j]))
      v = a[i];
    else
      v = b[j];
    std::size_t ca = 0, cb = 0;
    while (i < a.size() && a[i] == v) ++i, ++ca;
    while (j < b.size() && b[j] == v) ++j, ++cb;
    const double t = static_cast<double>(ca + cb);
    const double mid = next_rank + (t - 1.0) / 2.0;
    s.rank_sum_a += static_cast<double>(ca) * mid;
    s.tie_term += t * t * t - t;
    next_rank += t;
  }
  return s;
}

}  // namespace

std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return values[x] < values[y]; });
  std::vector<double> ranks(values.size());
  std::size_t start = 0;
  while (start < order.size()) {
    std::size_t end = start + 1;
    while (end < order.size() && values[order[end]] == values[order[start]]) ++end;
    // positions start..end-1 hold ranks start+1..end
    const double mid = (static_cast<double>(start + 1) + static_cast<double>(end)) / 2.0;
    for (std::size_t t = start; t < end; ++t) ranks[order[t]] = mid;
    start = end;
  }
  return ranks;
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

namespace {

template <typename T>
MwResult greater_sorted(std::span<const T> a, std::span<const T> b) {
  require_nonempty(a, b);
  const double n = static_cast<double>(a.size());
  const double m = static_cast<double>(b.size());
  const double total = n + m;
  const RankSummary s = summarize_sorted(a, b);

  MwResult r;
  r.method = MwMethod::normal_approx;
  r.u = s.rank_sum_a - n * (n + 1.0) / 2.0;
  const double mean = n * m / 2.0;
  const double variance =
      (n * m / 12.0) * ((total + 1.0) - s.tie_term / (total * (total - 1.0)));
  if (!(variance > 0.0)) {
    r.degenerate = true;
    r.z = 0.0;
    r.p = 0.5;
    return r;
  }
  const double sigma = std::sqrt(variance);
  const double diff = r.u - mean;
  if (diff > 0.0)
    r.z = (diff - 0.5) / sigma;
  else if (diff < 0.0)
    r.z = (diff + 0.5) / sigma;
  else
    r.z = 0.0;
  r.p = std::clamp(normal_sf(r.z), kPMin, kPMax);
  return r;
}

}  // namespace

MwResult mann_whitney_greater_sorted(std::span<const double> a, std::span<const double> b) {
  return greater_sorted(a, b);
}

MwResult mann_whitney_greater_sorted(std::span<const float> a, std::span<const float> b) {
  return greater_sorted(a, b);
}

MwResult mann_whitney_greater(std::span<const double> a, std::span<const double> b) {
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  return mann_whitney_greater_sorted(sa, sb);
}

MwResult mann_whitney_exact(std::span<const double> a, std::span<const double> b) {
  require_nonempty(a, b);
  const std::size_t n = a.size();
  const std::size_t total = a.size() + b.size();
  double labelings = 1.0;
  for (std::size_t i = 1; i <= n; ++i)
    labelings = labelings * static_cast<double>(total - n + i) / static_cast<double>(i);
  if (labelings > kMaxLabelings * (1.0 + 1e-12))
    throw Error(Errc::TooLarge, kModule,
                "C(n+m, n) = " + std::to_string(labelings) + " exceeds enumeration bound");

  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  // Doubled midranks are integers, so the enumeration runs in exact integer
  // arithmetic.
  const std::vector<double> ranks = midranks(pooled);
  std::vector<long long> twice(total);
  for (std::size_t i = 0; i < total; ++i) twice[i] = std::llround(2.0 * ranks[i]);
  long long observed = 0;
  for (std::size_t i = 0; i < n; ++i) observed += twice[i];

  // Walk all n-subsets of positions in lexicographic order.
  std::vector<std::size_t> pick(n);
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  long long at_least = 0, count = 0;
  while (true) {
    long long sum = 0;
    for (auto p : pick) sum += twice[p];
    ++count;
    if (sum >= observed) ++at_least;
    std::size_t i = n;
    while (i > 0 && pick[i - 1] == total - n + (i - 1)) --i;
    if (i == 0) break;
    ++pick[i - 1];
    for (std::size_t j = i; j < n; ++j) pick[j] = pick[j - 1] + 1;
  }

  MwResult r;
  r.method = MwMethod::exact;
  const double nn = static_cast<double>(n);
  r.u = static_cast<double>(observed) / 2.0 - nn * (nn + 1.0) / 2.0;
  r.p = static_cast<double>(at_least) / static_cast<double>(count);
  const MwResult approx = mann_whitney_greater(a, b);
  r.z = approx.z;
  r.degenerate = approx.degenerate;
  return r;
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_nonempty(id_scores, ood_scores);
  std::vector<double> pooled(id_scores.begin(), id_scores.end());
  pooled.insert(pooled.end(), ood_scores.begin(), ood_scores.end());
  const std::vector<double> ranks = midranks(pooled);
  const double n = static_cast<double>(id_scores.size());
  const double m = static_cast<double>(ood_scores.size());
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < id_scores.size(); ++i) rank_sum += ranks[i];
  return (rank_sum - n * (n + 1.0) / 2.0) / (n * m);
}

double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                  double level) {
  require_nonempty(id_scores, ood_scores);
  if (!(level > 0.0 && level < 1.0))
    throw Error(Errc::InvalidArgument, kModule, "TPR level must be in (0, 1)");
  std::vector<double> id(id_scores.begin(), id_scores.end());
  std::sort(id.begin(), id.end(), std::greater<>());
  const double n = static_cast<double>(id.size());
  // TPR(t) only changes at ID scores, so the largest qualifying threshold is
  // the first ID score (descending) at which enough ID samples are admitted.
  double threshold = id.back();
  for (std::size_t i = 0; i < id.size(); ++i) {
    std::size_t admitted = i + 1;
    while (admitted < id.size() && id[admitted] == id[i]) ++admitted;
    if (static_cast<double>(admitted) / n >= level - 1e-12) {
      threshold = id[i];
      break;
    }
  }
  const auto accepted = std::count_if(ood_scores.begin(), ood_scores.end(),
                                      [&](double s) { return s >= threshold; });
  return static_cast<double>(accepted) / static_cast<double>(ood_scores.size());
}

}  // namespace stoodx::stats
