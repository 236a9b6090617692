#pragma once

#include <span>
#include <vector>

namespace stoodx::stats {

enum class MwMethod { normal_approx, exact };

struct MwResult {
  double u = 0.0;  // #(a > b) + 0.5 #(a == b)
  double z = 0.0;
  double p = 0.5;  // one-sided, alternative "a stochastically greater than b"
  MwMethod method = MwMethod::normal_approx;
  bool degenerate = false;  // every pooled value identical

  friend bool operator==(const MwResult&, const MwResult&) = default;
};

/// 1-based average ranks; tied values share their midrank.
std::vector<double> midranks(std::span<const double> values);

/// Upper tail of the standard normal, 1 - Phi(z).
double normal_sf(double z);

/// One-sided WMW test, normal approximation with tie-corrected variance and a
/// 0.5 continuity correction toward the mean. Larger `a` values give larger U
/// and smaller p. An all-tied pooled sample returns p = 0.5, flagged degenerate.
MwResult mann_whitney_greater(std::span<const double> a, std::span<const double> b);

/// Same test on inputs already sorted ascending; O(n + m).
MwResult mann_whitney_greater_sorted(std::span<const double> a_sorted,
                                     std::span<const double> b_sorted);
MwResult mann_whitney_greater_sorted(std::span<const float> a_sorted,
                                     std::span<const float> b_sorted);

/// Exact permutation p-value: fraction of the C(n+m, n) labelings of the pooled
/// values whose U is at least the observed U. Throws TooLarge past 1e7 labelings.
MwResult mann_whitney_exact(std::span<const double> a, std::span<const double> b);

/// P(random ID score > random OOD score) + 0.5 P(tie).
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// FPR at the largest observed threshold t with TPR(t) >= level, where a
/// score >= t is predicted ID.
double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                  double level = 0.95);

}  // namespace stoodx::stats
