#include "helpers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include "stoodx/error.hpp"
#include "stoodx/stats.hpp"

using namespace stoodx;
using namespace stoodx::stats;
using V = std::vector<double>;

namespace {

double pair_count_auroc(const V& id, const V& ood) {
  double s = 0;
  for (double a : id)
    for (double b : ood) s += a > b ? 1.0 : a == b ? 0.5 : 0.0;
  return s / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

// Exact p by bitmask enumeration of every labeling, U counted pairwise.
double bitmask_exact_p(const V& a, const V& b) {
  V pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const unsigned N = static_cast<unsigned>(pooled.size());
  const double u_obs = pair_count_auroc(a, b) * static_cast<double>(a.size() * b.size());
  std::size_t hit = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << N); ++mask) {
    if (std::popcount(mask) != static_cast<int>(a.size())) continue;
    V x, y;
    for (unsigned i = 0; i < N; ++i) (mask >> i & 1 ? x : y).push_back(pooled[i]);
    const double u = pair_count_auroc(x, y) * static_cast<double>(x.size() * y.size());
    ++total;
    if (u >= u_obs - 1e-9) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

V random_ints(std::mt19937_64& g, std::size_t n, int hi) {
  std::uniform_int_distribution<int> d(0, hi);
  V v(n);
  for (auto& x : v) x = d(g);
  return v;
}

}  // namespace

TEST_CASE("midranks") {
  CHECK(midranks(V{10, 20, 30}) == V{1, 2, 3});
  CHECK(midranks(V{5, 5}) == V{1.5, 1.5});
  CHECK(midranks(V{7, 9, 7}) == V{1.5, 3, 1.5});
}

TEST_CASE("mann_whitney_greater examples") {
  const auto r = mann_whitney_greater(V{4, 5, 6}, V{1, 2, 3});
  CHECK(r.u == 9.0);
  CHECK(r.p < 0.05);
  const auto sym = mann_whitney_greater(V{1, 2, 3}, V{1, 2, 3});
  CHECK(sym.u == 4.5);
  CHECK(sym.p == doctest::Approx(0.5).epsilon(1e-15));
  const auto low = mann_whitney_greater(V{1, 2, 3}, V{4, 5, 6});
  CHECK(low.u == 0.0);
  CHECK(low.p > 0.95);
}

TEST_CASE("normal approximation matches hand formula") {
  // a=[4,5,6], b=[1,2,3]: U=9, sigma^2 = 9*7/12, z = (9-4.5-0.5)/sigma
  const auto r = mann_whitney_greater(V{4, 5, 6}, V{1, 2, 3});
  const double z = 4.0 / std::sqrt(9.0 * 7.0 / 12.0);
  CHECK(r.z == doctest::Approx(z).epsilon(1e-14));
  CHECK(r.p == doctest::Approx(0.5 * std::erfc(z / std::sqrt(2.0))).epsilon(1e-14));
}

TEST_CASE("tie-corrected variance") {
  // pooled [1,1,2,2,3,3]: tie term sum(t^3-t) = 18
  const auto r = mann_whitney_greater(V{2, 3, 3}, V{1, 1, 2});
  const double var = 9.0 / 12.0 * (7.0 - 18.0 / 30.0);
  const double u = 8.5;  // 2 beats {1,1} and ties 2; each 3 beats all three
  CHECK(r.u == doctest::Approx(u));
  CHECK(r.z == doctest::Approx((u - 4.5 - 0.5) / std::sqrt(var)).epsilon(1e-14));
}

TEST_CASE("all-tied pooled sample is degenerate with p = 0.5") {
  const auto r = mann_whitney_greater(V{3, 3}, V{3, 3, 3});
  CHECK(r.degenerate);
  CHECK(r.p == 0.5);
}

TEST_CASE("p stays in the open unit interval") {
  V a(200), b(200);
  for (int i = 0; i < 200; ++i) {
    a[i] = 1000 + i;
    b[i] = i;
  }
  const auto r = mann_whitney_greater(a, b);
  CHECK(r.p > 0.0);
  CHECK(r.p >= 1e-300);
  const auto s = mann_whitney_greater(b, a);
  CHECK(s.p < 1.0);
}

TEST_CASE("mann_whitney_exact examples") {
  CHECK(mann_whitney_exact(V{4, 5, 6}, V{1, 2, 3}).p == 0.05);
  CHECK(mann_whitney_exact(V{1, 2, 3}, V{4, 5, 6}).p == 1.0);
  const auto r = mann_whitney_exact(V{2}, V{1});
  CHECK(r.u == 1.0);
  CHECK(r.p == 0.5);
  CHECK(mann_whitney_exact(V{1}, V{2}).p == 1.0);
  CHECK(mann_whitney_exact(V{1}, V{2}).method == MwMethod::exact);
}

TEST_CASE("mann_whitney_exact agrees with bitmask enumeration") {
  std::mt19937_64 g(11);
  for (int t = 0; t < 60; ++t) {
    const std::size_t n = 1 + g() % 6, m = 1 + g() % 6;
    const V a = random_ints(g, n, t % 2 ? 4 : 1000), b = random_ints(g, m, t % 2 ? 4 : 1000);
    CHECK(mann_whitney_exact(a, b).p == doctest::Approx(bitmask_exact_p(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("mann_whitney_exact refuses huge enumerations") {
  V a(20), b(20);
  std::iota(a.begin(), a.end(), 0.0);
  std::iota(b.begin(), b.end(), 0.5);
  CHECK_THROWS_AS(mann_whitney_exact(a, b), Error);
}

TEST_CASE("sorted variant equals the general one") {
  std::mt19937_64 g(5);
  for (int t = 0; t < 50; ++t) {
    V a = random_ints(g, 1 + g() % 30, 10), b = random_ints(g, 1 + g() % 90, 10);
    const auto r = mann_whitney_greater(a, b);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(mann_whitney_greater_sorted(a, b) == r);
  }
}

TEST_CASE("permutation invariance and monotonicity") {
  std::mt19937_64 g(9);
  for (int t = 0; t < 50; ++t) {
    V a = random_ints(g, 2 + g() % 20, 15), b = random_ints(g, 2 + g() % 20, 15);
    const auto r = mann_whitney_greater(a, b);
    V a2 = a, b2 = b;
    std::shuffle(a2.begin(), a2.end(), g);
    std::shuffle(b2.begin(), b2.end(), g);
    CHECK(mann_whitney_greater(a2, b2) == r);
    a2 = a;
    a2[g() % a2.size()] += 1 + static_cast<double>(g() % 5);
    CHECK(mann_whitney_greater(a2, b).u >= r.u);
  }
}

// With ties a bump can split a tie group, which raises the tie-corrected
// variance; p is then only monotone up to that change. Without ties the
// variance is fixed and p must be monotone.
TEST_CASE("p is monotone in a for untied samples") {
  std::mt19937_64 g(19);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    V a(1 + g() % 25), b(1 + g() % 25);
    for (auto& x : a) x = u(g);
    for (auto& x : b) x = u(g);
    const auto r = mann_whitney_greater(a, b);
    a[g() % a.size()] += u(g);
    const auto up = mann_whitney_greater(a, b);
    CHECK(up.u >= r.u);
    CHECK(up.p <= r.p);
  }
}

TEST_CASE("auroc examples") {
  CHECK(auroc(V{0.9, 0.8}, V{0.1, 0.2}) == 1.0);
  CHECK(auroc(V{0.4, 0.4}, V{0.4, 0.4, 0.4}) == 0.5);
  CHECK(auroc(V{0.3}, V{0.7}) == 0.0);
}

TEST_CASE("auroc matches pair counting and the U statistic") {
  std::mt19937_64 g(21);
  for (int t = 0; t < 100; ++t) {
    const V id = random_ints(g, 1 + g() % 200, t % 3 ? 50 : 100000);
    const V ood = random_ints(g, 1 + g() % 200, t % 3 ? 50 : 100000);
    const double a = auroc(id, ood);
    CHECK(std::abs(a - pair_count_auroc(id, ood)) <= 1e-12);
    CHECK(std::abs(a + auroc(ood, id) - 1.0) <= 1e-12);
    const double u = mann_whitney_greater(id, ood).u;
    CHECK(std::abs(a - u / (static_cast<double>(id.size()) * ood.size())) <= 1e-12);
  }
}

TEST_CASE("fpr_at_tpr examples") {
  CHECK(fpr_at_tpr(V{0.9, 0.9, 0.9}, V{0.1, 0.1}) == 0.0);
  CHECK(fpr_at_tpr(V{0.5, 0.5}, V{0.5, 0.5, 0.5}) == 1.0);
  V id;
  for (int i = 1; i <= 100; ++i) id.push_back(i / 100.0);
  CHECK(fpr_at_tpr(id, V{0.5}) == 1.0);
  CHECK(fpr_at_tpr(id, V{0.05}) == 0.0);
}

TEST_CASE("fpr_at_tpr is non-increasing as level decreases") {
  std::mt19937_64 g(31);
  for (int t = 0; t < 30; ++t) {
    const V id = random_ints(g, 5 + g() % 100, 40), ood = random_ints(g, 5 + g() % 100, 40);
    double prev = 1.1;
    for (double level = 0.99; level > 0.05; level -= 0.05) {
      const double f = fpr_at_tpr(id, ood, level);
      CHECK(f <= prev);
      CHECK(f >= 0.0);
      CHECK(f <= 1.0);
      prev = f;
    }
  }
}

TEST_CASE("normal_sf") {
  CHECK(normal_sf(0.0) == doctest::Approx(0.5).epsilon(1e-16));
  CHECK(normal_sf(1.6448536269514722) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(normal_sf(-1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
}

TEST_CASE("float and double sorted overloads agree") {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> v(0, 30);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> af(1 + trial % 9), bf(3 + trial);
    for (auto& x : af) x = static_cast<float>(v(gen)) / 7.0f;
    for (auto& x : bf) x = static_cast<float>(v(gen)) / 7.0f;
    std::sort(af.begin(), af.end());
    std::sort(bf.begin(), bf.end());
    const std::vector<double> ad(af.begin(), af.end()), bd(bf.begin(), bf.end());
    CHECK(stats::mann_whitney_greater_sorted(std::span<const float>(af), std::span<const float>(bf)) ==
          stats::mann_whitney_greater_sorted(std::span<const double>(ad), std::span<const double>(bd)));
  }
}
