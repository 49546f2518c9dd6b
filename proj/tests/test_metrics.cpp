#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"

#include "mrd/error.hpp"
#include "mrd/random.hpp"
#include "mrd/trainer/metrics.hpp"

using namespace mrd;
using namespace mrd::trainer;

namespace {

// Two-sided Student-t tail by Simpson integration of the density.
double t_tail_by_quadrature(double t, double dof) {
  const double c = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) /
                   std::sqrt(dof * std::numbers::pi);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / dof, -(dof + 1) / 2); };
  const double a = 0.0, b = std::abs(t);
  const int n = 20000;
  const double h = (b - a) / n;
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4 : 2);
  const double central = s * h / 3;
  return 1.0 - 2.0 * central;
}

}  // namespace

TEST_CASE("confusion and F1 against a hand oracle") {
  const int labels[] = {1, 1, 1, 0, 0, 0, 0, 1};
  const int pred[] = {1, 0, 1, 0, 1, 0, 0, 1};
  const auto c = confusion(labels, pred);
  CHECK(c.tp == 3);
  CHECK(c.fn == 1);
  CHECK(c.fp == 1);
  CHECK(c.tn == 3);
  const double scores[] = {0.9, 0.4, 0.8, 0.1, 0.6, 0.2, 0.3, 0.7};
  const auto m = compute_metrics(labels, pred, scores);
  CHECK(m.accuracy == 6.0 / 8.0);
  CHECK(m.f1_fake == 2.0 * 3 / (2.0 * 3 + 1 + 1));
  CHECK(m.f1_real == 2.0 * 3 / (2.0 * 3 + 1 + 1));
  CHECK(m.auc == 15.0 / 16.0);

  CHECK(f1_score(0, 0, 0) == 0.0);
  CHECK(f1_score(0, 3, 2) == 0.0);
  CHECK(f1_score(5, 0, 0) == 1.0);
}

TEST_CASE("F1 and accuracy match the confusion oracle on random sets") {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.index(80);
    std::vector<int> y(n), p(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.index(2));
      p[i] = static_cast<int>(rng.index(2));
      s[i] = rng.uniform();
    }
    y[0] = 0;
    if (n > 1) y[1] = 1;
    if (n == 1) continue;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i] == 1 && p[i] == 1) ++tp;
      if (y[i] == 0 && p[i] == 1) ++fp;
      if (y[i] == 0 && p[i] == 0) ++tn;
      if (y[i] == 1 && p[i] == 0) ++fn;
    }
    const auto m = compute_metrics(y, p, s);
    CHECK(m.accuracy == static_cast<double>(tp + tn) / static_cast<double>(n));
    const double ff = 2 * tp + fp + fn == 0 ? 0.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    const double fr = 2 * tn + fn + fp == 0 ? 0.0 : 2.0 * tn / static_cast<double>(2 * tn + fn + fp);
    CHECK(m.f1_fake == ff);
    CHECK(m.f1_real == fr);
    for (double x : {m.accuracy, m.f1_fake, m.f1_real, m.auc}) CHECK((x >= 0.0 && x <= 1.0));
  }
}

TEST_CASE("AUC examples") {
  const int y[] = {0, 0, 1, 1};
  const double perfect[] = {0.1, 0.2, 0.8, 0.9};
  CHECK(auc(y, perfect) == 1.0);
  const double inverted[] = {0.9, 0.8, 0.2, 0.1};
  CHECK(auc(y, inverted) == 0.0);
  const double constant[] = {0.5, 0.5, 0.5, 0.5};
  CHECK(auc(y, constant) == 0.5);
  const int pred[] = {0, 0, 1, 1};
  const auto m = compute_metrics(y, pred, perfect);
  CHECK(m.accuracy == 1.0);
  CHECK(m.f1_fake == 1.0);
  CHECK(m.f1_real == 1.0);
  CHECK(m.auc == 1.0);

  const int one_class[] = {1, 1};
  const double s2[] = {0.1, 0.2};
  CHECK_THROWS_AS(auc(one_class, s2), ValidationError);
  CHECK_THROWS_AS(compute_metrics({}, {}, {}), ValidationError);
  const int short_pred[] = {0};
  CHECK_THROWS_AS(compute_metrics(y, short_pred, perfect), ValidationError);
}

TEST_CASE("AUC equals the pairwise count exactly") {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.index(299);
    const bool coarse = t % 2 == 0;  // many ties
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.index(2));
      s[i] = coarse ? static_cast<double>(rng.index(7)) / 6.0 : rng.uniform();
    }
    y[0] = 0;
    y[1] = 1;
    // Independent brute force, ties as one half.
    double count = 0.0, pos = 0.0, neg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      (y[i] ? pos : neg) += 1.0;
      if (!y[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (y[j]) continue;
        count += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
    CHECK(auc(y, s) == count / (pos * neg));
    CHECK(auc_pairwise(y, s) == count / (pos * neg));
  }
}

TEST_CASE("welch_ttest examples") {
  const double a[] = {1, 2, 3, 4, 5};
  const double b[] = {2, 3, 4, 5, 6};
  const auto r = welch_ttest(a, b);
  CHECK(r.t == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(r.dof == doctest::Approx(8.0).epsilon(1e-14));
  CHECK(std::abs(r.p - 0.3466) < 1e-3);
  CHECK(std::abs(r.p - t_tail_by_quadrature(-1.0, 8.0)) < 1e-9);

  const auto swapped = welch_ttest(b, a);
  CHECK(swapped.t == -r.t);
  CHECK(swapped.p == r.p);
  CHECK(swapped.dof == r.dof);

  const auto same = welch_ttest(a, a);
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);

  const double one[] = {1.0};
  CHECK_THROWS_AS(welch_ttest(one, a), ValidationError);
  const double flat[] = {2.0, 2.0, 2.0};
  const double flat2[] = {3.0, 3.0};
  CHECK_THROWS_AS(welch_ttest(flat, flat2), ValidationError);
}

TEST_CASE("welch_ttest against quadrature on random samples") {
  Rng rng(3);
  for (int t = 0; t < 40; ++t) {
    std::vector<double> a(2 + rng.index(8)), b(2 + rng.index(8));
    for (auto& x : a) x = rng.normal(0.0, 1.0 + rng.uniform());
    for (auto& x : b) x = rng.normal(rng.uniform(-1.0, 1.0), 0.5 + rng.uniform());
    const auto r = welch_ttest(a, b);
    // Independent t and Welch-Satterthwaite dof.
    auto moments = [](const std::vector<double>& v) {
      double m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double s = 0.0;
      for (double x : v) s += (x - m) * (x - m);
      return std::pair{m, s / static_cast<double>(v.size() - 1)};
    };
    const auto [ma, va] = moments(a);
    const auto [mb, vb] = moments(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double se2 = va / na + vb / nb;
    const double tt = (ma - mb) / std::sqrt(se2);
    const double dof = se2 * se2 / ((va / na) * (va / na) / (na - 1) + (vb / nb) * (vb / nb) / (nb - 1));
    CHECK(r.t == doctest::Approx(tt).epsilon(1e-12));
    CHECK(r.dof == doctest::Approx(dof).epsilon(1e-12));
    if (std::abs(tt) < 8.0) CHECK(std::abs(r.p - t_tail_by_quadrature(tt, dof)) < 1e-7);
  }
}

TEST_CASE("regularized incomplete beta") {
  CHECK(regularized_incomplete_beta(1.0, 1.0, 0.3) == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0);
  // I_x(2, 1) = x^2
  CHECK(regularized_incomplete_beta(2.0, 1.0, 0.6) == doctest::Approx(0.36).epsilon(1e-13));
  // Symmetry I_x(a, b) = 1 - I_{1-x}(b, a)
  CHECK(regularized_incomplete_beta(3.5, 1.5, 0.7) ==
        doctest::Approx(1.0 - regularized_incomplete_beta(1.5, 3.5, 0.3)).epsilon(1e-13));
  CHECK_THROWS_AS(regularized_incomplete_beta(0.0, 1.0, 0.5), ParameterError);
  CHECK_THROWS_AS(regularized_incomplete_beta(1.0, 1.0, 1.5), ParameterError);
  CHECK(student_t_two_sided_p(0.0, 5.0) == 1.0);
  CHECK_THROWS_AS(student_t_two_sided_p(1.0, 0.0), ParameterError);
}
