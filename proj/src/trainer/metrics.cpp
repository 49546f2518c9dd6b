#include "mrd/trainer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mrd/common.hpp"
#include "mrd/error.hpp"

namespace mrd::trainer {

Confusion confusion(std::span<const int> labels, std::span<const int> predicted) {
  if (labels.size() != predicted.size()) {
    throw ValidationError("confusion: " + std::to_string(labels.size()) + " labels vs " +
                          std::to_string(predicted.size()) + " predictions");
  }
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool fake = labels[i] == kFake, said_fake = predicted[i] == kFake;
    if (fake && said_fake) ++c.tp;
    else if (!fake && said_fake) ++c.fp;
    else if (!fake) ++c.tn;
    else ++c.fn;
  }
  return c;
}

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
}

namespace {

void check_scores(std::span<const int> labels, std::span<const double> scores, std::size_t& pos,
                  std::size_t& neg) {
  if (labels.size() != scores.size()) throw ValidationError("auc: labels and scores differ in length");
  pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kFake));
  neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ValidationError("auc: both classes must be present");
}

}  // namespace

double auc(std::span<const int> labels, std::span<const double> fake_scores) {
  std::size_t pos = 0, neg = 0;
  check_scores(labels, fake_scores, pos, neg);
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return fake_scores[a] < fake_scores[b]; });
  // Ranks are kept doubled so ties stay integral.
  std::size_t doubled_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && fake_scores[order[j + 1]] == fake_scores[order[i]]) ++j;
    const std::size_t doubled_avg = (i + 1) + (j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == kFake) doubled_rank_sum += doubled_avg;
    }
    i = j + 1;
  }
  const std::size_t doubled_u = doubled_rank_sum - pos * (pos + 1);
  return static_cast<double>(doubled_u) / static_cast<double>(2 * pos * neg);
}

double auc_pairwise(std::span<const int> labels, std::span<const double> fake_scores) {
  std::size_t pos = 0, neg = 0;
  check_scores(labels, fake_scores, pos, neg);
  std::size_t doubled = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kFake) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] == kFake) continue;
      if (fake_scores[i] > fake_scores[j]) doubled += 2;
      else if (fake_scores[i] == fake_scores[j]) doubled += 1;
    }
  }
  return static_cast<double>(doubled) / static_cast<double>(2 * pos * neg);
}

Metrics compute_metrics(std::span<const int> labels, std::span<const int> predicted,
                        std::span<const double> fake_scores) {
  if (labels.empty()) throw ValidationError("evaluate: empty test set");
  const Confusion c = confusion(labels, predicted);
  Metrics m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(labels.size());
  m.f1_fake = f1_score(c.tp, c.fp, c.fn);
  m.f1_real = f1_score(c.tn, c.fn, c.fp);
  m.auc = auc(labels, fake_scores);
  return m;
}

namespace {

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double step = d * c;
    h *= step;
    if (std::abs(step - 1.0) < eps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ParameterError("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw ParameterError("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw ParameterError("t distribution needs dof > 0");
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

WelchResult welch_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw ValidationError("welch_ttest: each sample needs at least two values");
  }
  auto moments = [](std::span<const double> x, double& mean, double& var) {
    mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    var = ss / static_cast<double>(x.size() - 1);
  };
  double ma = 0, va = 0, mb = 0, vb = 0;
  moments(a, ma, va);
  moments(b, mb, vb);
  const double sa = va / static_cast<double>(a.size());
  const double sb = vb / static_cast<double>(b.size());
  const double se2 = sa + sb;
  if (!(se2 > 0.0)) {
    throw ValidationError(
        "welch_ttest: both samples have zero variance; compare exact ties directly");
  }
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(se2);
  r.dof = se2 * se2 /
          (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
  r.p = student_t_two_sided_p(r.t, r.dof);
  return r;
}

}  // namespace mrd::trainer
