#pragma once

#include <cstddef>
#include <span>

namespace mrd::trainer {

// Fake (class 1) is the positive class for f1_fake, real for f1_real.
struct Metrics {
  double accuracy = 0.0;
  double f1_fake = 0.0;
  double f1_real = 0.0;
  double auc = 0.0;
};

struct Confusion {
  std::size_t tp = 0;  // fake predicted fake
  std::size_t fp = 0;  // real predicted fake
  std::size_t tn = 0;
  std::size_t fn = 0;
};

Confusion confusion(std::span<const int> labels, std::span<const int> predicted);

// F1 with 0/0 taken as 0.
double f1_score(std::size_t tp, std::size_t fp, std::size_t fn);

// Rank-sum AUC with average ranks for tied scores. Needs both classes.
double auc(std::span<const int> labels, std::span<const double> fake_scores);
// O(n^2) count of correctly ordered (fake, real) pairs, ties as 1/2.
double auc_pairwise(std::span<const int> labels, std::span<const double> fake_scores);

// ValidationError on an empty set or mismatched lengths.
Metrics compute_metrics(std::span<const int> labels, std::span<const int> predicted,
                        std::span<const double> fake_scores);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;  // two-sided
};

// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
// freedom. Each side needs at least two values; when both variances are
// zero a ValidationError is thrown.
WelchResult welch_ttest(std::span<const double> a, std::span<const double> b);

// I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);
// P(|T| > |t|) for Student's t with dof degrees of freedom.
double student_t_two_sided_p(double t, double dof);

}  // namespace mrd::trainer
