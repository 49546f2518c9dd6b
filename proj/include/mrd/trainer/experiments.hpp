#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mrd/trainer/trainer.hpp"

namespace mrd::trainer {

struct Aggregate {
  Metrics mean;
  Metrics sd;  // sample standard deviation, 0 for a single run
};

Aggregate aggregate(std::span<const Metrics> runs);

// Runs jobs[0..n) on up to `threads` workers; results land by index, so
// the outcome does not depend on the thread count.
void run_jobs(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job);

// --- ablation ---------------------------------------------------------------

struct Variant {
  std::string name;  // "full", "w/o L_text", ...
  Ablation flags;
};

// The full model followed by one variant per ablation flag.
std::vector<Variant> ablation_variants();

struct AblationRow {
  Variant variant;
  std::vector<Metrics> runs;        // one per seed
  std::vector<double> wall_seconds;
  Aggregate summary;
  std::vector<Metrics> probe_runs;  // on the optional probe set
  Aggregate probe_summary;
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;

  const AblationRow& row(const std::string& name) const;
};

// Seeds are base.seed, base.seed + 1, ...; n_seeds >= 3. Each trained
// model is also evaluated on `probe` when given (e.g. a cross-mismatch-only
// set).
AblationTable ablation_suite(const TrainConfig& base, const std::vector<data::Sample>& train_set,
                             const std::vector<data::Sample>& test_set, std::size_t n_seeds,
                             const std::vector<data::Sample>* probe = nullptr,
                             std::size_t threads = 1);

std::string ablation_jsonl(const AblationTable& table);
std::string ablation_summary(const AblationTable& table);

// --- sweep ------------------------------------------------------------------

enum class SweepAxis { kLambda, kTau, kAlpha, kHeads };

std::string_view axis_name(SweepAxis axis);
SweepAxis parse_axis(std::string_view name);

// cfg with the axis set to value; ConfigError when the result is invalid
// (e.g. a head count that does not divide d).
TrainConfig with_axis(const TrainConfig& cfg, SweepAxis axis, double value);

struct CurvePoint {
  double value = 0.0;
  std::vector<Metrics> runs;
  Aggregate summary;
};

struct CurveReport {
  SweepAxis axis = SweepAxis::kLambda;
  std::vector<std::uint64_t> seeds;
  std::vector<CurvePoint> points;
};

// Every value is validated before any training starts.
CurveReport sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                  const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& test_set, std::size_t n_seeds,
                  std::size_t threads = 1);

std::string curve_jsonl(const CurveReport& curve);
std::string curve_summary(const CurveReport& curve);
// Line chart of mean accuracy, F1-Fake, F1-Real and AUC with +-sd bars.
std::string curve_svg(const CurveReport& curve);

}  // namespace mrd::trainer
