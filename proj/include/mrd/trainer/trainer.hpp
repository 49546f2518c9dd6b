#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mrd/diffcore/grad_check.hpp"
#include "mrd/model.hpp"
#include "mrd/trainer/config.hpp"
#include "mrd/trainer/metrics.hpp"

namespace mrd::trainer {

// Adam with bias correction; weight decay, if any, is added to the gradient.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps, double weight_decay = 0.0);
  void step(std::vector<Parameter>& params);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Per-epoch means of the loss terms over the epoch's steps.
struct EpochRecord {
  std::size_t epoch = 0;
  double l_final = 0.0;
  double l_branch = 0.0;
  PerView<std::optional<double>> l_dv;
  double l_c = 0.0;
  double l_total = 0.0;
};

struct RunReport {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<EpochRecord> epochs;
  std::optional<Metrics> metrics;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static RunReport from_json(const std::string& text);
};

// Optional callbacks. on_batch may rewrite the batch before the forward
// pass; after_step sees the parameters right after the update.
struct TrainHooks {
  std::function<void(std::size_t step, model::Batch& batch)> on_batch;
  std::function<void(std::size_t step, const model::Model& model)> after_step;
};

struct TrainResult {
  model::Model model;
  RunReport report;
};

// Mini-batch Adam on L_total. Dataset samples need teacher embeddings
// unless no_teacher is set. A test set, when given, is evaluated at the end.
TrainResult train(const TrainConfig& cfg, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>* test_set = nullptr,
                  const TrainHooks& hooks = {});
// Same, with a RunConfig snapshot recorded in the report.
TrainResult train(const RunConfig& run, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>* test_set = nullptr,
                  const TrainHooks& hooks = {});

Metrics evaluate(const model::Model& model, const std::vector<data::Sample>& test_set);

// Replaces every sample's teacher with projected fallback embeddings of
// its raw content (the prompt-less teacher).
void apply_prompt_less_teacher(std::vector<data::Sample>& samples, std::size_t d,
                               std::uint64_t seed, std::size_t d_t = 384);

// Dataset preparation required by the ablation flags of cfg.
std::vector<data::Sample> prepare_training_data(const TrainConfig& cfg,
                                                const std::vector<data::Sample>& samples);

// --- gradient check ---------------------------------------------------------

// All views and losses enabled at width d (d_in = d, d_h = 2d), with head
// counts that divide d.
TrainConfig grad_check_config(std::size_t d, std::uint64_t seed = 0);
// Matching dataset of n samples (both classes, teacher attached).
data::SyntheticConfig grad_check_data(std::size_t d, std::size_t n, std::uint64_t seed = 0);
// Backward vs central differences of L_total over every model parameter
// on one batch.
GradCheckReport check_model_gradients(const TrainConfig& cfg,
                                      const std::vector<data::Sample>& batch, double h,
                                      double tol);

// --- checkpoint -------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t layout_hash(const ParameterStore& store);
void save_checkpoint(const model::Model& model, const std::filesystem::path& path);
// Parameters are replaced only after the whole file validated.
void load_checkpoint(model::Model& model, const std::filesystem::path& path);

}  // namespace mrd::trainer
