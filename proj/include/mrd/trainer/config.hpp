#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mrd/datasynth.hpp"
#include "mrd/model.hpp"
#include "mrd/teacher_client.hpp"

namespace mrd::trainer {

// One flag per ablation variant. All false is the full model.
struct Ablation {
  bool drop_l_text = false;
  bool drop_l_image = false;
  bool drop_l_cross = false;
  bool drop_text_view = false;
  bool drop_image_view = false;
  bool no_teacher = false;
  bool no_reasoning_prompts = false;
  bool no_feature_extractors = false;
  bool no_attention = false;

  bool any() const;
};

struct TrainConfig {
  double lambda = 1.0;
  double tau = 2.0;
  double alpha = 0.5;
  std::size_t heads = 12;
  std::size_t enc_heads = 4;
  std::size_t d_in = 32;
  std::size_t d = 36;
  std::size_t d_h = 72;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  views::Pooling pooling = views::Pooling::kMean;
  bool zero_correction_init = false;
  // Checks the loss identities on every step.
  bool debug_checks = true;
  Ablation ablation;

  // ConfigError on any invariant violation.
  void validate() const;
  model::ModelConfig model_config() const;
  // lambda is forced to 0 under no_teacher.
  model::LossOptions loss_options() const;
  double effective_lambda() const;
};

// Everything a CLI run can configure. Keys in a config file mirror the
// field names: training fields bare ("lambda", "epochs", "drop_L_cross"),
// dataset fields under "data." and endpoint client fields under "teacher.".
struct RunConfig {
  TrainConfig train;
  data::SyntheticConfig data;
  teacher::ClientConfig teacher;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  std::filesystem::path prompts_dir = "prompts";

  void validate() const;
};

// Flat "key = value" lines; '#' starts a comment. Unknown keys and
// unparsable values throw ConfigError naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Snapshot in file syntax; parse_config of the rendered text reproduces cfg.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::string render_config(const RunConfig& cfg);

}  // namespace mrd::trainer
