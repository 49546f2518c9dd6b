#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mrd/calibration.hpp"
#include "mrd/datasynth.hpp"
#include "mrd/fusion.hpp"
#include "mrd/views.hpp"

namespace mrd::model {

struct ModelConfig {
  std::size_t d_in = 32;
  std::size_t d = 36;
  std::size_t d_h = 72;
  std::size_t heads = 12;      // fusion
  std::size_t enc_heads = 4;   // view encoders
  views::Pooling pooling = views::Pooling::kMean;
  bool use_attention = true;   // false: mean pooling / concatenation everywhere
  bool use_encoders = true;    // false: zero-padded mean-pooled tokens as view features
  PerView<bool> view_enabled{true, true, true};  // cross is always kept
  bool zero_correction_init = false;
  std::uint64_t seed = 0;

  void validate() const;
  views::EncoderConfig encoder() const;
};

// A mini-batch in stacked form. teacher rows are [B x d] and gradient-free;
// undefined when the samples carry no teacher embeddings.
struct Batch {
  views::ViewInputs inputs;
  std::vector<int> labels;
  PerView<Tensor> teacher;

  std::size_t size() const { return labels.size(); }
  bool has_teacher() const { return teacher.text.defined(); }
};

// with_teacher = false leaves the teacher rows undefined even when the
// samples carry embeddings.
Batch make_batch(std::span<const data::Sample* const> samples, bool with_teacher = true);
Batch make_batch(const std::vector<data::Sample>& samples, bool with_teacher = true);

struct ForwardResult {
  views::ViewFeatures features;           // f_v
  calibration::CalibratedViews calibrated;
  Tensor fused;                           // F_final [B x d]
  Tensor logits;                          // [B x 2]
};

struct LossOptions {
  double lambda = 1.0;
  calibration::DistillConfig distill;
};

struct LossResult {
  ForwardResult forward;
  fusion::TotalLoss total;  // batch means
};

class Model {
 public:
  explicit Model(ModelConfig cfg);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const fusion::FusionParams& fusion_params() const { return fusion_; }
  const calibration::CalibratorParams& calibrator() const { return calibrator_; }
  const views::ViewEncoderParams& encoders() const { return encoders_; }

  // skip_calibration feeds f_v straight to fusion (corrections treated as 0).
  ForwardResult forward(const Batch& batch, bool skip_calibration = false) const;
  LossResult losses(const Batch& batch, const LossOptions& opts) const;

  // Fake-class probability per sample and argmax predictions.
  std::vector<double> fake_scores(const Batch& batch) const;
  std::vector<int> predict(const Batch& batch) const;

 private:
  views::ViewFeatures features(const Batch& batch) const;

  ModelConfig cfg_;
  ParameterStore store_;
  views::ViewEncoderParams encoders_;
  calibration::CalibratorParams calibrator_;
  fusion::FusionParams fusion_;
};

}  // namespace mrd::model
