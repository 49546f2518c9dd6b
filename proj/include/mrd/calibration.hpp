#pragma once

#include <optional>
#include <span>

#include "mrd/common.hpp"
#include "mrd/views.hpp"

namespace mrd::calibration {

// Two affine layers 3d -> d_h -> d with ReLU between.
struct CorrectionMlp {
  Tensor w1, b1, w2, b2;
};

struct CalibratorParams {
  PerView<CorrectionMlp> mlp;
  PerView<ClassifierHead> aux_head;  // d -> 2 on the calibrated feature
};

// zero_mlps initializes the correction MLPs to zero (corrections vanish).
CalibratorParams make_calibrator(ParameterStore& store, std::size_t d, std::size_t d_h,
                                 bool zero_mlps = false);

struct CalibratedViews {
  PerView<Tensor> calibrated;  // f_hat_v
  PerView<Tensor> correction;  // d_v^pred
};

struct DistillConfig {
  double tau = 2.0;
  double alpha = 0.5;
  PerView<bool> enabled{true, true, true};

  void validate() const;
};

// Concatenation in the fixed order text, image, cross along the last dim.
Tensor concat_views(const views::ViewFeatures& v);

// d_v^pred = MLP_v(F_concat).
Tensor predict_correction(const Tensor& f_concat, const CalibratorParams& params, View view);

// f_v + d_pred, elementwise.
Tensor calibrate(const Tensor& f, const Tensor& d_pred);

// Corrections from the shared concatenated context, applied residually.
CalibratedViews calibrate_views(const views::ViewFeatures& v, const CalibratorParams& params);

// alpha * tau^2 * KL(softmax(teacher / tau) || softmax(student / tau))
//   + (1 - alpha) * CE(head(student), y)
// Rank-1 inputs (one sample) give a scalar; [B x d] inputs with B labels
// give per-sample losses [B]. The teacher side must be gradient-free.
Tensor distill_loss(const Tensor& calibrated, const Tensor& teacher, std::span<const int> labels,
                    const DistillConfig& cfg, const ClassifierHead& head);

struct CalibrationResult {
  CalibratedViews views;
  // Per-sample L_dv for each enabled view; disengaged for disabled views.
  PerView<std::optional<Tensor>> loss;
};

CalibrationResult calibration_forward(const views::ViewFeatures& v, const PerView<Tensor>& teacher,
                                      std::span<const int> labels, const DistillConfig& cfg,
                                      const CalibratorParams& params);

}  // namespace mrd::calibration
