#include "mrd/calibration.hpp"

#include <cmath>
#include <string>

#include "mrd/error.hpp"

namespace mrd::calibration {

CalibratorParams make_calibrator(ParameterStore& store, std::size_t d, std::size_t d_h,
                                 bool zero_mlps) {
  if (d_h < d) {
    throw ConfigError("calibrator hidden width " + std::to_string(d_h) + " is below d " +
                      std::to_string(d));
  }
  const auto weight_init = zero_mlps ? InitScheme::kZeros : InitScheme::kXavierUniform;
  CalibratorParams p;
  for (View v : kAllViews) {
    const std::string prefix = "calibration." + std::string(view_name(v));
    p.mlp[v] = CorrectionMlp{
        store.add(prefix + ".mlp.w1", {3 * d, d_h}, weight_init),
        store.add(prefix + ".mlp.b1", {d_h}, InitScheme::kZeros),
        store.add(prefix + ".mlp.w2", {d_h, d}, weight_init),
        store.add(prefix + ".mlp.b2", {d}, InitScheme::kZeros),
    };
    p.aux_head[v] = make_head(store, prefix + ".aux_head", d);
  }
  return p;
}

void DistillConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParameterError("distillation temperature must be positive, got " + std::to_string(tau));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("distillation weight alpha must lie in [0, 1], got " +
                         std::to_string(alpha));
  }
}

Tensor concat_views(const views::ViewFeatures& v) {
  if (v.text.shape() != v.image.shape() || v.text.shape() != v.cross.shape()) {
    throw DimensionError("concat_views: view shapes differ " + shape_string(v.text.shape()) +
                         ", " + shape_string(v.image.shape()) + ", " +
                         shape_string(v.cross.shape()));
  }
  const Tensor parts[] = {v.text, v.image, v.cross};
  return concat(parts);
}

Tensor predict_correction(const Tensor& f_concat, const CalibratorParams& params, View view) {
  const auto& mlp = params.mlp[view];
  return linear(relu(linear(f_concat, mlp.w1, mlp.b1)), mlp.w2, mlp.b2);
}

Tensor calibrate(const Tensor& f, const Tensor& d_pred) {
  if (f.shape() != d_pred.shape()) {
    throw DimensionError("calibrate: feature " + shape_string(f.shape()) +
                         " vs correction " + shape_string(d_pred.shape()));
  }
  return add(f, d_pred);
}

CalibratedViews calibrate_views(const views::ViewFeatures& v, const CalibratorParams& params) {
  const Tensor context = concat_views(v);
  CalibratedViews out;
  for (View view : kAllViews) {
    out.correction[view] = predict_correction(context, params, view);
    out.calibrated[view] = calibrate(v[view], out.correction[view]);
  }
  return out;
}

Tensor distill_loss(const Tensor& calibrated, const Tensor& teacher, std::span<const int> labels,
                    const DistillConfig& cfg, const ClassifierHead& head) {
  cfg.validate();
  if (teacher.requires_grad()) {
    throw ContractError("distill_loss: teacher embedding must be gradient-free");
  }
  if (calibrated.shape() != teacher.shape()) {
    throw DimensionError("distill_loss: student " + shape_string(calibrated.shape()) +
                         " vs teacher " + shape_string(teacher.shape()));
  }
  const Tensor p = softmax_temp(teacher, cfg.tau);
  const Tensor q = softmax_temp(calibrated, cfg.tau);
  const Tensor kl = kl_divergence(p, q);
  const Tensor ce = cross_entropy(head.logits(calibrated), labels);
  return add(scale(kl, cfg.alpha * cfg.tau * cfg.tau), scale(ce, 1.0 - cfg.alpha));
}

CalibrationResult calibration_forward(const views::ViewFeatures& v, const PerView<Tensor>& teacher,
                                      std::span<const int> labels, const DistillConfig& cfg,
                                      const CalibratorParams& params) {
  cfg.validate();
  CalibrationResult out;
  out.views = calibrate_views(v, params);
  for (View view : kAllViews) {
    if (!cfg.enabled[view]) continue;
    out.loss[view] =
        distill_loss(out.views.calibrated[view], teacher[view], labels, cfg, params.aux_head[view]);
  }
  return out;
}

}  // namespace mrd::calibration
