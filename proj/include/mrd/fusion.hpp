#pragma once

#include <optional>
#include <span>

#include "mrd/calibration.hpp"
#include "mrd/common.hpp"

namespace mrd::fusion {

struct FusionParams {
  std::size_t heads = 12;
  Tensor wq, wk, wv, wo, bo;  // d x d, Q/K/V bias-free
  ClassifierHead final_head;
  PerView<ClassifierHead> branch_head;  // on the uncalibrated features
};

FusionParams make_fusion(ParameterStore& store, std::size_t d, std::size_t heads);

// Elementwise mean of the three calibrated views: [B x d] (or [d]).
Tensor pool_views(const calibration::CalibratedViews& c);

// Rows text, image, cross stacked per sample: [3B x d] (or [3 x d]).
Tensor build_view_set(const calibration::CalibratedViews& c);

// The pooled query (one row per sample) attends over that sample's three
// view rows; W_O over the concatenated heads. Returns the shape of q.
Tensor cross_attention_fuse(const Tensor& q, const Tensor& kv, const FusionParams& params,
                            AttentionTrace* trace = nullptr);

struct ClassificationLosses {
  Tensor final_loss;   // per-sample CE on the fused head
  Tensor branch_loss;  // per-sample sum of the three branch CE terms
};

ClassificationLosses classification_losses(const Tensor& fused, const PerView<Tensor>& views,
                                           std::span<const int> labels,
                                           const FusionParams& params);

struct LossBreakdown {
  double l_final = 0.0;
  double l_branch = 0.0;
  PerView<std::optional<double>> l_dv;
  double l_c = 0.0;
  double l_total = 0.0;
  double lambda = 0.0;
  double tau = 0.0;
  double alpha = 0.0;
  PerView<bool> distill_enabled{true, true, true};

  // |L_C - (L_final + L_branch)| and |L_total - (L_C + lambda sum L_dv)|.
  double identity_residual() const;
};

struct TotalLoss {
  Tensor l_c;
  Tensor l_total;
  LossBreakdown breakdown;
};

// L_C = L_final + L_branch; L_total = L_C + lambda * sum of the present
// L_dv. Inputs are scalars. With lambda = 0 the distillation terms are not
// linked into L_total at all.
TotalLoss total_loss(const Tensor& l_final, const Tensor& l_branch,
                     const PerView<std::optional<Tensor>>& l_dv, double lambda);

}  // namespace mrd::fusion
