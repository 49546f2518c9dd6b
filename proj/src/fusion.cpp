#include "mrd/fusion.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "mrd/error.hpp"

namespace mrd::fusion {

FusionParams make_fusion(ParameterStore& store, std::size_t d, std::size_t heads) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("fusion heads " + std::to_string(heads) + " do not divide d " +
                      std::to_string(d));
  }
  FusionParams p;
  p.heads = heads;
  p.wq = store.add("fusion.wq", {d, d}, InitScheme::kXavierUniform);
  p.wk = store.add("fusion.wk", {d, d}, InitScheme::kXavierUniform);
  p.wv = store.add("fusion.wv", {d, d}, InitScheme::kXavierUniform);
  p.wo = store.add("fusion.wo", {d, d}, InitScheme::kXavierUniform);
  p.bo = store.add("fusion.bo", {d}, InitScheme::kZeros);
  p.final_head = make_head(store, "fusion.final_head", d);
  for (View v : kAllViews) {
    p.branch_head[v] = make_head(store, "fusion.branch_head." + std::string(view_name(v)), d);
  }
  return p;
}

Tensor pool_views(const calibration::CalibratedViews& c) {
  const Tensor parts[] = {c.calibrated.text, c.calibrated.image, c.calibrated.cross};
  return mean_of(parts);
}

Tensor build_view_set(const calibration::CalibratedViews& c) {
  const Tensor parts[] = {c.calibrated.text, c.calibrated.image, c.calibrated.cross};
  return interleave_rows(parts);
}

Tensor cross_attention_fuse(const Tensor& q, const Tensor& kv, const FusionParams& params,
                            AttentionTrace* trace) {
  const std::size_t d = q.cols();
  if (params.heads == 0 || d % params.heads != 0) {
    throw ConfigError("fusion heads " + std::to_string(params.heads) + " do not divide d " +
                      std::to_string(d));
  }
  const std::size_t batch = q.rows();
  if (kv.rank() != 2 || kv.rows() != 3 * batch || kv.cols() != d) {
    throw DimensionError("cross_attention_fuse: view set " + shape_string(kv.shape()) +
                         " does not match query " + shape_string(q.shape()));
  }
  std::vector<std::size_t> q_off(batch + 1), k_off(batch + 1);
  for (std::size_t b = 0; b <= batch; ++b) {
    q_off[b] = b;
    k_off[b] = 3 * b;
  }
  const Tensor query = q.rank() == 1 ? reshape(q, {1, d}) : q;
  const Tensor mixed = attention(project(query, params.wq), project(kv, params.wk),
                                 project(kv, params.wv), params.heads, q_off, k_off, trace);
  const Tensor out = linear(mixed, params.wo, params.bo);
  return q.rank() == 1 ? reshape(out, {d}) : out;
}

ClassificationLosses classification_losses(const Tensor& fused, const PerView<Tensor>& views,
                                           std::span<const int> labels,
                                           const FusionParams& params) {
  ClassificationLosses out;
  out.final_loss = cross_entropy(params.final_head.logits(fused), labels);
  const Tensor parts[] = {
      cross_entropy(params.branch_head.text.logits(views.text), labels),
      cross_entropy(params.branch_head.image.logits(views.image), labels),
      cross_entropy(params.branch_head.cross.logits(views.cross), labels),
  };
  out.branch_loss = add(add(parts[0], parts[1]), parts[2]);
  return out;
}

double LossBreakdown::identity_residual() const {
  double dv_sum = 0.0;
  for (View v : kAllViews) {
    if (l_dv[v]) dv_sum += *l_dv[v];
  }
  const double r1 = std::abs(l_c - (l_final + l_branch));
  const double r2 = std::abs(l_total - (l_c + lambda * dv_sum));
  return std::max(r1, r2);
}

TotalLoss total_loss(const Tensor& l_final, const Tensor& l_branch,
                     const PerView<std::optional<Tensor>>& l_dv, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ParameterError("lambda must be non-negative, got " + std::to_string(lambda));
  }
  TotalLoss out;
  out.l_c = add(l_final, l_branch);
  Tensor dv_sum;
  for (View v : kAllViews) {
    if (!l_dv[v]) continue;
    dv_sum = dv_sum.defined() ? add(dv_sum, *l_dv[v]) : *l_dv[v];
  }
  out.l_total = (lambda > 0.0 && dv_sum.defined()) ? add(out.l_c, scale(dv_sum, lambda)) : out.l_c;

  auto& b = out.breakdown;
  b.l_final = l_final.item();
  b.l_branch = l_branch.item();
  b.l_c = out.l_c.item();
  b.l_total = out.l_total.item();
  b.lambda = lambda;
  for (View v : kAllViews) {
    if (l_dv[v]) b.l_dv[v] = l_dv[v]->item();
    b.distill_enabled[v] = l_dv[v].has_value();
  }
  return out;
}

}  // namespace mrd::fusion
