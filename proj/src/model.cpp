#include "mrd/model.hpp"

#include <cmath>

#include "mrd/error.hpp"

namespace mrd::model {

void ModelConfig::validate() const {
  if (d_in == 0 || d == 0) throw ConfigError("d_in and d must be positive");
  if (d_h < d) {
    throw ConfigError("d_h = " + std::to_string(d_h) + " must be at least d = " + std::to_string(d));
  }
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("heads = " + std::to_string(heads) + " must divide d = " + std::to_string(d));
  }
  encoder().validate();
  if (!use_encoders && d_in > d) {
    throw ConfigError("raw-token view features need d_in <= d");
  }
  if (!view_enabled.cross) throw ConfigError("the cross view cannot be dropped");
}

views::EncoderConfig ModelConfig::encoder() const {
  views::EncoderConfig e;
  e.d_in = d_in;
  e.d = d;
  e.heads = enc_heads;
  e.pooling = pooling;
  e.use_attention = use_attention;
  return e;
}

Batch make_batch(std::span<const data::Sample* const> samples, bool with_teacher) {
  if (samples.empty()) throw ContractError("make_batch: no samples");
  std::vector<const views::EmbeddedSequence*> seqs(samples.size());
  auto stack = [&](views::SourceTag tag) {
    for (std::size_t i = 0; i < samples.size(); ++i) seqs[i] = &samples[i]->sequence(tag);
    return views::stack_sequences(seqs);
  };
  Batch b;
  b.inputs.text = stack(views::SourceTag::kTextTokens);
  b.inputs.image = stack(views::SourceTag::kImagePatches);
  b.inputs.clip_text = stack(views::SourceTag::kClipText);
  b.inputs.clip_image = stack(views::SourceTag::kClipImage);
  b.labels.reserve(samples.size());
  for (const auto* s : samples) b.labels.push_back(s->label);

  if (with_teacher && samples[0]->teacher.has_value()) {
    for (const auto* s : samples) {
      if (!s->teacher) {
        throw ValidationError("make_batch: sample " + s->id + " lacks teacher embeddings");
      }
    }
    for (View v : kAllViews) {
      const std::size_t d = (*samples[0]->teacher)[v].size();
      std::vector<double> rows;
      rows.reserve(samples.size() * d);
      for (const auto* s : samples) {
        const auto vals = (*s->teacher)[v].values();
        if (vals.size() != d) {
          throw DimensionError("make_batch: teacher embedding of " + s->id + " has " +
                               std::to_string(vals.size()) + " entries, expected " +
                               std::to_string(d));
        }
        rows.insert(rows.end(), vals.begin(), vals.end());
      }
      b.teacher[v] = Tensor::matrix(samples.size(), d, std::move(rows));
    }
  }
  return b;
}

Batch make_batch(const std::vector<data::Sample>& samples, bool with_teacher) {
  std::vector<const data::Sample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return make_batch(ptrs, with_teacher);
}

Model::Model(ModelConfig cfg) : cfg_(cfg), store_(cfg.seed) {
  cfg_.validate();
  encoders_ = views::make_view_encoder(store_, cfg_.encoder());
  calibrator_ = calibration::make_calibrator(store_, cfg_.d, cfg_.d_h, cfg_.zero_correction_init);
  fusion_ = fusion::make_fusion(store_, cfg_.d, cfg_.heads);
}

namespace {

// Per-segment mean of constant tokens, zero-padded to width d.
std::vector<double> raw_pool(const views::SequenceBatch& seq, std::size_t d) {
  const std::size_t w = seq.tokens.cols();
  const auto v = seq.tokens.values();
  std::vector<double> out(seq.batch_size() * d, 0.0);
  for (std::size_t b = 0; b < seq.batch_size(); ++b) {
    const std::size_t lo = seq.offsets[b], hi = seq.offsets[b + 1];
    for (std::size_t r = lo; r < hi; ++r) {
      for (std::size_t j = 0; j < w; ++j) out[b * d + j] += v[r * w + j];
    }
    const double n = static_cast<double>(hi - lo);
    for (std::size_t j = 0; j < w; ++j) out[b * d + j] /= n;
  }
  return out;
}

}  // namespace

views::ViewFeatures Model::features(const Batch& batch) const {
  const std::size_t n = batch.size(), d = cfg_.d;
  views::ViewFeatures f;
  if (cfg_.use_encoders) {
    f = views::encode_views(batch.inputs, encoders_, cfg_.encoder());
  } else {
    f.text = Tensor::matrix(n, d, raw_pool(batch.inputs.text, d));
    f.image = Tensor::matrix(n, d, raw_pool(batch.inputs.image, d));
    auto ct = raw_pool(batch.inputs.clip_text, d);
    const auto ci = raw_pool(batch.inputs.clip_image, d);
    for (std::size_t i = 0; i < ct.size(); ++i) ct[i] = 0.5 * (ct[i] + ci[i]);
    f.cross = Tensor::matrix(n, d, std::move(ct));
  }
  for (View v : kAllViews) {
    if (!cfg_.view_enabled[v]) f[v] = Tensor::zeros({n, d});
  }
  return f;
}

ForwardResult Model::forward(const Batch& batch, bool skip_calibration) const {
  ForwardResult r;
  r.features = features(batch);
  if (skip_calibration) {
    for (View v : kAllViews) {
      r.calibrated.calibrated[v] = r.features[v];
      r.calibrated.correction[v] = Tensor::zeros(r.features[v].shape());
    }
  } else {
    r.calibrated = calibration::calibrate_views(r.features, calibrator_);
  }
  calibration::CalibratedViews fused_in = r.calibrated;
  for (View v : kAllViews) {
    if (!cfg_.view_enabled[v]) fused_in.calibrated[v] = Tensor::zeros(r.features[v].shape());
  }
  const Tensor pooled = fusion::pool_views(fused_in);
  r.fused = cfg_.use_attention
                ? fusion::cross_attention_fuse(pooled, fusion::build_view_set(fused_in), fusion_)
                : pooled;
  r.logits = fusion_.final_head.logits(r.fused);
  return r;
}

LossResult Model::losses(const Batch& batch, const LossOptions& opts) const {
  opts.distill.validate();
  LossResult out;
  out.forward = forward(batch);
  const auto& fw = out.forward;
  const auto cls = fusion::classification_losses(fw.fused, fw.features, batch.labels, fusion_);

  PerView<std::optional<Tensor>> l_dv;
  if (batch.has_teacher()) {
    for (View v : kAllViews) {
      if (!opts.distill.enabled[v] || !cfg_.view_enabled[v]) continue;
      l_dv[v] = mean(calibration::distill_loss(fw.calibrated.calibrated[v], batch.teacher[v],
                                               batch.labels, opts.distill, calibrator_.aux_head[v]),
                     0);
    }
  }
  out.total = fusion::total_loss(mean(cls.final_loss, 0), mean(cls.branch_loss, 0), l_dv,
                                 opts.lambda);
  out.total.breakdown.tau = opts.distill.tau;
  out.total.breakdown.alpha = opts.distill.alpha;
  return out;
}

std::vector<double> Model::fake_scores(const Batch& batch) const {
  NoGradGuard guard;
  const Tensor probs = softmax_temp(forward(batch).logits, 1.0);
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = probs.at(i, kFake);
  return out;
}

std::vector<int> Model::predict(const Batch& batch) const {
  NoGradGuard guard;
  const Tensor logits = forward(batch).logits;
  std::vector<int> out(batch.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = logits.at(i, kFake) > logits.at(i, kReal) ? kFake : kReal;
  }
  return out;
}

}  // namespace mrd::model
