#include "mrd/views.hpp"

#include <string>

#include "mrd/error.hpp"

namespace mrd::views {

std::string_view source_name(SourceTag tag) {
  switch (tag) {
    case SourceTag::kTextTokens: return "text-tokens";
    case SourceTag::kImagePatches: return "image-patches";
    case SourceTag::kClipText: return "clip-text";
    case SourceTag::kClipImage: return "clip-image";
  }
  return "?";
}

SourceTag parse_source(std::string_view name) {
  for (auto tag : kAllSources) {
    if (source_name(tag) == name) return tag;
  }
  throw FormatError("unknown source tag '" + std::string(name) + "'");
}

SequenceBatch stack_sequences(std::span<const EmbeddedSequence* const> seqs) {
  if (seqs.empty()) throw DimensionError("stack_sequences: empty batch");
  const std::size_t d_in = seqs[0]->dim();
  const SourceTag source = seqs[0]->source;
  SequenceBatch out;
  out.source = source;
  out.offsets.reserve(seqs.size() + 1);
  out.offsets.push_back(0);
  std::vector<double> values;
  for (const auto* s : seqs) {
    if (s->dim() != d_in || s->tokens.rank() != 2) {
      throw DimensionError("stack_sequences: token width " + std::to_string(s->dim()) +
                           " differs from " + std::to_string(d_in));
    }
    if (s->source != source) throw ContractError("stack_sequences: mixed source tags");
    const auto v = s->tokens.values();
    values.insert(values.end(), v.begin(), v.end());
    out.offsets.push_back(out.offsets.back() + s->length());
  }
  out.tokens = Tensor::matrix(out.offsets.back(), d_in, std::move(values));
  return out;
}

SequenceBatch single(const EmbeddedSequence& seq) {
  const EmbeddedSequence* p = &seq;
  return stack_sequences(std::span<const EmbeddedSequence* const>(&p, 1));
}

void EncoderConfig::validate() const {
  if (d_in == 0 || d == 0) throw ConfigError("encoder dimensions must be positive");
  if (heads == 0 || d_in % heads != 0) {
    throw ConfigError("encoder heads " + std::to_string(heads) + " do not divide d_in " +
                      std::to_string(d_in));
  }
}

namespace {

AttentionBlock make_block(ParameterStore& store, const std::string& prefix, std::size_t w) {
  return AttentionBlock{
      store.add(prefix + ".wq", {w, w}, InitScheme::kXavierUniform),
      store.add(prefix + ".wk", {w, w}, InitScheme::kXavierUniform),
      store.add(prefix + ".wv", {w, w}, InitScheme::kXavierUniform),
      store.add(prefix + ".wo", {w, w}, InitScheme::kXavierUniform),
      store.add(prefix + ".bo", {w}, InitScheme::kZeros),
  };
}

SelfAttentionEncoder make_self(ParameterStore& store, const std::string& prefix,
                               const EncoderConfig& cfg) {
  SelfAttentionEncoder enc;
  enc.attn = make_block(store, prefix + ".attn", cfg.d_in);
  enc.w_out = store.add(prefix + ".out.weight", {cfg.d_in, cfg.d}, InitScheme::kXavierUniform);
  enc.b_out = store.add(prefix + ".out.bias", {cfg.d}, InitScheme::kZeros);
  return enc;
}

Tensor pool(const Tensor& x, std::span<const std::size_t> offsets, Pooling pooling) {
  return pooling == Pooling::kMean ? segment_mean(x, offsets) : segment_first(x, offsets);
}

// Attention of query rows over key/value rows followed by the output
// projection; rows stay per position.
Tensor attend(const SequenceBatch& queries, const SequenceBatch& keys, const AttentionBlock& blk,
              std::size_t heads, AttentionTrace* trace) {
  const Tensor q = project(queries.tokens, blk.wq);
  const Tensor k = project(keys.tokens, blk.wk);
  const Tensor v = project(keys.tokens, blk.wv);
  const Tensor mixed = attention(q, k, v, heads, queries.offsets, keys.offsets, trace);
  return linear(mixed, blk.wo, blk.bo);
}

void check_width(const SequenceBatch& seq, const EncoderConfig& cfg) {
  if (seq.tokens.cols() != cfg.d_in) {
    throw DimensionError(std::string(source_name(seq.source)) + " tokens have width " +
                         std::to_string(seq.tokens.cols()) + ", encoder expects d_in = " +
                         std::to_string(cfg.d_in));
  }
}

}  // namespace

ViewEncoderParams make_view_encoder(ParameterStore& store, const EncoderConfig& cfg) {
  cfg.validate();
  ViewEncoderParams p;
  p.text = make_self(store, "views.text", cfg);
  p.image = make_self(store, "views.image", cfg);
  p.cross.a_to_b = make_block(store, "views.cross.image_to_text", cfg.d_in);
  p.cross.b_to_a = make_block(store, "views.cross.text_to_image", cfg.d_in);
  p.cross.w_out = store.add("views.cross.out.weight", {2 * cfg.d_in, cfg.d},
                            InitScheme::kXavierUniform);
  p.cross.b_out = store.add("views.cross.out.bias", {cfg.d}, InitScheme::kZeros);
  return p;
}

Tensor self_attention_pool(const SequenceBatch& seq, const SelfAttentionEncoder& enc,
                           const EncoderConfig& cfg, AttentionTrace* trace) {
  check_width(seq, cfg);
  Tensor rows = seq.tokens;
  if (cfg.use_attention) rows = attend(seq, seq, enc.attn, cfg.heads, trace);
  return linear(pool(rows, seq.offsets, cfg.pooling), enc.w_out, enc.b_out);
}

Tensor self_attention_pool(const EmbeddedSequence& seq, const ViewEncoderParams& params,
                           View view, const EncoderConfig& cfg) {
  const SourceTag expected =
      view == View::kText ? SourceTag::kTextTokens : SourceTag::kImagePatches;
  if (view == View::kCross || seq.source != expected) {
    throw ContractError("self_attention_pool: " + std::string(source_name(seq.source)) +
                        " sequence cannot feed the " + std::string(view_name(view)) + " view");
  }
  const auto& enc = view == View::kText ? params.text : params.image;
  return reshape(self_attention_pool(single(seq), enc, cfg), {cfg.d});
}

Tensor co_attention(const SequenceBatch& a, const SequenceBatch& b, const CoAttentionEncoder& enc,
                    const EncoderConfig& cfg) {
  check_width(a, cfg);
  check_width(b, cfg);
  if (a.batch_size() != b.batch_size()) {
    throw DimensionError("co_attention: batch sizes differ (" + std::to_string(a.batch_size()) +
                         " vs " + std::to_string(b.batch_size()) + ")");
  }
  Tensor a_rows = a.tokens;
  Tensor b_rows = b.tokens;
  if (cfg.use_attention) {
    a_rows = attend(a, b, enc.a_to_b, cfg.heads, nullptr);
    b_rows = attend(b, a, enc.b_to_a, cfg.heads, nullptr);
  }
  const Tensor parts[] = {pool(a_rows, a.offsets, cfg.pooling),
                          pool(b_rows, b.offsets, cfg.pooling)};
  return linear(concat(parts), enc.w_out, enc.b_out);
}

Tensor co_attention(const EmbeddedSequence& a, const EmbeddedSequence& b,
                    const ViewEncoderParams& params, const EncoderConfig& cfg) {
  return reshape(co_attention(single(a), single(b), params.cross, cfg), {cfg.d});
}

ViewFeatures encode_views(const ViewInputs& inputs, const ViewEncoderParams& params,
                          const EncoderConfig& cfg) {
  ViewFeatures f;
  f.text = self_attention_pool(inputs.text, params.text, cfg);
  f.image = self_attention_pool(inputs.image, params.image, cfg);
  f.cross = co_attention(inputs.clip_image, inputs.clip_text, params.cross, cfg);
  return f;
}

}  // namespace mrd::views
