#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "mrd/common.hpp"

namespace mrd::views {

enum class SourceTag { kTextTokens, kImagePatches, kClipText, kClipImage };

inline constexpr std::array<SourceTag, 4> kAllSources = {
    SourceTag::kTextTokens, SourceTag::kImagePatches, SourceTag::kClipText,
    SourceTag::kClipImage};

std::string_view source_name(SourceTag tag);
SourceTag parse_source(std::string_view name);

// L x d_in token (or patch) embeddings of one sample from one source.
struct EmbeddedSequence {
  Tensor tokens;
  SourceTag source = SourceTag::kTextTokens;

  std::size_t length() const { return tokens.rows(); }
  std::size_t dim() const { return tokens.cols(); }
};

// Several samples' sequences from one source stacked row-wise; segment b
// occupies rows [offsets[b], offsets[b+1]).
struct SequenceBatch {
  Tensor tokens;
  std::vector<std::size_t> offsets;
  SourceTag source = SourceTag::kTextTokens;

  std::size_t batch_size() const { return offsets.size() - 1; }
};

SequenceBatch stack_sequences(std::span<const EmbeddedSequence* const> seqs);
SequenceBatch single(const EmbeddedSequence& seq);

// The four inputs of the student for a batch of samples.
struct ViewInputs {
  SequenceBatch text;
  SequenceBatch image;
  SequenceBatch clip_text;
  SequenceBatch clip_image;

  std::size_t batch_size() const { return text.batch_size(); }
};

enum class Pooling { kMean, kFirst };

struct EncoderConfig {
  std::size_t d_in = 32;
  std::size_t d = 36;
  std::size_t heads = 4;  // must divide d_in (the attention width)
  Pooling pooling = Pooling::kMean;
  // false replaces attention by plain pooling (and co-attention by
  // pooling + concatenation).
  bool use_attention = true;

  void validate() const;
};

// Multi-head attention projections over width w. Q/K/V are bias-free; the
// output projection carries a bias.
struct AttentionBlock {
  Tensor wq, wk, wv, wo, bo;
};

struct SelfAttentionEncoder {
  AttentionBlock attn;
  Tensor w_out, b_out;  // d_in -> d
};

// a_to_b: queries from sequence a attend over b; b_to_a the reverse.
struct CoAttentionEncoder {
  AttentionBlock a_to_b;
  AttentionBlock b_to_a;
  Tensor w_out, b_out;  // 2 d_in -> d
};

struct ViewEncoderParams {
  SelfAttentionEncoder text;
  SelfAttentionEncoder image;
  CoAttentionEncoder cross;
};

ViewEncoderParams make_view_encoder(ParameterStore& store, const EncoderConfig& cfg);

using ViewFeatures = PerView<Tensor>;

// Self-attention over positions, pooling, projection to d. [B x d].
Tensor self_attention_pool(const SequenceBatch& seq, const SelfAttentionEncoder& enc,
                           const EncoderConfig& cfg, AttentionTrace* trace = nullptr);
// Single-sample form; seq.source must be text-tokens for the text view and
// image-patches for the image view. Returns [d].
Tensor self_attention_pool(const EmbeddedSequence& seq, const ViewEncoderParams& params,
                           View view, const EncoderConfig& cfg);

// Bidirectional cross-attention between a (clip-image) and b (clip-text),
// each direction pooled, concatenated, projected to d. [B x d].
Tensor co_attention(const SequenceBatch& a, const SequenceBatch& b,
                    const CoAttentionEncoder& enc, const EncoderConfig& cfg);
Tensor co_attention(const EmbeddedSequence& a, const EmbeddedSequence& b,
                    const ViewEncoderParams& params, const EncoderConfig& cfg);

ViewFeatures encode_views(const ViewInputs& inputs, const ViewEncoderParams& params,
                          const EncoderConfig& cfg);

}  // namespace mrd::views
