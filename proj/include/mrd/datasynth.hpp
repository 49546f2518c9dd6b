#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrd/common.hpp"
#include "mrd/teacher.hpp"
#include "mrd/views.hpp"

namespace mrd::data {

// Generation trace of a synthetic sample (not serialized).
struct SyntheticLatent {
  std::vector<std::size_t> concepts;             // shared by text, image, clip-text
  std::vector<std::size_t> clip_image_concepts;  // differs only for cross-mismatch
};

struct Sample {
  std::string id;
  int label = kReal;
  Corruption corruption = Corruption::kNone;
  views::EmbeddedSequence text;
  views::EmbeddedSequence image;
  views::EmbeddedSequence clip_text;
  views::EmbeddedSequence clip_image;
  std::optional<teacher::TeacherEmbeddings> teacher;
  std::optional<SyntheticLatent> latent;

  const views::EmbeddedSequence& sequence(views::SourceTag tag) const;
  views::EmbeddedSequence& sequence(views::SourceTag tag);
};

// Throws ValidationError when label and corruption disagree or a sequence
// is empty.
void validate_sample(const Sample& s);

struct CorruptionMix {
  double text_fabrication = 1.0 / 3.0;
  double image_artifact = 1.0 / 3.0;
  double cross_mismatch = 1.0 / 3.0;
};

struct SyntheticConfig {
  std::size_t n_samples = 2500;
  double fake_fraction = 0.5;
  CorruptionMix mix;
  std::size_t d_in = 32;
  std::size_t len_text = 8;
  std::size_t len_image = 8;
  std::size_t len_clip = 4;
  // Content: every sample mentions `concepts_per_sample` concepts out of a
  // vocabulary of `n_concepts`; remaining positions are filler tokens.
  std::size_t n_concepts = 16;
  std::size_t concepts_per_sample = 2;
  double concept_scale = 20.0;
  double salience = 1.0;  // shared offset of concept tokens over fillers
  // Student-side corruption: shifts of size `signal` along a fixed
  // direction on `corrupt_tokens` positions, with alternating signs so the
  // sequence mean moves by at most one shift; token noise `noise`.
  double signal = 15.0;
  std::size_t corrupt_tokens = 2;
  double noise = 1.0;
  // Teacher side (synthetic oracle).
  std::size_t d = 36;
  double teacher_class_scale = 2.0;
  double teacher_corruption_scale = 20.0;
  double teacher_snr_ratio = 4.0;  // teacher SNR / student SNR, >= 4
  std::uint64_t seed = 0;
  // Index of the first generated sample. Sample streams and ids follow the
  // index, so sets generated at disjoint index ranges share the world
  // (concepts, maps, directions) but no sample draws.
  std::size_t first_index = 0;

  void validate() const;
  double student_snr() const;
  // Teacher noise sigma giving SNR = teacher_snr_ratio * student_snr.
  double teacher_noise() const;
};

// Seed-deterministic dataset with synthetic teacher embeddings attached.
std::vector<Sample> generate_dataset(const SyntheticConfig& cfg);

// The oracle the generator uses for cfg; also serves gen-teacher mock mode.
teacher::TeacherOracle make_teacher_oracle(const SyntheticConfig& cfg);
std::uint64_t teacher_seed(const SyntheticConfig& cfg, std::size_t index);

// --- features file ----------------------------------------------------------

void save_features_file(const std::filesystem::path& path, const std::vector<Sample>& samples);
// Teacher embeddings are not part of the file; attach them separately.
std::vector<Sample> load_features_file(const std::filesystem::path& path);

// Attaches embeddings by sample id; ValidationError names any sample
// without an entry.
void attach_teacher(std::vector<Sample>& samples,
                    const std::map<std::string, teacher::TeacherEmbeddings>& embeddings);

// --- split ------------------------------------------------------------------

struct Split {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// Label-stratified, seed-deterministic partition; original order is kept
// inside each part.
Split split(const std::vector<Sample>& dataset, double train_fraction, double test_fraction,
            std::uint64_t seed);

// Compact text rendering of a sequence's content, one character per token
// (its strongest coordinate and sign). Used as prompt-less teacher input.
std::string describe_sequence(const views::EmbeddedSequence& seq);

}  // namespace mrd::data
