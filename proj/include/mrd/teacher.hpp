#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mrd/common.hpp"

namespace mrd::teacher {

// The teacher's three reasoning vectors f'_v at student dimension d. Always
// gradient-free.
using TeacherEmbeddings = PerView<Tensor>;

struct ReasoningRecord {
  std::string sample_id;
  View view = View::kText;
  std::string chain;                   // the generated explanation
  std::vector<double> raw_embedding;   // length d_t
};

// Fixed map from the teacher's embedding space (d_t) to the student's (d).
// A seeded spec holds i.i.d. N(0, 1/d_t) entries; an identity spec (no
// seed) requires d_t == d.
struct ProjectionSpec {
  std::size_t d_t = 0;
  std::size_t d = 0;
  std::optional<std::uint64_t> seed;
  std::vector<double> matrix;  // d_t x d, row-major

  static ProjectionSpec seeded(std::size_t d_t, std::size_t d, std::uint64_t seed);
  static ProjectionSpec identity(std::size_t d);
};

// raw * matrix as a gradient-free [d] tensor.
Tensor project_teacher(std::span<const double> raw, const ProjectionSpec& spec);

// --- teacher file -----------------------------------------------------------

struct TeacherFileHeader {
  std::size_t d_t = 0;
  std::size_t d = 0;
  std::optional<std::uint64_t> projection_seed;  // null in the file = identity
  int format_version = 1;
};

struct TeacherValidationReport {
  std::vector<std::string> missing_samples;  // expected but absent
  std::vector<std::string> extra_samples;    // present but not expected
  std::size_t records = 0;
};

struct TeacherData {
  TeacherFileHeader header;
  std::vector<ReasoningRecord> records;
  std::map<std::string, TeacherEmbeddings> embeddings;  // projected
  TeacherValidationReport report;
};

void save_teacher_file(const std::filesystem::path& path, const TeacherFileHeader& header,
                       const std::vector<ReasoningRecord>& records);

// Every sample_id must carry all three views (ValidationError naming the
// sample and view otherwise); embedding lengths must equal d_t
// (FormatError). When `expected` is given, the report lists the ids missing
// from / extra to that set.
TeacherData load_teacher_file(const std::filesystem::path& path,
                              const std::set<std::string>* expected = nullptr);

// --- deterministic fallback embedder ---------------------------------------

// Seeded feature hashing of byte 3-grams into d_t signed buckets, then L2
// normalization. Strings shorter than three bytes embed to the zero vector.
std::vector<double> fallback_embed(const std::string& chain, std::size_t d_t, std::uint64_t seed);

// Bucket and sign for one 3-gram under `seed`; exposed for inspection.
struct GramSlot {
  std::size_t bucket;
  double sign;
};
GramSlot hash_gram(std::string_view gram, std::size_t d_t, std::uint64_t seed);

// --- synthetic teacher ------------------------------------------------------

// Fixed seeded unit directions in R^d used by the synthetic teacher.
struct TeacherOracle {
  std::size_t d = 0;
  double class_scale = 3.0;
  double corruption_scale = 3.0;
  std::vector<double> class_direction;
  PerView<std::vector<double>> corruption_direction;  // indexed by target view

  static TeacherOracle make(std::size_t d, std::uint64_t seed, double class_scale,
                            double corruption_scale);
};

// f'_v = s_y * class_scale * c + [corruption targets v] * corruption_scale * u
//        + N(0, noise_sigma^2)
// with s_y = +1 for real and -1 for fake.
TeacherEmbeddings synthetic_teacher_oracle(const TeacherOracle& oracle, Corruption corruption,
                                           int label, double noise_sigma, std::uint64_t seed);

// Records for a synthetic teacher (empty chains, identity projection).
std::vector<ReasoningRecord> oracle_records(const std::string& sample_id,
                                            const TeacherEmbeddings& emb);

}  // namespace mrd::teacher
