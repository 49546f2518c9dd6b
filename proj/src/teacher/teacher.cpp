#include "mrd/teacher.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

#include "mrd/error.hpp"
#include "mrd/io.hpp"
#include "mrd/random.hpp"

namespace mrd::teacher {

using nlohmann::json;

ProjectionSpec ProjectionSpec::seeded(std::size_t d_t, std::size_t d, std::uint64_t seed) {
  if (d_t == 0 || d == 0) throw ParameterError("projection dimensions must be positive");
  ProjectionSpec spec{d_t, d, seed, std::vector<double>(d_t * d)};
  Rng rng(seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d_t));
  for (auto& x : spec.matrix) x = rng.normal() * sd;
  return spec;
}

ProjectionSpec ProjectionSpec::identity(std::size_t d) {
  ProjectionSpec spec{d, d, std::nullopt, std::vector<double>(d * d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) spec.matrix[i * d + i] = 1.0;
  return spec;
}

Tensor project_teacher(std::span<const double> raw, const ProjectionSpec& spec) {
  if (raw.size() != spec.d_t) {
    throw DimensionError("project_teacher: embedding has " + std::to_string(raw.size()) +
                         " entries, projection expects d_t = " + std::to_string(spec.d_t));
  }
  std::vector<double> out(spec.d, 0.0);
  for (std::size_t i = 0; i < spec.d_t; ++i) {
    const double r = raw[i];
    const double* m = spec.matrix.data() + i * spec.d;
    for (std::size_t j = 0; j < spec.d; ++j) out[j] += r * m[j];
  }
  return Tensor::vector(std::move(out));
}

void save_teacher_file(const std::filesystem::path& path, const TeacherFileHeader& header,
                       const std::vector<ReasoningRecord>& records) {
  std::ostringstream out;
  out << "{\"d_t\":" << header.d_t << ",\"d\":" << header.d << ",\"projection_seed\":"
      << (header.projection_seed ? std::to_string(*header.projection_seed) : "null")
      << ",\"format_version\":" << header.format_version << "}\n";
  for (const auto& r : records) {
    if (r.raw_embedding.size() != header.d_t) {
      throw FormatError("record (" + r.sample_id + ", " + std::string(view_name(r.view)) +
                        ") has " + std::to_string(r.raw_embedding.size()) +
                        " embedding entries, header declares d_t = " + std::to_string(header.d_t));
    }
    out << "{\"sample_id\":" << io::quote(r.sample_id) << ",\"view\":\"" << view_name(r.view)
        << "\",\"chain\":" << io::quote(r.chain)
        << ",\"embedding\":" << io::format_real_array(r.raw_embedding) << "}\n";
  }
  io::write_file_atomic(path, out.str());
}

namespace {

TeacherFileHeader parse_header(const std::string& line) {
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError("teacher file line 1: malformed header (" + std::string(e.what()) + ")");
  }
  TeacherFileHeader header;
  try {
    header.format_version = h.at("format_version").get<int>();
    header.d_t = h.at("d_t").get<std::size_t>();
    header.d = h.at("d").get<std::size_t>();
    const auto& seed = h.at("projection_seed");
    if (!seed.is_null()) header.projection_seed = seed.get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError("teacher file line 1: bad header field (" + std::string(e.what()) + ")");
  }
  if (header.format_version != 1) {
    throw VersionError("teacher file format_version " + std::to_string(header.format_version) +
                       " is not supported");
  }
  if (!header.projection_seed && header.d_t != header.d) {
    throw FormatError("teacher file: identity projection requires d_t == d");
  }
  return header;
}

}  // namespace

TeacherData load_teacher_file(const std::filesystem::path& path,
                              const std::set<std::string>* expected) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw FormatError("teacher file " + path.string() + " has no header");
  TeacherData data;
  data.header = parse_header(lines[0]);
  const auto spec = data.header.projection_seed
                        ? ProjectionSpec::seeded(data.header.d_t, data.header.d,
                                                 *data.header.projection_seed)
                        : ProjectionSpec::identity(data.header.d);

  std::map<std::string, PerView<std::optional<std::size_t>>> index;
  std::vector<std::string> order;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const std::string where = "teacher file line " + std::to_string(ln + 1);
    ReasoningRecord rec;
    try {
      const json j = json::parse(lines[ln]);
      rec.sample_id = j.at("sample_id").get<std::string>();
      rec.view = parse_view(j.at("view").get<std::string>());
      rec.chain = j.at("chain").get<std::string>();
      rec.raw_embedding = j.at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw FormatError(where + ": malformed record (" + std::string(e.what()) + ")");
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (rec.raw_embedding.size() != data.header.d_t) {
      throw FormatError(where + ": embedding of (" + rec.sample_id + ", " +
                        std::string(view_name(rec.view)) + ") has " +
                        std::to_string(rec.raw_embedding.size()) + " entries, expected d_t = " +
                        std::to_string(data.header.d_t));
    }
    auto [it, inserted] = index.try_emplace(rec.sample_id);
    if (inserted) order.push_back(rec.sample_id);
    if (it->second[rec.view]) {
      throw ValidationError(where + ": duplicate record (" + rec.sample_id + ", " +
                            std::string(view_name(rec.view)) + ")");
    }
    it->second[rec.view] = data.records.size();
    data.records.push_back(std::move(rec));
  }

  for (const auto& id : order) {
    const auto& slots = index.at(id);
    TeacherEmbeddings emb;
    for (View v : kAllViews) {
      if (!slots[v]) {
        throw ValidationError("teacher file: sample (" + id + ", " + std::string(view_name(v)) +
                              ") is missing");
      }
      emb[v] = project_teacher(data.records[*slots[v]].raw_embedding, spec);
    }
    data.embeddings.emplace(id, std::move(emb));
  }

  data.report.records = data.records.size();
  if (expected) {
    for (const auto& id : *expected) {
      if (!data.embeddings.count(id)) data.report.missing_samples.push_back(id);
    }
    for (const auto& id : order) {
      if (!expected->count(id)) data.report.extra_samples.push_back(id);
    }
  }
  return data;
}

GramSlot hash_gram(std::string_view gram, std::size_t d_t, std::uint64_t seed) {
  const std::uint64_t h = mix64(fnv1a64(gram, 0xcbf29ce484222325ULL ^ mix64(seed)));
  return GramSlot{static_cast<std::size_t>(h % d_t), (h >> 63) ? -1.0 : 1.0};
}

std::vector<double> fallback_embed(const std::string& chain, std::size_t d_t,
                                   std::uint64_t seed) {
  if (d_t < 8) throw ParameterError("fallback_embed: d_t must be at least 8");
  std::vector<double> out(d_t, 0.0);
  if (chain.size() < 3) return out;
  for (std::size_t i = 0; i + 3 <= chain.size(); ++i) {
    const auto slot = hash_gram(std::string_view(chain).substr(i, 3), d_t, seed);
    out[slot.bucket] += slot.sign;
  }
  double norm = 0.0;
  for (double x : out) norm += x * x;
  if (norm == 0.0) return out;  // all grams cancelled
  norm = std::sqrt(norm);
  for (auto& x : out) x /= norm;
  return out;
}

namespace {

std::vector<double> unit_direction(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

TeacherOracle TeacherOracle::make(std::size_t d, std::uint64_t seed, double class_scale,
                                  double corruption_scale) {
  if (d == 0) throw ParameterError("teacher oracle dimension must be positive");
  TeacherOracle o;
  o.d = d;
  o.class_scale = class_scale;
  o.corruption_scale = corruption_scale;
  Rng rng(derive_seed(seed, fnv1a64("teacher-directions")));
  o.class_direction = unit_direction(rng, d);
  for (View v : kAllViews) o.corruption_direction[v] = unit_direction(rng, d);
  return o;
}

TeacherEmbeddings synthetic_teacher_oracle(const TeacherOracle& oracle, Corruption corruption,
                                           int label, double noise_sigma, std::uint64_t seed) {
  if (label != kReal && label != kFake) {
    throw ParameterError("synthetic teacher: label must be 0 or 1, got " + std::to_string(label));
  }
  const auto target = corruption_target(corruption);
  const double sign = label == kReal ? 1.0 : -1.0;
  Rng rng(seed);
  TeacherEmbeddings out;
  for (View v : kAllViews) {
    std::vector<double> e(oracle.d);
    for (std::size_t i = 0; i < oracle.d; ++i) {
      e[i] = sign * oracle.class_scale * oracle.class_direction[i];
      if (target && *target == v) e[i] += oracle.corruption_scale * oracle.corruption_direction[v][i];
    }
    if (noise_sigma > 0.0) {
      for (auto& x : e) x += noise_sigma * rng.normal();
    }
    out[v] = Tensor::vector(std::move(e));
  }
  return out;
}

std::vector<ReasoningRecord> oracle_records(const std::string& sample_id,
                                            const TeacherEmbeddings& emb) {
  std::vector<ReasoningRecord> out;
  for (View v : kAllViews) {
    const auto vals = emb[v].values();
    out.push_back(ReasoningRecord{sample_id, v, "", {vals.begin(), vals.end()}});
  }
  return out;
}

}  // namespace mrd::teacher
