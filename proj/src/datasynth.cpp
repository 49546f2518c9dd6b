#include "mrd/datasynth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "mrd/error.hpp"
#include "mrd/io.hpp"
#include "mrd/random.hpp"

namespace mrd::data {

using views::EmbeddedSequence;
using views::SourceTag;

const EmbeddedSequence& Sample::sequence(SourceTag tag) const {
  switch (tag) {
    case SourceTag::kTextTokens: return text;
    case SourceTag::kImagePatches: return image;
    case SourceTag::kClipText: return clip_text;
    default: return clip_image;
  }
}

EmbeddedSequence& Sample::sequence(SourceTag tag) {
  return const_cast<EmbeddedSequence&>(std::as_const(*this).sequence(tag));
}

void validate_sample(const Sample& s) {
  if ((s.label == kFake) != (s.corruption != Corruption::kNone) ||
      (s.label != kReal && s.label != kFake)) {
    throw ValidationError("sample " + s.id + ": label " + std::to_string(s.label) +
                          " inconsistent with corruption " +
                          std::string(corruption_name(s.corruption)));
  }
  for (auto tag : views::kAllSources) {
    const auto& seq = s.sequence(tag);
    if (!seq.tokens.defined() || seq.tokens.rank() != 2 || seq.length() == 0) {
      throw ValidationError("sample " + s.id + ": " + std::string(views::source_name(tag)) +
                            " sequence is empty");
    }
  }
}

void SyntheticConfig::validate() const {
  const double total = mix.text_fabrication + mix.image_artifact + mix.cross_mismatch;
  if (mix.text_fabrication < 0 || mix.image_artifact < 0 || mix.cross_mismatch < 0 ||
      std::abs(total - 1.0) > 1e-9) {
    throw ParameterError("corruption mix must be non-negative and sum to 1, got sum " +
                         std::to_string(total));
  }
  if (!(fake_fraction >= 0.0 && fake_fraction <= 1.0)) {
    throw ParameterError("fake_fraction must lie in [0, 1]");
  }
  if (d_in == 0 || d == 0) throw ParameterError("dimensions must be positive");
  if (len_text == 0 || len_image == 0 || len_clip == 0) {
    throw ParameterError("sequence lengths must be positive");
  }
  const std::size_t shortest = std::min({len_text, len_image, len_clip});
  if (concepts_per_sample == 0 || concepts_per_sample > shortest ||
      2 * concepts_per_sample > n_concepts) {
    throw ParameterError("concepts_per_sample must fit every sequence and leave room for a "
                         "disjoint mismatched set");
  }
  if (corrupt_tokens == 0 || corrupt_tokens > std::min(len_text, len_image)) {
    throw ParameterError("corrupt_tokens must lie in [1, min(len_text, len_image)]");
  }
  if (!(signal >= 0.0) || !(noise >= 0.0) || !(concept_scale >= 0.0)) {
    throw ParameterError("signal, noise and concept_scale must be non-negative");
  }
  if (!(teacher_snr_ratio >= 4.0)) {
    throw ParameterError("teacher_snr_ratio must be at least 4, got " +
                         std::to_string(teacher_snr_ratio));
  }
}

double SyntheticConfig::student_snr() const {
  return noise > 0.0 ? signal / noise : std::numeric_limits<double>::infinity();
}

double SyntheticConfig::teacher_noise() const {
  const double snr = student_snr();
  if (!std::isfinite(snr) || snr == 0.0) return 0.0;
  return teacher_corruption_scale / (teacher_snr_ratio * snr);
}

namespace {

enum Stream : std::uint64_t {
  kWorldStream = 1,
  kAssignStream = 2,
  kSampleStream = 3,
  kTeacherStream = 4,
  kOracleStream = 5,
  kSplitStream = 6,
};

std::vector<double> unit(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double n = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

// Fixed structure shared by all samples of a dataset.
struct World {
  std::vector<std::vector<double>> concepts;  // in latent space
  std::vector<double> salient;
  std::array<std::vector<double>, 4> maps;  // per source, d_in x d_in
  std::vector<double> text_direction;
  std::vector<double> image_direction;
};

World make_world(const SyntheticConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kWorldStream));
  World w;
  for (std::size_t c = 0; c < cfg.n_concepts; ++c) {
    auto u = unit(rng, cfg.d_in);
    for (auto& x : u) x *= cfg.concept_scale;
    w.concepts.push_back(std::move(u));
  }
  w.salient = unit(rng, cfg.d_in);
  const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.d_in));
  for (auto& m : w.maps) {
    m.resize(cfg.d_in * cfg.d_in);
    for (auto& x : m) x = rng.normal() * sd;
  }
  w.text_direction = unit(rng, cfg.d_in);
  w.image_direction = unit(rng, cfg.d_in);
  return w;
}

std::vector<std::size_t> draw_concepts(Rng& rng, std::size_t n, std::size_t k,
                                       const std::set<std::size_t>& exclude) {
  std::vector<std::size_t> out;
  while (out.size() < k) {
    const auto c = rng.index(n);
    if (exclude.count(c) || std::find(out.begin(), out.end(), c) != out.end()) continue;
    out.push_back(c);
  }
  return out;
}

// Concept tokens carry M (e_c + salience * g); fillers carry only noise.
Tensor make_tokens(Rng& rng, const SyntheticConfig& cfg, const World& w, SourceTag source,
                   std::size_t length, const std::vector<std::size_t>& concepts) {
  const std::size_t d = cfg.d_in;
  // clip-text and clip-image live in one aligned space and share a map.
  const auto& map =
      w.maps[source == SourceTag::kClipImage ? static_cast<std::size_t>(SourceTag::kClipText)
                                              : static_cast<std::size_t>(source)];
  std::vector<std::size_t> positions(length);
  std::iota(positions.begin(), positions.end(), 0);
  for (std::size_t i = length; i > 1; --i) std::swap(positions[i - 1], positions[rng.index(i)]);

  std::vector<double> values(length * d, 0.0);
  std::vector<double> latent(d);
  for (std::size_t c = 0; c < concepts.size(); ++c) {
    const auto& e = w.concepts[concepts[c]];
    for (std::size_t i = 0; i < d; ++i) latent[i] = e[i] + cfg.salience * w.salient[i];
    double* row = values.data() + positions[c] * d;
    for (std::size_t i = 0; i < d; ++i) {
      const double li = latent[i];
      const double* m = map.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += li * m[j];
    }
  }
  for (auto& x : values) x += cfg.noise * rng.normal();
  return Tensor::matrix(length, d, std::move(values));
}

void plant(Rng& rng, Tensor& tokens, const std::vector<double>& direction, double signal,
           std::size_t count) {
  const std::size_t length = tokens.rows(), d = tokens.cols();
  std::vector<std::size_t> positions(length);
  std::iota(positions.begin(), positions.end(), 0);
  for (std::size_t i = length; i > 1; --i) std::swap(positions[i - 1], positions[rng.index(i)]);
  auto v = tokens.mutable_values();
  for (std::size_t k = 0; k < count; ++k) {
    double* row = v.data() + positions[k] * d;
    const double shift = k % 2 == 0 ? signal : -signal;
    for (std::size_t j = 0; j < d; ++j) row[j] += shift * direction[j];
  }
}

std::string sample_id(std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
  return "s" + digits;
}

}  // namespace

teacher::TeacherOracle make_teacher_oracle(const SyntheticConfig& cfg) {
  return teacher::TeacherOracle::make(cfg.d, derive_seed(cfg.seed, kOracleStream),
                                      cfg.teacher_class_scale, cfg.teacher_corruption_scale);
}

std::uint64_t teacher_seed(const SyntheticConfig& cfg, std::size_t index) {
  return derive_seed(cfg.seed, kTeacherStream, index);
}

std::vector<Sample> generate_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  const World world = make_world(cfg);
  const auto oracle = make_teacher_oracle(cfg);

  // Exact class balance and corruption proportions (largest remainder).
  const std::size_t n = cfg.n_samples;
  const auto n_fake = static_cast<std::size_t>(std::llround(cfg.fake_fraction * n));
  const double shares[3] = {cfg.mix.text_fabrication, cfg.mix.image_artifact,
                            cfg.mix.cross_mismatch};
  std::size_t counts[3];
  double frac[3];
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = shares[k] * static_cast<double>(n_fake);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    frac[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  while (assigned < n_fake) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (frac[k] > frac[best]) best = k;
    }
    ++counts[best];
    frac[best] = -1.0;
    ++assigned;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng assign(derive_seed(cfg.seed, kAssignStream));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[assign.index(i)]);
  std::vector<Corruption> corruption(n, Corruption::kNone);
  {
    std::size_t pos = 0;
    const Corruption types[3] = {Corruption::kTextFabrication, Corruption::kImageArtifact,
                                 Corruption::kCrossMismatch};
    for (int k = 0; k < 3; ++k) {
      for (std::size_t c = 0; c < counts[k]; ++c) corruption[order[pos++]] = types[k];
    }
  }

  const double t_noise = cfg.teacher_noise();
  std::vector<Sample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t index = cfg.first_index + i;
    Rng rng(derive_seed(cfg.seed, kSampleStream, index));
    Sample& s = out[i];
    s.id = sample_id(index);
    s.corruption = corruption[i];
    s.label = corruption[i] == Corruption::kNone ? kReal : kFake;

    SyntheticLatent latent;
    latent.concepts = draw_concepts(rng, cfg.n_concepts, cfg.concepts_per_sample, {});
    latent.clip_image_concepts = latent.concepts;
    if (s.corruption == Corruption::kCrossMismatch) {
      const std::set<std::size_t> own(latent.concepts.begin(), latent.concepts.end());
      latent.clip_image_concepts =
          draw_concepts(rng, cfg.n_concepts, cfg.concepts_per_sample, own);
    }
    s.text = {make_tokens(rng, cfg, world, SourceTag::kTextTokens, cfg.len_text, latent.concepts),
              SourceTag::kTextTokens};
    s.image = {make_tokens(rng, cfg, world, SourceTag::kImagePatches, cfg.len_image,
                           latent.concepts),
               SourceTag::kImagePatches};
    s.clip_text = {make_tokens(rng, cfg, world, SourceTag::kClipText, cfg.len_clip,
                               latent.concepts),
                   SourceTag::kClipText};
    s.clip_image = {make_tokens(rng, cfg, world, SourceTag::kClipImage, cfg.len_clip,
                                latent.clip_image_concepts),
                    SourceTag::kClipImage};
    if (s.corruption == Corruption::kTextFabrication) {
      plant(rng, s.text.tokens, world.text_direction, cfg.signal, cfg.corrupt_tokens);
    } else if (s.corruption == Corruption::kImageArtifact) {
      plant(rng, s.image.tokens, world.image_direction, cfg.signal, cfg.corrupt_tokens);
    }
    s.latent = std::move(latent);
    s.teacher = teacher::synthetic_teacher_oracle(oracle, s.corruption, s.label, t_noise,
                                                  teacher_seed(cfg, index));
  }
  return out;
}

// --- features file ----------------------------------------------------------

void save_features_file(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ostringstream out;
  out << "{\"d_in\":{";
  for (std::size_t k = 0; k < views::kAllSources.size(); ++k) {
    const auto tag = views::kAllSources[k];
    const std::size_t d = samples.empty() ? 0 : samples[0].sequence(tag).dim();
    out << (k ? "," : "") << '"' << views::source_name(tag) << "\":" << d;
  }
  out << "},\"format_version\":1}\n";
  for (const auto& s : samples) {
    for (auto tag : views::kAllSources) {
      const auto& seq = s.sequence(tag);
      out << "{\"sample_id\":" << io::quote(s.id) << ",\"label\":" << s.label
          << ",\"corruption\":\"" << corruption_name(s.corruption) << "\",\"source_tag\":\""
          << views::source_name(tag) << "\",\"tokens\":[";
      const auto v = seq.tokens.values();
      for (std::size_t r = 0; r < seq.length(); ++r) {
        out << (r ? "," : "") << io::format_real_array(v.subspan(r * seq.dim(), seq.dim()));
      }
      out << "]}\n";
    }
  }
  io::write_file_atomic(path, out.str());
}

std::vector<Sample> load_features_file(const std::filesystem::path& path) {
  using nlohmann::json;
  const auto lines = io::read_lines(path);
  std::size_t first = 0;
  while (first < lines.size() && lines[first].empty()) ++first;
  if (first == lines.size()) return {};

  std::map<SourceTag, std::size_t> d_in;
  try {
    const json h = json::parse(lines[first]);
    const int version = h.at("format_version").get<int>();
    if (version != 1) {
      throw VersionError("features file format_version " + std::to_string(version) +
                         " is not supported");
    }
    for (auto& [name, d] : h.at("d_in").items()) d_in[views::parse_source(name)] = d.get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError("features file line " + std::to_string(first + 1) + ": malformed header (" +
                      e.what() + ")");
  }

  std::vector<Sample> out;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::set<SourceTag>> seen;
  for (std::size_t ln = first + 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const std::string where = "features file line " + std::to_string(ln + 1);
    std::string id;
    int label = 0;
    Corruption corruption;
    SourceTag tag;
    std::vector<std::vector<double>> rows;
    try {
      const json j = json::parse(lines[ln]);
      id = j.at("sample_id").get<std::string>();
      label = j.at("label").get<int>();
      corruption = parse_corruption(j.at("corruption").get<std::string>());
      tag = views::parse_source(j.at("source_tag").get<std::string>());
      rows = j.at("tokens").get<std::vector<std::vector<double>>>();
    } catch (const json::exception& e) {
      throw FormatError(where + ": malformed record (" + std::string(e.what()) + ")");
    } catch (const Error& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (rows.empty()) throw FormatError(where + ": sample " + id + " has an empty sequence");
    const std::size_t width = rows[0].size();
    for (const auto& r : rows) {
      if (r.size() != width) throw FormatError(where + ": ragged token rows in sample " + id);
    }
    auto expected = d_in.find(tag);
    if (expected == d_in.end() || expected->second != width) {
      throw FormatError(where + ": sample " + id + " has " + std::string(views::source_name(tag)) +
                        " width " + std::to_string(width) + ", header declares " +
                        (expected == d_in.end() ? std::string("none")
                                                : std::to_string(expected->second)));
    }
    auto [it, inserted] = index.try_emplace(id, out.size());
    if (inserted) {
      out.emplace_back();
      out.back().id = id;
      out.back().label = label;
      out.back().corruption = corruption;
    }
    Sample& s = out[it->second];
    if (s.label != label || s.corruption != corruption) {
      throw FormatError(where + ": sample " + id + " has inconsistent label or corruption");
    }
    if (!seen[id].insert(tag).second) {
      throw FormatError(where + ": duplicate " + std::string(views::source_name(tag)) +
                        " record for sample " + id);
    }
    std::vector<double> flat;
    flat.reserve(rows.size() * width);
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    s.sequence(tag) = EmbeddedSequence{Tensor::matrix(rows.size(), width, std::move(flat)), tag};
  }
  for (const auto& s : out) {
    for (auto tag : views::kAllSources) {
      if (!seen[s.id].count(tag)) {
        throw FormatError("features file: sample " + s.id + " lacks a " +
                          std::string(views::source_name(tag)) + " record");
      }
    }
    validate_sample(s);
  }
  return out;
}

void attach_teacher(std::vector<Sample>& samples,
                    const std::map<std::string, teacher::TeacherEmbeddings>& embeddings) {
  for (auto& s : samples) {
    auto it = embeddings.find(s.id);
    if (it == embeddings.end()) {
      throw ValidationError("no teacher embeddings for sample " + s.id);
    }
    s.teacher = it->second;
  }
}

Split split(const std::vector<Sample>& dataset, double train_fraction, double test_fraction,
            std::uint64_t seed) {
  if (train_fraction < 0.0 || test_fraction < 0.0 ||
      std::abs(train_fraction + test_fraction - 1.0) > 1e-9) {
    throw ParameterError("split fractions must be non-negative and sum to 1");
  }
  std::vector<bool> to_train(dataset.size(), false);
  for (int label : {kReal, kFake}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset[i].label == label) members.push_back(i);
    }
    Rng rng(derive_seed(seed, kSplitStream, static_cast<std::uint64_t>(label)));
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[rng.index(i)]);
    }
    const auto n_train =
        static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < n_train; ++k) to_train[members[k]] = true;
  }
  Split out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (to_train[i] ? out.train : out.test).push_back(dataset[i]);
  }
  return out;
}

std::string describe_sequence(const EmbeddedSequence& seq) {
  static const char* alphabet =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789+/";
  std::string out;
  const auto v = seq.tokens.values();
  const std::size_t d = seq.dim();
  for (std::size_t r = 0; r < seq.length(); ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::abs(v[r * d + j]) > std::abs(v[r * d + best])) best = j;
    }
    const std::size_t code = (best % 32) * 2 + (v[r * d + best] < 0 ? 1 : 0);
    out += alphabet[code];
  }
  return out;
}

}  // namespace mrd::data
