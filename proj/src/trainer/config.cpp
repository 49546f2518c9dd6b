#include "mrd/trainer/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "mrd/error.hpp"
#include "mrd/io.hpp"

namespace mrd::trainer {

bool Ablation::any() const {
  return drop_l_text || drop_l_image || drop_l_cross || drop_text_view || drop_image_view ||
         no_teacher || no_reasoning_prompts || no_feature_extractors || no_attention;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) fail("tau must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (d == 0 || d_in == 0) fail("d and d_in must be positive");
  if (heads == 0 || d % heads != 0) {
    fail("heads = " + std::to_string(heads) + " does not divide d = " + std::to_string(d));
  }
  if (enc_heads == 0 || d_in % enc_heads != 0) {
    fail("enc_heads = " + std::to_string(enc_heads) + " does not divide d_in = " +
         std::to_string(d_in));
  }
  if (d_h < d) fail("d_h must be >= d");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(eps > 0.0)) fail("eps must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (ablation.no_feature_extractors && d_in > d) {
    fail("no_feature_extractors_mode needs d_in <= d");
  }
}

model::ModelConfig TrainConfig::model_config() const {
  model::ModelConfig m;
  m.d_in = d_in;
  m.d = d;
  m.d_h = d_h;
  m.heads = heads;
  m.enc_heads = enc_heads;
  m.pooling = pooling;
  m.use_attention = !ablation.no_attention;
  m.use_encoders = !ablation.no_feature_extractors;
  m.view_enabled.text = !ablation.drop_text_view;
  m.view_enabled.image = !ablation.drop_image_view;
  m.zero_correction_init = zero_correction_init;
  m.seed = seed;
  return m;
}

double TrainConfig::effective_lambda() const { return ablation.no_teacher ? 0.0 : lambda; }

model::LossOptions TrainConfig::loss_options() const {
  model::LossOptions o;
  o.lambda = effective_lambda();
  o.distill.tau = tau;
  o.distill.alpha = alpha;
  o.distill.enabled.text = !ablation.drop_l_text;
  o.distill.enabled.image = !ablation.drop_l_image;
  o.distill.enabled.cross = !ablation.drop_l_cross;
  return o;
}

void RunConfig::validate() const {
  train.validate();
  data.validate();
  if (data.d != train.d || data.d_in != train.d_in) {
    throw ConfigError("data.d / data.d_in must match d / d_in");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
}

namespace {

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

double to_double(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw ConfigError("'" + s + "' is not a number");
  }
  return v;
}

std::uint64_t to_unsigned(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("'" + s + "' is not a non-negative integer");
  }
  errno = 0;
  const auto v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno == ERANGE) throw ConfigError("'" + s + "' is out of range");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("'" + s + "' is not a boolean");
}

template <class Get>
Field real(std::string key, Get ref) {
  return {key, [ref](RunConfig& c, const std::string& v) { ref(c) = to_double(v); },
          [ref](const RunConfig& c) { return io::format_real(ref(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field count(std::string key, Get ref) {
  return {key,
          [ref](RunConfig& c, const std::string& v) {
            ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(to_unsigned(v));
          },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field flag(std::string key, Get ref) {
  return {key, [ref](RunConfig& c, const std::string& v) { ref(c) = to_bool(v); },
          [ref](const RunConfig& c) {
            return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false");
          }};
}

template <class Get>
Field text(std::string key, Get ref) {
  return {key, [ref](RunConfig& c, const std::string& v) { ref(c) = v; },
          [ref](const RunConfig& c) {
            return std::string(ref(const_cast<RunConfig&>(c)));
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(real("lambda", [](RunConfig& c) -> double& { return c.train.lambda; }));
    f.push_back(real("tau", [](RunConfig& c) -> double& { return c.train.tau; }));
    f.push_back(real("alpha", [](RunConfig& c) -> double& { return c.train.alpha; }));
    f.push_back(count("heads", [](RunConfig& c) -> std::size_t& { return c.train.heads; }));
    f.push_back(count("enc_heads", [](RunConfig& c) -> std::size_t& { return c.train.enc_heads; }));
    f.push_back({"d_in",
                 [](RunConfig& c, const std::string& v) {
                   c.train.d_in = c.data.d_in = to_unsigned(v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.train.d_in); }});
    f.push_back({"d",
                 [](RunConfig& c, const std::string& v) { c.train.d = c.data.d = to_unsigned(v); },
                 [](const RunConfig& c) { return std::to_string(c.train.d); }});
    f.push_back(count("d_h", [](RunConfig& c) -> std::size_t& { return c.train.d_h; }));
    f.push_back(real("lr", [](RunConfig& c) -> double& { return c.train.lr; }));
    f.push_back(real("beta1", [](RunConfig& c) -> double& { return c.train.beta1; }));
    f.push_back(real("beta2", [](RunConfig& c) -> double& { return c.train.beta2; }));
    f.push_back(real("eps", [](RunConfig& c) -> double& { return c.train.eps; }));
    f.push_back(real("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }));
    f.push_back(count("epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; }));
    f.push_back(count("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
    f.push_back(count("seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
    f.push_back({"pooling",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "mean") c.train.pooling = views::Pooling::kMean;
                   else if (v == "first") c.train.pooling = views::Pooling::kFirst;
                   else throw ConfigError("pooling must be 'mean' or 'first'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.pooling == views::Pooling::kMean ? "mean" : "first");
                 }});
    f.push_back(flag("zero_correction_init",
                     [](RunConfig& c) -> bool& { return c.train.zero_correction_init; }));
    f.push_back(flag("debug_checks", [](RunConfig& c) -> bool& { return c.train.debug_checks; }));
    f.push_back(flag("drop_L_text", [](RunConfig& c) -> bool& { return c.train.ablation.drop_l_text; }));
    f.push_back(flag("drop_L_image", [](RunConfig& c) -> bool& { return c.train.ablation.drop_l_image; }));
    f.push_back(flag("drop_L_cross", [](RunConfig& c) -> bool& { return c.train.ablation.drop_l_cross; }));
    f.push_back(flag("drop_text_view",
                     [](RunConfig& c) -> bool& { return c.train.ablation.drop_text_view; }));
    f.push_back(flag("drop_image_view",
                     [](RunConfig& c) -> bool& { return c.train.ablation.drop_image_view; }));
    f.push_back(flag("no_teacher", [](RunConfig& c) -> bool& { return c.train.ablation.no_teacher; }));
    f.push_back(flag("no_reasoning_prompts_mode",
                     [](RunConfig& c) -> bool& { return c.train.ablation.no_reasoning_prompts; }));
    f.push_back(flag("no_feature_extractors_mode",
                     [](RunConfig& c) -> bool& { return c.train.ablation.no_feature_extractors; }));
    f.push_back(flag("no_attention_mode",
                     [](RunConfig& c) -> bool& { return c.train.ablation.no_attention; }));
    f.push_back(real("train_fraction", [](RunConfig& c) -> double& { return c.train_fraction; }));
    f.push_back(count("split_seed", [](RunConfig& c) -> std::uint64_t& { return c.split_seed; }));
    f.push_back({"prompts_dir", [](RunConfig& c, const std::string& v) { c.prompts_dir = v; },
                 [](const RunConfig& c) { return c.prompts_dir.string(); }});

    f.push_back(count("data.n_samples", [](RunConfig& c) -> std::size_t& { return c.data.n_samples; }));
    f.push_back(real("data.fake_fraction", [](RunConfig& c) -> double& { return c.data.fake_fraction; }));
    f.push_back(real("data.mix.text_fabrication",
                     [](RunConfig& c) -> double& { return c.data.mix.text_fabrication; }));
    f.push_back(real("data.mix.image_artifact",
                     [](RunConfig& c) -> double& { return c.data.mix.image_artifact; }));
    f.push_back(real("data.mix.cross_mismatch",
                     [](RunConfig& c) -> double& { return c.data.mix.cross_mismatch; }));
    f.push_back(count("data.len_text", [](RunConfig& c) -> std::size_t& { return c.data.len_text; }));
    f.push_back(count("data.len_image", [](RunConfig& c) -> std::size_t& { return c.data.len_image; }));
    f.push_back(count("data.len_clip", [](RunConfig& c) -> std::size_t& { return c.data.len_clip; }));
    f.push_back(count("data.n_concepts", [](RunConfig& c) -> std::size_t& { return c.data.n_concepts; }));
    f.push_back(count("data.concepts_per_sample",
                      [](RunConfig& c) -> std::size_t& { return c.data.concepts_per_sample; }));
    f.push_back(real("data.concept_scale", [](RunConfig& c) -> double& { return c.data.concept_scale; }));
    f.push_back(real("data.salience", [](RunConfig& c) -> double& { return c.data.salience; }));
    f.push_back(real("data.signal", [](RunConfig& c) -> double& { return c.data.signal; }));
    f.push_back(count("data.corrupt_tokens",
                      [](RunConfig& c) -> std::size_t& { return c.data.corrupt_tokens; }));
    f.push_back(real("data.noise", [](RunConfig& c) -> double& { return c.data.noise; }));
    f.push_back(real("data.teacher_class_scale",
                     [](RunConfig& c) -> double& { return c.data.teacher_class_scale; }));
    f.push_back(real("data.teacher_corruption_scale",
                     [](RunConfig& c) -> double& { return c.data.teacher_corruption_scale; }));
    f.push_back(real("data.teacher_snr_ratio",
                     [](RunConfig& c) -> double& { return c.data.teacher_snr_ratio; }));
    f.push_back(count("data.seed", [](RunConfig& c) -> std::uint64_t& { return c.data.seed; }));
    f.push_back(count("data.first_index",
                      [](RunConfig& c) -> std::size_t& { return c.data.first_index; }));

    f.push_back(text("teacher.endpoint", [](RunConfig& c) -> std::string& { return c.teacher.endpoint; }));
    f.push_back(text("teacher.model", [](RunConfig& c) -> std::string& { return c.teacher.model; }));
    f.push_back({"teacher.retries",
                 [](RunConfig& c, const std::string& v) {
                   c.teacher.retries = static_cast<int>(to_unsigned(v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.teacher.retries); }});
    f.push_back({"teacher.timeout_ms",
                 [](RunConfig& c, const std::string& v) {
                   c.teacher.timeout_ms = static_cast<int>(to_unsigned(v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.teacher.timeout_ms); }});
    f.push_back({"teacher.retry_backoff_ms",
                 [](RunConfig& c, const std::string& v) {
                   c.teacher.retry_backoff_ms = static_cast<int>(to_unsigned(v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.teacher.retry_backoff_ms); }});
    f.push_back({"teacher.cache_dir", [](RunConfig& c, const std::string& v) { c.teacher.cache_dir = v; },
                 [](const RunConfig& c) { return c.teacher.cache_dir.string(); }});
    f.push_back(count("teacher.max_in_flight",
                      [](RunConfig& c) -> std::size_t& { return c.teacher.max_in_flight; }));
    f.push_back(count("teacher.d_t", [](RunConfig& c) -> std::size_t& { return c.teacher.d_t; }));
    f.push_back(count("teacher.embed_seed",
                      [](RunConfig& c) -> std::uint64_t& { return c.teacher.embed_seed; }));
    return f;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(number) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(io::read_file(path)); }

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace mrd::trainer
