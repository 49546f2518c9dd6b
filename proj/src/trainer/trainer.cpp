#include "mrd/trainer/trainer.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

#include "json.hpp"

#include "mrd/error.hpp"
#include "mrd/io.hpp"
#include "mrd/random.hpp"
#include "mrd/teacher.hpp"

namespace mrd::trainer {

using nlohmann::json;

Adam::Adam(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void Adam::step(std::vector<Parameter>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.size(), 0.0);
      v_.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].tensor.mutable_values();
    const auto grad = params[k].tensor.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i] + weight_decay_ * values[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      values[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// --- report -----------------------------------------------------------------

namespace {

json opt_real(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_opt(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string RunReport::to_json() const {
  json j;
  j["seed"] = seed;
  j["wall_seconds"] = wall_seconds;
  json cfg = json::array();
  for (const auto& [k, v] : config) cfg.push_back({k, v});
  j["config"] = cfg;
  json ep = json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"l_final", e.l_final},
                  {"l_branch", e.l_branch},
                  {"l_dv",
                   {{"text", opt_real(e.l_dv.text)},
                    {"image", opt_real(e.l_dv.image)},
                    {"cross", opt_real(e.l_dv.cross)}}},
                  {"l_c", e.l_c},
                  {"l_total", e.l_total}});
  }
  j["epochs"] = ep;
  if (metrics) {
    j["metrics"] = {{"accuracy", metrics->accuracy},
                    {"f1_fake", metrics->f1_fake},
                    {"f1_real", metrics->f1_real},
                    {"auc", metrics->auc}};
  } else {
    j["metrics"] = nullptr;
  }
  return j.dump();
}

RunReport RunReport::from_json(const std::string& text) {
  RunReport r;
  try {
    const json j = json::parse(text);
    r.seed = j.at("seed").get<std::uint64_t>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    for (const auto& kv : j.at("config")) {
      r.config.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    }
    for (const auto& e : j.at("epochs")) {
      EpochRecord rec;
      rec.epoch = e.at("epoch").get<std::size_t>();
      rec.l_final = e.at("l_final").get<double>();
      rec.l_branch = e.at("l_branch").get<double>();
      for (View v : kAllViews) rec.l_dv[v] = read_opt(e.at("l_dv").at(std::string(view_name(v))));
      rec.l_c = e.at("l_c").get<double>();
      rec.l_total = e.at("l_total").get<double>();
      r.epochs.push_back(rec);
    }
    const auto& m = j.at("metrics");
    if (!m.is_null()) {
      r.metrics = Metrics{m.at("accuracy").get<double>(), m.at("f1_fake").get<double>(),
                          m.at("f1_real").get<double>(), m.at("auc").get<double>()};
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("run report: ") + e.what());
  }
  return r;
}

// --- data preparation -------------------------------------------------------

void apply_prompt_less_teacher(std::vector<data::Sample>& samples, std::size_t d,
                               std::uint64_t seed, std::size_t d_t) {
  const auto spec = teacher::ProjectionSpec::seeded(d_t, d, derive_seed(seed, 1));
  const std::uint64_t embed_seed = derive_seed(seed, 2);
  for (auto& s : samples) {
    const std::string text = data::describe_sequence(s.text);
    const std::string image = data::describe_sequence(s.image);
    const std::string cross =
        data::describe_sequence(s.clip_text) + "|" + data::describe_sequence(s.clip_image);
    teacher::TeacherEmbeddings emb;
    emb.text = teacher::project_teacher(teacher::fallback_embed(text, d_t, embed_seed), spec);
    emb.image = teacher::project_teacher(teacher::fallback_embed(image, d_t, embed_seed), spec);
    emb.cross = teacher::project_teacher(teacher::fallback_embed(cross, d_t, embed_seed), spec);
    s.teacher = std::move(emb);
  }
}

std::vector<data::Sample> prepare_training_data(const TrainConfig& cfg,
                                                const std::vector<data::Sample>& samples) {
  std::vector<data::Sample> out = samples;
  if (cfg.ablation.no_teacher) {
    for (auto& s : out) s.teacher.reset();
  } else if (cfg.ablation.no_reasoning_prompts) {
    apply_prompt_less_teacher(out, cfg.d, fnv1a64("prompt-less teacher"));
  }
  return out;
}

// --- training ---------------------------------------------------------------

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;

void accumulate(EpochRecord& acc, const fusion::LossBreakdown& b) {
  acc.l_final += b.l_final;
  acc.l_branch += b.l_branch;
  acc.l_c += b.l_c;
  acc.l_total += b.l_total;
  for (View v : kAllViews) {
    if (b.l_dv[v]) acc.l_dv[v] = acc.l_dv[v].value_or(0.0) + *b.l_dv[v];
  }
}

void finish(EpochRecord& acc, std::size_t steps) {
  const double n = static_cast<double>(steps);
  acc.l_final /= n;
  acc.l_branch /= n;
  acc.l_c /= n;
  acc.l_total /= n;
  for (View v : kAllViews) {
    if (acc.l_dv[v]) *acc.l_dv[v] /= n;
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>* test_set, const TrainHooks& hooks) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  const auto samples = prepare_training_data(cfg, train_set);
  const auto opts = cfg.loss_options();
  if (opts.lambda > 0.0) {
    for (const auto& s : samples) {
      if (!s.teacher) {
        throw ValidationError("train: sample " + s.id +
                              " has no teacher embeddings (attach them or set no_teacher)");
      }
    }
  }

  model::Model model(cfg.model_config());
  auto& params = model.store().parameters();
  Adam adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
  Rng shuffle(derive_seed(cfg.seed, kShuffleStream));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const data::Sample*> batch_ptrs;

  RunReport report;
  report.seed = cfg.seed;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
    EpochRecord acc;
    acc.epoch = epoch + 1;
    std::size_t epoch_steps = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      batch_ptrs.clear();
      for (std::size_t k = lo; k < hi; ++k) batch_ptrs.push_back(&samples[order[k]]);
      model::Batch batch = model::make_batch(batch_ptrs);
      if (hooks.on_batch) hooks.on_batch(step, batch);

      model.store().zero_grad();
      const auto result = model.losses(batch, opts);
      const auto& breakdown = result.total.breakdown;
      if (cfg.debug_checks && !(breakdown.identity_residual() <= 1e-12)) {
        throw ContractError("loss identity violated at step " + std::to_string(step) +
                            " (residual " + std::to_string(breakdown.identity_residual()) + ")");
      }
      result.total.l_total.backward();
      adam.step(params);
      accumulate(acc, breakdown);
      ++epoch_steps;
      if (hooks.after_step) hooks.after_step(step, model);
      ++step;
    }
    finish(acc, epoch_steps);
    report.epochs.push_back(acc);
  }
  if (test_set) report.metrics = evaluate(model, *test_set);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return TrainResult{std::move(model), std::move(report)};
}

TrainResult train(const RunConfig& run, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>* test_set, const TrainHooks& hooks) {
  auto result = train(run.train, train_set, test_set, hooks);
  result.report.config = config_entries(run);
  return result;
}

Metrics evaluate(const model::Model& model, const std::vector<data::Sample>& test_set) {
  if (test_set.empty()) throw ValidationError("evaluate: empty test set");
  const auto batch = model::make_batch(test_set, false);
  const auto scores = model.fake_scores(batch);
  const auto predicted = model.predict(batch);
  return compute_metrics(batch.labels, predicted, scores);
}

// --- gradient check ---------------------------------------------------------

TrainConfig grad_check_config(std::size_t d, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.d_in = d;
  cfg.d = d;
  cfg.d_h = 2 * d;
  cfg.heads = std::gcd<std::size_t>(d, 4);
  cfg.enc_heads = std::gcd<std::size_t>(d, 2);
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

data::SyntheticConfig grad_check_data(std::size_t d, std::size_t n, std::uint64_t seed) {
  data::SyntheticConfig cfg;
  cfg.n_samples = n;
  cfg.d_in = d;
  cfg.d = d;
  cfg.len_text = 4;
  cfg.len_image = 4;
  cfg.len_clip = 3;
  cfg.seed = seed;
  return cfg;
}

GradCheckReport check_model_gradients(const TrainConfig& cfg,
                                      const std::vector<data::Sample>& batch, double h,
                                      double tol) {
  cfg.validate();
  model::Model model(cfg.model_config());
  const auto b = model::make_batch(batch);
  const auto opts = cfg.loss_options();
  return grad_check([&] { return model.losses(b, opts).total.l_total; },
                    model.store().parameters(), h, tol);
}

// --- checkpoint -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'R', 'D', 'C', 'K', 'P', 'T', '\0'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  std::uint64_t u64() { return uint(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::uint64_t uint(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += n;
    return v;
  }
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint is truncated");
  }

  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t layout_hash(const ParameterStore& store) {
  std::uint64_t h = fnv1a64("mrd-layout");
  for (const auto& p : store.parameters()) {
    h = fnv1a64(p.name, h);
    h = fnv1a64(shape_string(p.tensor.shape()), h);
  }
  return h;
}

void save_checkpoint(const model::Model& model, const std::filesystem::path& path) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, model.config().d);
  put_u64(out, model.config().heads);
  put_u64(out, layout_hash(model.store()));
  const auto& params = model.store().parameters();
  put_u64(out, params.size());
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    const auto& shape = p.tensor.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) put_u64(out, e);
    for (double v : p.tensor.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  io::write_file_atomic(path, out);
}

void load_checkpoint(model::Model& model, const std::filesystem::path& path) {
  const std::string data = io::read_file(path);
  Reader in(data);
  if (in.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw FormatError("checkpoint " + path.string() + " has a bad magic number");
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint format_version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t d = in.u64();
  const std::uint64_t h = in.u64();
  const std::uint64_t hash = in.u64();
  const std::uint64_t count = in.u64();

  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  std::vector<Entry> entries;
  for (std::uint64_t k = 0; k < count; ++k) {
    Entry e;
    e.name = in.bytes(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank == 0 || rank > 4) throw FormatError("checkpoint: parameter " + e.name + " has bad rank");
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(in.u64());
    const std::size_t n = shape_size(e.shape);
    if (n > data.size()) throw FormatError("checkpoint is truncated");
    e.values.resize(n);
    for (auto& v : e.values) v = std::bit_cast<double>(in.u64());
    entries.push_back(std::move(e));
  }
  if (!in.at_end()) throw FormatError("checkpoint has trailing bytes");

  auto& store = model.store();
  for (const auto& e : entries) {
    const Parameter* p = store.find(e.name);
    if (!p) throw ShapeError("checkpoint parameter " + e.name + " does not exist in this model");
    if (p->tensor.shape() != e.shape) {
      throw ShapeError("checkpoint parameter " + e.name + " has shape " + shape_string(e.shape) +
                       ", model expects " + shape_string(p->tensor.shape()));
    }
  }
  if (entries.size() != store.parameters().size()) {
    throw ShapeError("checkpoint has " + std::to_string(entries.size()) + " parameters, model has " +
                     std::to_string(store.parameters().size()));
  }
  if (d != model.config().d || h != model.config().heads || hash != layout_hash(store)) {
    throw ShapeError("checkpoint layout (d = " + std::to_string(d) + ", h = " + std::to_string(h) +
                     ") does not match the model");
  }
  for (auto& e : entries) {
    auto values = store.find(e.name)->tensor.mutable_values();
    std::copy(e.values.begin(), e.values.end(), values.begin());
  }
}

}  // namespace mrd::trainer
