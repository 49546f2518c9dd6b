#include "mrd/trainer/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

#include "json.hpp"

#include "mrd/error.hpp"

namespace mrd::trainer {

using nlohmann::json;

namespace {

constexpr double Metrics::*kFields[] = {&Metrics::accuracy, &Metrics::f1_fake, &Metrics::f1_real,
                                         &Metrics::auc};
constexpr const char* kFieldNames[] = {"accuracy", "f1_fake", "f1_real", "auc"};

json metrics_json(const Metrics& m) {
  json j;
  for (std::size_t k = 0; k < 4; ++k) j[kFieldNames[k]] = m.*kFields[k];
  return j;
}

json runs_json(const std::vector<Metrics>& runs) {
  json a = json::array();
  for (const auto& m : runs) a.push_back(metrics_json(m));
  return a;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

Aggregate aggregate(std::span<const Metrics> runs) {
  Aggregate a;
  if (runs.empty()) return a;
  const double n = static_cast<double>(runs.size());
  for (auto field : kFields) {
    double s = 0.0;
    for (const auto& m : runs) s += m.*field;
    const double mean = s / n;
    double ss = 0.0;
    for (const auto& m : runs) ss += (m.*field - mean) * (m.*field - mean);
    a.mean.*field = mean;
    a.sd.*field = runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  return a;
}

void run_jobs(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            job(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// --- ablation ---------------------------------------------------------------

std::vector<Variant> ablation_variants() {
  std::vector<Variant> v;
  v.push_back({"full", {}});
  auto add = [&](std::string name, bool Ablation::*flag) {
    Variant x{std::move(name), {}};
    x.flags.*flag = true;
    v.push_back(std::move(x));
  };
  add("w/o L_text", &Ablation::drop_l_text);
  add("w/o L_image", &Ablation::drop_l_image);
  add("w/o L_cross", &Ablation::drop_l_cross);
  add("w/o Text View", &Ablation::drop_text_view);
  add("w/o Image View", &Ablation::drop_image_view);
  add("w/o LLM", &Ablation::no_teacher);
  add("w/o Reasoning prompts", &Ablation::no_reasoning_prompts);
  add("w/o Feature Extractors", &Ablation::no_feature_extractors);
  add("w/o Attention", &Ablation::no_attention);
  return v;
}

const AblationRow& AblationTable::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.variant.name == name) return r;
  }
  throw ValidationError("ablation table has no row '" + name + "'");
}

AblationTable ablation_suite(const TrainConfig& base, const std::vector<data::Sample>& train_set,
                             const std::vector<data::Sample>& test_set, std::size_t n_seeds,
                             const std::vector<data::Sample>* probe, std::size_t threads) {
  if (n_seeds < 3) throw ParameterError("ablation_suite needs at least 3 seeds");
  const auto variants = ablation_variants();
  std::vector<TrainConfig> configs;
  for (const auto& v : variants) {
    TrainConfig cfg = base;
    cfg.ablation = v.flags;
    cfg.validate();
    configs.push_back(cfg);
  }
  AblationTable table;
  for (std::size_t s = 0; s < n_seeds; ++s) table.seeds.push_back(base.seed + s);
  table.rows.resize(variants.size());
  for (std::size_t k = 0; k < variants.size(); ++k) {
    table.rows[k].variant = variants[k];
    table.rows[k].runs.resize(n_seeds);
    table.rows[k].wall_seconds.resize(n_seeds);
    if (probe) table.rows[k].probe_runs.resize(n_seeds);
  }
  run_jobs(variants.size() * n_seeds, threads, [&](std::size_t job) {
    const std::size_t k = job / n_seeds, s = job % n_seeds;
    TrainConfig cfg = configs[k];
    cfg.seed = table.seeds[s];
    auto result = train(cfg, train_set, &test_set);
    table.rows[k].runs[s] = *result.report.metrics;
    table.rows[k].wall_seconds[s] = result.report.wall_seconds;
    if (probe) table.rows[k].probe_runs[s] = evaluate(result.model, *probe);
  });
  for (auto& r : table.rows) {
    r.summary = aggregate(r.runs);
    if (probe) r.probe_summary = aggregate(r.probe_runs);
  }
  return table;
}

std::string ablation_jsonl(const AblationTable& table) {
  std::string out;
  for (const auto& r : table.rows) {
    json j = {{"variant", r.variant.name},
              {"seeds", table.seeds},
              {"runs", runs_json(r.runs)},
              {"wall_seconds", r.wall_seconds},
              {"mean", metrics_json(r.summary.mean)},
              {"sd", metrics_json(r.summary.sd)}};
    if (!r.probe_runs.empty()) {
      j["probe_runs"] = runs_json(r.probe_runs);
      j["probe_mean"] = metrics_json(r.probe_summary.mean);
      j["probe_sd"] = metrics_json(r.probe_summary.sd);
    }
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

std::string table_row(const std::string& label, const Aggregate& a) {
  std::string line = pad(label, 24);
  for (auto field : kFields) {
    line += pad(fixed(a.mean.*field) + " +- " + fixed(a.sd.*field), 20);
  }
  return line + "\n";
}

std::string table_header(const std::string& first) {
  return pad(first, 24) + pad("Acc", 20) + pad("F1-Fake", 20) + pad("F1-Real", 20) +
         pad("AUC", 20) + "\n";
}

}  // namespace

std::string ablation_summary(const AblationTable& table) {
  std::string out = table_header("variant");
  for (const auto& r : table.rows) out += table_row(r.variant.name, r.summary);
  if (!table.rows.empty() && !table.rows[0].probe_runs.empty()) {
    out += "\nprobe set\n" + table_header("variant");
    for (const auto& r : table.rows) out += table_row(r.variant.name, r.probe_summary);
  }
  return out;
}

// --- sweep ------------------------------------------------------------------

std::string_view axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kLambda: return "lambda";
    case SweepAxis::kTau: return "tau";
    case SweepAxis::kAlpha: return "alpha";
    case SweepAxis::kHeads: return "heads";
  }
  return "?";
}

SweepAxis parse_axis(std::string_view name) {
  for (auto a : {SweepAxis::kLambda, SweepAxis::kTau, SweepAxis::kAlpha, SweepAxis::kHeads}) {
    if (axis_name(a) == name) return a;
  }
  throw ConfigError("unknown sweep axis '" + std::string(name) + "' (lambda|tau|alpha|heads)");
}

TrainConfig with_axis(const TrainConfig& cfg, SweepAxis axis, double value) {
  TrainConfig out = cfg;
  switch (axis) {
    case SweepAxis::kLambda: out.lambda = value; break;
    case SweepAxis::kTau: out.tau = value; break;
    case SweepAxis::kAlpha: out.alpha = value; break;
    case SweepAxis::kHeads:
      if (!(value >= 1.0) || value != std::floor(value)) {
        throw ConfigError("head count " + fixed(value, 3) + " is not a positive integer");
      }
      out.heads = static_cast<std::size_t>(value);
      break;
  }
  out.validate();
  return out;
}

CurveReport sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                  const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& test_set, std::size_t n_seeds,
                  std::size_t threads) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (n_seeds == 0) throw ConfigError("sweep needs at least one seed");
  std::vector<TrainConfig> configs;
  for (double v : values) configs.push_back(with_axis(base, axis, v));
  CurveReport curve;
  curve.axis = axis;
  for (std::size_t s = 0; s < n_seeds; ++s) curve.seeds.push_back(base.seed + s);
  curve.points.resize(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    curve.points[k].value = values[k];
    curve.points[k].runs.resize(n_seeds);
  }
  run_jobs(values.size() * n_seeds, threads, [&](std::size_t job) {
    const std::size_t k = job / n_seeds, s = job % n_seeds;
    TrainConfig cfg = configs[k];
    cfg.seed = curve.seeds[s];
    curve.points[k].runs[s] = *train(cfg, train_set, &test_set).report.metrics;
  });
  for (auto& p : curve.points) p.summary = aggregate(p.runs);
  return curve;
}

std::string curve_jsonl(const CurveReport& curve) {
  std::string out;
  for (const auto& p : curve.points) {
    json j = {{"axis", std::string(axis_name(curve.axis))},
              {"value", p.value},
              {"seeds", curve.seeds},
              {"runs", runs_json(p.runs)},
              {"mean", metrics_json(p.summary.mean)},
              {"sd", metrics_json(p.summary.sd)}};
    out += j.dump() + "\n";
  }
  return out;
}

std::string curve_summary(const CurveReport& curve) {
  std::string out = table_header(std::string(axis_name(curve.axis)));
  for (const auto& p : curve.points) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", p.value);
    out += table_row(buf, p.summary);
  }
  return out;
}

std::string curve_svg(const CurveReport& curve) {
  constexpr double W = 640, H = 400, left = 60, right = 130, top = 30, bottom = 50;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  const char* labels[] = {"Acc", "F1-Fake", "F1-Real", "AUC"};
  const std::size_t n = curve.points.size();
  const double pw = W - left - right, ph = H - top - bottom;

  double lo = 1.0, hi = 0.0;
  for (const auto& p : curve.points) {
    for (auto field : kFields) {
      lo = std::min(lo, p.summary.mean.*field - p.summary.sd.*field);
      hi = std::max(hi, p.summary.mean.*field + p.summary.sd.*field);
    }
  }
  lo = std::max(0.0, std::floor(lo * 20.0) / 20.0);
  hi = std::min(1.0, std::ceil(hi * 20.0) / 20.0);
  if (hi <= lo) hi = std::min(1.0, lo + 0.05), lo = hi - 0.05;

  auto x_at = [&](std::size_t i) { return left + (n == 1 ? pw / 2 : pw * i / (n - 1.0)); };
  auto y_at = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::string s;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" "
                "font-family=\"sans-serif\" font-size=\"12\">\n",
                W, H);
  s += buf;
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                left, top + ph, left + pw, top + ph, left, top, left, top + ph);
  s += buf;
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.3f</text>\n", left - 6,
                  y_at(v) + 4, v);
    s += buf;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%g</text>\n",
                  x_at(i), top + ph + 18, curve.points[i].value);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%s</text>\n",
                left + pw / 2, H - 10, std::string(axis_name(curve.axis)).c_str());
  s += buf;

  for (std::size_t f = 0; f < 4; ++f) {
    std::string points;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = curve.points[i].summary;
      const double m = a.mean.*kFields[f], sd = a.sd.*kFields[f];
      std::snprintf(buf, sizeof buf, "%g,%g ", x_at(i), y_at(m));
      points += buf;
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"%s\"/>\n"
                    "<circle cx=\"%g\" cy=\"%g\" r=\"3\" fill=\"%s\"/>\n",
                    x_at(i), y_at(m - sd), x_at(i), y_at(m + sd), colors[f], x_at(i), y_at(m),
                    colors[f]);
      s += buf;
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(colors[f]) + "\" points=\"" + points +
         "\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%g\" y=\"%g\" width=\"12\" height=\"12\" fill=\"%s\"/>"
                  "<text x=\"%g\" y=\"%g\">%s</text>\n",
                  W - right + 15, top + 20.0 * f, colors[f], W - right + 32, top + 20.0 * f + 10,
                  labels[f]);
    s += buf;
  }
  s += "</svg>\n";
  return s;
}

}  // namespace mrd::trainer
