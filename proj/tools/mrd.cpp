// mrd: command-line front end for data generation, training, evaluation,
// ablations, sweeps and significance tests.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mrd/datasynth.hpp"
#include "mrd/error.hpp"
#include "mrd/io.hpp"
#include "mrd/random.hpp"
#include "mrd/teacher.hpp"
#include "mrd/teacher_client.hpp"
#include "mrd/trainer/config.hpp"
#include "mrd/trainer/experiments.hpp"
#include "mrd/trainer/metrics.hpp"
#include "mrd/trainer/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mrd;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::vector<std::string> sets;
  std::size_t threads = 1;
};

struct DataFlags {
  std::string features;
  std::string teacher;
};

trainer::RunConfig load_run(const Common& c) {
  trainer::RunConfig run = c.config.empty() ? trainer::RunConfig{} : trainer::load_config(c.config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    trainer::set_config_value(run, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) {
    run.train.seed = *c.seed;
    run.data.seed = *c.seed;
    run.split_seed = *c.seed;
  }
  run.validate();
  return run;
}

fs::path out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  return fs::path(c.out) / name;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos) {
      throw ConfigError("cannot parse '" + item + "' as a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty value list");
  return out;
}

// Features from a file (teacher optional) or generated from the config.
std::vector<data::Sample> load_samples(const trainer::RunConfig& run, const DataFlags& flags) {
  if (flags.features.empty()) {
    if (!flags.teacher.empty()) throw ConfigError("--teacher needs --features");
    return data::generate_dataset(run.data);
  }
  auto samples = data::load_features_file(flags.features);
  if (!flags.teacher.empty()) {
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.id);
    const auto teacher = teacher::load_teacher_file(flags.teacher, &ids);
    if (teacher.header.d != run.train.d) {
      throw ConfigError("teacher file has d = " + std::to_string(teacher.header.d) +
                        " but the model has d = " + std::to_string(run.train.d));
    }
    data::attach_teacher(samples, teacher.embeddings);
  }
  return samples;
}

data::Split split_samples(const trainer::RunConfig& run, const std::vector<data::Sample>& all) {
  return data::split(all, run.train_fraction, 1.0 - run.train_fraction, run.split_seed);
}

std::vector<data::Sample> cross_only_probe(const trainer::RunConfig& run, std::size_t n) {
  auto cfg = run.data;
  cfg.mix = {0.0, 0.0, 1.0};
  cfg.n_samples = n;
  cfg.first_index = run.data.first_index + run.data.n_samples;
  return data::generate_dataset(cfg);
}

json metrics_json(const trainer::Metrics& m) {
  return {{"accuracy", m.accuracy}, {"f1_fake", m.f1_fake}, {"f1_real", m.f1_real}, {"auc", m.auc}};
}

void print_metrics(const trainer::Metrics& m) {
  std::printf("accuracy %.4f  f1_fake %.4f  f1_real %.4f  auc %.4f\n", m.accuracy, m.f1_fake,
              m.f1_real, m.auc);
}

// --- subcommands ------------------------------------------------------------

void cmd_gen_data(const Common& c) {
  const auto run = load_run(c);
  const auto samples = data::generate_dataset(run.data);
  const auto features = out_path(c, "features.jsonl");
  data::save_features_file(features, samples);
  std::printf("wrote %zu samples to %s\n", samples.size(), features.string().c_str());
}

void cmd_gen_teacher(const Common& c, const std::string& mode, const std::string& features_path) {
  const auto run = load_run(c);
  if (features_path.empty()) throw ConfigError("gen-teacher needs --features");
  const auto samples = data::load_features_file(features_path);
  const auto out = out_path(c, "teacher.jsonl");

  if (mode == "mock") {
    std::map<std::string, const data::Sample*> world;
    const auto generated = data::generate_dataset(run.data);
    for (const auto& s : generated) world[s.id] = &s;
    std::vector<teacher::ReasoningRecord> records;
    for (const auto& s : samples) {
      const auto it = world.find(s.id);
      if (it == world.end() || it->second->label != s.label ||
          it->second->corruption != s.corruption) {
        throw ValidationError("sample " + s.id +
                              " was not generated by this config; mock mode needs the same data.* "
                              "settings as gen-data");
      }
      auto r = teacher::oracle_records(s.id, *it->second->teacher);
      records.insert(records.end(), r.begin(), r.end());
    }
    teacher::save_teacher_file(out, {run.data.d, run.data.d, std::nullopt, 1}, records);
    std::printf("wrote mock teacher for %zu samples to %s\n", samples.size(),
                out.string().c_str());
    return;
  }
  if (mode != "endpoint") throw ConfigError("unknown teacher mode '" + mode + "' (mock|endpoint)");
  if (run.teacher.endpoint.empty()) throw ConfigError("teacher.endpoint is not set");

  const auto templates = teacher::PromptRegistry::load_dir(run.prompts_dir);
  teacher::ChatClient client(run.teacher);
  std::vector<teacher::SamplePayload> payloads;
  for (const auto& s : samples) {
    payloads.push_back({s.id, data::describe_sequence(s.text),
                        s.id + ":" + data::describe_sequence(s.image)});
  }
  const auto records = teacher::generate_reasoning_all(client, payloads, templates);
  const std::uint64_t projection_seed = derive_seed(run.teacher.embed_seed, 1);
  teacher::save_teacher_file(out, {run.teacher.d_t, run.train.d, projection_seed, 1}, records);
  for (const auto& w : client.warnings()) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("wrote %zu records to %s (%zu network calls)\n", records.size(),
              out.string().c_str(), client.network_calls());
}

void cmd_train(const Common& c, const DataFlags& flags) {
  const auto run = load_run(c);
  const auto all = load_samples(run, flags);
  const auto parts = split_samples(run, all);
  auto result = trainer::train(run, parts.train, &parts.test);
  trainer::save_checkpoint(result.model, out_path(c, "checkpoint.bin"));
  io::write_file_atomic(out_path(c, "report.json"), result.report.to_json() + "\n");
  std::printf("trained %zu epochs on %zu samples in %.1f s\n", run.train.epochs,
              parts.train.size(), result.report.wall_seconds);
  print_metrics(*result.report.metrics);
}

void cmd_eval(const Common& c, const DataFlags& flags, const std::string& checkpoint,
              bool all_samples) {
  const auto run = load_run(c);
  if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  model::Model model(run.train.model_config());
  trainer::load_checkpoint(model, checkpoint);
  const auto samples = load_samples(run, flags);
  const auto metrics =
      trainer::evaluate(model, all_samples ? samples : split_samples(run, samples).test);
  io::write_file_atomic(out_path(c, "metrics.json"), metrics_json(metrics).dump() + "\n");
  print_metrics(metrics);
}

void cmd_ablate(const Common& c, const DataFlags& flags, std::size_t seeds, std::size_t probe) {
  const auto run = load_run(c);
  const auto parts = split_samples(run, load_samples(run, flags));
  std::optional<std::vector<data::Sample>> probe_set;
  if (probe > 0) probe_set = cross_only_probe(run, probe);
  const auto table = trainer::ablation_suite(run.train, parts.train, parts.test, seeds,
                                             probe_set ? &*probe_set : nullptr, c.threads);
  io::write_file_atomic(out_path(c, "ablation.jsonl"), trainer::ablation_jsonl(table));
  const auto summary = trainer::ablation_summary(table);
  io::write_file_atomic(out_path(c, "ablation.txt"), summary);
  std::fputs(summary.c_str(), stdout);
}

void cmd_sweep(const Common& c, const DataFlags& flags, const std::string& axis,
               const std::string& values, std::size_t seeds, bool chart) {
  const auto run = load_run(c);
  const auto parsed_axis = trainer::parse_axis(axis);
  const auto list = parse_list(values);
  for (double v : list) trainer::with_axis(run.train, parsed_axis, v);
  const auto parts = split_samples(run, load_samples(run, flags));
  const auto curve =
      trainer::sweep(run.train, parsed_axis, list, parts.train, parts.test, seeds, c.threads);
  const std::string stem = "sweep_" + std::string(trainer::axis_name(parsed_axis));
  io::write_file_atomic(out_path(c, stem + ".jsonl"), trainer::curve_jsonl(curve));
  const auto summary = trainer::curve_summary(curve);
  io::write_file_atomic(out_path(c, stem + ".txt"), summary);
  if (chart) io::write_file_atomic(out_path(c, stem + ".svg"), trainer::curve_svg(curve));
  std::fputs(summary.c_str(), stdout);
}

std::vector<double> report_column(const std::string& path, const std::string& variant,
                                  const std::string& metric) {
  for (const auto& line : io::read_lines(path)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    if (j.value("variant", "") != variant) continue;
    std::vector<double> out;
    for (const auto& r : j.at("runs")) {
      if (!r.contains(metric)) throw ConfigError("unknown metric '" + metric + "'");
      out.push_back(r.at(metric).get<double>());
    }
    return out;
  }
  throw ValidationError("report " + path + " has no variant '" + variant + "'");
}

void cmd_ttest(const std::string& a, const std::string& b, const std::string& report,
               const std::string& metric) {
  std::vector<double> xs, ys;
  if (!report.empty()) {
    xs = report_column(report, a, metric);
    ys = report_column(report, b, metric);
  } else {
    xs = parse_list(a);
    ys = parse_list(b);
  }
  const auto r = trainer::welch_ttest(xs, ys);
  std::printf("%s\n", json({{"t", r.t}, {"dof", r.dof}, {"p", r.p}}).dump().c_str());
}

void cmd_grad_check(const Common& c, std::size_t d, std::size_t batch, double h, double tol) {
  const std::uint64_t seed = c.seed.value_or(0);
  const auto cfg = trainer::grad_check_config(d, seed);
  const auto samples = data::generate_dataset(trainer::grad_check_data(d, batch, seed));
  const auto report = trainer::check_model_gradients(cfg, samples, h, tol);
  std::printf("%s\n", json({{"max_rel_error", report.max_rel_error},
                            {"worst_parameter", report.worst_parameter},
                            {"worst_analytic", report.worst_analytic},
                            {"worst_numeric", report.worst_numeric},
                            {"worst_index", report.worst_index},
                            {"entries_checked", report.entries_checked},
                            {"deterministic", report.deterministic},
                            {"passed", report.passed}})
                          .dump()
                          .c_str());
  if (!report.passed) {
    throw ValidationError("gradient check failed: max relative error " +
                          std::to_string(report.max_rel_error) + " at " +
                          report.worst_parameter);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Multi-view reasoning distillation for fake-news detection.\n"
      "Class convention: fake = 1 (positive class of F1-Fake), real = 0."};
  app.require_subcommand(1);
  app.fallthrough();

  Common c;
  app.add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", c.seed, "master seed (training, data and split)");
  app.add_option("--out", c.out, "output directory")->capture_default_str();
  app.add_option("--set", c.sets, "config override key=value (repeatable)");
  app.add_option("--threads", c.threads, "parallel runs for ablate and sweep")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  DataFlags data_flags;
  auto add_data_flags = [&](CLI::App* sub) {
    sub->add_option("--features", data_flags.features,
                    "features file (default: generate from data.* settings)");
    sub->add_option("--teacher", data_flags.teacher, "teacher file to attach to --features");
  };

  auto* gen_data = app.add_subcommand("gen-data", "write a synthetic features file");

  std::string teacher_mode = "mock";
  std::string teacher_features;
  auto* gen_teacher = app.add_subcommand("gen-teacher", "write teacher embeddings");
  gen_teacher->add_option("--mode", teacher_mode, "mock (synthetic oracle) or endpoint")
      ->capture_default_str();
  gen_teacher->add_option("--features", teacher_features, "features file")->required();

  auto* train = app.add_subcommand("train", "train and write checkpoint.bin and report.json");
  add_data_flags(train);

  std::string checkpoint;
  bool eval_all = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_data_flags(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_flag("--all", eval_all, "evaluate on every sample instead of the test split");

  std::size_t seeds = 5;
  std::size_t probe = 0;
  auto* ablate = app.add_subcommand("ablate", "ablation suite, mean +- sd over seeds");
  add_data_flags(ablate);
  ablate->add_option("--seeds", seeds, "seeds per variant (>= 3)")->capture_default_str();
  ablate->add_option("--probe-cross", probe,
                     "also evaluate on N cross-mismatch-only samples from the same world");

  std::string axis, values;
  bool chart = false;
  auto* sweep = app.add_subcommand("sweep", "hyperparameter sweep");
  add_data_flags(sweep);
  sweep->add_option("--axis", axis, "lambda | tau | alpha | heads")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--seeds", seeds, "seeds per value")->capture_default_str();
  sweep->add_flag("--chart", chart, "also write an SVG chart");

  std::string ta, tb, report, metric = "accuracy";
  auto* ttest = app.add_subcommand("ttest", "Welch's t-test on two samples");
  ttest->add_option("--a", ta, "first sample (comma list) or variant name with --report")
      ->required();
  ttest->add_option("--b", tb, "second sample (comma list) or variant name with --report")
      ->required();
  ttest->add_option("--report", report, "ablation.jsonl to read per-seed runs from");
  ttest->add_option("--metric", metric, "metric column with --report")->capture_default_str();

  std::size_t gc_d = 8, gc_batch = 4;
  double gc_h = 1e-5, gc_tol = 1e-4;
  auto* grad = app.add_subcommand("grad-check", "gradient check of L_total");
  grad->add_option("--d", gc_d, "feature width")->capture_default_str();
  grad->add_option("--batch", gc_batch, "samples in the batch")->capture_default_str();
  grad->add_option("--step", gc_h, "finite-difference step")->capture_default_str();
  grad->add_option("--tol", gc_tol, "relative error tolerance")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    if (*gen_data) cmd_gen_data(c);
    if (*gen_teacher) cmd_gen_teacher(c, teacher_mode, teacher_features);
    if (*train) cmd_train(c, data_flags);
    if (*eval) cmd_eval(c, data_flags, checkpoint, eval_all);
    if (*ablate) cmd_ablate(c, data_flags, seeds, probe);
    if (*sweep) cmd_sweep(c, data_flags, axis, values, seeds, chart);
    if (*ttest) cmd_ttest(ta, tb, report, metric);
    if (*grad) cmd_grad_check(c, gc_d, gc_batch, gc_h, gc_tol);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.kind().c_str(), e.what());
    return 1;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: format: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
