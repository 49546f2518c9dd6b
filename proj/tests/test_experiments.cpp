#include <atomic>
#include <cmath>
#include <set>

#include "doctest.h"
#include "json.hpp"

#include "mrd/datasynth.hpp"
#include "mrd/error.hpp"
#include "mrd/trainer/experiments.hpp"
#include "mrd/trainer/trainer.hpp"

using namespace mrd;
using namespace mrd::trainer;

namespace {

struct Fixture {
  TrainConfig cfg;
  std::vector<data::Sample> train_set, test_set;

  Fixture() {
    cfg = grad_check_config(8, 0);
    cfg.epochs = 1;
    cfg.batch_size = 16;
    train_set = data::generate_dataset(grad_check_data(8, 24, 0));
    auto test_cfg = grad_check_data(8, 12, 0);
    test_cfg.first_index = 24;
    test_set = data::generate_dataset(test_cfg);
  }
};

bool same_metrics(const Metrics& a, const Metrics& b) {
  return a.accuracy == b.accuracy && a.f1_fake == b.f1_fake && a.f1_real == b.f1_real && a.auc == b.auc;
}

}  // namespace

TEST_CASE("aggregate") {
  const std::vector<Metrics> runs{{0.5, 0.4, 0.6, 0.7}, {0.7, 0.6, 0.8, 0.9}, {0.6, 0.5, 0.7, 0.8}};
  const auto a = aggregate(runs);
  CHECK(a.mean.accuracy == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(a.sd.accuracy == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(a.sd.auc == doctest::Approx(0.1).epsilon(1e-12));
  const auto single = aggregate(std::span(runs).first(1));
  CHECK(single.sd.f1_fake == 0.0);
  CHECK(single.mean.f1_fake == 0.4);
}

TEST_CASE("run_jobs") {
  for (std::size_t threads : {1u, 3u, 8u}) {
    std::vector<int> out(20, 0);
    run_jobs(20, threads, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
    for (std::size_t i = 0; i < 20; ++i) CHECK(out[i] == static_cast<int>(i * i));
  }
  CHECK_THROWS_AS(run_jobs(5, 2, [](std::size_t i) {
                    if (i == 3) throw ValidationError("job 3");
                  }),
                  ValidationError);
}

TEST_CASE("ablation variants") {
  const auto v = ablation_variants();
  REQUIRE(v.size() == 10);
  CHECK(v[0].name == "full");
  CHECK_FALSE(v[0].flags.any());
  std::set<std::string> names;
  for (std::size_t i = 1; i < v.size(); ++i) {
    CHECK(v[i].flags.any());
    names.insert(v[i].name);
  }
  CHECK(names.size() == 9);
  for (const char* n : {"w/o L_text", "w/o L_image", "w/o L_cross", "w/o Text View", "w/o Image View",
                        "w/o LLM", "w/o Reasoning prompts", "w/o Feature Extractors", "w/o Attention"}) {
    CHECK(names.count(n) == 1);
  }
}

TEST_CASE("ablation suite") {
  Fixture f;
  CHECK_THROWS_AS(ablation_suite(f.cfg, f.train_set, f.test_set, 2), ParameterError);

  const auto table = ablation_suite(f.cfg, f.train_set, f.test_set, 3, &f.test_set, 2);
  CHECK(table.seeds == std::vector<std::uint64_t>{0, 1, 2});
  REQUIRE(table.rows.size() == 10);
  for (const auto& row : table.rows) {
    CHECK(row.runs.size() == 3);
    CHECK(row.probe_runs.size() == 3);
  }
  CHECK_THROWS(table.row("w/o Everything"));

  // The full row reproduces plain training runs bit-exactly.
  for (std::size_t k = 0; k < 3; ++k) {
    auto cfg = f.cfg;
    cfg.seed = k;
    const auto r = train(cfg, f.train_set, &f.test_set);
    CHECK(same_metrics(table.row("full").runs[k], *r.report.metrics));
    CHECK(same_metrics(table.row("full").probe_runs[k], *r.report.metrics));
  }

  // Independent of the worker count.
  const auto serial = ablation_suite(f.cfg, f.train_set, f.test_set, 3, nullptr, 1);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t k = 0; k < 3; ++k) CHECK(same_metrics(serial.rows[i].runs[k], table.rows[i].runs[k]));
  }

  const auto jsonl = ablation_jsonl(table);
  std::size_t lines = 0;
  std::istringstream in(jsonl);
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("variant"));
    ++lines;
  }
  CHECK(lines == 10);
  const auto summary = ablation_summary(table);
  CHECK(summary.find("w/o L_cross") != std::string::npos);
  CHECK(summary.find("+-") != std::string::npos);
}

TEST_CASE("sweep") {
  Fixture f;
  CHECK(parse_axis("lambda") == SweepAxis::kLambda);
  CHECK(parse_axis("heads") == SweepAxis::kHeads);
  CHECK_THROWS_AS(parse_axis("depth"), ConfigError);
  CHECK(axis_name(SweepAxis::kTau) == "tau");

  CHECK(with_axis(f.cfg, SweepAxis::kAlpha, 0.25).alpha == 0.25);
  CHECK(with_axis(f.cfg, SweepAxis::kHeads, 2).heads == 2);
  CHECK_THROWS_AS(with_axis(f.cfg, SweepAxis::kHeads, 3), ConfigError);
  CHECK_THROWS_AS(with_axis(f.cfg, SweepAxis::kHeads, 2.5), ConfigError);
  CHECK_THROWS_AS(with_axis(f.cfg, SweepAxis::kTau, 0.0), ConfigError);

  const double bad[] = {2, 3};
  CHECK_THROWS_AS(sweep(f.cfg, SweepAxis::kHeads, bad, f.train_set, f.test_set, 1), ConfigError);

  const double one[] = {0.5};
  const auto single = sweep(f.cfg, SweepAxis::kLambda, one, f.train_set, f.test_set, 1);
  REQUIRE(single.points.size() == 1);
  auto cfg = f.cfg;
  cfg.lambda = 0.5;
  CHECK(same_metrics(single.points[0].runs[0], *train(cfg, f.train_set, &f.test_set).report.metrics));

  const double lambdas[] = {0, 0.5, 1, 2, 5};
  const auto curve = sweep(f.cfg, SweepAxis::kLambda, lambdas, f.train_set, f.test_set, 3, 2);
  CHECK(curve.points.size() == 5);
  const auto table = ablation_suite(f.cfg, f.train_set, f.test_set, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(same_metrics(curve.points[0].runs[k], table.row("w/o LLM").runs[k]));
  }
  std::istringstream in(curve_jsonl(curve));
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 5);
  const auto svg = curve_svg(curve);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(curve_summary(curve).find("lambda") != std::string::npos);
}
