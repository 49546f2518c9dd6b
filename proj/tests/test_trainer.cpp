#include <algorithm>
#include <cmath>
#include <fstream>

#include "doctest.h"

#include "mrd/datasynth.hpp"
#include "mrd/error.hpp"
#include "mrd/io.hpp"
#include "mrd/model.hpp"
#include "mrd/trainer/config.hpp"
#include "mrd/trainer/trainer.hpp"
#include "test_util.hpp"

using namespace mrd;
using namespace mrd::trainer;

namespace {

TrainConfig tiny_config(std::uint64_t seed = 0) {
  auto cfg = grad_check_config(8, seed);
  cfg.epochs = 2;
  cfg.batch_size = 8;
  return cfg;
}

std::vector<data::Sample> tiny_data(std::size_t n, std::uint64_t seed = 0, std::size_t first = 0) {
  auto cfg = grad_check_data(8, n, seed);
  cfg.first_index = first;
  return data::generate_dataset(cfg);
}

std::vector<std::vector<double>> snapshot(const model::Model& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.store().parameters()) out.push_back(values_of(p.tensor));
  return out;
}

double count_nonzero_fraction(const ParameterStore& store) {
  std::size_t nz = 0, total = 0;
  for (const auto& p : store.parameters()) {
    for (double g : p.tensor.grad()) {
      nz += g != 0.0;
      ++total;
    }
  }
  return static_cast<double>(nz) / static_cast<double>(total);
}

}  // namespace

// --- config -------------------------------------------------------------------

TEST_CASE("config file parsing") {
  const auto cfg = parse_config(
      "# comment\n"
      "lambda = 0.5\n"
      "\n"
      "tau=3   # trailing comment\n"
      "drop_L_cross = true\n"
      "data.n_samples = 100\n"
      "teacher.endpoint = http://localhost:9/v1\n");
  CHECK(cfg.train.lambda == 0.5);
  CHECK(cfg.train.tau == 3.0);
  CHECK(cfg.train.ablation.drop_l_cross);
  CHECK(cfg.data.n_samples == 100);
  CHECK(cfg.teacher.endpoint == "http://localhost:9/v1");

  try {
    parse_config("lambda = 1\nlamda = 2\n");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("lamda") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("epochs = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("drop_L_text = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("just words\n"), ConfigError);
}

TEST_CASE("config render round trip") {
  RunConfig cfg;
  cfg.train.lambda = 0.123456789012345678;
  cfg.train.tau = 1.0 / 3.0;
  cfg.train.ablation.no_attention = true;
  cfg.data.signal = 7.25;
  cfg.data.seed = 99;
  cfg.teacher.retries = 5;
  const auto back = parse_config(render_config(cfg));
  CHECK(config_entries(back) == config_entries(cfg));
  CHECK(back.train.lambda == cfg.train.lambda);
  CHECK(back.train.tau == cfg.train.tau);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.lambda = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.alpha = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.heads = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  auto nt = cfg;
  nt.ablation.no_teacher = true;
  CHECK(nt.effective_lambda() == 0.0);
  CHECK(nt.loss_options().lambda == 0.0);
  CHECK(cfg.effective_lambda() == 1.0);
}

// --- optimizer ------------------------------------------------------------------

TEST_CASE("Adam") {
  std::vector<Parameter> params{make_parameter("w", {3}, {InitScheme::kXavierUniform, 4})};
  const auto before = values_of(params[0].tensor);
  Adam adam(1e-2, 0.9, 0.999, 1e-8);

  SUBCASE("zero gradient leaves parameters unchanged") {
    params[0].tensor.zero_grad();
    adam.step(params);
    adam.step(params);
    CHECK(values_of(params[0].tensor) == before);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    auto g = params[0].tensor.mutable_grad();
    g[0] = 3.0;
    g[1] = -0.5;
    g[2] = 0.0;
    adam.step(params);
    const auto after = values_of(params[0].tensor);
    CHECK(after[0] == doctest::Approx(before[0] - 1e-2 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));
    CHECK(after[1] == doctest::Approx(before[1] + 1e-2 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    CHECK(after[2] == before[2]);
    CHECK(adam.steps() == 1);
  }
}

// --- model ------------------------------------------------------------------------

TEST_CASE("model forward shapes and gradient reach") {
  const auto data = tiny_data(6);
  const auto cfg = tiny_config(3);
  {
    // Default widths on a full batch.
    data::SyntheticConfig dc;
    dc.n_samples = 32;
    const auto full_data = data::generate_dataset(dc);
    TrainConfig full_cfg;
    model::Model full(full_cfg.model_config());
    full.losses(model::make_batch(full_data), full_cfg.loss_options()).total.l_total.backward();
    CHECK(count_nonzero_fraction(full.store()) >= 0.99);
  }
  model::Model m(cfg.model_config());
  const auto batch = model::make_batch(data);
  const auto r = m.losses(batch, cfg.loss_options());
  CHECK(r.forward.logits.shape() == Shape{6, 2});
  CHECK(r.forward.fused.shape() == Shape{6, 8});
  for (View v : kAllViews) CHECK(r.forward.features[v].shape() == Shape{6, 8});
  CHECK(r.total.breakdown.identity_residual() <= 1e-12);
  r.total.l_total.backward();
  for (View v : kAllViews) {
    CHECK_FALSE(batch.teacher[v].requires_grad());
    CHECK_FALSE(batch.teacher[v].has_grad());
  }
}

TEST_CASE("zero-initialized corrections reproduce the uncalibrated pipeline") {
  const auto data = tiny_data(10);
  auto cfg = tiny_config(5);
  cfg.zero_correction_init = true;
  model::Model m(cfg.model_config());
  const auto batch = model::make_batch(data, false);
  CHECK(values_of(m.forward(batch).logits) == values_of(m.forward(batch, true).logits));
}

TEST_CASE("prediction ignores the loss settings") {
  const auto data = tiny_data(10);
  auto cfg = tiny_config(6);
  model::Model m(cfg.model_config());
  const auto batch = model::make_batch(data);
  const auto preds = m.predict(batch);
  const auto scores = m.fake_scores(batch);
  for (double lambda : {0.0, 0.3, 4.0}) {
    auto opts = cfg.loss_options();
    opts.lambda = lambda;
    opts.distill.tau = 0.5 + lambda;
    opts.distill.alpha = lambda / 4.0;
    CHECK(values_of(m.losses(batch, opts).forward.logits) == values_of(m.forward(batch).logits));
  }
  CHECK(m.predict(batch) == preds);
  CHECK(m.fake_scores(batch) == scores);
}

TEST_CASE("dropped views reach fusion as zeros") {
  const auto data = tiny_data(4);
  auto cfg = tiny_config(7);
  cfg.ablation.drop_text_view = true;
  model::Model m(cfg.model_config());
  auto other = cfg;
  other.ablation.drop_text_view = false;
  model::Model full(other.model_config());
  const auto batch = model::make_batch(data, false);
  CHECK(values_of(m.forward(batch).logits) != values_of(full.forward(batch).logits));
  auto bad = cfg.model_config();
  bad.view_enabled.cross = false;
  CHECK_THROWS_AS(model::Model{bad}, ConfigError);
}

TEST_CASE("make_batch errors") {
  auto data = tiny_data(3);
  data[1].teacher.reset();
  CHECK_THROWS_AS(model::make_batch(data), ValidationError);
  CHECK_NOTHROW(model::make_batch(data, false));
  CHECK_THROWS_AS(model::make_batch(std::vector<data::Sample>{}), ContractError);
}

// --- gradient check -----------------------------------------------------------------

TEST_CASE("model gradients match finite differences") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto cfg = grad_check_config(8, seed);
    const auto batch = data::generate_dataset(grad_check_data(8, 4, seed));
    const auto report = check_model_gradients(cfg, batch, 1e-5, 1e-4);
    CHECK(report.deterministic);
    CHECK(report.max_rel_error < 1e-4);
    CHECK(report.passed);
    CHECK(report.entries_checked == model::Model(cfg.model_config()).store().entry_count());
  }
}

// --- training -----------------------------------------------------------------------

TEST_CASE("train errors") {
  const auto cfg = tiny_config();
  CHECK_THROWS_AS(train(cfg, std::vector<data::Sample>{}), ValidationError);
  auto data = tiny_data(8);
  data[2].teacher.reset();
  CHECK_THROWS_AS(train(cfg, data), ValidationError);
  auto nt = cfg;
  nt.ablation.no_teacher = true;
  CHECK_NOTHROW(train(nt, data));
  auto bad = cfg;
  bad.heads = 3;
  CHECK_THROWS_AS(train(bad, data), ConfigError);
  const auto trained = train(cfg, tiny_data(8));
  CHECK_THROWS_AS(evaluate(trained.model, std::vector<data::Sample>{}), ValidationError);
}

TEST_CASE("one small step descends") {
  const auto data = tiny_data(8);
  auto cfg = tiny_config(2);
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.lr = 1e-5;
  model::Model before(cfg.model_config());
  const auto batch = model::make_batch(data);
  const double l0 = before.losses(batch, cfg.loss_options()).total.l_total.item();
  const auto trained = train(cfg, data);
  const double l1 = trained.model.losses(batch, cfg.loss_options()).total.l_total.item();
  CHECK(l1 < l0);
}

TEST_CASE("training is deterministic") {
  const auto data = tiny_data(24);
  const auto test = tiny_data(12, 0, 24);
  const auto cfg = tiny_config(11);
  const auto a = train(cfg, data, &test);
  const auto b = train(cfg, data, &test);
  REQUIRE(a.report.metrics.has_value());
  CHECK(a.report.metrics->accuracy == b.report.metrics->accuracy);
  CHECK(a.report.metrics->auc == b.report.metrics->auc);
  CHECK(snapshot(a.model) == snapshot(b.model));
  REQUIRE(a.report.epochs.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) CHECK(a.report.epochs[e].l_total == b.report.epochs[e].l_total);

  auto other = cfg;
  other.seed = 12;
  CHECK(snapshot(train(other, data).model) != snapshot(a.model));
}

TEST_CASE("with lambda 0 the teacher never touches the trajectory") {
  const auto data = tiny_data(16);
  auto cfg = tiny_config(4);
  cfg.lambda = 0.0;
  std::vector<std::vector<std::vector<double>>> plain, replaced;
  TrainHooks record;
  record.after_step = [&](std::size_t, const model::Model& m) { plain.push_back(snapshot(m)); };
  train(cfg, data, nullptr, record);

  Rng rng(9);
  TrainHooks swap;
  swap.on_batch = [&](std::size_t, model::Batch& b) {
    for (View v : kAllViews) b.teacher[v] = random_tensor(rng, b.teacher[v].shape(), false, -50, 50);
  };
  swap.after_step = [&](std::size_t, const model::Model& m) { replaced.push_back(snapshot(m)); };
  train(cfg, data, nullptr, swap);
  REQUIRE(plain.size() == replaced.size());
  for (std::size_t s = 0; s < plain.size(); ++s) CHECK(plain[s] == replaced[s]);
}

TEST_CASE("teacher embeddings stay gradient-free through training") {
  const auto data = tiny_data(16);
  const auto cfg = tiny_config(5);
  std::vector<Tensor> seen;
  TrainHooks hooks;
  hooks.on_batch = [&](std::size_t, model::Batch& b) {
    for (View v : kAllViews) seen.push_back(b.teacher[v]);
  };
  hooks.after_step = [&](std::size_t, const model::Model&) {
    for (const auto& t : seen) {
      CHECK_FALSE(t.requires_grad());
      CHECK_FALSE(t.has_grad());
    }
  };
  train(cfg, data, nullptr, hooks);
  CHECK(seen.size() == 12);
}

TEST_CASE("ablation preparation") {
  auto data = tiny_data(4);
  auto cfg = tiny_config();
  CHECK(values_of((*prepare_training_data(cfg, data)[0].teacher).text) ==
        values_of((*data[0].teacher).text));
  cfg.ablation.no_reasoning_prompts = true;
  const auto prompt_less = prepare_training_data(cfg, data);
  CHECK(values_of((*prompt_less[0].teacher).text) != values_of((*data[0].teacher).text));
  auto copy = data;
  apply_prompt_less_teacher(copy, 8, fnv1a64("prompt-less teacher"));
  for (View v : kAllViews) {
    CHECK(values_of((*copy[1].teacher)[v]) == values_of((*prompt_less[1].teacher)[v]));
    CHECK((*copy[1].teacher)[v].size() == 8);
  }
}

// --- reports and checkpoints ----------------------------------------------------------

TEST_CASE("run report JSON round trip") {
  RunReport r;
  r.config = {{"lambda", "1"}, {"tau", "2"}};
  EpochRecord e;
  e.epoch = 1;
  e.l_final = 0.1 / 3;
  e.l_branch = 2.0 / 7;
  e.l_dv.text = 0.25;
  e.l_c = e.l_final + e.l_branch;
  e.l_total = e.l_c + 0.25;
  r.epochs.push_back(e);
  r.metrics = Metrics{0.75, 1.0 / 3, 0.6, 0.8125};
  r.wall_seconds = 1.5;
  r.seed = 42;
  const auto back = RunReport::from_json(r.to_json());
  CHECK(back.config == r.config);
  REQUIRE(back.epochs.size() == 1);
  CHECK(back.epochs[0].l_final == e.l_final);
  CHECK(back.epochs[0].l_dv.text == 0.25);
  CHECK_FALSE(back.epochs[0].l_dv.image.has_value());
  CHECK(back.metrics->f1_fake == 1.0 / 3);
  CHECK(back.seed == 42);
  CHECK(back.to_json() == r.to_json());
  CHECK_THROWS_AS(RunReport::from_json("{"), FormatError);
}

TEST_CASE("checkpoint round trip") {
  TempDir tmp;
  const auto data = tiny_data(16);
  const auto cfg = tiny_config(8);
  const auto trained = train(cfg, data);
  save_checkpoint(trained.model, tmp / "c.bin");

  model::Model fresh(cfg.model_config());
  const auto probe = tiny_data(50, 3);
  const auto batch = model::make_batch(probe, false);
  CHECK(values_of(fresh.forward(batch).logits) != values_of(trained.model.forward(batch).logits));
  load_checkpoint(fresh, tmp / "c.bin");
  CHECK(snapshot(fresh) == snapshot(trained.model));
  CHECK(values_of(fresh.forward(batch).logits) == values_of(trained.model.forward(batch).logits));

  SUBCASE("evaluation does not depend on loss settings") {
    for (double v : {0.0, 0.7}) {
      auto c2 = cfg;
      c2.lambda = v * 3;
      c2.tau = 0.5 + v;
      c2.alpha = v;
      model::Model m(c2.model_config());
      load_checkpoint(m, tmp / "c.bin");
      const auto a = evaluate(m, probe), b = evaluate(trained.model, probe);
      CHECK(a.accuracy == b.accuracy);
      CHECK(a.auc == b.auc);
      CHECK(a.f1_fake == b.f1_fake);
    }
  }
  SUBCASE("truncated file leaves the model untouched") {
    const auto bytes = io::read_file(tmp / "c.bin");
    std::ofstream(tmp / "t.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 13);
    model::Model m(cfg.model_config());
    const auto before = snapshot(m);
    CHECK_THROWS_AS(load_checkpoint(m, tmp / "t.bin"), FormatError);
    CHECK(snapshot(m) == before);
  }
  SUBCASE("version mismatch") {
    auto bytes = io::read_file(tmp / "c.bin");
    bytes[8] = 2;
    std::ofstream(tmp / "v.bin", std::ios::binary) << bytes;
    model::Model m(cfg.model_config());
    CHECK_THROWS_AS(load_checkpoint(m, tmp / "v.bin"), VersionError);
  }
  SUBCASE("bad magic") {
    auto bytes = io::read_file(tmp / "c.bin");
    bytes[0] = 'X';
    std::ofstream(tmp / "m.bin", std::ios::binary) << bytes;
    model::Model m(cfg.model_config());
    CHECK_THROWS_AS(load_checkpoint(m, tmp / "m.bin"), FormatError);
  }
  SUBCASE("other width names the parameter") {
    auto wide = grad_check_config(16, 8);
    model::Model m(wide.model_config());
    try {
      load_checkpoint(m, tmp / "c.bin");
      FAIL("expected a shape error");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("checkpoint parameter ") != std::string::npos);
    }
  }
}
