#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"

#include "mrd/error.hpp"
#include "mrd/io.hpp"
#include "mrd/random.hpp"
#include "mrd/teacher.hpp"
#include "mrd/teacher_client.hpp"
#include "test_util.hpp"

using namespace mrd;
using namespace mrd::teacher;
using nlohmann::json;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::vector<ReasoningRecord> sample_records(const std::string& id, std::size_t d_t, Rng& rng) {
  std::vector<ReasoningRecord> out;
  for (View v : kAllViews) {
    std::vector<double> e(d_t);
    for (auto& x : e) x = rng.normal() * 1e3 / 7.0;
    out.push_back({id, v, "chain for " + id + " \"quoted\" \\ \n\t\xc3\xa9 " +
                              std::string(view_name(v)),
                   e});
  }
  return out;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

// --- projection ---------------------------------------------------------------

TEST_CASE("project_teacher examples") {
  const auto spec = ProjectionSpec::seeded(16, 6, 42);
  const std::vector<double> zeros(16, 0.0);
  for (double x : vec(project_teacher(zeros, spec))) CHECK(x == 0.0);

  const auto eye = ProjectionSpec::identity(5);
  const std::vector<double> raw{1.5, -2, 0, 3.25, 7};
  CHECK(vec(project_teacher(raw, eye)) == raw);

  std::vector<double> e1(16, 0.0);
  e1[0] = 1.0;
  const auto regenerated = ProjectionSpec::seeded(16, 6, 42);
  const auto out = vec(project_teacher(e1, spec));
  for (std::size_t j = 0; j < 6; ++j) CHECK(out[j] == regenerated.matrix[j]);
  CHECK_FALSE(project_teacher(e1, spec).requires_grad());

  CHECK_THROWS_AS(project_teacher(std::vector<double>(15, 0.0), spec), DimensionError);
}

TEST_CASE("seeded projection entries follow N(0, 1/d_t)") {
  const auto spec = ProjectionSpec::seeded(400, 50, 3);
  double s = 0.0, ss = 0.0;
  for (double x : spec.matrix) {
    s += x;
    ss += x * x;
  }
  const double n = static_cast<double>(spec.matrix.size());
  CHECK(std::abs(s / n) < 0.01);
  CHECK(ss / n == doctest::Approx(1.0 / 400).epsilon(0.05));
  const auto other = ProjectionSpec::seeded(400, 50, 4);
  CHECK(other.matrix != spec.matrix);
}

// --- teacher file ---------------------------------------------------------------

TEST_CASE("teacher file round trip is bit-exact") {
  TempDir tmp;
  Rng rng(1);
  std::vector<ReasoningRecord> records;
  for (const char* id : {"s0", "s1", "s2"}) {
    auto r = sample_records(id, 12, rng);
    records.insert(records.end(), r.begin(), r.end());
  }
  const TeacherFileHeader header{12, 4, 99, 1};
  save_teacher_file(tmp / "t.jsonl", header, records);
  const auto data = load_teacher_file(tmp / "t.jsonl");
  CHECK(data.embeddings.size() == 3);
  REQUIRE(data.records.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(data.records[i].sample_id == records[i].sample_id);
    CHECK(data.records[i].view == records[i].view);
    CHECK(data.records[i].chain == records[i].chain);
    CHECK(data.records[i].raw_embedding == records[i].raw_embedding);
  }
  const auto spec = ProjectionSpec::seeded(12, 4, 99);
  for (const auto& r : records) {
    const auto expected = vec(project_teacher(r.raw_embedding, spec));
    CHECK(vec(data.embeddings.at(r.sample_id)[r.view]) == expected);
    CHECK_FALSE(data.embeddings.at(r.sample_id)[r.view].requires_grad());
  }
  CHECK(data.header.projection_seed == 99u);
}

TEST_CASE("teacher file validation") {
  TempDir tmp;
  Rng rng(2);
  std::vector<ReasoningRecord> records;
  for (const char* id : {"s1", "s2"}) {
    auto r = sample_records(id, 8, rng);
    records.insert(records.end(), r.begin(), r.end());
  }

  SUBCASE("missing view names sample and view") {
    auto missing = records;
    missing.pop_back();  // s2 cross
    save_teacher_file(tmp / "m.jsonl", {8, 8, std::nullopt, 1}, missing);
    try {
      load_teacher_file(tmp / "m.jsonl");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("s2") != std::string::npos);
      CHECK(msg.find("cross") != std::string::npos);
    }
  }
  SUBCASE("embedding width mismatch") {
    save_teacher_file(tmp / "w.jsonl", {8, 8, std::nullopt, 1}, records);
    auto lines = io::read_lines(tmp / "w.jsonl");
    auto rec = json::parse(lines[2]);
    rec["embedding"].push_back(1.0);
    lines[2] = rec.dump();
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    write_text(tmp / "w.jsonl", text);
    CHECK_THROWS_AS(load_teacher_file(tmp / "w.jsonl"), FormatError);
  }
  SUBCASE("save refuses a wrong width") {
    CHECK_THROWS_AS(save_teacher_file(tmp / "x.jsonl", {9, 9, std::nullopt, 1}, records),
                    FormatError);
  }
  SUBCASE("version mismatch") {
    write_text(tmp / "v.jsonl",
               "{\"d_t\":8,\"d\":8,\"projection_seed\":null,\"format_version\":2}\n");
    CHECK_THROWS_AS(load_teacher_file(tmp / "v.jsonl"), VersionError);
  }
  SUBCASE("malformed record reports its line") {
    write_text(tmp / "b.jsonl",
               "{\"d_t\":8,\"d\":8,\"projection_seed\":null,\"format_version\":1}\n{oops\n");
    try {
      load_teacher_file(tmp / "b.jsonl");
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("duplicate record") {
    auto dup = records;
    dup.push_back(records[0]);
    save_teacher_file(tmp / "d.jsonl", {8, 8, std::nullopt, 1}, dup);
    CHECK_THROWS_AS(load_teacher_file(tmp / "d.jsonl"), ValidationError);
  }
  SUBCASE("identity projection needs d_t == d") {
    write_text(tmp / "i.jsonl",
               "{\"d_t\":8,\"d\":4,\"projection_seed\":null,\"format_version\":1}\n");
    CHECK_THROWS_AS(load_teacher_file(tmp / "i.jsonl"), FormatError);
  }
  SUBCASE("report of missing and extra samples") {
    save_teacher_file(tmp / "r.jsonl", {8, 8, std::nullopt, 1}, records);
    const std::set<std::string> expected{"s0", "s1"};
    const auto data = load_teacher_file(tmp / "r.jsonl", &expected);
    CHECK(data.report.missing_samples == std::vector<std::string>{"s0"});
    CHECK(data.report.extra_samples == std::vector<std::string>{"s2"});
    CHECK(data.report.records == 6);
  }
}

// --- fallback embedder ----------------------------------------------------------

namespace {

// Independent trace of the seeded 3-gram hash.
std::uint64_t trace_hash(const std::string& gram, std::uint64_t seed) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  std::uint64_t h = 0xcbf29ce484222325ULL ^ (z ^ (z >> 31));
  for (unsigned char c : gram) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

}  // namespace

TEST_CASE("fallback_embed examples") {
  CHECK(fallback_embed("some chain", 32, 1) == fallback_embed("some chain", 32, 1));
  for (double x : fallback_embed("", 16, 1)) CHECK(x == 0.0);
  for (double x : fallback_embed("ab", 16, 1)) CHECK(x == 0.0);

  const auto v = fallback_embed("abc", 8, 7);
  const std::uint64_t h = trace_hash("abc", 7);
  const std::size_t bucket = h % 8;
  const double sign = (h >> 63) ? -1.0 : 1.0;
  for (std::size_t i = 0; i < 8; ++i) CHECK(v[i] == (i == bucket ? sign : 0.0));
  CHECK(hash_gram("abc", 8, 7).bucket == bucket);

  CHECK_THROWS_AS(fallback_embed("abc", 7, 0), ParameterError);
}

TEST_CASE("fallback_embed norm is 0 or 1") {
  Rng rng(5);
  for (int t = 0; t < 300; ++t) {
    std::string s(rng.index(40), ' ');
    for (auto& c : s) c = static_cast<char>('a' + rng.index(6));
    const auto v = fallback_embed(s, 8 + rng.index(64), rng.next());
    double n = 0.0;
    for (double x : v) n += x * x;
    CHECK((n == 0.0 || std::abs(std::sqrt(n) - 1.0) <= 1e-12));
  }
}

// --- synthetic oracle -------------------------------------------------------------

TEST_CASE("synthetic_teacher_oracle examples") {
  const auto oracle = TeacherOracle::make(8, 11, 1.0, 1.0);
  double norm = 0.0;
  for (double x : oracle.class_direction) norm += x * x;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-14));

  const auto real = synthetic_teacher_oracle(oracle, Corruption::kNone, kReal, 0.0, 1);
  for (View v : kAllViews) CHECK(vec(real[v]) == oracle.class_direction);

  const auto fake = synthetic_teacher_oracle(oracle, Corruption::kCrossMismatch, kFake, 0.0, 1);
  auto component = [&](View v, View dir) {
    double dot = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      dot += (fake[v].at(i) + oracle.class_direction[i]) * oracle.corruption_direction[dir][i];
    }
    return dot;
  };
  CHECK(component(View::kCross, View::kCross) == doctest::Approx(1.0).epsilon(1e-14));
  for (View v : {View::kText, View::kImage}) {
    for (std::size_t i = 0; i < 8; ++i) CHECK(fake[v].at(i) == -oracle.class_direction[i]);
  }

  const auto a = synthetic_teacher_oracle(oracle, Corruption::kTextFabrication, kFake, 0.3, 9);
  const auto b = synthetic_teacher_oracle(oracle, Corruption::kTextFabrication, kFake, 0.3, 9);
  for (View v : kAllViews) {
    CHECK(vec(a[v]) == vec(b[v]));
    CHECK_FALSE(a[v].requires_grad());
  }
  CHECK_THROWS_AS(synthetic_teacher_oracle(oracle, Corruption::kNone, 2, 0.0, 1), ParameterError);
  CHECK_THROWS_AS(parse_corruption("photoshopped"), ParameterError);

  const auto recs = oracle_records("s7", a);
  REQUIRE(recs.size() == 3);
  CHECK(recs[2].view == View::kCross);
  CHECK(recs[0].chain.empty());
}

// --- prompts ----------------------------------------------------------------------

TEST_CASE("prompt templates") {
  const auto t = PromptRegistry::parse(View::kImage, "template_id: img-v2\n\nLook at {IMAGE_REF} and {TEXT}.\n");
  CHECK(t.template_id == "img-v2");
  CHECK(t.fill("the text", "pic-1") == "Look at pic-1 and the text.");
  CHECK_THROWS_AS(PromptRegistry::parse(View::kText, "no header\nbody"), FormatError);
  CHECK_THROWS_AS(PromptRegistry::parse(View::kText, "template_id: x\n"), FormatError);

  const auto shipped = PromptRegistry::load_dir(MRD_SOURCE_DIR "/prompts");
  CHECK(shipped.complete());
  for (View v : kAllViews) {
    CHECK_FALSE(shipped.get(v).body.empty());
    CHECK(shipped.get(v).body.find(v == View::kImage ? "{IMAGE_REF}" : "{TEXT}") != std::string::npos);
  }
  CHECK(shipped.get(View::kCross).body.find("{IMAGE_REF}") != std::string::npos);

  PromptRegistry partial;
  partial.set(t);
  CHECK_FALSE(partial.complete());
  CHECK_THROWS_AS(partial.get(View::kText), ConfigError);
}

// --- endpoint client against a local mock server -----------------------------------

namespace {

class MockEndpoint {
 public:
  enum class Mode { kEcho, kMalformed, kFailTwice, kAlways500 };

  explicit MockEndpoint(Mode mode) : mode_(mode) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int now = ++in_flight_;
      {
        std::lock_guard lock(mu_);
        max_in_flight_ = std::max(max_in_flight_, now);
        auth_ = req.get_header_value("Authorization");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      const int n = ++hits_;
      --in_flight_;
      if (mode_ == Mode::kAlways500 || (mode_ == Mode::kFailTwice && n <= 2)) {
        res.status = 500;
        return;
      }
      if (mode_ == Mode::kMalformed) {
        res.set_content("{\"unexpected\": true}", "application/json");
        return;
      }
      const auto body = json::parse(req.body);
      const std::string prompt = body.at("messages").at(0).at("content");
      const json reply = {
          {"choices", json::array({{{"message", {{"role", "assistant"},
                                                  {"content", "analysis: " + prompt.substr(0, 60)}}}}})}};
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string url() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
  }
  int hits() const { return hits_; }
  int max_in_flight() const {
    std::lock_guard lock(mu_);
    return max_in_flight_;
  }
  std::string auth() const {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  Mode mode_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> hits_{0};
  std::atomic<int> in_flight_{0};
  mutable std::mutex mu_;
  int max_in_flight_ = 0;
  std::string auth_;
};

PromptRegistry test_templates() {
  PromptRegistry reg;
  reg.set(PromptRegistry::parse(View::kText, "template_id: t1\nCheck the text: {TEXT}"));
  reg.set(PromptRegistry::parse(View::kImage, "template_id: i1\nCheck the image {IMAGE_REF}"));
  reg.set(PromptRegistry::parse(View::kCross, "template_id: c1\nCompare {TEXT} with {IMAGE_REF}"));
  return reg;
}

ClientConfig client_config(const std::string& url, const TempDir& tmp) {
  ClientConfig cfg;
  cfg.endpoint = url;
  cfg.cache_dir = tmp / "cache";
  cfg.retries = 2;
  cfg.retry_backoff_ms = 1;
  cfg.timeout_ms = 2000;
  cfg.d_t = 32;
  cfg.embed_seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("generate_reasoning: new sample, then a cache hit") {
  MockEndpoint server(MockEndpoint::Mode::kEcho);
  TempDir tmp;
  ::setenv("MRD_TEACHER_TOKEN", "test-token-123", 1);
  ChatClient client(client_config(server.url(), tmp));
  const SamplePayload sample{"s1", "a headline", "img-001"};
  const auto templates = test_templates();

  const auto first = generate_reasoning(client, sample, templates);
  REQUIRE(first.size() == 3);
  CHECK(client.network_calls() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(first[i].view == kAllViews[i]);
    CHECK(first[i].sample_id == "s1");
    CHECK_FALSE(first[i].chain.empty());
    CHECK(first[i].raw_embedding == fallback_embed(first[i].chain, 32, 5));
  }
  CHECK(first[0].chain.find("a headline") != std::string::npos);
  CHECK(first[1].chain.find("img-001") != std::string::npos);
  CHECK(server.auth() == "Bearer test-token-123");
  ::unsetenv("MRD_TEACHER_TOKEN");

  const auto again = generate_reasoning(client, sample, templates);
  CHECK(client.network_calls() == 3);
  CHECK(server.hits() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(again[i].chain == first[i].chain);

  ChatClient fresh(client_config(server.url(), tmp));
  generate_reasoning(fresh, sample, templates);
  CHECK(fresh.network_calls() == 0);

  const auto key = cache_key("t1", sample);
  CHECK(key.size() == 64);
  CHECK(std::filesystem::exists(tmp / "cache" / key));
  CHECK(cache_key("t2", sample) != key);
}

TEST_CASE("generate_reasoning: unreachable endpoint fails after the configured retries") {
  TempDir tmp;
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  auto cfg = client_config("http://127.0.0.1:" + std::to_string(port) + "/v1/chat", tmp);
  cfg.retries = 3;
  ChatClient client(cfg);
  try {
    generate_reasoning(client, {"s9", "x", "y"}, test_templates());
    FAIL("expected an endpoint error");
  } catch (const EndpointError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("s9") != std::string::npos);
    CHECK(msg.find("text") != std::string::npos);
  }
  CHECK(client.network_calls() == 4);
}

TEST_CASE("generate_reasoning: transient failures are retried") {
  MockEndpoint server(MockEndpoint::Mode::kFailTwice);
  TempDir tmp;
  ChatClient client(client_config(server.url(), tmp));
  const auto records = generate_reasoning(client, {"s1", "x", "y"}, test_templates());
  CHECK(server.hits() == 5);
  for (const auto& r : records) CHECK_FALSE(r.chain.empty());
}

TEST_CASE("generate_reasoning: HTTP errors exhaust retries") {
  MockEndpoint server(MockEndpoint::Mode::kAlways500);
  TempDir tmp;
  ChatClient client(client_config(server.url(), tmp));
  CHECK_THROWS_AS(generate_reasoning(client, {"s1", "x", "y"}, test_templates()), EndpointError);
  CHECK(server.hits() == 3);
}

TEST_CASE("generate_reasoning: malformed response gives an empty chain and a warning") {
  MockEndpoint server(MockEndpoint::Mode::kMalformed);
  TempDir tmp;
  ChatClient client(client_config(server.url(), tmp));
  const auto records = generate_reasoning(client, {"s3", "x", "y"}, test_templates());
  for (const auto& r : records) {
    CHECK(r.chain.empty());
    for (double x : r.raw_embedding) CHECK(x == 0.0);
  }
  const auto warnings = client.warnings();
  REQUIRE(warnings.size() == 3);
  CHECK(warnings[0].find("s3") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(tmp / "cache" / cache_key("t1", {"s3", "x", "y"})));
}

TEST_CASE("generate_reasoning_all keeps input order and caps concurrency") {
  MockEndpoint server(MockEndpoint::Mode::kEcho);
  TempDir tmp;
  auto cfg = client_config(server.url(), tmp);
  cfg.max_in_flight = 2;
  ChatClient client(cfg);
  std::vector<SamplePayload> samples;
  for (int i = 0; i < 8; ++i) samples.push_back({"s" + std::to_string(i), "text " + std::to_string(i), "img"});
  const auto records = generate_reasoning_all(client, samples, test_templates());
  REQUIRE(records.size() == 24);
  for (std::size_t i = 0; i < 24; ++i) {
    CHECK(records[i].sample_id == samples[i / 3].sample_id);
    CHECK(records[i].view == kAllViews[i % 3]);
  }
  CHECK(server.max_in_flight() <= 2);
  CHECK(server.hits() == 24);
}

TEST_CASE("client configuration errors") {
  ClientConfig cfg;
  cfg.endpoint = "not a url";
  CHECK_THROWS_AS(ChatClient{cfg}, ConfigError);
  cfg.endpoint = "http://localhost:1/x";
  cfg.retries = -1;
  CHECK_THROWS_AS(ChatClient{cfg}, ConfigError);
}
