#include "httplib.h"

#include "mrd/teacher_client.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <thread>

#include "json.hpp"

#include "mrd/error.hpp"
#include "mrd/io.hpp"

namespace mrd::teacher {

using nlohmann::json;

namespace {

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

// Per-key write serialization for the cache.
std::mutex& key_mutex(const std::string& key) {
  static std::mutex table_mu;
  static std::map<std::string, std::unique_ptr<std::mutex>> table;
  std::lock_guard lock(table_mu);
  auto& slot = table[key];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

}  // namespace

std::string PromptTemplate::fill(const std::string& text, const std::string& image_ref) const {
  std::string out = body;
  replace_all(out, "{TEXT}", text);
  replace_all(out, "{IMAGE_REF}", image_ref);
  return out;
}

PromptTemplate PromptRegistry::parse(View view, const std::string& contents) {
  const std::string tag = "template_id:";
  const auto eol = contents.find('\n');
  const std::string first = contents.substr(0, eol);
  if (first.rfind(tag, 0) != 0) {
    throw FormatError(std::string(view_name(view)) + " prompt must start with '" + tag + "'");
  }
  PromptTemplate t;
  t.view = view;
  t.template_id = first.substr(tag.size());
  t.template_id.erase(0, t.template_id.find_first_not_of(" \t"));
  t.template_id.erase(t.template_id.find_last_not_of(" \t\r") + 1);
  t.body = eol == std::string::npos ? "" : contents.substr(eol + 1);
  t.body.erase(0, t.body.find_first_not_of("\r\n"));
  while (!t.body.empty() && (t.body.back() == '\n' || t.body.back() == '\r')) t.body.pop_back();
  if (t.template_id.empty()) throw FormatError(std::string(view_name(view)) + " prompt has no id");
  if (t.body.empty()) throw FormatError(std::string(view_name(view)) + " prompt body is empty");
  return t;
}

PromptRegistry PromptRegistry::load_dir(const std::filesystem::path& dir) {
  PromptRegistry reg;
  for (View v : kAllViews) {
    reg.set(parse(v, io::read_file(dir / (std::string(view_name(v)) + ".prompt"))));
  }
  return reg;
}

void PromptRegistry::set(PromptTemplate t) {
  if (t.body.empty()) throw FormatError("prompt body is empty");
  const View v = t.view;
  templates_[v] = std::move(t);
}

const PromptTemplate& PromptRegistry::get(View view) const {
  if (!templates_[view]) {
    throw ConfigError("no prompt template for the " + std::string(view_name(view)) + " view");
  }
  return *templates_[view];
}

bool PromptRegistry::complete() const {
  return templates_.text && templates_.image && templates_.cross;
}

std::string cache_key(const std::string& template_id, const SamplePayload& sample) {
  std::string key = template_id;
  key += '\x1f';
  key += sample.text;
  key += '\x1f';
  key += sample.image_ref;
  return sha256_hex(key);
}

ChatClient::ChatClient(ClientConfig cfg) : cfg_(std::move(cfg)) {
  const auto scheme_end = cfg_.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("teacher.endpoint must be an absolute URL, got '" + cfg_.endpoint + "'");
  }
  const auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
  scheme_host_ = cfg_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : cfg_.endpoint.substr(path_start);
  if (cfg_.retries < 0) throw ConfigError("teacher.retries must be non-negative");
}

std::optional<std::string> ChatClient::cached(const std::string& key) const {
  const auto file = cfg_.cache_dir / key;
  std::lock_guard lock(key_mutex(file.string()));
  if (!std::filesystem::exists(file)) return std::nullopt;
  return io::read_file(file);
}

void ChatClient::store(const std::string& key, const std::string& chain) {
  const auto file = cfg_.cache_dir / key;
  std::lock_guard lock(key_mutex(file.string()));
  io::write_file_atomic(file, chain);
}

std::vector<std::string> ChatClient::warnings() const {
  std::lock_guard lock(mu_);
  return warnings_;
}

void ChatClient::warn(std::string message) {
  std::lock_guard lock(mu_);
  warnings_.push_back(std::move(message));
}

std::optional<std::string> ChatClient::complete(const std::string& prompt,
                                                const std::string& context) {
  const json request = {{"model", cfg_.model},
                        {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  const std::string body = request.dump();
  httplib::Headers headers;
  if (const char* token = std::getenv(cfg_.token_env.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
    if (attempt > 0 && cfg_.retry_backoff_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.retry_backoff_ms * attempt));
    }
    ++calls_;
    httplib::Client cli(scheme_host_);
    cli.set_connection_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
    cli.set_read_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
    auto res = cli.Post(path_, headers, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      const json reply = json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      warn(context + ": malformed completion response, chain left empty");
      return std::nullopt;
    }
  }
  throw EndpointError(context + ": endpoint failed after " + std::to_string(cfg_.retries + 1) +
                      " attempts (" + last_error + ")");
}

std::vector<ReasoningRecord> generate_reasoning(ChatClient& client, const SamplePayload& sample,
                                                const PromptRegistry& templates) {
  std::vector<ReasoningRecord> out;
  for (View v : kAllViews) {
    const auto& tmpl = templates.get(v);
    const std::string key = cache_key(tmpl.template_id, sample);
    std::string chain;
    if (auto hit = client.cached(key)) {
      chain = std::move(*hit);
    } else {
      const std::string context =
          "sample " + sample.sample_id + ", view " + std::string(view_name(v));
      if (auto reply = client.complete(tmpl.fill(sample.text, sample.image_ref), context)) {
        chain = std::move(*reply);
        client.store(key, chain);
      }
    }
    const auto& cfg = client.config();
    out.push_back(ReasoningRecord{sample.sample_id, v, chain,
                                  fallback_embed(chain, cfg.d_t, cfg.embed_seed)});
  }
  return out;
}

std::vector<ReasoningRecord> generate_reasoning_all(ChatClient& client,
                                                    const std::vector<SamplePayload>& samples,
                                                    const PromptRegistry& templates) {
  std::vector<std::vector<ReasoningRecord>> results(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
  std::atomic<std::size_t> next{0};
  const std::size_t workers =
      std::max<std::size_t>(1, std::min(client.config().max_in_flight, samples.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < samples.size(); i = next++) {
          try {
            results[i] = generate_reasoning(client, samples[i], templates);
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
  std::vector<ReasoningRecord> out;
  for (auto& r : results) out.insert(out.end(), r.begin(), r.end());
  return out;
}

}  // namespace mrd::teacher
