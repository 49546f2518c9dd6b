#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mrd/teacher.hpp"

namespace mrd::teacher {

// View-specific instruction with {TEXT} and {IMAGE_REF} placeholders.
struct PromptTemplate {
  View view = View::kText;
  std::string template_id;
  std::string body;

  std::string fill(const std::string& text, const std::string& image_ref) const;
};

// One active template per view, loaded from <dir>/<view>.prompt. A prompt
// file starts with a "template_id: <id>" line followed by the body.
class PromptRegistry {
 public:
  static PromptRegistry load_dir(const std::filesystem::path& dir);
  static PromptTemplate parse(View view, const std::string& contents);

  void set(PromptTemplate t);
  const PromptTemplate& get(View view) const;
  bool complete() const;

 private:
  PerView<std::optional<PromptTemplate>> templates_;
};

struct ClientConfig {
  std::string endpoint;  // full URL of the chat-completion route
  std::string model = "teacher";
  int retries = 2;       // extra attempts after the first failure
  int timeout_ms = 30000;
  int retry_backoff_ms = 200;
  std::filesystem::path cache_dir = "teacher_cache";
  std::string token_env = "MRD_TEACHER_TOKEN";
  std::size_t max_in_flight = 4;
  std::size_t d_t = 384;          // fallback embedding width
  std::uint64_t embed_seed = 0;
};

struct SamplePayload {
  std::string sample_id;
  std::string text;
  std::string image_ref;
};

// Hex SHA-256 of the cache key for (template, sample content).
std::string cache_key(const std::string& template_id, const SamplePayload& sample);

// Chat-completion client with an on-disk response cache.
class ChatClient {
 public:
  explicit ChatClient(ClientConfig cfg);

  // Cached chain for (template, sample) if present.
  std::optional<std::string> cached(const std::string& key) const;
  void store(const std::string& key, const std::string& chain);

  // One completion with bounded retries. Returns nullopt (and records a
  // warning) when the endpoint answered with an unusable body; throws
  // EndpointError once every attempt failed.
  std::optional<std::string> complete(const std::string& prompt, const std::string& context);

  std::size_t network_calls() const { return calls_.load(); }
  std::vector<std::string> warnings() const;
  void warn(std::string message);
  const ClientConfig& config() const { return cfg_; }

 private:
  ClientConfig cfg_;
  std::string scheme_host_;
  std::string path_;
  std::atomic<std::size_t> calls_{0};
  mutable std::mutex mu_;
  std::vector<std::string> warnings_;
};

// Three records (text, image, cross) for one sample: template filled,
// completion fetched (or served from cache), chain embedded with
// fallback_embed. Re-runs on cached samples make no network calls.
std::vector<ReasoningRecord> generate_reasoning(ChatClient& client, const SamplePayload& sample,
                                                const PromptRegistry& templates);

// Many samples with at most cfg.max_in_flight concurrent requests. Output
// order follows the input order.
std::vector<ReasoningRecord> generate_reasoning_all(ChatClient& client,
                                                    const std::vector<SamplePayload>& samples,
                                                    const PromptRegistry& templates);

}  // namespace mrd::teacher
