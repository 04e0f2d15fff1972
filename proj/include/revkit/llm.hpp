#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "revkit/http_client.hpp"

namespace revkit::llm {

/// Decoding settings. Defaults are the ones used for both synthetic data
/// generation and revision optimization.
struct SamplingConfig {
  double temperature = 0.8;
  double top_p = 0.9;
  int top_k = 50;
  int max_new_tokens = 8192;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  SamplingConfig sampling;
  std::optional<std::uint64_t> seed;
};

ChatRequest user_prompt(std::string prompt, const SamplingConfig& sampling,
                        std::optional<std::uint64_t> seed = std::nullopt);

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Returns the text of the first choice. Throws ProviderUnavailable on
  /// transport failure and ProviderError on a bad reply.
  virtual std::string complete(const ChatRequest& request) = 0;
};

/// OpenAI-compatible chat-completions endpoint.
class HttpLlmClient final : public LlmClient {
 public:
  HttpLlmClient(Endpoint endpoint, std::string model);
  std::string complete(const ChatRequest& request) override;

  nlohmann::json request_body(const ChatRequest& request) const;

 private:
  Endpoint endpoint_;
  std::string model_;
};

/// Replays canned replies. With a reply list, replies are served in call
/// order; with a responder, each reply is computed from the request and the
/// zero-based call index. Every request is recorded.
class ScriptedLlm final : public LlmClient {
 public:
  using Responder = std::function<std::string(const ChatRequest&, std::size_t call_index)>;

  explicit ScriptedLlm(std::vector<std::string> replies, bool cycle = false);
  explicit ScriptedLlm(Responder responder);

  std::string complete(const ChatRequest& request) override;

  std::vector<ChatRequest> requests() const;
  std::size_t calls() const;

 private:
  mutable std::mutex mu_;
  std::vector<std::string> replies_;
  bool cycle_ = false;
  Responder responder_;
  std::vector<ChatRequest> requests_;
};

/// Returns the first brace-balanced JSON object embedded in free text,
/// skipping braces inside string literals. nullopt when none parses.
std::optional<nlohmann::json> extract_json_object(std::string_view text);

}  // namespace revkit::llm
