#include "revkit/llm.hpp"

#include "revkit/error.hpp"

namespace revkit::llm {

ChatRequest user_prompt(std::string prompt, const SamplingConfig& sampling,
                        std::optional<std::uint64_t> seed) {
  ChatRequest req;
  req.messages.push_back({"user", std::move(prompt)});
  req.sampling = sampling;
  req.seed = seed;
  return req;
}

HttpLlmClient::HttpLlmClient(Endpoint endpoint, std::string model)
    : endpoint_(std::move(endpoint)), model_(std::move(model)) {}

nlohmann::json HttpLlmClient::request_body(const ChatRequest& request) const {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  nlohmann::json body = {{"model", model_},
                         {"messages", messages},
                         {"temperature", request.sampling.temperature},
                         {"top_p", request.sampling.top_p},
                         {"top_k", request.sampling.top_k},
                         {"max_tokens", request.sampling.max_new_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

std::string HttpLlmClient::complete(const ChatRequest& request) {
  const nlohmann::json reply = post_json(endpoint_, request_body(request));
  try {
    const auto& content = reply.at("choices").at(0).at("message").at("content");
    return content.is_null() ? std::string{} : content.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProviderError, std::string("malformed chat reply: ") + e.what());
  }
}

ScriptedLlm::ScriptedLlm(std::vector<std::string> replies, bool cycle)
    : replies_(std::move(replies)), cycle_(cycle) {}

ScriptedLlm::ScriptedLlm(Responder responder) : responder_(std::move(responder)) {}

std::string ScriptedLlm::complete(const ChatRequest& request) {
  std::size_t index;
  {
    std::lock_guard lock(mu_);
    index = requests_.size();
    requests_.push_back(request);
  }
  if (responder_) return responder_(request, index);
  if (replies_.empty() || (!cycle_ && index >= replies_.size()))
    throw Error(ErrorCode::ProviderError, "scripted LLM exhausted after " +
                                              std::to_string(replies_.size()) + " replies");
  return replies_[index % replies_.size()];
}

std::vector<ChatRequest> ScriptedLlm::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::size_t ScriptedLlm::calls() const {
  std::lock_guard lock(mu_);
  return requests_.size();
}

std::optional<nlohmann::json> extract_json_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        auto parsed = nlohmann::json::parse(text.substr(start, i - start + 1), nullptr, false);
        if (!parsed.is_discarded() && parsed.is_object()) return parsed;
        break;
      }
    }
  }
  return std::nullopt;
}

}  // namespace revkit::llm
