#pragma once

// Judge client for a chat-completions style HTTPS endpoint. The describer
// and grader may be different models. Every request/response pair is
// appended to a JSON-lines log when a log path is configured.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "errors.hpp"
#include "http_util.hpp"
#include "judge.hpp"
#include "png_io.hpp"

namespace clens {

struct RemoteJudgeConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string token_env = "CONCEPT_LENS_JUDGE_TOKEN";
  std::string describer_model = "gpt-5";
  std::string grader_model = "gpt-5-mini";
  std::optional<double> temperature;  // sent only when set
  std::string log_path;               // empty disables logging
  double max_requests_per_second = 0.0;  // 0 = unlimited
  int timeout_seconds = 120;
};

// Spaces request start times at least 1/rate apart across threads.
class RateLimiter {
 public:
  explicit RateLimiter(double per_second) : per_second_(per_second) {}
  void acquire() {
    if (per_second_ <= 0.0) return;
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(mutex_);
      const auto now = std::chrono::steady_clock::now();
      const auto gap = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(1.0 / per_second_));
      slot = std::max(now, next_);
      next_ = slot + gap;
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  double per_second_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_{};
};

class RemoteJudge : public JudgeClient {
 public:
  explicit RemoteJudge(RemoteJudgeConfig config)
      : config_(std::move(config)), url_(http::split_url(config_.base_url)), limiter_(config_.max_requests_per_second) {
    const char* tok = std::getenv(config_.token_env.c_str());
    if (!tok || !*tok) throw InputError("judge token not set: export " + config_.token_env);
    token_ = tok;
  }

  std::string describe_image(const Image& image, const std::string& question, const SampleContext& ctx) const override {
    const auto png = encode_png(image);
    const std::string data_url = "data:image/png;base64," + http::base64_encode(png.data(), png.size());
    nlohmann::json content = nlohmann::json::array(
        {{{"type", "text"}, {"text", question}}, {{"type", "image_url"}, {"image_url", {{"url", data_url}}}}});
    nlohmann::json body = {{"model", config_.describer_model},
                           {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
    if (config_.temperature) body["temperature"] = *config_.temperature;
    return chat(body, "describe", ctx.image_id, ctx.sample_index);
  }

  int grade(const std::string& request, const std::string& response, const std::string& concept_text) const override {
    nlohmann::json body = {
        {"model", config_.grader_model},
        {"messages",
         nlohmann::json::array({{{"role", "user"}, {"content", build_rubric(request, response, concept_text)}}})}};
    const std::string text = chat(body, "grade", concept_text, -1);
    const auto v = parse_rubric_verdict(text);
    // An unparseable grade is treated like a transient failure so it gets retried.
    if (!v) throw TransportError("grader reply has no Result line");
    return *v;
  }

  std::map<std::string, std::string> identity() const override {
    return {{"describer", config_.describer_model}, {"grader", config_.grader_model}, {"endpoint", config_.base_url}};
  }

 private:
  std::string chat(nlohmann::json body, const std::string& role, const std::string& subject, int sample) const {
    limiter_.acquire();
    httplib::Client cli(url_.origin);
    cli.set_connection_timeout(config_.timeout_seconds, 0);
    cli.set_read_timeout(config_.timeout_seconds, 0);
    cli.set_bearer_token_auth(token_);
    const std::string payload = body.dump();
    auto res = cli.Post(url_.path + "/chat/completions", payload, "application/json");
    std::string reply;
    std::string failure;
    if (!res) {
      failure = "request failed: " + httplib::to_string(res.error());
    } else if (res->status != 200) {
      failure = "HTTP " + std::to_string(res->status);
    } else {
      try {
        reply = nlohmann::json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const std::exception& e) {
        failure = std::string("malformed reply: ") + e.what();
      }
    }
    log(role, subject, sample, body, res ? res->body : std::string(), failure);
    if (!failure.empty()) throw TransportError(failure);
    return reply;
  }

  void log(const std::string& role, const std::string& subject, int sample, nlohmann::json request,
           const std::string& response, const std::string& failure) const {
    if (config_.log_path.empty()) return;
    // Image payloads are elided to keep the log readable.
    for (auto& m : request["messages"])
      if (m["content"].is_array())
        for (auto& part : m["content"])
          if (part.contains("image_url")) part["image_url"]["url"] = "<png elided>";
    nlohmann::json line = {{"role", role},       {"subject", subject}, {"sample", sample},
                           {"request", request}, {"response", response}};
    if (!failure.empty()) line["error"] = failure;
    std::lock_guard lock(log_mutex_);
    std::ofstream out(config_.log_path, std::ios::app);
    out << line.dump() << '\n';
  }

  RemoteJudgeConfig config_;
  http::Url url_;
  std::string token_;
  mutable RateLimiter limiter_;
  mutable std::mutex log_mutex_;
};

}  // namespace clens
