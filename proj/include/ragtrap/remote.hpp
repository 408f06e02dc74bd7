/* Copyright 2026 The ragtrap Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Optional bridge to a chat-completion style HTTP endpoint. Never required
// by the offline pipeline.

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "ragtrap/error.hpp"
#include "ragtrap/ragsim.hpp"

namespace ragtrap {

class RemoteError : public Error {
 public:
  using Error::Error;
};
class RemoteConfigError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};
class RemoteNetworkError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};
class RemoteTimeoutError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};
class RemoteStatusError : public RemoteError {
 public:
  RemoteStatusError(int status, const std::string& what) : RemoteError(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};
class RemoteParseError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};

struct RemoteEndpointConfig {
  std::string url;  // e.g. http://127.0.0.1:8080/v1/chat/completions
  std::string model = "generator";
  std::string api_key_env;  // name of the environment variable; the key itself is never stored
  int timeout_ms = 30000;
  std::size_t max_concurrent = 4;
  std::size_t max_tokens = 150;
  double temperature = 0.1;
};

namespace detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw RemoteConfigError("remote: url lacks a scheme: " + url);
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw RemoteConfigError("remote: unsupported scheme " + scheme);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (scheme == "https") throw RemoteConfigError("remote: https requires a build with OpenSSL support");
#endif
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (out.origin.size() <= scheme_end + 3) throw RemoteConfigError("remote: url lacks a host: " + url);
  return out;
}

class Limiter {
 public:
  explicit Limiter(std::size_t n) : free_(n == 0 ? 1 : n) {}
  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t free_;
};

}  // namespace detail

class RemoteClient {
 public:
  explicit RemoteClient(RemoteEndpointConfig cfg)
      : cfg_(std::move(cfg)), url_(detail::parse_url(cfg_.url)), limiter_(std::make_unique<detail::Limiter>(cfg_.max_concurrent)) {
    if (cfg_.timeout_ms <= 0) throw RemoteConfigError("remote: timeout_ms must be > 0");
  }

  const RemoteEndpointConfig& config() const noexcept { return cfg_; }

  static nlohmann::json request_body(const RemoteEndpointConfig& cfg, const std::string& prompt) {
    return {{"model", cfg.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
            {"max_tokens", cfg.max_tokens},
            {"temperature", cfg.temperature}};
  }

  // Returns the first choice's message content.
  std::string complete(const std::string& prompt) const {
    struct Slot {
      detail::Limiter& l;
      explicit Slot(detail::Limiter& lim) : l(lim) { l.acquire(); }
      ~Slot() { l.release(); }
    } slot(*limiter_);

    httplib::Client cli(url_.origin);
    const auto to = std::chrono::milliseconds(cfg_.timeout_ms);
    cli.set_connection_timeout(to);
    cli.set_read_timeout(to);
    cli.set_write_timeout(to);
    httplib::Headers headers;
    if (!cfg_.api_key_env.empty()) {
      if (const char* key = std::getenv(cfg_.api_key_env.c_str())) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
      }
    }
    const auto start = std::chrono::steady_clock::now();
    auto res = cli.Post(url_.path, headers, request_body(cfg_, prompt).dump(), "application/json");
    if (!res) {
      const auto err = res.error();
      const auto elapsed = std::chrono::steady_clock::now() - start;
      if (err == httplib::Error::ConnectionTimeout ||
          (err == httplib::Error::Read && elapsed >= to)) {
        throw RemoteTimeoutError("remote: request timed out after " + std::to_string(cfg_.timeout_ms) + " ms");
      }
      throw RemoteNetworkError("remote: " + httplib::to_string(err));
    }
    if (res->status < 200 || res->status >= 300) {
      throw RemoteStatusError(res->status, "remote: HTTP status " + std::to_string(res->status));
    }
    return parse_response(res->body);
  }

  static std::string parse_response(const std::string& body) {
    const auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) throw RemoteParseError("remote: response is not JSON");
    try {
      const auto& content = j.at("choices").at(0).at("message").at("content");
      if (!content.is_string()) throw RemoteParseError("remote: message content is not a string");
      return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw RemoteParseError(std::string("remote: unexpected response shape: ") + e.what());
    }
  }

 private:
  RemoteEndpointConfig cfg_;
  detail::ParsedUrl url_;
  std::unique_ptr<detail::Limiter> limiter_;
};

inline GeneratorOutput remote_generate(const RemoteClient& client, const std::string& prompt, const Vocabulary& vocab) {
  GeneratorOutput out;
  out.text = client.complete(prompt);
  out.tokens = tokenize(out.text, vocab);
  out.answer = normalize_text(out.text);
  return out;
}

// Remote generator that optionally degrades to the extractive stub on any
// remote failure.
class RemoteGenerator final : public Generator {
 public:
  RemoteGenerator(RemoteEndpointConfig cfg, const Vocabulary& vocab, bool fallback_to_stub)
      : client_(std::move(cfg)), vocab_(vocab), fallback_(fallback_to_stub) {}

  GeneratorOutput generate(const GenerationRequest& req) const override {
    try {
      return remote_generate(client_, req.prompt, vocab_);
    } catch (const RemoteError&) {
      if (!fallback_) throw;
      return stub_generate(req.query, req.docs, vocab_, client_.config().max_tokens);
    }
  }
  std::string name() const override { return "remote"; }

 private:
  RemoteClient client_;
  const Vocabulary& vocab_;
  bool fallback_;
};

}  // namespace ragtrap
