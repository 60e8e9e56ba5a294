// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotforge/remote.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>

namespace cotforge::backend {

HttpTransport::HttpTransport(const BackendProfile& profile)
    : timeout_ms_(profile.timeout_ms) {
  const auto& url = profile.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint '" + url + "' is not a URL");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (!profile.api_key_env.empty()) {
    const char* key = std::getenv(profile.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw ConfigError("environment variable " + profile.api_key_env +
                        " is not set");
    }
    api_key_ = key;
  }
}

std::string HttpTransport::complete(const Request& request) {
  nlohmann::json decoding = {
      {"temperature", request.decoding.temperature},
      {"max_length", request.decoding.max_length},
  };
  if (request.decoding.seed) decoding["seed"] = *request.decoding.seed;
  const nlohmann::json body = {
      {"role", to_string(request.role)},
      {"prompt", request.prompt},
      {"image_refs", request.image_refs},
      {"decoding", decoding},
  };

  httplib::Client client(scheme_host_port_);
  const auto seconds = timeout_ms_ / 1000;
  const auto micros = (timeout_ms_ % 1000) * 1000;
  client.set_connection_timeout(seconds, micros);
  client.set_read_timeout(seconds, micros);
  client.set_write_timeout(seconds, micros);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  auto result = client.Post(path_, headers, body.dump(), "application/json");
  if (!result) {
    throw BackendError(BackendErrorCode::kTransport,
                       "request to " + scheme_host_port_ + path_ + " failed: " +
                           httplib::to_string(result.error()),
                       /*retriable=*/true);
  }
  const int status = result->status;
  if (status != 200) {
    const bool retriable = status == 429 || status >= 500;
    throw BackendError(BackendErrorCode::kTransport,
                       "HTTP " + std::to_string(status) + " from " +
                           scheme_host_port_ + path_,
                       retriable);
  }
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(result->body);
  } catch (const nlohmann::json::exception&) {
    throw BackendError(BackendErrorCode::kTransport,
                       "response body is not JSON", /*retriable=*/true);
  }
  if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string()) {
    throw BackendError(BackendErrorCode::kTransport,
                       "response lacks a string 'text' field", /*retriable=*/true);
  }
  return reply["text"].get<std::string>();
}

}  // namespace cotforge::backend
