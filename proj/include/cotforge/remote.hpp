// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "cotforge/backend.hpp"

namespace cotforge::backend {

// POSTs each request as JSON to the profile endpoint:
//   {"role": ..., "prompt": ..., "image_refs": [...],
//    "decoding": {"temperature": ..., "max_length": ..., "seed": ...}}
// and expects {"text": "..."} back. Connection failures, timeouts, 429 and
// 5xx responses are retriable; other statuses are not.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(const BackendProfile& profile);

  std::string complete(const Request& request) override;

 private:
  std::string scheme_host_port_;
  std::string path_;
  std::string api_key_;
  int timeout_ms_;
};

}  // namespace cotforge::backend
