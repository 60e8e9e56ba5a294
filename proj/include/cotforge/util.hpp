// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hashing, seeded randomness, UTF-8 and file helpers shared by all modules.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cotforge {

std::string sha256_hex(std::string_view data);

// First eight bytes of the SHA-256 digest, big-endian.
std::uint64_t digest64(std::string_view data);

// Per-subsystem seed: top-level seed XOR a stable hash of the tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

// Portable seeded generator. Only mt19937_64's raw output is used, so results
// do not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, bound). bound must be positive.
  std::uint64_t uniform_below(std::uint64_t bound);

  // Uniform real in [0, 1) with 53 bits of precision.
  double uniform01();

  std::string save_state() const;
  void restore_state(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

template <typename T>
void seeded_shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_below(i));
    std::swap(items[i - 1], items[j]);
  }
}

// Stateless mixing of a seed with a 64-bit key.
std::uint64_t splitmix64(std::uint64_t x);

std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);

std::string_view trim(std::string_view text);

std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Writes through a sibling temp file and renames, so readers never observe a
// partially written artifact.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view content);

}  // namespace cotforge
