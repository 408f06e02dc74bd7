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

#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>

namespace ragtrap {

// 64-bit FNV-1a; used for fingerprints that must be stable across runs.
class Fnv1a {
 public:
  Fnv1a& update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001B3ULL;
    }
    return *this;
  }

  Fnv1a& update(std::span<const double> values) {
    for (double v : values) {
      unsigned char buf[sizeof(double)];
      std::memcpy(buf, &v, sizeof buf);
      update(std::string_view(reinterpret_cast<const char*>(buf), sizeof buf));
    }
    return *this;
  }

  Fnv1a& update_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      const char c = static_cast<char>((v >> (8 * i)) & 0xFF);
      update(std::string_view(&c, 1));
    }
    return *this;
  }

  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view bytes) { return Fnv1a().update(bytes).digest(); }

}  // namespace ragtrap
