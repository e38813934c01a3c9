// Copyright 2026 The msavg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

#include <boost/random/normal_distribution.hpp>

namespace msavg {

// Philox4x64-10 counter-based generator.
class Philox4x64 {
 public:
  using Counter = std::array<std::uint64_t, 4>;
  using Key = std::array<std::uint64_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const auto [hi0, lo0] = mulhilo(kMul0, ctr[0]);
      const auto [hi1, lo1] = mulhilo(kMul1, ctr[2]);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  static constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
  static constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
  static constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

  struct HiLo {
    std::uint64_t hi;
    std::uint64_t lo;
  };
  static HiLo mulhilo(std::uint64_t a, std::uint64_t b) {
    const unsigned __int128 prod = static_cast<unsigned __int128>(a) * b;
    return {static_cast<std::uint64_t>(prod >> 64), static_cast<std::uint64_t>(prod)};
  }
};

// Uniform in the open interval (0, 1) from the top 53 bits.
inline double to_open_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

enum class Stream : std::uint64_t {
  kInitial = 0,
  kMultiscale = 1,
  kLimit = 2,
  kAuxiliary = 3,
};

// Standard normals addressed by (seed, path, stream, step). Every value is a
// pure function of its address, so results do not depend on scheduling.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t path, Stream stream)
      : key_{seed, path}, stream_(static_cast<std::uint64_t>(stream)) {}

  // Fills out with normals for the given step. Each Philox block yields four.
  void fill(std::uint64_t step, std::span<double> out) const {
    std::size_t filled = 0;
    for (std::uint64_t block = 0; filled < out.size(); ++block) {
      const auto bits = Philox4x64::generate({step, block, stream_, 0}, key_);
      for (int pair = 0; pair < 2 && filled < out.size(); ++pair) {
        const double r = std::sqrt(-2.0 * std::log(to_open_unit(bits[2 * pair])));
        const double theta = 2.0 * std::numbers::pi * to_open_unit(bits[2 * pair + 1]);
        out[filled++] = r * std::cos(theta);
        if (filled < out.size()) out[filled++] = r * std::sin(theta);
      }
    }
  }

 private:
  Philox4x64::Key key_;
  std::uint64_t stream_;
};

// Philox output as a uniform random bit generator for one (seed, path, stream).
class PhiloxBits {
 public:
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  PhiloxBits(std::uint64_t seed, std::uint64_t path, std::uint64_t stream) : key_{seed, path}, stream_(stream) {}

  result_type operator()() {
    if (pos_ == 4) {
      buf_ = Philox4x64::generate({block_++, 0, stream_, 1}, key_);
      pos_ = 0;
    }
    return buf_[pos_++];
  }

 private:
  Philox4x64::Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Philox4x64::Counter buf_{};
  int pos_ = 4;
};

// Sequential ziggurat normals for one (seed, path, stream). The draws depend only on how many
// were taken before, so any partition of a run into steps sees the same sequence.
class NormalSequence {
 public:
  NormalSequence(std::uint64_t seed, std::uint64_t path, Stream stream)
      : bits_(seed, path, static_cast<std::uint64_t>(stream)) {}

  double next() { return normal_(bits_); }

 private:
  PhiloxBits bits_;
  boost::random::normal_distribution<double> normal_;
};

}  // namespace msavg
