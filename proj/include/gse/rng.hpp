// Copyright 2026 The GSE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
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

#include "gse/state.hpp"

namespace gse {

/// Salts that keep independent uses of one run seed on disjoint Philox keys.
/// Streams for proposal noise, resampling offsets, testbed generation,
/// diagnostic rollouts, and permutation draws never collide even when they
/// share (seed, id) coordinates.
enum class StreamDomain : std::uint64_t {
  kProposal = 0x9e3779b97f4a7c15ull,
  kResample = 0xbf58476d1ce4e5b9ull,
  kPoolGen = 0x94d049bb133111ebull,
  kDiagnostics = 0xd6e8feb86659fd93ull,
  kShuffle = 0xc2b2ae3d27d4eb4full,
};

namespace detail {

/// One Philox 4x32 block: 10 rounds over a 128-bit counter with a 64-bit key.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t prod0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t prod1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(prod1 >> 32) ^ ctr[1] ^ key[0],
           static_cast<std::uint32_t>(prod1),
           static_cast<std::uint32_t>(prod0 >> 32) ^ ctr[3] ^ key[1],
           static_cast<std::uint32_t>(prod0)};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

}  // namespace detail

/// Counter-based random stream. A stream is addressed by (seed, domain,
/// id0, id1, id2); equal addresses reproduce equal sequences regardless of
/// construction order or scheduling, so every particle, step, and rollout
/// can own its noise without any shared mutable generator.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, StreamDomain domain, std::uint32_t id0,
             std::uint32_t id1, std::uint32_t id2)
      : prefix_{id0, id1, id2} {
    const std::uint64_t key = seed ^ static_cast<std::uint64_t>(domain);
    key_ = {static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
  }

  std::uint32_t next_u32() {
    if (buf_pos_ == 4) {
      buf_ = detail::philox4x32({prefix_[0], prefix_[1], prefix_[2], block_}, key_);
      ++block_;
      buf_pos_ = 0;
    }
    return buf_[buf_pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via the Box-Muller transform; pairs are cached so two
  /// consecutive calls consume exactly two uniforms.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    // log1p(-u1) is finite because u1 < 1 exactly.
    const double radius = std::sqrt(-2.0 * std::log1p(-u1));
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    spare_ = radius * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return radius * std::cos(kTwoPi * u2);
  }

 private:
  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 3> prefix_{};
  std::uint32_t block_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int buf_pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline LatentTensor gaussian_tensor(CounterRng& rng, int rows, int cols) {
  LatentTensor out = LatentTensor::zeros(rows, cols);
  for (double& v : out.values) v = rng.gaussian();
  return out;
}

/// Uniform direction on the unit sphere of the flat (rows * cols) space.
inline LatentTensor unit_direction(CounterRng& rng, int rows, int cols) {
  for (;;) {
    LatentTensor dir = gaussian_tensor(rng, rows, cols);
    const double len = norm(dir);
    if (len > 1e-12) return scaled(dir, 1.0 / len);
  }
}

}  // namespace gse
