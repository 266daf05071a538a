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

#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gse/rng.hpp"

using Catch::Approx;

TEST_CASE("philox4x32-10 reproduces published test vectors") {
  // Reference vectors from the Random123 known-answer suite.
  {
    const std::array<std::uint32_t, 4> ctr = {0, 0, 0, 0};
    const std::array<std::uint32_t, 2> key = {0, 0};
    const std::array<std::uint32_t, 4> out = gse::detail::philox4x32(ctr, key);
    CHECK(out[0] == 0x6627e8d5u);
    CHECK(out[1] == 0xe169c58du);
    CHECK(out[2] == 0xbc57ac4cu);
    CHECK(out[3] == 0x9b00dbd8u);
  }
  {
    const std::array<std::uint32_t, 4> ctr = {0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu};
    const std::array<std::uint32_t, 2> key = {0xffffffffu, 0xffffffffu};
    const std::array<std::uint32_t, 4> out = gse::detail::philox4x32(ctr, key);
    CHECK(out[0] == 0x408f276du);
    CHECK(out[1] == 0x41c83b0eu);
    CHECK(out[2] == 0xa20bc7c6u);
    CHECK(out[3] == 0x6d5451fdu);
  }
  {
    const std::array<std::uint32_t, 4> ctr = {0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u};
    const std::array<std::uint32_t, 2> key = {0xa4093822u, 0x299f31d0u};
    const std::array<std::uint32_t, 4> out = gse::detail::philox4x32(ctr, key);
    CHECK(out[0] == 0xd16cfe09u);
    CHECK(out[1] == 0x94fdccebu);
    CHECK(out[2] == 0x5001e420u);
    CHECK(out[3] == 0x24126ea1u);
  }
}

TEST_CASE("streams are deterministic functions of their coordinates") {
  gse::CounterRng a(42, gse::StreamDomain::kProposal, 3, 7, 11);
  gse::CounterRng b(42, gse::StreamDomain::kProposal, 3, 7, 11);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u32() == b.next_u32());
}

TEST_CASE("distinct coordinates give distinct streams") {
  gse::CounterRng base(42, gse::StreamDomain::kProposal, 3, 7, 11);
  gse::CounterRng other_id(42, gse::StreamDomain::kProposal, 3, 7, 12);
  gse::CounterRng other_domain(42, gse::StreamDomain::kResample, 3, 7, 11);
  gse::CounterRng other_seed(43, gse::StreamDomain::kProposal, 3, 7, 11);

  const std::uint64_t v = gse::CounterRng(42, gse::StreamDomain::kProposal, 3, 7, 11).next_u64();
  CHECK(other_id.next_u64() != v);
  CHECK(other_domain.next_u64() != v);
  CHECK(other_seed.next_u64() != v);
  (void)base;
}

TEST_CASE("64-bit draws splice consecutive 32-bit words") {
  gse::CounterRng words(9, gse::StreamDomain::kDiagnostics, 0, 0, 0);
  gse::CounterRng wide(9, gse::StreamDomain::kDiagnostics, 0, 0, 0);
  for (int i = 0; i < 16; ++i) {
    // The first word of each pair becomes the high half.
    const std::uint64_t hi = words.next_u32();
    const std::uint64_t lo = words.next_u32();
    CHECK(wide.next_u64() == ((hi << 32) | lo));
  }
}

TEST_CASE("uniform draws stay inside the half-open unit interval") {
  gse::CounterRng rng(1, gse::StreamDomain::kProposal, 0, 0, 0);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  // Standard error of the mean is 1/sqrt(12 n); allow five of them.
  CHECK(sum / n == Approx(0.5).margin(5.0 / std::sqrt(12.0 * n)));
}

TEST_CASE("gaussian draws have unit scale") {
  gse::CounterRng rng(2, gse::StreamDomain::kProposal, 0, 0, 0);
  double sum = 0.0;
  double sum_sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double g = rng.gaussian();
    REQUIRE(std::isfinite(g));
    sum += g;
    sum_sq += g * g;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(mean == Approx(0.0).margin(5.0 / std::sqrt(static_cast<double>(n))));
  // Var of the variance estimate is roughly 2/n for a unit gaussian.
  CHECK(var == Approx(1.0).margin(5.0 * std::sqrt(2.0 / n)));
}

TEST_CASE("gaussian tensors are reproducible and well shaped") {
  gse::CounterRng a(5, gse::StreamDomain::kPoolGen, 1, 0, 0);
  gse::CounterRng b(5, gse::StreamDomain::kPoolGen, 1, 0, 0);
  const gse::LatentTensor ta = gse::gaussian_tensor(a, 3, 4);
  const gse::LatentTensor tb = gse::gaussian_tensor(b, 3, 4);
  CHECK(ta.rows == 3);
  CHECK(ta.cols == 4);
  CHECK(ta.values == tb.values);
}

TEST_CASE("unit directions have unit norm") {
  gse::CounterRng rng(11, gse::StreamDomain::kDiagnostics, 0, 0, 0);
  for (int i = 0; i < 50; ++i) {
    const gse::LatentTensor d = gse::unit_direction(rng, 4, 4);
    CHECK(gse::norm(d) == Approx(1.0).epsilon(1e-12));
  }
}
