#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "facecond/numerics/tensor.hpp"

namespace facecond {

// Counter-based generator state. A draw is a pure function of
// (seed, position): Philox4x32-10 keyed by the seed, encrypting the 64-bit
// position counter. Distinct seeds give statistically independent streams,
// so parallel producers can each own a stream without coordination.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t position = 0;

  // Derives an independent stream whose seed mixes this seed with a label
  // (e.g. "data", "init", "train", "sample") and an optional index.
  RngState substream(std::string_view label, std::uint64_t index = 0) const;

  friend bool operator==(const RngState&, const RngState&) = default;
};

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

std::uint64_t mix64(std::uint64_t x);

// Each call consumes one Philox block (four 32-bit words).
std::array<std::uint32_t, 4> next_block(RngState& rng);

// Uniform in the open interval (0, 1).
double next_uniform(RngState& rng);
std::uint64_t next_below(RngState& rng, std::uint64_t bound);

// Standard normal via Box-Muller over two uniforms from one block.
double next_normal(RngState& rng);

Tensor seeded_normal(RngState& rng, const Shape& shape, float stddev = 1.0f);
Tensor seeded_uniform(RngState& rng, const Shape& shape, float lo, float hi);

}  // namespace facecond
