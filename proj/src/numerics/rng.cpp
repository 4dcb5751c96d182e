#include "facecond/numerics/rng.hpp"

#include <cmath>
#include <numbers>

namespace facecond {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

RngState RngState::substream(std::string_view label, std::uint64_t index) const {
  // FNV-1a over the label, then mixed with seed and index.
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return RngState{mix64(seed ^ mix64(h) ^ mix64(index + 0x632BE59BD9B4E019ull)), 0};
}

std::array<std::uint32_t, 4> next_block(RngState& rng) {
  const std::uint64_t pos = rng.position++;
  return philox4x32({static_cast<std::uint32_t>(pos), static_cast<std::uint32_t>(pos >> 32), 0u, 0u},
                    {static_cast<std::uint32_t>(rng.seed), static_cast<std::uint32_t>(rng.seed >> 32)});
}

namespace {
// 53-bit uniform in (0, 1) from two words.
inline double to_unit(std::uint32_t a, std::uint32_t b) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(a) << 21) ^ (static_cast<std::uint64_t>(b) >> 11);
  return (static_cast<double>(bits & ((1ull << 53) - 1)) + 0.5) * 0x1.0p-53;
}
}  // namespace

double next_uniform(RngState& rng) {
  const auto w = next_block(rng);
  return to_unit(w[0], w[1]);
}

std::uint64_t next_below(RngState& rng, std::uint64_t bound) {
  if (bound == 0) throw ContractError("next_below: bound must be positive");
  const auto w = next_block(rng);
  const std::uint64_t x = (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
  // Bias is below 2^-40 for the bounds used here.
  return x % bound;
}

double next_normal(RngState& rng) {
  const auto w = next_block(rng);
  const double u1 = to_unit(w[0], w[1]);
  const double u2 = to_unit(w[2], w[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor seeded_normal(RngState& rng, const Shape& shape, float stddev) {
  Tensor out(shape);
  for (float& v : out.flat()) v = static_cast<float>(next_normal(rng)) * stddev;
  return out;
}

Tensor seeded_uniform(RngState& rng, const Shape& shape, float lo, float hi) {
  Tensor out(shape);
  for (float& v : out.flat()) v = lo + static_cast<float>(next_uniform(rng)) * (hi - lo);
  return out;
}

}  // namespace facecond
