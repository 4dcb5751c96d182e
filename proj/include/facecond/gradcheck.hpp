#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facecond/config.hpp"

namespace facecond {

// 2 blocks, d = 16, 8x8 frames, F = 2, T = 20.
Config gradcheck_config();

// rel_error is over the whole tensor; index, analytic and numeric describe
// the coordinate with the largest elementwise error.
struct GradcheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckResult {
  std::uint64_t seed = 0;
  std::size_t tensors = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  GradcheckEntry worst;
  std::vector<GradcheckEntry> per_tensor;
  std::vector<std::string> failures;
};

// Elementwise |a - n| / max(|a|, |n|, floor), used to locate the worst
// coordinate.
double grad_rel_error(double analytic, double numeric, double floor);

inline constexpr double kGradcheckStep = 1e-3;
inline constexpr double kGradcheckTolerance = 1e-3;
inline constexpr double kGradcheckFloor = 1e-6;

// In double precision: draws a synthetic video sample and one loss draw from
// the seed, perturbs every non-fixed parameter away from its initialization
// (zero-initialized outputs would otherwise hide their upstream paths), and
// compares the analytic gradient of the total loss (lambda = 1) with
// finite_diff_grad on every non-fixed tensor. A tensor passes when
// relative_error(analytic, numeric) < tolerance.
GradcheckResult run_gradcheck(const Config& c, std::uint64_t seed, double h = kGradcheckStep,
                              double tolerance = kGradcheckTolerance);

}  // namespace facecond
