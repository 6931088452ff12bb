// Gradient-reversal-layer scheduling: delayed introduction, linear warmup,
// then a constant coefficient. Also the grid-search enumerations and the
// desk-scale rescaling rule.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "advreg/common.hpp"

namespace advreg {

struct ScheduleParams {
  std::int64_t mu = 0;  // delay iterations with lambda_grl = 0
  std::int64_t w = 1;   // warmup iterations
  double c = 0.0;       // final coefficient

  bool operator==(const ScheduleParams&) const = default;
};

inline void validate(const ScheduleParams& s) {
  if (s.mu < 0) throw ParameterError("schedule: mu must be >= 0");
  if (s.w < 1) throw ParameterError("schedule: w must be >= 1");
  if (!(s.c >= 0.0)) throw ParameterError("schedule: c must be >= 0");
}

// 0 for t <= mu, linear from 0 to c over the next w iterations, then c.
inline double lambda_grl_at(std::int64_t t, const ScheduleParams& s) {
  if (t < 0) throw ParameterError("lambda_grl_at: t must be >= 0");
  if (t <= s.mu) return 0.0;
  if (t <= s.mu + s.w) {
    return s.c * (static_cast<double>(t - s.mu) / static_cast<double>(s.w));
  }
  return s.c;
}

// Constant lambda_grl = c for every executed iteration (t >= 1).
inline ScheduleParams static_schedule(double c) {
  if (!(c >= 0.0)) throw ParameterError("static_schedule: c must be >= 0");
  return ScheduleParams{0, 1, c};
}

// Grid-search enumeration, cross product with mu ascending then w ascending.
// The standard grid covers delays up to 6000 at full (16k-iteration) scale;
// the accelerated grid probes earlier introduction with shorter warmups.
inline std::vector<ScheduleParams> grid(bool standard, double c = 1.0) {
  std::vector<std::int64_t> mus, ws;
  if (standard) {
    mus = {0, 1000, 2000, 3000, 4000, 5000, 6000};
    ws = {1000, 2000, 3000, 4000};
  } else {
    mus = {500, 1000, 1500, 2000, 2500, 3000, 3500};
    ws = {500, 1000, 2000, 4000};
  }
  std::vector<ScheduleParams> out;
  out.reserve(mus.size() * ws.size());
  for (auto mu : mus) {
    for (auto w : ws) out.push_back(ScheduleParams{mu, w, c});
  }
  return out;
}

// Schedules are defined against 16k-iteration runs; shorter runs scale mu and
// w proportionally, rounded to the nearest 50 iterations, preserving the
// phase structure.
inline ScheduleParams rescale_for(const ScheduleParams& s,
                                  std::int64_t total_iterations) {
  if (total_iterations < 1) {
    throw ParameterError("rescale_for: total_iterations must be >= 1");
  }
  const double ratio = static_cast<double>(total_iterations) / 16000.0;
  auto near50 = [](double x) {
    return 50 * static_cast<std::int64_t>(std::llround(x / 50.0));
  };
  ScheduleParams out;
  out.mu = near50(static_cast<double>(s.mu) * ratio);
  out.w = std::max<std::int64_t>(1, near50(static_cast<double>(s.w) * ratio));
  out.c = s.c;
  return out;
}

}  // namespace advreg
