#pragma once

// Point-forecast scores. acc is 100 * (1 - mean relative error) over targets
// at or above a floor, so it drops below zero once the mean relative error
// passes 1.

#include <cmath>
#include <span>
#include <string>

#include "corrcast/error.hpp"

namespace corrcast {

namespace detail {
inline void check_scored(std::span<const double> pred, std::span<const double> target, const char* who) {
  if (pred.size() != target.size()) throw ValidationError(std::string(who) + ": length mismatch");
  if (pred.empty()) throw ValidationError(std::string(who) + ": empty input");
}
}  // namespace detail

inline double acc(std::span<const double> pred, std::span<const double> target, double floor_eps = 0.1) {
  detail::check_scored(pred, target, "acc");
  double sum = 0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target[i] < floor_eps) continue;
    sum += std::abs(pred[i] - target[i]) / target[i];
    ++kept;
  }
  if (kept == 0) throw ValidationError("acc: every target is below the floor");
  return (1.0 - sum / static_cast<double>(kept)) * 100.0;
}

inline double rmse(std::span<const double> pred, std::span<const double> target) {
  detail::check_scored(pred, target, "rmse");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

inline double r2(std::span<const double> pred, std::span<const double> target) {
  detail::check_scored(pred, target, "r2");
  double mean = 0;
  for (double y : target) mean += y;
  mean /= static_cast<double>(target.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ss_res += (pred[i] - target[i]) * (pred[i] - target[i]);
    ss_tot += (target[i] - mean) * (target[i] - mean);
  }
  if (ss_tot == 0) throw ValidationError("r2: constant target");
  return 1.0 - ss_res / ss_tot;
}

}  // namespace corrcast
