#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>

#include "corrcast/error.hpp"
#include "corrcast/neural/cell.hpp"

namespace corrcast::nn {

enum class OptimizerKind { gradient_descent, rmsprop, adam };

inline const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::gradient_descent: return "gradient_descent";
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "gradient_descent" || s == "gd" || s == "sgd") return OptimizerKind::gradient_descent;
  if (s == "rmsprop") return OptimizerKind::rmsprop;
  if (s == "adam") return OptimizerKind::adam;
  throw ValidationError("unknown optimizer '" + s + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;    // adam first moment
  double beta2 = 0.999;  // adam second moment
  double decay = 0.9;    // rmsprop running average
  double epsilon = 1e-8;
  std::uint64_t seed = 1;  // mini-batch order

  // lr = 0 is accepted so a run can be frozen.
  void validate() const {
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
      throw ValidationError("optimizer: learning_rate must be finite and >= 0");
    }
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && decay >= 0 && decay < 1)) {
      throw ValidationError("optimizer: moment parameters must lie in [0, 1)");
    }
    if (!(epsilon > 0)) throw ValidationError("optimizer: epsilon must be > 0");
  }
};

struct OptimizerState {
  Vec m;
  Vec v;
  long step = 0;
};

// One update; the step index advances inside `state` (first call is step 1).
inline void optimizer_step(const OptimizerConfig& cfg, Vec& params, const Vec& grads, OptimizerState& state) {
  if (params.size() != grads.size()) throw ValidationError("optimizer_step: parameter/gradient size mismatch");
  if (state.m.size() != params.size()) {
    state.m = Vec::Zero(params.size());
    state.v = Vec::Zero(params.size());
  }
  ++state.step;
  const double lr = cfg.learning_rate;
  switch (cfg.kind) {
    case OptimizerKind::gradient_descent:
      params -= lr * grads;
      break;
    case OptimizerKind::rmsprop:
      state.v = cfg.decay * state.v + (1 - cfg.decay) * grads.cwiseAbs2();
      params.array() -= lr * grads.array() / (state.v.array().sqrt() + cfg.epsilon);
      break;
    case OptimizerKind::adam: {
      state.m = cfg.beta1 * state.m + (1 - cfg.beta1) * grads;
      state.v = cfg.beta2 * state.v + (1 - cfg.beta2) * grads.cwiseAbs2();
      const double c1 = 1 - std::pow(cfg.beta1, static_cast<double>(state.step));
      const double c2 = 1 - std::pow(cfg.beta2, static_cast<double>(state.step));
      params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.epsilon);
      break;
    }
  }
}

}  // namespace corrcast::nn
