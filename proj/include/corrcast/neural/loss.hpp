#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <string>

#include "corrcast/error.hpp"
#include "corrcast/neural/model.hpp"

namespace corrcast::nn {

enum class LossKind {
  automatic,  // point for plain_lstm, seq2seq otherwise
  point,      // RMSE(horizon) + lambda |w|^2
  seq2seq,    // alpha1 RMSE(horizon) + alpha2 RMSE(recon) + lambda |w|^2
};

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::automatic: return "automatic";
    case LossKind::point: return "point";
    case LossKind::seq2seq: return "seq2seq";
  }
  return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "automatic" || s == "auto") return LossKind::automatic;
  if (s == "point") return LossKind::point;
  if (s == "seq2seq") return LossKind::seq2seq;
  throw ValidationError("unknown loss kind '" + s + "'");
}

struct LossConfig {
  LossKind kind = LossKind::automatic;
  double lambda = 1e-4;
  double alpha1 = 1.0;
  double alpha2 = 0.5;

  void validate() const {
    if (!(lambda >= 0) || !(alpha1 >= 0) || !(alpha2 >= 0)) {
      throw ValidationError("loss: lambda, alpha1, alpha2 must be >= 0");
    }
    if (!(alpha1 + alpha2 > 0)) throw ValidationError("loss: alpha1 + alpha2 must be > 0");
  }

  LossKind resolved(Variant v) const {
    if (kind != LossKind::automatic) return kind;
    return v == Variant::plain_lstm ? LossKind::point : LossKind::seq2seq;
  }
};

inline double rmse_term(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ValidationError("loss: prediction/target length mismatch");
  if (pred.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

inline double squared_norm(std::span<const double> w) {
  double s = 0;
  for (double v : w) s += v * v;
  return s;
}

inline double loss_point(std::span<const double> pred, std::span<const double> target,
                         std::span<const double> params, double lambda) {
  return rmse_term(pred, target) + lambda * squared_norm(params);
}

inline double loss_seq2seq(std::span<const double> pred_horizon, std::span<const double> target_horizon,
                           std::span<const double> pred_recent, std::span<const double> target_recent,
                           std::span<const double> params, const LossConfig& cfg) {
  cfg.validate();
  return cfg.alpha1 * rmse_term(pred_horizon, target_horizon) + cfg.alpha2 * rmse_term(pred_recent, target_recent) +
         cfg.lambda * squared_norm(params);
}

inline std::span<const double> flat(const Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace corrcast::nn
