#pragma once

// Correlation-maximizing completion of a partially known series.
//
// Given a fully known reference X (length m+n) and a series Y whose first m
// values are known, choose the n unknown values y* inside physical bounds so
// that |pearson(X, Y)| is maximal. For n = 1 the objective rho^2 is a ratio
// of quadratics and is solved in closed form from the stationarity
// quadratic. For n >= 1 each sign branch is solved by bisection on the level
// t, where every level is a convex (second-order-cone) feasibility problem
//
//     exists y in box :  s * <xc, Y(y)>  >=  t * |xc| * |C Y(y)|
//
// with xc the centered reference and C the centering projector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corrcast/correlation.hpp"
#include "corrcast/error.hpp"

namespace corrcast {

struct PartitionedSeries {
  std::vector<double> ya;  // known prefix followed by unknown_count zeros
  std::size_t unknown_count = 0;
  std::size_t full_len = 0;

  std::size_t known_count() const { return full_len - unknown_count; }
  std::span<const double> known() const { return std::span<const double>(ya).first(known_count()); }
};

// g(y) = (a y^2 + b y + c) / (d y^2 + e y + f)
struct RationalQuadratic {
  double a = 0, b = 0, c = 0, d = 0, e = 0, f = 0;

  double numerator(double y) const { return (a * y + b) * y + c; }
  double denominator(double y) const { return (d * y + e) * y + f; }
  double operator()(double y) const { return numerator(y) / denominator(y); }
};

struct Bounds {
  double lo = 0.0;
  double hi = 20.0;
};

struct BisectionConfig {
  double l = 0.0;
  double u = 1.0;
  double epsilon = 1e-6;
  int max_iter = 200;
};

enum class Branch { positive, negative };
enum class Solver { closed_form, bisection, brute_force };

inline const char* to_string(Branch b) { return b == Branch::positive ? "positive" : "negative"; }
inline const char* to_string(Solver s) {
  switch (s) {
    case Solver::closed_form: return "closed_form";
    case Solver::bisection: return "bisection";
    case Solver::brute_force: return "brute_force";
  }
  return "?";
}

struct ForecastSolution {
  std::vector<double> y_star;
  double rho_achieved = 0;
  Branch branch = Branch::positive;
  Solver solver = Solver::closed_form;
  std::vector<bool> clamped;
  // Bisection diagnostics (zero for the other solvers).
  int iterations = 0;
  double bracket_width = 0;
};

struct FeasibilityResult {
  bool feasible = false;
  std::vector<double> witness;  // feasible point, or the last iterate otherwise
  double rho = 0;               // signed correlation at `witness`
  bool certified = true;        // false when the iteration cap decided the answer
  int iterations = 0;
};

// ---------------------------------------------------------------------------

inline PartitionedSeries partition(std::span<const double> known_prefix, std::size_t n) {
  if (known_prefix.size() < 2) throw ValidationError("partition: need at least 2 known values");
  if (n < 1) throw ValidationError("partition: need at least 1 unknown value");
  PartitionedSeries p;
  p.ya.assign(known_prefix.begin(), known_prefix.end());
  p.ya.resize(known_prefix.size() + n, 0.0);
  p.unknown_count = n;
  p.full_len = p.ya.size();
  return p;
}

// Yb: the unknown values placed in the trailing slots of an all-zero vector.
inline std::vector<double> embed_unknowns(const PartitionedSeries& p, std::span<const double> y_star) {
  if (y_star.size() != p.unknown_count) throw ValidationError("completion: expected " +
                                                              std::to_string(p.unknown_count) + " unknowns");
  std::vector<double> yb(p.full_len, 0.0);
  std::copy(y_star.begin(), y_star.end(), yb.begin() + static_cast<std::ptrdiff_t>(p.known_count()));
  return yb;
}

inline std::vector<double> complete(const PartitionedSeries& p, std::span<const double> y_star) {
  auto y = embed_unknowns(p, y_star);
  for (std::size_t i = 0; i < p.known_count(); ++i) y[i] = p.ya[i];
  return y;
}

// Var(Y) = Var(Ya) + Var(Yb) + 2 Cov(Ya, Yb).
inline double variance_of_completion(const PartitionedSeries& p, std::span<const double> y_star) {
  const auto yb = embed_unknowns(p, y_star);
  return covariance(p.ya, p.ya) + covariance(yb, yb) + 2.0 * covariance(p.ya, yb);
}

// Coefficients of rho(y*)^2 = cov(X,Y)^2 / (Var X * Var Y) for one unknown.
inline RationalQuadratic objective_coefficients_1d(std::span<const double> x, const PartitionedSeries& p) {
  if (p.unknown_count != 1) throw ValidationError("objective_coefficients_1d: exactly one unknown required");
  if (x.size() != p.full_len) throw ValidationError("objective_coefficients_1d: reference length mismatch");
  const double var_x = covariance(x, x);
  if (detail::negligible_spread(std::sqrt(std::max(var_x, 0.0)), x)) {
    throw DegenerateCorrelation("objective_coefficients_1d: reference has zero variance");
  }
  const double N = static_cast<double>(p.full_len);
  const double x_mean = detail::mean_of(x);
  const double ya_mean = detail::mean_of(p.ya);
  // cov(X, Y) = cov(X, Ya) + cov(X, Yb) = alpha + beta * y
  const double alpha = covariance(x, p.ya);
  const double beta = (x.back() - x_mean) / N;
  // Var(Y) = Var(Ya) + y^2 (1/N - 1/N^2) + 2 y (0 - mean(Ya)) / N
  const double q2 = 1.0 / N - 1.0 / (N * N);
  const double q1 = -2.0 * ya_mean / N;
  const double q0 = covariance(p.ya, p.ya);
  RationalQuadratic g;
  g.a = beta * beta;
  g.b = 2.0 * alpha * beta;
  g.c = alpha * alpha;
  g.d = var_x * q2;
  g.e = var_x * q1;
  g.f = var_x * q0;
  return g;
}

// Real roots of A y^2 + B y + C = 0 using the cancellation-free pairing.
inline std::vector<double> quadratic_roots(double A, double B, double C) {
  std::vector<double> roots;
  const double scale = std::max({std::abs(A), std::abs(B), std::abs(C)});
  if (scale == 0.0) return roots;
  if (std::abs(A) <= 1e-14 * scale) {
    if (std::abs(B) > 1e-14 * scale) roots.push_back(-C / B);
    return roots;
  }
  const double disc = B * B - 4.0 * A * C;
  if (disc < 0) {
    if (disc > -1e-14 * B * B) roots.push_back(-B / (2.0 * A));
    return roots;
  }
  const double q = -0.5 * (B + std::copysign(std::sqrt(disc), B));
  if (q != 0.0) {
    roots.push_back(q / A);
    roots.push_back(C / q);
  } else {
    roots.push_back(0.0);
  }
  return roots;
}

namespace detail {

inline void check_bounds(const Bounds& b) {
  if (!std::isfinite(b.lo) || !std::isfinite(b.hi) || !(b.lo < b.hi)) {
    throw ValidationError("bounds: need finite lo < hi");
  }
}

inline void check_problem(std::span<const double> x, const PartitionedSeries& p) {
  if (p.unknown_count < 1) throw ValidationError("solver: nothing to solve (0 unknowns)");
  if (p.full_len != p.ya.size() || p.full_len != p.unknown_count + p.known_count() || p.known_count() < 2) {
    throw ValidationError("solver: malformed partition");
  }
  if (x.size() != p.full_len) throw ValidationError("solver: reference length mismatch");
}

// Signed correlation of X with the completed series, or nullopt when the
// completion is (numerically) constant.
inline std::optional<double> completion_rho(std::span<const double> x, const PartitionedSeries& p,
                                            std::span<const double> y_star) {
  const auto y = complete(p, y_star);
  try {
    return pearson(x, y).rho;
  } catch (const DegenerateCorrelation&) {
    return std::nullopt;
  }
}

inline std::vector<bool> clamp_flags(std::span<const double> y, const Bounds& b) {
  const double tol = 1e-9 * (b.hi - b.lo);
  std::vector<bool> flags;
  for (double v : y) flags.push_back(v <= b.lo + tol || v >= b.hi - tol);
  return flags;
}

// O(n) evaluation of the completion geometry for a fixed reference.
class CompletionGeometry {
 public:
  CompletionGeometry(std::span<const double> x, const PartitionedSeries& p)
      : m_(p.known_count()), n_(p.unknown_count), N_(static_cast<double>(p.full_len)) {
    const double xm = mean_of(x);
    double ss = 0;
    for (double v : x) ss += (v - xm) * (v - xm);
    xnorm_ = std::sqrt(ss);
    if (negligible_spread(xnorm_ / std::sqrt(N_), x)) {
      throw DegenerateCorrelation("solver: reference has zero variance");
    }
    xhat_tail_.resize(n_);
    for (std::size_t k = 0; k < n_; ++k) xhat_tail_[k] = (x[m_ + k] - xm) / xnorm_;
    // Known-part sufficient statistics, centered on the known mean for accuracy.
    shift_ = 0;
    for (std::size_t i = 0; i < m_; ++i) shift_ += p.ya[i];
    shift_ /= static_cast<double>(m_);
    for (std::size_t i = 0; i < m_; ++i) {
      const double d = p.ya[i] - shift_;
      sa_ += d;
      saa_ += d * d;
      sxa_ += (x[i] - xm) / xnorm_ * d;
      known_scale_ = std::max(known_scale_, std::abs(p.ya[i]));
    }
  }

  std::size_t unknowns() const { return n_; }

  struct Eval {
    double dot = 0;   // <xhat, Y>
    double norm = 0;  // |C Y|
    double sum = 0;   // sum of shifted Y
  };

  Eval eval(std::span<const double> y) const {
    double s1 = sa_, s2 = saa_, sxy = sxa_;
    for (std::size_t k = 0; k < n_; ++k) {
      const double d = y[k] - shift_;
      s1 += d;
      s2 += d * d;
      sxy += xhat_tail_[k] * d;
    }
    Eval e;
    e.dot = sxy;
    e.norm = std::sqrt(std::max(0.0, s2 - s1 * s1 / N_));
    e.sum = s1;
    return e;
  }

  bool degenerate(const Eval& e) const {
    return e.norm <= 1e-12 * std::sqrt(N_) * std::max(known_scale_, 1e-300);
  }

  double rho(const Eval& e) const { return degenerate(e) ? 0.0 : std::clamp(e.dot / e.norm, -1.0, 1.0); }

  // phi_t(y) = t |C Y| - s <xhat, Y>, and a subgradient in the unknowns.
  double phi(double t, double s, std::span<const double> y, std::span<double> grad) const {
    const auto e = eval(y);
    const double mean = e.sum / N_;
    for (std::size_t k = 0; k < n_; ++k) {
      const double norm_grad = e.norm > 0 ? ((y[k] - shift_) - mean) / e.norm : 0.0;
      grad[k] = t * norm_grad - s * xhat_tail_[k];
    }
    return t * e.norm - s * e.dot;
  }

 private:
  std::size_t m_, n_;
  double N_;
  double xnorm_ = 0;
  std::vector<double> xhat_tail_;
  double shift_ = 0, sa_ = 0, saa_ = 0, sxa_ = 0, known_scale_ = 0;
};

inline double project(double v, const Bounds& b) { return std::clamp(v, b.lo, b.hi); }

// Decides min_{y in box} phi_t(y) <= 0 (with a nondegenerate witness) by
// projected gradient descent with Barzilai-Borwein steps and backtracking.
// Infeasibility is certified by the linearization lower bound
//   phi(y) + min_{z in box} <g, z - y>  > 0.
inline FeasibilityResult feasibility_impl(const CompletionGeometry& geo, double t, double sign, const Bounds& b,
                                          std::vector<double> start, int max_iter = 5000) {
  const std::size_t n = geo.unknowns();
  FeasibilityResult res;
  std::vector<double> y = std::move(start), g(n), y_new(n), g_new(n);
  for (auto& v : y) v = project(v, b);
  auto accept = [&](std::span<const double> pt) {
    const auto e = geo.eval(pt);
    if (geo.degenerate(e)) return false;
    return sign * geo.rho(e) >= t;
  };

  double f = geo.phi(t, sign, y, g);
  double step = (b.hi - b.lo) / (1.0 + std::sqrt(static_cast<double>(n)));
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    if (accept(y)) {
      res.feasible = true;
      res.witness = y;
      res.rho = geo.rho(geo.eval(y));
      return res;
    }
    double lower = f;
    double gap = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const double dk = std::min(g[k] * (b.lo - y[k]), g[k] * (b.hi - y[k]));
      lower += dk;
      gap -= dk;
    }
    if (lower > 0) {
      res.feasible = false;
      res.witness = y;
      res.rho = geo.rho(geo.eval(y));
      return res;
    }
    if (gap <= 1e-15 * (1.0 + std::abs(f))) break;

    // Backtracking projected step.
    double f_new = 0;
    bool moved = false;
    for (int bt = 0; bt < 60; ++bt) {
      double lin = 0, sq = 0;
      for (std::size_t k = 0; k < n; ++k) {
        y_new[k] = project(y[k] - step * g[k], b);
        const double d = y_new[k] - y[k];
        lin += g[k] * d;
        sq += d * d;
      }
      if (sq == 0) break;
      f_new = geo.phi(t, sign, y_new, g_new);
      if (f_new <= f + lin + sq / (2.0 * step) + 1e-15 * std::abs(f)) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;

    double ss = 0, sy = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const double dy = y_new[k] - y[k];
      const double dg = g_new[k] - g[k];
      ss += dy * dy;
      sy += dy * dg;
    }
    y.swap(y_new);
    g.swap(g_new);
    f = f_new;
    const double max_step = 1e3 * (b.hi - b.lo);
    step = sy > 0 ? std::min(ss / sy, max_step) : std::min(step * 2.0, max_step);
  }
  res.feasible = accept(y);
  res.certified = false;
  res.witness = y;
  res.rho = geo.rho(geo.eval(y));
  return res;
}

}  // namespace detail

// Closed-form maximization of |rho| for a single unknown value.
inline ForecastSolution solve_1d(std::span<const double> x, const PartitionedSeries& p, const Bounds& bounds) {
  detail::check_problem(x, p);
  detail::check_bounds(bounds);
  const auto g = objective_coefficients_1d(x, p);
  const double A = g.a * g.e - g.b * g.d;
  const double B = 2.0 * (g.a * g.f - g.c * g.d);
  const double C = g.b * g.f - g.c * g.e;

  std::vector<std::pair<double, bool>> candidates{{bounds.lo, true}, {bounds.hi, true}};
  for (double r : quadratic_roots(A, B, C)) {
    if (std::isfinite(r) && r > bounds.lo && r < bounds.hi) candidates.emplace_back(r, false);
  }

  ForecastSolution best;
  best.solver = Solver::closed_form;
  double best_abs = -1;
  for (const auto& [y, at_bound] : candidates) {
    const double v[1] = {y};
    const auto rho = detail::completion_rho(x, p, v);
    if (!rho) continue;
    if (std::abs(*rho) > best_abs) {
      best_abs = std::abs(*rho);
      best.y_star = {y};
      best.rho_achieved = *rho;
      best.clamped = {at_bound};
    }
  }
  if (best_abs < 0) throw RuntimeFailure("solve_1d: every candidate yields a constant series");
  best.branch = best.rho_achieved >= 0 ? Branch::positive : Branch::negative;
  return best;
}

inline FeasibilityResult feasibility_check(double t, std::span<const double> x, const PartitionedSeries& p,
                                           const Bounds& bounds, Branch sign,
                                           std::optional<std::vector<double>> start = std::nullopt) {
  detail::check_problem(x, p);
  detail::check_bounds(bounds);
  if (!(t >= 0 && t <= 1)) throw ValidationError("feasibility_check: t must lie in [0,1]");
  const detail::CompletionGeometry geo(x, p);
  auto y0 = start.value_or(std::vector<double>(p.unknown_count, 0.5 * (bounds.lo + bounds.hi)));
  if (y0.size() != p.unknown_count) throw ValidationError("feasibility_check: start point length mismatch");
  return detail::feasibility_impl(geo, t, sign == Branch::positive ? 1.0 : -1.0, bounds, std::move(y0));
}

// Bisection over the correlation level for each sign branch; the branch
// reaching the larger |rho| wins. A feasible level raises the lower end of
// the bracket (we maximize).
inline ForecastSolution solve_bisection(std::span<const double> x, const PartitionedSeries& p,
                                        const Bounds& bounds, const BisectionConfig& cfg = {}) {
  detail::check_problem(x, p);
  detail::check_bounds(bounds);
  if (!(cfg.l >= 0 && cfg.l <= cfg.u && cfg.u <= 1)) throw ValidationError("bisection: need 0 <= l <= u <= 1");
  if (!(cfg.epsilon > 0)) throw ValidationError("bisection: epsilon must be positive");
  const detail::CompletionGeometry geo(x, p);

  std::optional<ForecastSolution> best;
  for (const Branch branch : {Branch::positive, Branch::negative}) {
    const double sign = branch == Branch::positive ? 1.0 : -1.0;
    double l = cfg.l, u = cfg.u;
    std::vector<double> start(p.unknown_count, 0.5 * (bounds.lo + bounds.hi));
    auto base = detail::feasibility_impl(geo, l, sign, bounds, start);
    if (!base.feasible) continue;
    std::vector<double> witness = base.witness;
    // The witness may already certify a level above l.
    l = std::max(l, std::min(u, sign * base.rho));
    int iters = 0;
    while (u - l > cfg.epsilon) {
      if (++iters > cfg.max_iter) throw RuntimeFailure("bisection: iteration cap exceeded");
      const double t = 0.5 * (l + u);
      auto r = detail::feasibility_impl(geo, t, sign, bounds, witness);
      if (r.feasible) {
        witness = r.witness;
        l = std::max(t, std::min(u, sign * r.rho));
      } else {
        u = t;
      }
    }
    const auto rho = detail::completion_rho(x, p, witness);
    if (!rho) continue;
    if (!best || std::abs(*rho) > std::abs(best->rho_achieved)) {
      ForecastSolution s;
      s.y_star = witness;
      s.rho_achieved = *rho;
      s.branch = branch;
      s.solver = Solver::bisection;
      s.clamped = detail::clamp_flags(witness, bounds);
      s.iterations = iters;
      s.bracket_width = u - l;
      best = std::move(s);
    }
  }
  if (!best) throw RuntimeFailure("bisection: no branch admits a nondegenerate completion");
  return *best;
}

// Exhaustive grid search; a verification oracle for small instances.
// Ties go to the lexicographically smallest grid point.
inline ForecastSolution brute_force(std::span<const double> x, const PartitionedSeries& p, const Bounds& bounds,
                                    double step, std::uint64_t budget = 50'000'000) {
  detail::check_problem(x, p);
  detail::check_bounds(bounds);
  if (!(step > 0)) throw ValidationError("brute_force: step must be positive");
  const std::size_t n = p.unknown_count;
  const auto per_axis = static_cast<std::uint64_t>(std::floor((bounds.hi - bounds.lo) / step + 1e-9)) + 1;
  double total = 1;
  for (std::size_t k = 0; k < n; ++k) total *= static_cast<double>(per_axis);
  if (total > static_cast<double>(budget)) {
    throw ValidationError("brute_force: " + std::to_string(total) + " grid points exceed the budget");
  }
  const detail::CompletionGeometry geo(x, p);
  std::vector<std::uint64_t> idx(n, 0);
  std::vector<double> y(n, bounds.lo), best_y;
  double best_abs = -1, best_rho = 0;
  while (true) {
    const auto e = geo.eval(y);
    if (!geo.degenerate(e)) {
      const double r = geo.rho(e);
      if (std::abs(r) > best_abs) {
        best_abs = std::abs(r);
        best_rho = r;
        best_y = y;
      }
    }
    // Odometer with the last coordinate spinning fastest.
    bool done = true;
    for (std::size_t k = n; k-- > 0;) {
      if (++idx[k] < per_axis) {
        y[k] = bounds.lo + static_cast<double>(idx[k]) * step;
        done = false;
        break;
      }
      idx[k] = 0;
      y[k] = bounds.lo;
    }
    if (done) break;
  }
  if (best_abs < 0) throw RuntimeFailure("brute_force: every grid point yields a constant series");
  ForecastSolution s;
  s.y_star = best_y;
  s.rho_achieved = detail::completion_rho(x, p, best_y).value_or(best_rho);
  s.branch = s.rho_achieved >= 0 ? Branch::positive : Branch::negative;
  s.solver = Solver::brute_force;
  s.clamped = detail::clamp_flags(best_y, bounds);
  return s;
}

// [0, 1.5 * max observed speed].
inline Bounds default_bounds(std::span<const double> history) {
  double mx = 0;
  for (double v : history) mx = std::max(mx, v);
  return {0.0, std::max(1.5 * mx, 1e-3)};
}

// Completes `recent` with the n values that maximize |rho| against his || ref.
inline ForecastSolution forecast_solution(const WindowMatch& match, std::span<const double> recent,
                                          const Bounds& bounds, const BisectionConfig& cfg = {}) {
  if (match.his.size() != recent.size()) throw ValidationError("forecast: his and recent lengths differ");
  if (match.ref.empty()) throw ValidationError("forecast: empty continuation");
  std::vector<double> x(match.his);
  x.insert(x.end(), match.ref.begin(), match.ref.end());
  const auto p = partition(recent, match.ref.size());
  return match.ref.size() == 1 ? solve_1d(x, p, bounds) : solve_bisection(x, p, bounds, cfg);
}

inline WindowMatch forecast(WindowMatch match, std::span<const double> recent, const Bounds& bounds,
                            const BisectionConfig& cfg = {}) {
  const auto sol = forecast_solution(match, recent, bounds, cfg);
  match.pred = sol.y_star;
  match.pred_rho = sol.rho_achieved;
  return match;
}

}  // namespace corrcast
