#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corrcast/error.hpp"
#include "corrcast/series.hpp"

namespace corrcast {

struct CorrelationStats {
  double cov = 0;
  double sigma_x = 0;
  double sigma_y = 0;
  double rho = 0;
  std::vector<double> weights;  // empty means uniform 1/n
};

// A historical window correlated with the target's recent window, plus the
// values that followed it.
struct WindowMatch {
  std::string source_site;
  std::size_t offset = 0;
  std::vector<double> his;  // length m
  std::vector<double> ref;  // length n, immediately after `his`
  double rho = 0;
  std::optional<std::vector<double>> pred;  // filled by forecast()
  std::optional<double> pred_rho;
};

namespace detail {

inline void check_pair(std::span<const double> x, std::span<const double> y, const char* op) {
  if (x.size() != y.size()) {
    throw ValidationError(std::string(op) + ": length mismatch (" + std::to_string(x.size()) + " vs " +
                          std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw ValidationError(std::string(op) + ": need at least 2 values");
}

inline void check_weights(std::span<const double> w, std::size_t n) {
  if (w.size() != n) throw ValidationError("covariance: weights length mismatch");
  double sum = 0;
  for (double v : w) {
    if (!(v >= 0) || !std::isfinite(v)) throw ValidationError("covariance: weights must be finite and >= 0");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("covariance: weights must sum to 1");
}

inline double mean_of(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// A standard deviation this small relative to the data is treated as zero.
inline bool negligible_spread(double sigma, std::span<const double> v) {
  double scale = 0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  return sigma <= 1e-12 * std::max(scale, 1e-300);
}

}  // namespace detail

// E[(X - E X)(Y - E Y)] with per-realization weights (uniform when empty).
inline double covariance(std::span<const double> x, std::span<const double> y,
                         std::span<const double> weights = {}) {
  detail::check_pair(x, y, "covariance");
  if (weights.empty()) {
    const double mx = detail::mean_of(x), my = detail::mean_of(y);
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
    return s / static_cast<double>(x.size());
  }
  detail::check_weights(weights, x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += weights[i] * x[i];
    my += weights[i] * y[i];
  }
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * (x[i] - mx) * (y[i] - my);
  return s;
}

// (1/n^2) * sum_{i<j} (x_i - x_j)(y_i - y_j): the pairwise-difference form.
inline double covariance_pairwise(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y, "covariance_pairwise");
  const std::size_t n = x.size();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) s += (x[i] - x[j]) * (y[i] - y[j]);
  }
  return s / static_cast<double>(n * n);
}

inline CorrelationStats pearson(std::span<const double> x, std::span<const double> y,
                                std::span<const double> weights = {}) {
  detail::check_pair(x, y, "pearson");
  CorrelationStats st;
  st.cov = covariance(x, y, weights);
  st.sigma_x = std::sqrt(std::max(0.0, covariance(x, x, weights)));
  st.sigma_y = std::sqrt(std::max(0.0, covariance(y, y, weights)));
  if (detail::negligible_spread(st.sigma_x, x) || detail::negligible_spread(st.sigma_y, y)) {
    throw DegenerateCorrelation("pearson: zero-variance input");
  }
  st.rho = std::clamp(st.cov / (st.sigma_x * st.sigma_y), -1.0, 1.0);
  st.weights.assign(weights.begin(), weights.end());
  return st;
}

struct ScanOptions {
  std::size_t m = 36;
  std::size_t n = 6;
  double threshold = 0.8;
  bool include_target_site = true;
  // Windows must satisfy offset + m + n <= history_end (defaults to the grid
  // length), so a match never looks past the forecast origin.
  std::optional<std::size_t> history_end;
};

namespace detail {

inline bool match_less(const WindowMatch& a, const WindowMatch& b) {
  const double ra = std::abs(a.rho), rb = std::abs(b.rho);
  if (ra != rb) return ra < rb;
  if (a.source_site != b.source_site) return a.source_site < b.source_site;
  return a.offset < b.offset;
}

// |rho| of `recent` against every stride-1 window of `series` in
// [first, last_offset]. `centered` is recent minus its mean, `recent_norm` its
// Euclidean norm. Zero-variance windows produce nullopt.
template <typename Fn>
void scan_series(std::span<const double> series, std::span<const double> centered, double recent_norm,
                 std::size_t first, std::size_t last_offset, Fn&& on_window) {
  const std::size_t m = centered.size();
  for (std::size_t off = first; off <= last_offset; ++off) {
    const double* w = series.data() + off;
    double mean = 0;
    for (std::size_t k = 0; k < m; ++k) mean += w[k];
    mean /= static_cast<double>(m);
    double ss = 0, sxy = 0, scale = 0;
    for (std::size_t k = 0; k < m; ++k) {
      const double d = w[k] - mean;
      ss += d * d;
      sxy += d * centered[k];
      scale = std::max(scale, std::abs(w[k]));
    }
    const double norm = std::sqrt(ss);
    if (norm <= 1e-12 * std::sqrt(static_cast<double>(m)) * std::max(scale, 1e-300)) {
      on_window(off, std::optional<double>{});
      continue;
    }
    on_window(off, std::optional<double>{std::clamp(sxy / (norm * recent_norm), -1.0, 1.0)});
  }
}

struct CenteredWindow {
  std::vector<double> centered;
  double norm = 0;
};

inline CenteredWindow center(std::span<const double> recent) {
  CenteredWindow c;
  const double mean = mean_of(recent);
  c.centered.reserve(recent.size());
  for (double v : recent) c.centered.push_back(v - mean);
  double ss = 0;
  for (double v : c.centered) ss += v * v;
  c.norm = std::sqrt(ss);
  if (negligible_spread(c.norm / std::sqrt(static_cast<double>(recent.size())), recent)) {
    throw DegenerateCorrelation("scan: recent window has zero variance");
  }
  return c;
}

}  // namespace detail

// Stride-1 moving-window scan of every site's history against `recent`.
// Returns matches with |rho| >= threshold ordered ascending by |rho|
// (ties: site_id, then offset). Throws NoMatchError when nothing qualifies.
inline std::vector<WindowMatch> scan_windows(const SiteGrid& grid, std::span<const double> recent,
                                             const ScanOptions& opt) {
  if (opt.m < 2 || recent.size() != opt.m) throw ValidationError("scan: recent window must have length m >= 2");
  if (opt.n < 1) throw ValidationError("scan: n must be >= 1");
  if (!(opt.threshold > 0 && opt.threshold <= 1)) throw ValidationError("scan: threshold must lie in (0,1]");
  const std::size_t end = opt.history_end.value_or(grid.length());
  if (end > grid.length()) throw ValidationError("scan: history_end beyond grid length");

  const auto c = detail::center(recent);
  std::vector<WindowMatch> out;
  if (end >= opt.m + opt.n) {
    const std::size_t last = end - opt.m - opt.n;
    for (std::size_t s = 0; s < grid.site_count(); ++s) {
      const auto& series = grid.series[s];
      if (!opt.include_target_site && series.site_id == grid.target_site) continue;
      detail::scan_series(series.view(), c.centered, c.norm, 0, last,
                          [&](std::size_t off, std::optional<double> rho) {
                            if (!rho || std::abs(*rho) < opt.threshold) return;
                            WindowMatch mt;
                            mt.source_site = series.site_id;
                            mt.offset = off;
                            mt.his.assign(series.values.begin() + off, series.values.begin() + off + opt.m);
                            mt.ref.assign(series.values.begin() + off + opt.m,
                                          series.values.begin() + off + opt.m + opt.n);
                            mt.rho = *rho;
                            out.push_back(std::move(mt));
                          });
    }
  }
  if (out.empty()) {
    throw NoMatchError("scan: no window reaches |rho| >= " + std::to_string(opt.threshold));
  }
  std::sort(out.begin(), out.end(), detail::match_less);
  return out;
}

}  // namespace corrcast
