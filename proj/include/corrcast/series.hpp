#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "corrcast/error.hpp"
#include "corrcast/random.hpp"

namespace corrcast {

using TimePoint = std::chrono::sys_seconds;

// One sampling period.
inline constexpr std::chrono::seconds kCadence{600};

struct WindSeries {
  std::string site_id;
  TimePoint start_time{};
  std::vector<double> values;  // m/s

  std::size_t size() const { return values.size(); }
  std::span<const double> view() const { return values; }
};

struct Site {
  std::string site_id;
  double x_km = 0.0;
  double y_km = 0.0;
  double altitude_m = 0.0;
};

// Multi-site record set sharing start time, cadence and length.
struct SiteGrid {
  std::vector<Site> sites;
  std::vector<WindSeries> series;  // same order as `sites`
  std::string target_site;

  std::size_t site_count() const { return sites.size(); }
  std::size_t length() const { return series.empty() ? 0 : series.front().size(); }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (sites[i].site_id == id) return i;
    }
    throw ValidationError("unknown site '" + id + "'");
  }

  const WindSeries& series_of(const std::string& id) const { return series[index_of(id)]; }
  const WindSeries& target() const { return series_of(target_site); }
};

struct DatasetSplit {
  int fold_id = 0;
  std::size_t train_begin = 0, train_end = 0;  // [begin, end)
  std::size_t test_begin = 0, test_end = 0;

  std::size_t train_len() const { return train_end - train_begin; }
  std::size_t test_len() const { return test_end - test_begin; }
};

struct SeriesStats {
  double min = 0, mean = 0, max = 0, std = 0;
  double skewness = 0, excess_kurtosis = 0;
  double q1 = 0, q3 = 0;
};

// ---------------------------------------------------------------------------
// Validation

inline void validate_grid(const SiteGrid& grid) {
  if (grid.sites.empty()) throw ValidationError("grid has no sites");
  if (grid.sites.size() != grid.series.size()) {
    throw ValidationError("grid has " + std::to_string(grid.sites.size()) + " sites but " +
                          std::to_string(grid.series.size()) + " series");
  }
  const auto& first = grid.series.front();
  for (std::size_t i = 0; i < grid.sites.size(); ++i) {
    const auto& s = grid.series[i];
    if (s.site_id != grid.sites[i].site_id) throw ValidationError("series/site order mismatch");
    for (std::size_t j = 0; j < i; ++j) {
      if (grid.sites[j].site_id == s.site_id) {
        throw ValidationError("duplicate site_id '" + s.site_id + "'");
      }
    }
    if (s.start_time != first.start_time || s.size() != first.size()) {
      throw ValidationError("series of site '" + s.site_id + "' is not aligned with '" +
                            first.site_id + "'");
    }
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (!std::isfinite(s.values[k]) || s.values[k] < 0.0) {
        throw ValidationError("site '" + s.site_id + "' period " + std::to_string(k) +
                              ": wind speed must be finite and >= 0");
      }
    }
  }
  (void)grid.index_of(grid.target_site);
}

// ---------------------------------------------------------------------------
// Timestamps: "YYYY-MM-DDTHH:MM[:SS]" (a space may replace the 'T', a
// trailing 'Z' is accepted). Always interpreted as UTC.

inline std::optional<TimePoint> parse_timestamp(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  std::string buf(text);
  if (!buf.empty() && buf.back() == 'Z') buf.pop_back();
  char sep = 0;
  int consumed = 0;
  int n = std::sscanf(buf.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
  if (n < 6 || (sep != 'T' && sep != ' ')) return std::nullopt;
  std::string_view rest = std::string_view(buf).substr(static_cast<std::size_t>(consumed));
  if (!rest.empty()) {
    int c2 = 0;
    if (std::sscanf(rest.data(), ":%2d%n", &s, &c2) != 1 || static_cast<std::size_t>(c2) != rest.size()) {
      return std::nullopt;
    }
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 59) return std::nullopt;
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
}

inline std::string format_timestamp(TimePoint tp) {
  using namespace std::chrono;
  const auto day_point = floor<days>(tp);
  const year_month_day ymd{day_point};
  const hh_mm_ss hms{tp - day_point};
  char out[32];
  std::snprintf(out, sizeof out, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_number(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ParseError(where + ": '" + text + "' is not a number");
  }
  if (used != text.size()) throw ParseError(where + ": '" + text + "' is not a number");
  return v;
}

}  // namespace detail

// Reads `timestamp,site_id,wind_speed_mps` records. Rows may appear in any
// order; each site must cover the same strictly 10-minute-spaced timestamps.
// `coords_path` optionally points at a `site_id,x_km,y_km,altitude_m` sidecar.
// The target defaults to the first site seen.
inline SiteGrid load_csv(const std::filesystem::path& path,
                         const std::optional<std::filesystem::path>& coords_path = std::nullopt,
                         const std::optional<std::string>& target_site = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  {
    const auto header = detail::split_csv_line(line);
    if (header != std::vector<std::string>{"timestamp", "site_id", "wind_speed_mps"}) {
      throw ParseError(path.string() + " line 1: expected header timestamp,site_id,wind_speed_mps");
    }
  }

  struct Row {
    TimePoint t;
    double v;
    std::size_t line;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string where = path.string() + " line " + std::to_string(line_no);
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 3) throw ParseError(where + ": expected 3 fields, got " + std::to_string(cells.size()));
    const auto t = parse_timestamp(cells[0]);
    if (!t) throw ParseError(where + ": bad timestamp '" + cells[0] + "'");
    if (cells[1].empty()) throw ParseError(where + ": empty site_id");
    const double v = detail::parse_number(cells[2], where);
    if (!std::isfinite(v) || v < 0.0) {
      throw ValidationError(where + ": wind speed must be finite and >= 0, got " + cells[2]);
    }
    auto [it, inserted] = rows.try_emplace(cells[1]);
    if (inserted) order.push_back(cells[1]);
    it->second.push_back({*t, v, line_no});
  }
  if (order.empty()) throw ParseError(path.string() + ": no data rows");

  SiteGrid grid;
  for (const auto& id : order) {
    auto& r = rows[id];
    std::stable_sort(r.begin(), r.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
    WindSeries s;
    s.site_id = id;
    s.start_time = r.front().t;
    s.values.reserve(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (k > 0 && r[k].t - r[k - 1].t != kCadence) {
        throw ValidationError(path.string() + " line " + std::to_string(r[k].line) + ": site '" + id +
                              "' breaks the 10-minute cadence after " + format_timestamp(r[k - 1].t));
      }
      s.values.push_back(r[k].v);
    }
    grid.sites.push_back({id, 0.0, 0.0, 0.0});
    grid.series.push_back(std::move(s));
  }
  const auto& ref = grid.series.front();
  for (const auto& s : grid.series) {
    if (s.start_time != ref.start_time || s.size() != ref.size()) {
      throw ValidationError(path.string() + ": site '" + s.site_id + "' timestamps are misaligned with site '" +
                            ref.site_id + "'");
    }
  }

  if (coords_path) {
    std::ifstream cin(*coords_path);
    if (!cin) throw ValidationError("cannot open " + coords_path->string());
    if (!std::getline(cin, line) ||
        detail::split_csv_line(line) != std::vector<std::string>{"site_id", "x_km", "y_km", "altitude_m"}) {
      throw ParseError(coords_path->string() + " line 1: expected header site_id,x_km,y_km,altitude_m");
    }
    std::size_t cl = 1;
    while (std::getline(cin, line)) {
      ++cl;
      if (line.empty() || line == "\r") continue;
      const std::string where = coords_path->string() + " line " + std::to_string(cl);
      const auto cells = detail::split_csv_line(line);
      if (cells.size() != 4) throw ParseError(where + ": expected 4 fields");
      auto& site = grid.sites[grid.index_of(cells[0])];
      site.x_km = detail::parse_number(cells[1], where);
      site.y_km = detail::parse_number(cells[2], where);
      site.altitude_m = detail::parse_number(cells[3], where);
    }
  }

  grid.target_site = target_site.value_or(order.front());
  validate_grid(grid);
  return grid;
}

inline void write_csv(const SiteGrid& grid, const std::filesystem::path& path,
                      const std::optional<std::filesystem::path>& coords_path = std::nullopt) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "timestamp,site_id,wind_speed_mps\n";
  char num[64];
  for (std::size_t k = 0; k < grid.length(); ++k) {
    for (const auto& s : grid.series) {
      std::snprintf(num, sizeof num, "%.17g", s.values[k]);
      out << format_timestamp(s.start_time + k * kCadence) << ',' << s.site_id << ',' << num << '\n';
    }
  }
  if (coords_path) {
    std::ofstream c(*coords_path);
    if (!c) throw RuntimeFailure("cannot write " + coords_path->string());
    c << "site_id,x_km,y_km,altitude_m\n";
    for (const auto& s : grid.sites) {
      c << s.site_id << ',' << s.x_km << ',' << s.y_km << ',' << s.altitude_m << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Summary statistics (population moments).

inline double quantile_linear(std::vector<double> sorted, double p) {
  std::sort(sorted.begin(), sorted.end());
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline SeriesStats describe(std::span<const double> values) {
  if (values.empty()) throw ValidationError("describe: empty series");
  const double n = static_cast<double>(values.size());
  SeriesStats st;
  st.min = *std::min_element(values.begin(), values.end());
  st.max = *std::max_element(values.begin(), values.end());
  double sum = 0;
  for (double v : values) sum += v;
  st.mean = sum / n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double v : values) {
    const double d = v - st.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  st.std = std::sqrt(m2);
  // Tolerance relative to the magnitude of the data: a constant series can
  // pick up roundoff in the mean.
  const double scale = std::max(std::abs(st.min), std::abs(st.max));
  if (m2 > 1e-24 * std::max(1.0, scale * scale)) {
    st.skewness = m3 / std::pow(m2, 1.5);
    st.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  std::vector<double> copy(values.begin(), values.end());
  st.q1 = quantile_linear(copy, 0.25);
  st.q3 = quantile_linear(std::move(copy), 0.75);
  return st;
}

inline SeriesStats describe(const WindSeries& series) { return describe(series.view()); }

// ---------------------------------------------------------------------------
// Expanding-window cross validation: fold k trains on [origin, origin + k*te)
// and tests on the following te periods.

inline std::vector<DatasetSplit> split_cv(std::size_t series_length, std::size_t te_len, int folds,
                                          std::size_t origin = 0) {
  if (te_len == 0) throw ValidationError("split_cv: te_len must be positive");
  if (folds < 1) throw ValidationError("split_cv: folds must be >= 1");
  const std::size_t needed = origin + (static_cast<std::size_t>(folds) + 1) * te_len;
  if (needed > series_length) {
    throw ValidationError("split_cv: " + std::to_string(folds) + " folds of " + std::to_string(te_len) +
                          " periods need " + std::to_string(needed) + " periods, grid has " +
                          std::to_string(series_length));
  }
  std::vector<DatasetSplit> out;
  for (int k = 1; k <= folds; ++k) {
    DatasetSplit s;
    s.fold_id = k;
    s.train_begin = origin;
    s.train_end = origin + static_cast<std::size_t>(k) * te_len;
    s.test_begin = s.train_end;
    s.test_end = s.test_begin + te_len;
    out.push_back(s);
  }
  return out;
}

inline std::vector<DatasetSplit> split_cv(const SiteGrid& grid, std::size_t te_len, int folds,
                                          std::size_t origin = 0) {
  return split_cv(grid.length(), te_len, folds, origin);
}

// ---------------------------------------------------------------------------
// Synthetic field.

struct SynthParams {
  int n_sites = 8;
  std::size_t n_periods = 5000;
  double spatial_decay_km = 5.0;  // innovation correlation exp(-d / decay)
  double temporal_rho = 0.95;     // AR(1) coefficient of the deviation
  double noise_std = 0.3;         // innovation std, m/s
  std::uint64_t seed = 1;
  double mean_speed = 6.0;        // m/s
  double diurnal_amplitude = 1.5; // m/s
  double site_spacing_km = 1.0;
  std::string start = "2015-05-29T00:00:00";
};

// Shared deterministic base signal: one sinusoidal cycle per day (144 periods).
inline double diurnal_base(const SynthParams& p, std::size_t period) {
  return p.mean_speed +
         p.diurnal_amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(period) / 144.0);
}

// Sites sit on a square lattice, `site_spacing_km` apart, filled row by row.
inline std::vector<Site> lattice_sites(int n_sites, double spacing_km) {
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_sites))));
  std::vector<Site> sites;
  for (int i = 0; i < n_sites; ++i) {
    sites.push_back({"S" + std::to_string(i + 1), spacing_km * (i % cols), spacing_km * (i / cols), 0.0});
  }
  return sites;
}

namespace detail {

// Cholesky factor of a positive semi-definite matrix (row-major n*n). Columns
// with a vanishing pivot are zeroed, which makes perfectly correlated sites
// share one innovation.
inline std::vector<double> psd_cholesky(const std::vector<double>& a, int n) {
  std::vector<double> l(static_cast<std::size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (int k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (d <= 1e-12) continue;
    const double ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (int i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (int k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / ljj;
    }
  }
  return l;
}

// Deviation paths d_i(t) = rho * d_i(t-1) + e_i(t) with innovations
// e ~ N(0, noise^2 * C), C_ij = exp(-dist_ij / decay).
inline std::vector<std::vector<double>> ar1_deviations(const SynthParams& p, const std::vector<Site>& sites,
                                                       std::size_t periods) {
  const int n = static_cast<int>(sites.size());
  std::vector<double> cov(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double dist = std::hypot(sites[i].x_km - sites[j].x_km, sites[i].y_km - sites[j].y_km);
      cov[i * n + j] = std::exp(-dist / p.spatial_decay_km);
    }
  }
  const auto chol = psd_cholesky(cov, n);
  Rng rng(p.seed);
  std::vector<double> z(n), e(n);
  auto draw = [&] {
    for (int i = 0; i < n; ++i) z[i] = rng.normal();
    for (int i = 0; i < n; ++i) {
      double s = 0;
      for (int k = 0; k <= i; ++k) s += chol[i * n + k] * z[k];
      e[i] = p.noise_std * s;
    }
  };
  std::vector<std::vector<double>> dev(n, std::vector<double>(periods));
  const double stationary = 1.0 / std::sqrt(1.0 - p.temporal_rho * p.temporal_rho);
  draw();
  for (int i = 0; i < n; ++i) dev[i][0] = e[i] * stationary;
  for (std::size_t t = 1; t < periods; ++t) {
    draw();
    for (int i = 0; i < n; ++i) dev[i][t] = p.temporal_rho * dev[i][t - 1] + e[i];
  }
  return dev;
}

inline void check_synth_params(const SynthParams& p) {
  if (p.n_sites < 1) throw ValidationError("synth: n_sites must be >= 1");
  if (p.n_periods < 1) throw ValidationError("synth: n_periods must be >= 1");
  if (!(p.spatial_decay_km > 0)) throw ValidationError("synth: spatial_decay must be positive");
  if (!(p.temporal_rho > 0 && p.temporal_rho < 1)) throw ValidationError("synth: temporal_rho must lie in (0,1)");
  if (!(p.noise_std >= 0) || !std::isfinite(p.noise_std)) throw ValidationError("synth: noise_std must be >= 0");
}

}  // namespace detail

// Each site: diurnal base + AR(1) deviation with spatially correlated
// innovations, clamped at 0 m/s. Deterministic in `seed`.
inline SiteGrid synth_field(const SynthParams& p) {
  detail::check_synth_params(p);
  const auto start = parse_timestamp(p.start);
  if (!start) throw ValidationError("synth: bad start timestamp '" + p.start + "'");
  SiteGrid grid;
  grid.sites = lattice_sites(p.n_sites, p.site_spacing_km);
  const auto dev = detail::ar1_deviations(p, grid.sites, p.n_periods);
  for (int i = 0; i < p.n_sites; ++i) {
    WindSeries s{grid.sites[i].site_id, *start, std::vector<double>(p.n_periods)};
    for (std::size_t t = 0; t < p.n_periods; ++t) {
      s.values[t] = std::max(0.0, diurnal_base(p, t) + dev[i][t]);
    }
    grid.series.push_back(std::move(s));
  }
  grid.target_site = grid.sites.front().site_id;
  return grid;
}

inline SiteGrid synth_field(int n_sites, std::size_t n_periods, double spatial_decay, double temporal_rho,
                            double noise_std, std::uint64_t seed) {
  SynthParams p;
  p.n_sites = n_sites;
  p.n_periods = n_periods;
  p.spatial_decay_km = spatial_decay;
  p.temporal_rho = temporal_rho;
  p.noise_std = noise_std;
  p.seed = seed;
  return synth_field(p);
}

// Synthetic field with `upwind_count` extra sites that see the target's wind
// `lead` periods early (plus independent measurement noise), the way a
// turbine upstream of the prevailing flow does. The target is S1.
inline SiteGrid synth_upwind_field(const SynthParams& p, int upwind_count, std::size_t lead,
                                   double upwind_noise_std) {
  if (upwind_count < 0) throw ValidationError("synth: upwind_count must be >= 0");
  if (!(upwind_noise_std >= 0)) throw ValidationError("synth: upwind noise must be >= 0");
  SynthParams extended = p;
  extended.n_periods = p.n_periods + lead;
  SiteGrid full = synth_field(extended);
  SiteGrid grid;
  grid.target_site = full.target_site;
  for (std::size_t i = 0; i < full.sites.size(); ++i) {
    grid.sites.push_back(full.sites[i]);
    auto s = full.series[i];
    s.values.resize(p.n_periods);
    grid.series.push_back(std::move(s));
  }
  const auto& target_full = full.series.front().values;
  Rng rng(p.seed ^ 0x9e3779b97f4a7c15ULL);
  for (int u = 0; u < upwind_count; ++u) {
    Site site{"U" + std::to_string(u + 1), -p.site_spacing_km * (u + 1), 0.0, 0.0};
    WindSeries s{site.site_id, grid.series.front().start_time, std::vector<double>(p.n_periods)};
    for (std::size_t t = 0; t < p.n_periods; ++t) {
      s.values[t] = std::max(0.0, target_full[t + lead] + rng.normal(0.0, upwind_noise_std));
    }
    grid.sites.push_back(site);
    grid.series.push_back(std::move(s));
  }
  validate_grid(grid);
  return grid;
}

}  // namespace corrcast
