#pragma once

// Report emission: csv (one row per variant/fold/rank), json (everything,
// round-trippable) and plotdata (loss curves plus prediction overlays as
// tab-separated columns).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>

#include "corrcast/error.hpp"
#include "corrcast/experiment.hpp"
#include "json.hpp"

namespace corrcast {

enum class ReportFormat { csv, json, plotdata };

inline ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  if (s == "plotdata") return ReportFormat::plotdata;
  throw ValidationError("unknown report format '" + s + "'");
}

inline constexpr const char* kReportSchema = "corrcast.report";
inline constexpr int kReportSchemaVersion = 1;

namespace detail {

inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double num_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline nlohmann::json scores_json(const Scores& s) {
  return {{"acc_pct", num(s.acc_pct)}, {"rmse_mps", num(s.rmse_mps)}, {"r2", num(s.r2)}};
}

inline Scores scores_from(const nlohmann::json& j) {
  return {num_from(j.at("acc_pct")), num_from(j.at("rmse_mps")), num_from(j.at("r2"))};
}

inline nlohmann::json nums(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

inline std::vector<double> nums_from(const nlohmann::json& j) {
  std::vector<double> v;
  for (const auto& x : j) v.push_back(num_from(x));
  return v;
}

inline bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

inline bool same(const Scores& a, const Scores& b) {
  return same(a.acc_pct, b.acc_pct) && same(a.rmse_mps, b.rmse_mps) && same(a.r2, b.r2);
}

inline bool same(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!same(a[i], b[i])) return false;
  }
  return true;
}

inline std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  return out;
}

}  // namespace detail

inline nlohmann::json report_to_json(const ReportTable& t) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& r : t.trials) {
    nlohmann::json forecasts = nlohmann::json::array();
    for (const auto& f : r.test_forecasts) {
      forecasts.push_back({{"origin", f.origin}, {"predicted", detail::nums(f.predicted)},
                           {"actual", detail::nums(f.actual)}});
    }
    trials.push_back({{"variant", r.variant},
                      {"fold", r.fold},
                      {"seed", r.seed},
                      {"train", detail::scores_json(r.train)},
                      {"test", detail::scores_json(r.test)},
                      {"seconds", detail::num(r.seconds)},
                      {"error", r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr)},
                      {"train_loss", detail::nums(r.train_loss)},
                      {"test_loss", detail::nums(r.test_loss)},
                      {"test_forecasts", std::move(forecasts)}});
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"variant", r.variant},
                    {"fold", r.fold},
                    {"rank", r.rank},
                    {"seed", r.seed ? nlohmann::json(*r.seed) : nlohmann::json(nullptr)},
                    {"train", detail::scores_json(r.train)},
                    {"test", detail::scores_json(r.test)},
                    {"seconds", detail::num(r.seconds)}});
  }
  return {{"schema", kReportSchema},
          {"version", kReportSchemaVersion},
          {"config", t.config},
          {"rows", std::move(rows)},
          {"trials", std::move(trials)}};
}

inline ReportTable report_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("version")) throw VersionError("report: missing version field");
  if (j.value("schema", std::string{}) != kReportSchema) throw ParseError("report: wrong schema");
  if (j.at("version").get<int>() != kReportSchemaVersion) throw VersionError("report: unsupported version");
  try {
    ReportTable t;
    t.config = j.at("config");
    for (const auto& jr : j.at("trials")) {
      TrialResult r;
      r.variant = jr.at("variant").get<std::string>();
      r.fold = jr.at("fold").get<int>();
      r.seed = jr.at("seed").get<std::uint64_t>();
      r.train = detail::scores_from(jr.at("train"));
      r.test = detail::scores_from(jr.at("test"));
      r.seconds = detail::num_from(jr.at("seconds"));
      if (!jr.at("error").is_null()) r.error = jr.at("error").get<std::string>();
      r.train_loss = detail::nums_from(jr.at("train_loss"));
      r.test_loss = detail::nums_from(jr.at("test_loss"));
      for (const auto& jf : jr.at("test_forecasts")) {
        r.test_forecasts.push_back({jf.at("origin").get<std::size_t>(), detail::nums_from(jf.at("predicted")),
                                    detail::nums_from(jf.at("actual"))});
      }
      t.trials.push_back(std::move(r));
    }
    for (const auto& jr : j.at("rows")) {
      ReportRow r;
      r.variant = jr.at("variant").get<std::string>();
      r.fold = jr.at("fold").get<int>();
      r.rank = jr.at("rank").get<std::string>();
      if (!jr.at("seed").is_null()) r.seed = jr.at("seed").get<std::uint64_t>();
      r.train = detail::scores_from(jr.at("train"));
      r.test = detail::scores_from(jr.at("test"));
      r.seconds = detail::num_from(jr.at("seconds"));
      t.rows.push_back(std::move(r));
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
}

// Structural equality; NaN equals NaN. With `ignore_timing` the wall-clock
// fields are skipped (the rest of a rerun is bit-identical).
inline bool same_report(const ReportTable& a, const ReportTable& b, bool ignore_timing = false) {
  using detail::same;
  if (a.config != b.config || a.trials.size() != b.trials.size() || a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    const auto &x = a.trials[i], &y = b.trials[i];
    if (x.variant != y.variant || x.fold != y.fold || x.seed != y.seed || !same(x.train, y.train) ||
        !same(x.test, y.test) || x.error != y.error || !same(x.train_loss, y.train_loss) ||
        !same(x.test_loss, y.test_loss) || x.test_forecasts.size() != y.test_forecasts.size()) {
      return false;
    }
    if (!ignore_timing && !same(x.seconds, y.seconds)) return false;
    for (std::size_t k = 0; k < x.test_forecasts.size(); ++k) {
      const auto &f = x.test_forecasts[k], &g = y.test_forecasts[k];
      if (f.origin != g.origin || !same(f.predicted, g.predicted) || !same(f.actual, g.actual)) return false;
    }
  }
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto &x = a.rows[i], &y = b.rows[i];
    if (x.variant != y.variant || x.fold != y.fold || x.rank != y.rank || x.seed != y.seed ||
        !same(x.train, y.train) || !same(x.test, y.test)) {
      return false;
    }
    if (!ignore_timing && !same(x.seconds, y.seconds)) return false;
  }
  return true;
}

// csv: header plus one row per (variant, fold, rank) with the ranked trial's
// test-split scores and training time. Train-split scores live in the json.
inline void write_report_csv(const ReportTable& t, std::ostream& out) {
  out << "variant,fold,rank,split,acc_pct,rmse_mps,r2,seconds\n";
  for (const auto& r : t.rows) {
    out << r.variant << ',' << r.fold << ',' << r.rank << ",test," << detail::fmt(r.test.acc_pct) << ','
        << detail::fmt(r.test.rmse_mps) << ',' << detail::fmt(r.test.r2) << ',' << detail::fmt(r.seconds) << '\n';
  }
}

inline void write_report_csv(const ReportTable& t, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  write_report_csv(t, out);
}

inline void write_report_json(const ReportTable& t, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << report_to_json(t).dump(1) << '\n';
}

inline ReportTable read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// plotdata: `path` is a directory receiving
//   loss_curves.tsv   variant fold seed epoch train_loss test_loss (every trial)
//   predictions.tsv   variant fold seed origin step actual predicted (the
//                     median trial of each variant/fold)
inline void write_plotdata(const ReportTable& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto loss = detail::open_out(dir / "loss_curves.tsv");
  loss << "variant\tfold\tseed\tepoch\ttrain_loss\ttest_loss\n";
  for (const auto& r : t.trials) {
    for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
      loss << r.variant << '\t' << r.fold << '\t' << r.seed << '\t' << e + 1 << '\t' << detail::fmt(r.train_loss[e])
           << '\t' << (e < r.test_loss.size() ? detail::fmt(r.test_loss[e]) : "nan") << '\n';
    }
  }
  auto pred = detail::open_out(dir / "predictions.tsv");
  pred << "variant\tfold\tseed\torigin\tstep\tactual\tpredicted\n";
  for (const auto& row : t.rows) {
    if (row.rank != "med" || !row.seed) continue;
    for (const auto& r : t.trials) {
      if (r.variant != row.variant || r.fold != row.fold || r.seed != *row.seed) continue;
      for (const auto& f : r.test_forecasts) {
        for (std::size_t k = 0; k < f.predicted.size(); ++k) {
          pred << r.variant << '\t' << r.fold << '\t' << r.seed << '\t' << f.origin << '\t' << k + 1 << '\t'
               << detail::fmt(f.actual[k]) << '\t' << detail::fmt(f.predicted[k]) << '\n';
        }
      }
    }
  }
}

inline void emit_report(const ReportTable& t, ReportFormat format, const std::filesystem::path& path) {
  switch (format) {
    case ReportFormat::csv: write_report_csv(t, path); break;
    case ReportFormat::json: write_report_json(t, path); break;
    case ReportFormat::plotdata: write_plotdata(t, path); break;
  }
}

}  // namespace corrcast
