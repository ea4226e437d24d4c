// corrcast command line.
//
// Every subcommand takes --config <json> and --seed. Keys of the config file
// use the long flag names with '-' replaced by '_'; flags given on the command
// line win over the file. Exit status: 0 success, 1 invalid input or usage,
// 2 failure while computing.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "corrcast/correlation.hpp"
#include "corrcast/error.hpp"
#include "corrcast/experiment.hpp"
#include "corrcast/fracprog.hpp"
#include "corrcast/knowledge.hpp"
#include "corrcast/neural/checkpoint.hpp"
#include "corrcast/report.hpp"
#include "corrcast/series.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace corrcast;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// Binds CLI options to variables and lets a JSON config fill whatever the
// command line left unset.
template <typename T>
void assign(T& var, const json& j) {
  var = j.get<T>();
}

template <typename T>
void assign(std::optional<T>& var, const json& j) {
  if (j.is_null()) {
    var.reset();
  } else {
    var = j.get<T>();
  }
}

class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file with defaults for these options");
    add("--seed", seed_, "Random seed");
  }

  template <typename T>
  CLI::Option* add(const std::string& flag, T& var, const std::string& help) {
    auto* opt = app_->add_option(flag, var, help)->capture_default_str();
    std::string key = flag.substr(2);
    for (auto& ch : key) {
      if (ch == '-') ch = '_';
    }
    fields_.push_back({key, opt, [&var](const json& j) { assign(var, j); }});
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    auto* opt = app_->add_flag(name, var, help);
    std::string key = name.substr(2);
    for (auto& ch : key) {
      if (ch == '-') ch = '_';
    }
    fields_.push_back({key, opt, [&var](const json& j) { var = j.get<bool>(); }});
    return opt;
  }

  // Loads the config (if any) and returns keys it holds that no option
  // claimed, for subcommands that accept a richer document.
  json apply(bool allow_extra = false) {
    if (config_path_.empty()) return json::object();
    config_ = read_json(config_path_);
    if (!config_.is_object()) throw ParseError(config_path_ + ": expected a JSON object");
    json extra = json::object();
    for (const auto& [key, value] : config_.items()) {
      auto it = std::find_if(fields_.begin(), fields_.end(), [&](const Field& f) { return f.key == key; });
      if (it == fields_.end()) {
        if (!allow_extra) throw ValidationError(config_path_ + ": unknown key '" + key + "'");
        extra[key] = value;
        continue;
      }
      if (it->opt->count() > 0) continue;
      try {
        it->set(value);
      } catch (const json::exception& e) {
        throw ParseError(config_path_ + ": key '" + key + "': " + e.what());
      }
    }
    return extra;
  }

  bool given(const std::string& key) const {
    auto it = std::find_if(fields_.begin(), fields_.end(), [&](const Field& f) { return f.key == key; });
    return it != fields_.end() && (it->opt->count() > 0 || config_.contains(key));
  }

  std::uint64_t seed() const { return seed_; }
  const std::string& config_path() const { return config_path_; }

 private:
  struct Field {
    std::string key;
    CLI::Option* opt;
    std::function<void(const json&)> set;
  };
  CLI::App* app_;
  std::string config_path_;
  std::uint64_t seed_ = 1;
  json config_ = json::object();
  std::vector<Field> fields_;
};

// Grid input shared by the data-consuming subcommands.
struct GridArgs {
  std::string grid, coords, site;

  void bind(Options& o) {
    o.add("--grid", grid, "Wind-speed CSV (timestamp,site_id,wind_speed_mps)");
    o.add("--coords", coords, "Optional site coordinate CSV");
    o.add("--site", site, "Target site (default: first site in the file)");
  }

  SiteGrid load() const {
    if (grid.empty()) throw ValidationError("--grid is required");
    return load_csv(grid, coords.empty() ? std::nullopt : std::optional<fs::path>(coords),
                    site.empty() ? std::nullopt : std::optional<std::string>(site));
  }
};

// Recent window y[origin - m, origin) of the target.
std::vector<double> recent_window(const SiteGrid& grid, std::size_t origin, std::size_t m) {
  const auto& y = grid.target().values;
  if (origin > y.size() || origin < m) throw ValidationError("origin must lie in [m, grid length]");
  return {y.begin() + static_cast<std::ptrdiff_t>(origin - m), y.begin() + static_cast<std::ptrdiff_t>(origin)};
}

std::string join(const std::vector<double>& v) {
  std::string s;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", v[i]);
    s += (i ? " " : "") + std::string(buf);
  }
  return s;
}

// Grid for train/evaluate: --grid wins, then the config's "grid" path, then
// its "synth" block.
SiteGrid experiment_grid(const GridArgs& g, const json& extra) {
  if (!g.grid.empty()) return g.load();
  if (extra.contains("grid")) {
    GridArgs from = g;
    from.grid = extra.at("grid").get<std::string>();
    return from.load();
  }
  if (extra.contains("synth")) {
    const auto& s = extra.at("synth");
    for (const auto& [key, _] : s.items()) {
      static const std::vector<std::string> known{"sites", "periods", "seed", "decay", "rho", "noise",
                                                  "upwind", "lead", "upwind_noise"};
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw ValidationError("synth: unknown key '" + key + "'");
      }
    }
    SynthParams p;
    p.n_sites = s.value("sites", p.n_sites);
    p.n_periods = s.value("periods", p.n_periods);
    p.seed = s.value("seed", p.seed);
    p.spatial_decay_km = s.value("decay", p.spatial_decay_km);
    p.temporal_rho = s.value("rho", p.temporal_rho);
    p.noise_std = s.value("noise", p.noise_std);
    return synth_upwind_field(p, s.value("upwind", 0), s.value("lead", std::size_t{6}), s.value("upwind_noise", 0.2));
  }
  throw ValidationError("no grid: pass --grid or give \"grid\" or \"synth\" in the config");
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"corrcast: correlation-optimized wind-speed forecasting"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-site wind field");
  Options so(synth);
  int sites = 8, upwind = 0;
  std::size_t periods = 5000, lead = 6;
  double decay = 5.0, rho = 0.95, noise = 0.3, upwind_noise = 0.2;
  std::string synth_out, synth_coords;
  so.add("--sites", sites, "Number of lattice sites");
  so.add("--periods", periods, "Number of 10-minute periods");
  so.add("--decay", decay, "Spatial correlation length, km");
  so.add("--rho", rho, "AR(1) coefficient");
  so.add("--noise", noise, "Innovation std, m/s");
  so.add("--upwind", upwind, "Extra sites that lead the target");
  so.add("--lead", lead, "Lead of the upwind sites, periods");
  so.add("--upwind-noise", upwind_noise, "Measurement noise of upwind sites, m/s");
  so.add("--out", synth_out, "Output CSV");
  so.add("--coords-out", synth_coords, "Optional coordinate CSV");

  // scan
  auto* scan = app.add_subcommand("scan", "List historical windows correlated with the recent window");
  Options sc(scan);
  GridArgs scan_grid;
  scan_grid.bind(sc);
  std::size_t scan_m = 36, scan_n = 6, scan_top = 0;
  std::optional<std::size_t> scan_origin;
  double scan_threshold = 0.8;
  sc.add("--m", scan_m, "Window length");
  sc.add("--n", scan_n, "Continuation length");
  sc.add("--threshold", scan_threshold, "Minimum |rho|");
  sc.add("--origin", scan_origin, "Forecast origin (default: grid end)");
  sc.add("--top", scan_top, "Print only the strongest K matches (0 = all)");

  // forecast
  auto* fc = app.add_subcommand("forecast", "Single correlation-model forecast from the best match");
  Options fo(fc);
  GridArgs fc_grid;
  fc_grid.bind(fo);
  std::size_t fc_m = 36, fc_n = 6;
  std::optional<std::size_t> fc_origin;
  double fc_threshold = 0.8;
  std::vector<double> fc_bounds;
  fo.add("--m", fc_m, "Window length");
  fo.add("--n", fc_n, "Horizon");
  fo.add("--threshold", fc_threshold, "Minimum |rho|");
  fo.add("--origin", fc_origin, "Forecast origin (default: grid end)");
  fo.add("--bounds", fc_bounds, "lo hi for the forecast values (default: 0 .. 1.5 x max)")->expected(2);

  // build-tree
  auto* bt = app.add_subcommand("build-tree", "Build the knowledge tree for one forecast origin");
  Options bo(bt);
  GridArgs bt_grid;
  bt_grid.bind(bo);
  TreeParams tp;
  std::optional<std::size_t> bt_origin;
  std::string bt_out;
  bool bt_no_pred = false;
  bo.add("--m", tp.m, "Window length");
  bo.add("--n", tp.n, "Horizon");
  bo.add("--threshold", tp.corr_threshold, "Initial correlation threshold X");
  bo.add("--max-neighbors", tp.max_neighbors, "Nodes per layer Y");
  bo.add("--total-cap", tp.total_cap, "Total nodes Z");
  bo.add("--layer-sim", tp.layer_sim_threshold, "Layer de-duplication similarity");
  bo.add("--relax-step", tp.relax_step, "Threshold relaxation step");
  bo.add("--floor", tp.corr_floor, "Lowest threshold");
  bo.add("--stage-len", tp.stage_len, "Periods per layer");
  bo.add("--origin", bt_origin, "Forecast origin (default: grid end)");
  bo.add("--out", bt_out, "Write the tree as JSON");
  bo.flag("--no-predictions", bt_no_pred, "Skip the correlation-model predictions");

  // train
  auto* tr = app.add_subcommand("train", "Train one model variant on one fold");
  Options to(tr);
  GridArgs tr_grid;
  tr_grid.bind(to);
  std::string tr_variant = "optimized_corr_gru", tr_out, tr_history;
  int tr_fold = 1;
  std::optional<int> tr_epochs;
  to.add("--variant", tr_variant, "Variant name");
  to.add("--fold", tr_fold, "Fold number");
  to.add("--epochs", tr_epochs, "Override the config's epochs");
  to.add("--out", tr_out, "Write the trained model as JSON");
  to.add("--history", tr_history, "Write per-epoch losses as TSV");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Run the multi-variant, multi-fold, multi-seed experiment");
  Options eo(ev);
  GridArgs ev_grid;
  ev_grid.bind(eo);
  std::string ev_out = "results";
  std::optional<int> ev_trials, ev_epochs;
  bool ev_quiet = false;
  eo.add("--out-dir", ev_out, "Directory for report.json, report.csv and plotdata/");
  eo.add("--trials", ev_trials, "Number of seeds (seed, seed+1, ...)");
  eo.add("--epochs", ev_epochs, "Override the config's epochs");
  eo.flag("--quiet", ev_quiet, "No progress lines");

  // report
  auto* rp = app.add_subcommand("report", "Re-emit a saved report in another format");
  Options ro(rp);
  std::string rp_in, rp_format = "csv", rp_out;
  ro.add("--in", rp_in, "report.json written by evaluate");
  ro.add("--format", rp_format, "csv, json or plotdata")->check(CLI::IsMember({"csv", "json", "plotdata"}));
  ro.add("--out", rp_out, "Output path (csv/json default to stdout; plotdata needs a directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  if (synth->parsed()) {
    so.apply();
    if (synth_out.empty()) throw ValidationError("--out is required");
    SynthParams p;
    p.n_sites = sites;
    p.n_periods = periods;
    p.spatial_decay_km = decay;
    p.temporal_rho = rho;
    p.noise_std = noise;
    p.seed = so.seed();
    const auto grid = synth_upwind_field(p, upwind, lead, upwind_noise);
    write_csv(grid, synth_out, synth_coords.empty() ? std::nullopt : std::optional<fs::path>(synth_coords));
    std::cout << "wrote " << grid.site_count() << " sites x " << grid.length() << " periods to " << synth_out << '\n';
    return 0;
  }

  if (scan->parsed()) {
    sc.apply();
    const auto grid = scan_grid.load();
    const std::size_t origin = scan_origin.value_or(grid.length());
    const auto recent = recent_window(grid, origin, scan_m);
    ScanOptions opt;
    opt.m = scan_m;
    opt.n = scan_n;
    opt.threshold = scan_threshold;
    opt.history_end = origin;
    auto matches = scan_windows(grid, recent, opt);
    const std::size_t first = scan_top && scan_top < matches.size() ? matches.size() - scan_top : 0;
    std::cout << "site,offset,rho\n";
    for (std::size_t i = first; i < matches.size(); ++i) {
      std::printf("%s,%zu,%.6f\n", matches[i].source_site.c_str(), matches[i].offset, matches[i].rho);
    }
    return 0;
  }

  if (fc->parsed()) {
    fo.apply();
    const auto grid = fc_grid.load();
    const std::size_t origin = fc_origin.value_or(grid.length());
    const auto recent = recent_window(grid, origin, fc_m);
    ScanOptions opt;
    opt.m = fc_m;
    opt.n = fc_n;
    opt.threshold = fc_threshold;
    opt.history_end = origin;
    const auto matches = scan_windows(grid, recent, opt);
    const auto& y = grid.target().values;
    const Bounds bounds = fc_bounds.size() == 2
                              ? Bounds{fc_bounds[0], fc_bounds[1]}
                              : default_bounds(std::span<const double>(y.data(), origin));
    const auto& best = matches.back();
    const auto sol = forecast_solution(best, recent, bounds);
    std::printf("match %s offset %zu rho %.6f\n", best.source_site.c_str(), best.offset, best.rho);
    std::printf("y* = %s\n", join(sol.y_star).c_str());
    std::printf("rho = %.6f (%s, %s)\n", sol.rho_achieved, to_string(sol.solver), to_string(sol.branch));
    return 0;
  }

  if (bt->parsed()) {
    bo.apply();
    const auto grid = bt_grid.load();
    const std::size_t origin = bt_origin.value_or(grid.length());
    const auto recent = recent_window(grid, origin, tp.m);
    auto tree = assemble_tree(grid, recent, tp, origin);
    if (!bt_no_pred) {
      const auto& y = grid.target().values;
      tree = attach_predictions(std::move(tree), default_bounds(std::span<const double>(y.data(), origin)));
    }
    std::cout << "layers " << tree.layers.size() << " nodes " << tree.node_count() << " threshold "
              << tree.params_used.corr_threshold << " relaxations " << tree.relaxations << '\n';
    for (const auto& node : ordered_nodes(tree)) {
      std::printf("  %s offset %zu rho %.6f%s\n", node.source_site.c_str(), node.offset, node.rho,
                  node.prediction ? (" pred " + join(*node.prediction)).c_str() : "");
    }
    if (!bt_out.empty()) save_tree(tree, bt_out);
    return 0;
  }

  if (tr->parsed()) {
    const json extra = to.apply(true);
    ExperimentConfig cfg = experiment_config_from_json(extra);
    if (tr_epochs) cfg.epochs = *tr_epochs;
    cfg.seeds = {to.seed()};
    const auto named = [&](const VariantSpec& v) { return v.name == tr_variant; };
    std::optional<VariantSpec> found;
    if (auto it = std::find_if(cfg.variants.begin(), cfg.variants.end(), named); it != cfg.variants.end()) {
      found = *it;
    } else {
      const auto defs = default_variants();
      if (auto d = std::find_if(defs.begin(), defs.end(), named); d != defs.end()) found = *d;
    }
    if (!found) throw ValidationError("unknown variant '" + tr_variant + "'");
    const VariantSpec variant = *found;
    cfg.validate();
    const auto grid = experiment_grid(tr_grid, extra);
    validate_grid(grid);
    const std::size_t origin = resolved_origin(cfg, grid);
    const auto splits = split_cv(grid, cfg.te_len, cfg.folds, origin);
    if (tr_fold < 1 || tr_fold > cfg.folds) throw ValidationError("--fold out of range");
    const auto& split = splits[static_cast<std::size_t>(tr_fold - 1)];
    const auto& y = grid.target().values;
    TreeCache trees(grid, cfg, cfg.bounds.value_or(default_bounds(std::span<const double>(y.data(), origin))));
    std::vector<nn::Sample> train_set, test_set;
    const auto tr_at = train_origins(cfg, split);
    const auto te_at = test_origins(cfg, split);
    for (auto t : tr_at) train_set.push_back(sample_at(grid, cfg, variant, t, trees));
    for (auto t : te_at) test_set.push_back(sample_at(grid, cfg, variant, t, trees));
    nn::Seq2SeqKnowledgeModel model(nn::ModelConfig{});
    const auto r = run_trial(cfg, variant, tr_fold, to.seed(), train_set, test_set, te_at, &model);
    if (!r.ok()) throw RuntimeFailure("training failed: " + *r.error);
    std::printf("%s fold %d seed %llu: %zu train / %zu test samples, %.2f s\n", r.variant.c_str(), r.fold,
                static_cast<unsigned long long>(r.seed), train_set.size(), test_set.size(), r.seconds);
    std::printf("train acc %.2f%% rmse %.4f r2 %.4f\n", r.train.acc_pct, r.train.rmse_mps, r.train.r2);
    std::printf("test  acc %.2f%% rmse %.4f r2 %.4f\n", r.test.acc_pct, r.test.rmse_mps, r.test.r2);
    if (!tr_out.empty()) nn::save_model(model, tr_out);
    if (!tr_history.empty()) {
      std::ofstream h(tr_history);
      if (!h) throw RuntimeFailure("cannot write " + tr_history);
      h << "epoch\ttrain_loss\ttest_loss\n";
      for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
        h << e + 1 << '\t' << r.train_loss[e] << '\t' << (e < r.test_loss.size() ? r.test_loss[e] : NAN) << '\n';
      }
    }
    return 0;
  }

  if (ev->parsed()) {
    const json extra = eo.apply(true);
    ExperimentConfig cfg = experiment_config_from_json(extra);
    if (ev_epochs) cfg.epochs = *ev_epochs;
    if (ev_trials || eo.given("seed")) {
      const std::size_t k = ev_trials ? static_cast<std::size_t>(std::max(*ev_trials, 0)) : cfg.seeds.size();
      cfg.seeds.clear();
      for (std::size_t i = 0; i < k; ++i) cfg.seeds.push_back(eo.seed() + i);
    }
    cfg.validate();
    const auto grid = experiment_grid(ev_grid, extra);
    ProgressFn progress;
    if (!ev_quiet) progress = [](const std::string& s) { std::cerr << s << '\n'; };
    const auto table = run_experiment(cfg, grid, progress);
    const fs::path dir(ev_out);
    fs::create_directories(dir);
    emit_report(table, ReportFormat::json, dir / "report.json");
    emit_report(table, ReportFormat::csv, dir / "report.csv");
    emit_report(table, ReportFormat::plotdata, dir / "plotdata");
    write_report_csv(table, std::cout);
    std::size_t failed = 0;
    for (const auto& t : table.trials) failed += !t.ok();
    if (failed) std::cerr << failed << " of " << table.trials.size() << " trials failed (see report.json)\n";
    return 0;
  }

  if (rp->parsed()) {
    ro.apply();
    if (rp_in.empty()) throw ValidationError("--in is required");
    const auto table = read_report_json(rp_in);
    const auto format = report_format_from_string(rp_format);
    if (rp_out.empty()) {
      if (format == ReportFormat::plotdata) throw ValidationError("plotdata needs --out <dir>");
      if (format == ReportFormat::csv) {
        write_report_csv(table, std::cout);
      } else {
        std::cout << report_to_json(table).dump(1) << '\n';
      }
    } else {
      emit_report(table, format, rp_out);
    }
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 2;
  }
}
