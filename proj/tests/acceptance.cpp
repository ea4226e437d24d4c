// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance            every criterion
//   acceptance 3 5 9      only the listed ones

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "corrcast/correlation.hpp"
#include "corrcast/experiment.hpp"
#include "corrcast/fracprog.hpp"
#include "corrcast/knowledge.hpp"
#include "corrcast/metrics.hpp"
#include "corrcast/neural/train.hpp"
#include "corrcast/report.hpp"
#include "corrcast/series.hpp"
#include "oracles.hpp"

using namespace corrcast;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------------------

Outcome covariance_identity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 49;
    const auto x = oracle::random_vector(rng, n, -20, 20);
    const auto y = oracle::random_vector(rng, n, -20, 20);
    worst = std::max(worst, std::abs(covariance_pairwise(x, y) - covariance(x, y)));
  }
  const double s = seconds_since(t0);
  return {worst < 1e-10 && s < 1.0, format("1000 pairs, max |diff| %.3g (< 1e-10), %.3f s (< 1 s)", worst, s)};
}

Outcome completion_variance_identity() {
  std::mt19937_64 rng(1002);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + rng() % 40;
    const std::size_t n = 1 + rng() % 12;
    const auto known = oracle::random_vector(rng, m, 0, 20);
    const auto unknown = oracle::random_vector(rng, n, 0, 20);
    std::vector<double> full(known);
    full.insert(full.end(), unknown.begin(), unknown.end());
    worst = std::max(worst, std::abs(variance_of_completion(partition(known, n), unknown) -
                                     oracle::population_variance(full)));
  }
  return {worst < 1e-10, format("1000 partitions, max |diff| %.3g (< 1e-10)", worst)};
}

Outcome closed_form_vs_grid() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1003);
  double rho_gap = 0, y_gap = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 2 + rng() % 30;
    const auto x = oracle::random_vector(rng, m + 1, 0, 20);
    const auto known = oracle::random_vector(rng, m, 0, 20);
    const auto s = solve_1d(x, partition(known, 1), {0, 20});
    const auto g = oracle::grid_search_1d(x, known, 0, 20, 1e-3);
    rho_gap = std::max(rho_gap, std::abs(std::abs(s.rho_achieved) - g.abs_rho));
    y_gap = std::max(y_gap, std::abs(s.y_star[0] - g.y[0]));
  }
  const std::vector<double> line{1, 2, 3, 4, 5, 6}, up{2, 4, 6, 8, 10}, down{6, 5, 4, 3, 2};
  const double r_up = std::abs(solve_1d(line, partition(up, 1), {0, 20}).rho_achieved);
  const double r_down = std::abs(solve_1d(line, partition(down, 1), {0, 20}).rho_achieved);
  const double s = seconds_since(t0);
  const bool ok = rho_gap <= 1e-6 && y_gap <= 1e-3 && r_up >= 1 - 1e-12 && r_down >= 1 - 1e-12 && s < 10;
  return {ok, format("200 instances, max |rho| gap %.3g (<= 1e-6), max y* gap %.3g (<= 1e-3); collinear |rho| "
                     "%.17g / %.17g (>= 1-1e-12); %.2f s (< 10 s)",
                     rho_gap, y_gap, r_up, r_down, s)};
}

Outcome bisection_solver() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1004);
  double gap_a = 0, gap_b = 0, width = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng() % 20;
    const auto x = oracle::random_vector(rng, m + 1, 0, 20);
    const auto known = oracle::random_vector(rng, m, 0, 20);
    const auto p = partition(known, 1);
    const auto bi = solve_bisection(x, p, {0, 20});
    gap_a = std::max(gap_a, std::abs(std::abs(bi.rho_achieved) - std::abs(solve_1d(x, p, {0, 20}).rho_achieved)));
    width = std::max(width, bi.bracket_width);
  }
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 3 + rng() % 10;
    const auto x = oracle::random_vector(rng, m + 2, 0, 10);
    const auto known = oracle::random_vector(rng, m, 0, 10);
    const auto bi = solve_bisection(x, partition(known, 2), {0, 10});
    const auto g = oracle::grid_search_2d(x, known, 0, 10, 0.01);
    gap_b = std::max(gap_b, std::abs(std::abs(bi.rho_achieved) - g.abs_rho));
    width = std::max(width, bi.bracket_width);
  }
  const double s = seconds_since(t0);
  const bool ok = gap_a <= 1e-4 && gap_b <= 1e-3 && width <= 1e-6 && s < 60;
  return {ok, format("(a) n=1 max gap %.3g (<= 1e-4); (b) n=2 max gap vs 0.01 grid %.3g (<= 1e-3); (c) max bracket "
                     "%.3g (<= 1e-6); %.2f s (< 60 s)",
                     gap_a, gap_b, width, s)};
}

nn::ModelConfig grad_config(nn::Variant v, nn::CellKind cell) {
  nn::ModelConfig c;
  c.variant = v;
  c.cell = cell;
  c.hidden_dim = 4;
  c.m = 5;
  c.n = 2;
  c.recon_len = 2;
  return c;
}

std::vector<nn::Sample> grad_samples(Rng& rng, const nn::ModelConfig& c, int count) {
  std::vector<nn::Sample> out;
  for (int s = 0; s < count; ++s) {
    KnowledgeTree tree;
    tree.target_site = "T";
    KnowledgeLayer layer;
    for (int i = 0; i < 2; ++i) {
      KnowledgeNode node;
      node.source_site = "S" + std::to_string(i);
      node.offset = static_cast<std::size_t>(i);
      node.rho = 0.8 + 0.05 * i;
      for (std::size_t k = 0; k < c.m + c.n; ++k) node.sequence.push_back(rng.uniform(2, 9));
      node.prediction = std::vector<double>();
      for (std::size_t k = 0; k < c.n; ++k) node.prediction->push_back(rng.uniform(2, 9));
      layer.nodes.push_back(std::move(node));
    }
    tree.layers.push_back(std::move(layer));
    std::vector<double> recent, future;
    for (std::size_t k = 0; k < c.m; ++k) recent.push_back(rng.uniform(2, 9));
    for (std::size_t k = 0; k < c.n; ++k) future.push_back(rng.uniform(2, 9));
    out.push_back(nn::make_sample(c, &tree, recent, future));
  }
  return out;
}

Outcome gradient_checks() {
  // Step 1e-4: at 1e-5 central-difference roundoff (~1e-11) dominates the few
  // gradients that nearly cancel.
  constexpr double kStep = 1e-4;
  double worst = 0;
  std::string where;
  int checks = 0;
  for (auto cell : {nn::CellKind::rnn_tanh, nn::CellKind::lstm, nn::CellKind::gru}) {
    for (auto loss : {nn::LossKind::point, nn::LossKind::seq2seq}) {
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed * 7919);
        for (auto v : {nn::Variant::optimized_corr, nn::Variant::plain_seq2seq, nn::Variant::plain_lstm}) {
          const auto cfg = grad_config(v, cell);
          auto model = nn::Seq2SeqKnowledgeModel::initialized(cfg, seed);
          model.shift = 5;
          model.scale = 2;
          const auto samples = grad_samples(rng, cfg, 2);
          nn::LossConfig lc;
          lc.kind = loss;
          const auto rep = nn::grad_check(model, samples, lc, kStep);
          ++checks;
          if (rep.max_rel_error > worst) {
            worst = rep.max_rel_error;
            where = format("%s/%s/%s seed %llu", nn::to_string(cell), nn::to_string(loss), nn::to_string(v),
                           static_cast<unsigned long long>(seed));
          }
        }
      }
    }
  }
  return {worst < 1e-4, format("%d checks (3 cells x 2 losses x 5 seeds x 3 variants, hidden 4), max rel error %.3g "
                               "(< 1e-4) at %s",
                               checks, worst, where.c_str())};
}

Outcome zero_lstm() {
  Rng rng(1006);
  long steps = 0;
  bool all_zero = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int in = 1 + static_cast<int>(rng.uniform(0, 6));
    const int hidden = 1 + static_cast<int>(rng.uniform(0, 40));
    const auto p = nn::CellParams::zeros({nn::CellKind::lstm, in, hidden});
    auto s = nn::RecurrentState::zeros(p.shape);
    for (int t = 0; t < 100; ++t) {
      nn::Vec x(in);
      for (int k = 0; k < in; ++k) x[k] = rng.uniform(-1e6, 1e6);
      s = nn::lstm_step(p.view(), x, s);
      all_zero = all_zero && (s.h.array() == 0.0).all() && (s.c.array() == 0.0).all();
      ++steps;
    }
  }
  return {all_zero, format("%ld steps over 50 random shapes, inputs in [-1e6, 1e6]: h and c %s", steps,
                           all_zero ? "exactly zero" : "NOT zero")};
}

// True when pruning plus de-duplication at `threshold` leaves something.
bool candidates_at(const std::vector<KnowledgeLayer>& raw, std::span<const double> recent, const TreeParams& p,
                   double threshold) {
  std::vector<KnowledgeLayer> pruned;
  for (const auto& layer : raw) pruned.push_back(prune_layer(layer, recent, threshold, p.max_neighbors));
  return !dedupe_layers(pruned, p.layer_sim_threshold).empty();
}

Outcome tree_invariants() {
  std::mt19937_64 rng(1007);
  std::uniform_real_distribution<double> unit(0, 1);
  int violations = 0, relaxed = 0, empty = 0;
  std::string first;
  auto fail = [&](int trial, const std::string& what) {
    if (violations++ == 0) first = format("trial %d: %s", trial, what.c_str());
  };
  for (int trial = 0; trial < 50; ++trial) {
    SynthParams sp;
    sp.n_sites = 2 + static_cast<int>(rng() % 6);
    sp.n_periods = 500 + rng() % 700;
    sp.seed = rng();
    sp.spatial_decay_km = 1 + 8 * unit(rng);
    const auto g = synth_field(sp);
    TreeParams p;
    p.m = 6 + rng() % 20;
    p.n = 1 + rng() % 4;
    p.stage_len = 40 + rng() % 160;
    p.max_neighbors = 1 + static_cast<int>(rng() % 5);
    p.total_cap = 1 + static_cast<int>(rng() % 12);
    p.corr_threshold = 0.7 + 0.299 * unit(rng);
    p.relax_step = 0.02 + 0.08 * unit(rng);
    p.corr_floor = 0.3 + 0.3 * unit(rng);
    p.layer_sim_threshold = 0.9 + 0.1 * unit(rng);
    const auto& t = g.target().values;
    const std::size_t end = t.size() - rng() % 100;
    const std::vector<double> recent(t.begin() + static_cast<std::ptrdiff_t>(end - p.m),
                                     t.begin() + static_cast<std::ptrdiff_t>(end));
    const auto raw = segment_layers(g, recent, p, end);
    std::optional<KnowledgeTree> tree;
    try {
      tree = assemble_tree(g, recent, p, end);
    } catch (const EmptyTreeError&) {
    }
    // Oracle: number of steps until the candidate set is first non-empty.
    int expected = 0;
    while (p.corr_threshold - expected * p.relax_step >= p.corr_floor - 1e-12 &&
           !candidates_at(raw, recent, p, p.corr_threshold - expected * p.relax_step)) {
      ++expected;
    }
    const bool oracle_empty = p.corr_threshold - expected * p.relax_step < p.corr_floor - 1e-12;
    if (!tree) {
      ++empty;
      if (!oracle_empty) fail(trial, "EmptyTreeError although candidates exist above the floor");
      continue;
    }
    if (oracle_empty) {
      fail(trial, "tree built although no candidate reaches the floor");
      continue;
    }
    if (tree->relaxations != expected) {
      fail(trial, format("relaxations %d, expected %d", tree->relaxations, expected));
    }
    relaxed += tree->relaxations > 0;
    const double active = tree->params_used.corr_threshold;
    if (tree->node_count() > static_cast<std::size_t>(p.total_cap)) fail(trial, "total exceeds Z");
    for (const auto& layer : tree->layers) {
      if (layer.nodes.size() > static_cast<std::size_t>(p.max_neighbors)) fail(trial, "layer exceeds Y");
      for (const auto& node : layer.nodes) {
        if (std::abs(node.rho) < active - 1e-12) fail(trial, "node below the active threshold");
        const double direct =
            oracle::pearson(std::span<const double>(node.sequence.data(), p.m), recent);
        if (std::abs(direct - node.rho) > 1e-9) fail(trial, "node rho disagrees with a direct Pearson");
      }
    }
    const auto again = assemble_tree(g, recent, p, end);
    if (tree_to_json(again).dump() != tree_to_json(*tree).dump()) fail(trial, "rerun differs");
  }
  return {violations == 0,
          format("50 parameterizations (%d relaxed, %d empty below floor), %d violations%s%s", relaxed, empty,
                 violations, first.empty() ? "" : "; first: ", first.c_str())};
}

Outcome protocol_shape() {
  std::vector<std::string> problems;
  const auto splits = split_cv(5000, 360, 3, 5000 - 4 * 360);
  const std::size_t tr[] = {360, 720, 1080};
  if (splits.size() != 3) problems.push_back("fold count");
  for (std::size_t k = 0; k < splits.size() && k < 3; ++k) {
    if (splits[k].train_len() != tr[k] || splits[k].test_len() != 360) {
      problems.push_back(format("fold %zu is (%zu,%zu)", k + 1, splits[k].train_len(), splits[k].test_len()));
    }
  }

  SynthParams sp;
  sp.n_sites = 3;
  sp.n_periods = 700;
  sp.seed = 8;
  const auto grid = synth_upwind_field(sp, 1, 3, 0.2);
  ExperimentConfig cfg;
  const auto all = default_variants();
  cfg.variants = {all[0], all[3]};
  cfg.te_len = 60;
  cfg.folds = 3;
  cfg.seeds = {1, 2, 3};
  cfg.horizon = 3;
  cfg.m = 12;
  cfg.recon_len = 3;
  cfg.hidden_dim = 4;
  cfg.epochs = 3;
  cfg.train_stride = 6;
  cfg.tree.stage_len = 80;
  cfg.tree.total_cap = 4;
  cfg.tree.max_neighbors = 2;
  const auto table = run_experiment(cfg, grid);
  const char* ranks[] = {"max", "med", "min"};
  if (table.rows.size() != cfg.variants.size() * 3 * 3) problems.push_back("row count");
  std::size_t i = 0;
  for (int fold = 1; fold <= 3; ++fold) {
    for (const auto& v : cfg.variants) {
      for (const char* rank : ranks) {
        if (i >= table.rows.size()) break;
        const auto& row = table.rows[i++];
        if (row.variant != v.name || row.fold != fold || row.rank != rank) {
          problems.push_back(format("row %zu is %s/%d/%s", i, row.variant.c_str(), row.fold, row.rank.c_str()));
        }
      }
    }
  }
  std::string detail = "folds (360,360),(720,360),(1080,360); per fold, per variant max/med/min rows (18 rows)";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

// Upwind benchmark: 13 lattice sites plus 3 upwind sites leading the target
// by 6 periods, 5000 periods.
SiteGrid benchmark_grid() {
  SynthParams sp;
  sp.n_sites = 13;
  sp.n_periods = 5000;
  sp.seed = 2024;
  return synth_upwind_field(sp, 3, 6, 0.2);
}

ExperimentConfig benchmark_config() {
  ExperimentConfig cfg;
  cfg.run_folds = {1};
  cfg.tree.total_cap = 4;
  cfg.record_test_loss = false;
  return cfg;
}

Outcome directional_claim() {
  const auto t0 = Clock::now();
  const auto grid = benchmark_grid();
  auto cfg = benchmark_config();
  const auto all = default_variants();
  cfg.variants = {all[0], all[3]};
  cfg.hidden_dim = 16;
  cfg.epochs = 200;
  cfg.optimizer.learning_rate = 1e-2;
  const auto table = run_experiment(cfg, grid);
  std::vector<double> opt, lstm;
  for (const auto& t : table.trials) {
    (t.variant == all[0].name ? opt : lstm).push_back(t.ok() ? t.test.rmse_mps : INFINITY);
  }
  int wins = 0;
  for (std::size_t k = 0; k < opt.size() && k < lstm.size(); ++k) wins += opt[k] < lstm[k];
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double mo = median(opt), ml = median(lstm);
  const double s = seconds_since(t0);
  const bool ok = opt.size() == 11 && lstm.size() == 11 && mo <= ml && wins >= 8 && s < 900;
  return {ok, format("%zu sites x %zu periods, fold 1, 11 seeds: median test RMSE %s %.4f vs %s %.4f m/s, "
                     "strictly lower in %d/11 (>= 8); %.0f s (< 900 s)",
                     grid.site_count(), grid.length(), all[0].name.c_str(), mo, all[3].name.c_str(), ml, wins, s)};
}

Outcome training_cost() {
  const auto grid = benchmark_grid();
  auto cfg = benchmark_config();
  const auto variant = default_variants()[0];
  cfg.seeds = {1};
  const auto origin = resolved_origin(cfg, grid);
  const auto split = split_cv(grid, cfg.te_len, cfg.folds, origin)[0];
  const auto& y = grid.target().values;
  TreeCache trees(grid, cfg, default_bounds(std::span<const double>(y.data(), origin)));
  std::vector<nn::Sample> train_set, test_set;
  const auto te_at = test_origins(cfg, split);
  for (auto t : train_origins(cfg, split)) train_set.push_back(sample_at(grid, cfg, variant, t, trees));
  for (auto t : te_at) test_set.push_back(sample_at(grid, cfg, variant, t, trees));
  const auto t0 = Clock::now();
  const auto r = run_trial(cfg, variant, 1, 1, train_set, test_set, te_at);
  const double s = seconds_since(t0);
  if (!r.ok()) return {false, "training failed: " + *r.error};
  return {s <= 300, format("%s, hidden %d, %d epochs, %zu training samples: %.1f s (target 90 s, fail above 300 s)%s",
                           variant.name.c_str(), cfg.hidden_dim, cfg.epochs, train_set.size(), s,
                           s > 90 ? "; above the 90 s target" : "")};
}

Outcome metric_formulas() {
  std::vector<std::string> bad;
  auto expect = [&](const char* what, double got, double want) {
    if (!(got == want)) bad.push_back(format("%s = %.17g, want %.17g", what, got, want));
  };
  const std::vector<double> v{3, 4, 5};
  expect("acc(pred = target)", acc(v, v), 100.0);
  expect("acc(y=2, p=1)", acc(std::vector<double>{1}, std::vector<double>{2}), 50.0);
  expect("acc(y=1, p=3)", acc(std::vector<double>{3}, std::vector<double>{1}), -100.0);
  const std::vector<double> y3{1, 2, 3};
  expect("r2(perfect)", r2(y3, y3), 1.0);
  expect("r2(mean)", r2(std::vector<double>{2, 2, 2}, y3), 0.0);
  expect("r2(y=(1,2,3), p=(1,2,5))", r2(std::vector<double>{1, 2, 5}, y3), -1.0);
  expect("rmse(perfect)", rmse(y3, y3), 0.0);
  expect("rmse(unit errors)", rmse(std::vector<double>{2, 3, 4}, y3), 1.0);
  expect("rmse(y=(1,2), p=(2,4))", rmse(std::vector<double>{2, 4}, std::vector<double>{1, 2}), std::sqrt(2.5));
  // Relative error just above 1 gives a small negative acc.
  const double neg = acc(std::vector<double>{2.0807}, std::vector<double>{1.0});
  if (!(neg < 0)) bad.push_back("acc with relative error > 1 is not negative");
  std::string detail = format("9 hand-derived examples exact; relative error 1.0807 gives acc %.2f%%", neg);
  for (const auto& b : bad) detail += "; " + b;
  return {bad.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"covariance identity", covariance_identity},
      {"completion variance identity", completion_variance_identity},
      {"closed-form solver vs grid oracle", closed_form_vs_grid},
      {"bisection solver", bisection_solver},
      {"gradient checks", gradient_checks},
      {"zero-parameter LSTM", zero_lstm},
      {"knowledge-tree invariants", tree_invariants},
      {"protocol shape", protocol_shape},
      {"directional claim (optimized GRU vs LSTM)", directional_claim},
      {"training cost (500 epochs)", training_cost},
      {"metric formulas", metric_formulas},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2d  %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
