#pragma once

// Multi-variant, multi-fold, multi-seed evaluation.
//
// Layout along the target series:
//   [0, origin)                    supplementary history only
//   [origin, origin + k*te)        fold k training range
//   [.., + te)                     fold k test range
// A sample at forecast origin t has recent = y[t-m, t) and targets
// y[t, t+n); training origins keep their targets inside the training range,
// test origins inside the test range. The knowledge tree of origin t sees
// every site's history before t (history_end = t).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "corrcast/error.hpp"
#include "corrcast/fracprog.hpp"
#include "corrcast/knowledge.hpp"
#include "corrcast/metrics.hpp"
#include "corrcast/neural/checkpoint.hpp"
#include "corrcast/neural/train.hpp"
#include "corrcast/series.hpp"
#include "json.hpp"

namespace corrcast {

struct VariantSpec {
  std::string name;
  nn::Variant variant = nn::Variant::optimized_corr;
  nn::CellKind cell = nn::CellKind::gru;
};

inline std::vector<VariantSpec> default_variants() {
  using nn::CellKind;
  using nn::Variant;
  return {{"optimized_corr_gru", Variant::optimized_corr, CellKind::gru},
          {"optimized_corr_lstm", Variant::optimized_corr, CellKind::lstm},
          {"non_optimized_corr_gru", Variant::non_optimized_corr, CellKind::gru},
          {"lstm", Variant::plain_lstm, CellKind::lstm},
          {"lstm_seq2seq", Variant::plain_seq2seq, CellKind::lstm},
          {"gru_seq2seq", Variant::plain_seq2seq, CellKind::gru}};
}

struct ExperimentConfig {
  std::vector<VariantSpec> variants = default_variants();
  std::size_t te_len = 360;
  int folds = 3;
  std::vector<int> run_folds;           // empty = every fold
  std::optional<std::size_t> origin;    // default: folds end at the grid's end
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  std::size_t horizon = 6;
  std::size_t m = 36;
  std::size_t recon_len = 6;
  int hidden_dim = 32;
  int epochs = 500;
  std::size_t batch_size = 0;
  double clip_norm = 0;
  std::size_t train_stride = 1;  // one training origin every train_stride periods
  nn::LossConfig loss;
  nn::OptimizerConfig optimizer;
  TreeParams tree;
  std::optional<Bounds> bounds;  // default: [0, 1.5 * max of the target before origin]
  BisectionConfig bisection;
  double acc_floor = 0.1;
  bool record_test_loss = true;

  std::size_t trials() const { return seeds.size(); }

  // Tree windows always match the model's m and horizon.
  TreeParams tree_params() const {
    TreeParams t = tree;
    t.m = m;
    t.n = horizon;
    return t;
  }

  void validate() const {
    if (variants.empty()) throw ValidationError("experiment: no variants");
    if (seeds.empty()) throw ValidationError("experiment: trials = len(seeds) must be >= 1");
    if (horizon < 1) throw ValidationError("experiment: horizon must be >= 1");
    if (te_len <= horizon) throw ValidationError("experiment: te_len must exceed the horizon");
    if (train_stride < 1) throw ValidationError("experiment: train_stride must be >= 1");
    if (epochs < 1) throw ValidationError("experiment: epochs must be >= 1");
    for (int f : run_folds) {
      if (f < 1 || f > folds) throw ValidationError("experiment: run_folds entry out of range");
    }
    nn::ModelConfig{nn::Variant::optimized_corr, nn::CellKind::gru, hidden_dim, m, horizon, recon_len}.validate();
    tree_params().validate();
    loss.validate();
    optimizer.validate();
  }
};

struct Scores {
  double acc_pct = std::numeric_limits<double>::quiet_NaN();
  double rmse_mps = std::numeric_limits<double>::quiet_NaN();
  double r2 = std::numeric_limits<double>::quiet_NaN();
};

struct ForecastRecord {
  std::size_t origin = 0;
  std::vector<double> predicted;
  std::vector<double> actual;
};

struct TrialResult {
  std::string variant;
  int fold = 0;
  std::uint64_t seed = 0;
  Scores train;
  Scores test;
  double seconds = 0;
  std::optional<std::string> error;
  std::vector<double> train_loss;
  std::vector<double> test_loss;
  std::vector<ForecastRecord> test_forecasts;

  bool ok() const { return !error.has_value(); }
};

struct ReportRow {
  std::string variant;
  int fold = 0;
  std::string rank;  // "max", "med", "min" by test RMSE
  std::optional<std::uint64_t> seed;
  Scores train;
  Scores test;
  double seconds = std::numeric_limits<double>::quiet_NaN();
};

struct ReportTable {
  nlohmann::json config;
  std::vector<TrialResult> trials;
  std::vector<ReportRow> rows;
};

// ---------------------------------------------------------------------------

inline Scores score(std::span<const double> pred, std::span<const double> target, double acc_floor) {
  Scores s;
  s.rmse_mps = rmse(pred, target);
  try {
    s.acc_pct = acc(pred, target, acc_floor);
  } catch (const ValidationError&) {
  }
  try {
    s.r2 = r2(pred, target);
  } catch (const ValidationError&) {
  }
  return s;
}

inline std::size_t resolved_origin(const ExperimentConfig& cfg, const SiteGrid& grid) {
  if (cfg.origin) return *cfg.origin;
  const std::size_t span = (static_cast<std::size_t>(cfg.folds) + 1) * cfg.te_len;
  if (grid.length() < span + cfg.m) throw ValidationError("experiment: grid too short for the fold layout");
  return grid.length() - span;
}

// Knowledge trees keyed by forecast origin; deterministic, shared by every
// variant and seed.
class TreeCache {
 public:
  TreeCache(const SiteGrid& grid, const ExperimentConfig& cfg, Bounds bounds)
      : grid_(grid), params_(cfg.tree_params()), bounds_(bounds), bisection_(cfg.bisection) {}

  const KnowledgeTree& at(std::size_t origin) {
    auto it = cache_.find(origin);
    if (it != cache_.end()) return it->second;
    const auto& y = grid_.target().values;
    const std::vector<double> recent(y.begin() + static_cast<std::ptrdiff_t>(origin - params_.m),
                                     y.begin() + static_cast<std::ptrdiff_t>(origin));
    auto tree = attach_predictions(assemble_tree(grid_, recent, params_, origin), bounds_, bisection_);
    return cache_.emplace(origin, std::move(tree)).first->second;
  }

  std::size_t size() const { return cache_.size(); }

 private:
  const SiteGrid& grid_;
  TreeParams params_;
  Bounds bounds_;
  BisectionConfig bisection_;
  std::map<std::size_t, KnowledgeTree> cache_;
};

inline std::vector<std::size_t> train_origins(const ExperimentConfig& cfg, const DatasetSplit& s) {
  std::vector<std::size_t> out;
  for (std::size_t t = std::max(s.train_begin, cfg.m); t + cfg.horizon <= s.train_end; t += cfg.train_stride) {
    out.push_back(t);
  }
  return out;
}

inline std::vector<std::size_t> test_origins(const ExperimentConfig& cfg, const DatasetSplit& s) {
  std::vector<std::size_t> out;
  for (std::size_t t = std::max(s.test_begin, cfg.m); t + cfg.horizon <= s.test_end; ++t) out.push_back(t);
  return out;
}

inline nn::Sample sample_at(const SiteGrid& grid, const ExperimentConfig& cfg, const VariantSpec& v,
                            std::size_t origin, TreeCache& trees) {
  const auto& y = grid.target().values;
  std::vector<double> recent(y.begin() + static_cast<std::ptrdiff_t>(origin - cfg.m),
                             y.begin() + static_cast<std::ptrdiff_t>(origin));
  std::vector<double> future(y.begin() + static_cast<std::ptrdiff_t>(origin),
                             y.begin() + static_cast<std::ptrdiff_t>(origin + cfg.horizon));
  nn::ModelConfig mc{v.variant, v.cell, cfg.hidden_dim, cfg.m, cfg.horizon, cfg.recon_len};
  const KnowledgeTree* tree = nn::uses_knowledge(v.variant) ? &trees.at(origin) : nullptr;
  return nn::make_sample(mc, tree, std::move(recent), std::move(future));
}

inline nn::TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  nn::TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.clip_norm = cfg.clip_norm;
  tc.loss = cfg.loss;
  tc.optimizer = cfg.optimizer;
  tc.optimizer.seed = seed;
  return tc;
}

// Trains one model and scores it. Returns the trained model through `out`.
inline TrialResult run_trial(const ExperimentConfig& cfg, const VariantSpec& v, int fold, std::uint64_t seed,
                             const std::vector<nn::Sample>& train_set, const std::vector<nn::Sample>& test_set,
                             const std::vector<std::size_t>& test_at, nn::Seq2SeqKnowledgeModel* out = nullptr) {
  TrialResult r;
  r.variant = v.name;
  r.fold = fold;
  r.seed = seed;
  try {
    nn::ModelConfig mc{v.variant, v.cell, cfg.hidden_dim, cfg.m, cfg.horizon, cfg.recon_len};
    auto model = nn::Seq2SeqKnowledgeModel::initialized(mc, seed);
    std::vector<std::vector<double>> windows;
    for (const auto& s : train_set) windows.push_back(s.recent);
    nn::fit_normalizer(model, windows);

    const auto hist = nn::train(model, train_set, train_config(cfg, seed), cfg.record_test_loss ? &test_set : nullptr);
    r.seconds = hist.seconds;
    r.train_loss = hist.train_loss;
    r.test_loss = hist.test_loss;

    auto evaluate = [&](const std::vector<nn::Sample>& set, std::vector<ForecastRecord>* keep,
                        const std::vector<std::size_t>* origins) {
      std::vector<double> pred, actual;
      const auto all = nn::predict_all(model, set);
      for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& p = all[i];
        pred.insert(pred.end(), p.begin(), p.end());
        actual.insert(actual.end(), set[i].future.begin(), set[i].future.end());
        if (keep) keep->push_back({(*origins)[i], p, set[i].future});
      }
      return score(pred, actual, cfg.acc_floor);
    };
    r.train = evaluate(train_set, nullptr, nullptr);
    r.test = evaluate(test_set, &r.test_forecasts, &test_at);
    if (out) *out = std::move(model);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

// max / med / min trials of one (variant, fold) cell, ranked by test RMSE.
inline std::vector<ReportRow> reduce_trials(const std::vector<const TrialResult*>& cell, const std::string& variant,
                                            int fold) {
  std::vector<const TrialResult*> ok;
  for (const auto* t : cell) {
    if (t->ok() && std::isfinite(t->test.rmse_mps)) ok.push_back(t);
  }
  std::sort(ok.begin(), ok.end(), [](const TrialResult* a, const TrialResult* b) {
    if (a->test.rmse_mps != b->test.rmse_mps) return a->test.rmse_mps < b->test.rmse_mps;
    return a->seed < b->seed;
  });
  std::vector<ReportRow> rows;
  for (const char* rank : {"max", "med", "min"}) {
    ReportRow row;
    row.variant = variant;
    row.fold = fold;
    row.rank = rank;
    if (!ok.empty()) {
      const std::string rk = rank;
      const auto* t = rk == "max" ? ok.back() : rk == "min" ? ok.front() : ok[(ok.size() - 1) / 2];
      row.seed = t->seed;
      row.train = t->train;
      row.test = t->test;
      row.seconds = t->seconds;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);

using ProgressFn = std::function<void(const std::string&)>;

inline ReportTable run_experiment(const ExperimentConfig& cfg, const SiteGrid& grid, const ProgressFn& progress = {}) {
  cfg.validate();
  validate_grid(grid);
  const std::size_t origin = resolved_origin(cfg, grid);
  if (origin < cfg.m) throw ValidationError("experiment: supplementary history shorter than m");
  const auto splits = split_cv(grid, cfg.te_len, cfg.folds, origin);
  if (splits.back().test_end > grid.length()) throw ValidationError("experiment: folds run past the grid");
  const auto& y = grid.target().values;
  const Bounds bounds =
      cfg.bounds.value_or(default_bounds(std::span<const double>(y.data(), origin)));
  TreeCache trees(grid, cfg, bounds);

  ReportTable table;
  table.config = experiment_config_to_json(cfg);
  table.config["resolved"] = {{"origin", origin}, {"bounds", {bounds.lo, bounds.hi}}};
  auto log = [&](const std::string& s) {
    if (progress) progress(s);
  };

  for (const auto& split : splits) {
    if (!cfg.run_folds.empty() &&
        std::find(cfg.run_folds.begin(), cfg.run_folds.end(), split.fold_id) == cfg.run_folds.end()) {
      continue;
    }
    const auto tr_at = train_origins(cfg, split);
    const auto te_at = test_origins(cfg, split);
    for (const auto& v : cfg.variants) {
      std::vector<nn::Sample> train_set, test_set;
      std::optional<std::string> build_error;
      try {
        for (auto t : tr_at) train_set.push_back(sample_at(grid, cfg, v, t, trees));
        for (auto t : te_at) test_set.push_back(sample_at(grid, cfg, v, t, trees));
      } catch (const std::exception& e) {
        build_error = e.what();
      }
      std::vector<const TrialResult*> cell;
      const std::size_t first = table.trials.size();
      for (auto seed : cfg.seeds) {
        if (build_error) {
          TrialResult r;
          r.variant = v.name;
          r.fold = split.fold_id;
          r.seed = seed;
          r.error = "sample construction failed: " + *build_error;
          table.trials.push_back(std::move(r));
        } else {
          table.trials.push_back(run_trial(cfg, v, split.fold_id, seed, train_set, test_set, te_at));
        }
        const auto& r = table.trials.back();
        log(v.name + " fold " + std::to_string(split.fold_id) + " seed " + std::to_string(seed) +
            (r.ok() ? " test rmse " + std::to_string(r.test.rmse_mps) + " (" + std::to_string(r.seconds) + " s)"
                    : " FAILED: " + *r.error));
      }
      for (std::size_t i = first; i < table.trials.size(); ++i) cell.push_back(&table.trials[i]);
      auto rows = reduce_trials(cell, v.name, split.fold_id);
      table.rows.insert(table.rows.end(), rows.begin(), rows.end());
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Config JSON. Every field is written; reading keeps defaults for absent keys
// and rejects unknown ones.

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : cfg.variants) {
    variants.push_back({{"name", v.name}, {"variant", nn::to_string(v.variant)}, {"cell", nn::to_string(v.cell)}});
  }
  nlohmann::json j{
      {"version", 1},
      {"variants", variants},
      {"te_len", cfg.te_len},
      {"folds", cfg.folds},
      {"run_folds", cfg.run_folds},
      {"origin", cfg.origin ? nlohmann::json(*cfg.origin) : nlohmann::json(nullptr)},
      {"seeds", cfg.seeds},
      {"horizon", cfg.horizon},
      {"m", cfg.m},
      {"recon_len", cfg.recon_len},
      {"hidden_dim", cfg.hidden_dim},
      {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},
      {"clip_norm", cfg.clip_norm},
      {"train_stride", cfg.train_stride},
      {"loss",
       {{"kind", nn::to_string(cfg.loss.kind)},
        {"lambda", cfg.loss.lambda},
        {"alpha1", cfg.loss.alpha1},
        {"alpha2", cfg.loss.alpha2}}},
      {"optimizer",
       {{"kind", nn::to_string(cfg.optimizer.kind)},
        {"learning_rate", cfg.optimizer.learning_rate},
        {"beta1", cfg.optimizer.beta1},
        {"beta2", cfg.optimizer.beta2},
        {"decay", cfg.optimizer.decay},
        {"epsilon", cfg.optimizer.epsilon}}},
      {"tree", tree_params_to_json(cfg.tree)},
      {"bounds", cfg.bounds ? nlohmann::json{cfg.bounds->lo, cfg.bounds->hi} : nlohmann::json(nullptr)},
      {"bisection",
       {{"l", cfg.bisection.l},
        {"u", cfg.bisection.u},
        {"epsilon", cfg.bisection.epsilon},
        {"max_iter", cfg.bisection.max_iter}}},
      {"acc_floor", cfg.acc_floor},
      {"record_test_loss", cfg.record_test_loss}};
  return j;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ValidationError(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig cfg = {}) {
  if (!j.is_object()) throw ParseError("experiment config: expected an object");
  if (j.contains("version") && j.at("version").get<int>() != 1) {
    throw VersionError("experiment config: unsupported version " + j.at("version").dump());
  }
  detail::reject_unknown(j,
                         {"version", "variants", "te_len", "folds", "run_folds", "origin", "seeds", "trials",
                          "horizon", "m", "recon_len", "hidden_dim", "epochs", "batch_size", "clip_norm",
                          "train_stride", "loss", "optimizer", "tree", "bounds", "bisection", "acc_floor",
                          "record_test_loss", "grid", "synth", "resolved"},
                         "experiment config");
  try {
    if (j.contains("variants")) {
      cfg.variants.clear();
      for (const auto& v : j.at("variants")) {
        if (v.is_string()) {
          const auto name = v.get<std::string>();
          const auto defs = default_variants();
          auto it = std::find_if(defs.begin(), defs.end(), [&](const VariantSpec& d) { return d.name == name; });
          if (it == defs.end()) throw ValidationError("experiment config: unknown variant '" + name + "'");
          cfg.variants.push_back(*it);
        } else {
          cfg.variants.push_back({v.at("name").get<std::string>(),
                                  nn::variant_from_string(v.at("variant").get<std::string>()),
                                  nn::cell_kind_from_string(v.at("cell").get<std::string>())});
        }
      }
    }
    cfg.te_len = j.value("te_len", cfg.te_len);
    cfg.folds = j.value("folds", cfg.folds);
    cfg.run_folds = j.value("run_folds", cfg.run_folds);
    if (j.contains("origin")) {
      cfg.origin = j.at("origin").is_null() ? std::nullopt : std::optional(j.at("origin").get<std::size_t>());
    }
    cfg.seeds = j.value("seeds", cfg.seeds);
    if (j.contains("trials") && !j.contains("seeds")) {
      const int k = j.at("trials").get<int>();
      if (k < 1) throw ValidationError("experiment config: trials must be >= 1");
      cfg.seeds.clear();
      for (int i = 1; i <= k; ++i) cfg.seeds.push_back(static_cast<std::uint64_t>(i));
    }
    cfg.horizon = j.value("horizon", cfg.horizon);
    cfg.m = j.value("m", cfg.m);
    cfg.recon_len = j.value("recon_len", cfg.recon_len);
    cfg.hidden_dim = j.value("hidden_dim", cfg.hidden_dim);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
    cfg.train_stride = j.value("train_stride", cfg.train_stride);
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      detail::reject_unknown(l, {"kind", "lambda", "alpha1", "alpha2"}, "loss");
      if (l.contains("kind")) cfg.loss.kind = nn::loss_kind_from_string(l.at("kind").get<std::string>());
      cfg.loss.lambda = l.value("lambda", cfg.loss.lambda);
      cfg.loss.alpha1 = l.value("alpha1", cfg.loss.alpha1);
      cfg.loss.alpha2 = l.value("alpha2", cfg.loss.alpha2);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      detail::reject_unknown(o, {"kind", "learning_rate", "beta1", "beta2", "decay", "epsilon"}, "optimizer");
      if (o.contains("kind")) cfg.optimizer.kind = nn::optimizer_kind_from_string(o.at("kind").get<std::string>());
      cfg.optimizer.learning_rate = o.value("learning_rate", cfg.optimizer.learning_rate);
      cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
      cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
      cfg.optimizer.decay = o.value("decay", cfg.optimizer.decay);
      cfg.optimizer.epsilon = o.value("epsilon", cfg.optimizer.epsilon);
    }
    if (j.contains("tree")) {
      detail::reject_unknown(j.at("tree"),
                             {"corr_threshold", "max_neighbors", "total_cap", "layer_sim_threshold", "relax_step",
                              "corr_floor", "stage_len", "m", "n", "include_target_site"},
                             "tree");
      cfg.tree = tree_params_from_json(j.at("tree"), cfg.tree);
    }
    if (j.contains("bounds")) {
      const auto& b = j.at("bounds");
      if (b.is_null()) {
        cfg.bounds.reset();
      } else {
        const auto v = b.get<std::vector<double>>();
        if (v.size() != 2) throw ValidationError("experiment config: bounds must be [lo, hi]");
        cfg.bounds = Bounds{v[0], v[1]};
      }
    }
    if (j.contains("bisection")) {
      const auto& b = j.at("bisection");
      cfg.bisection.l = b.value("l", cfg.bisection.l);
      cfg.bisection.u = b.value("u", cfg.bisection.u);
      cfg.bisection.epsilon = b.value("epsilon", cfg.bisection.epsilon);
      cfg.bisection.max_iter = b.value("max_iter", cfg.bisection.max_iter);
    }
    cfg.acc_floor = j.value("acc_floor", cfg.acc_floor);
    cfg.record_test_loss = j.value("record_test_loss", cfg.record_test_loss);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("experiment config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace corrcast
