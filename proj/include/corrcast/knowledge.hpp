#pragma once

// Knowledge tree: per time stage (layer), the windows of every site that best
// track the target's recent window, pruned to the strongest few, with
// near-duplicate layers removed and a global cap on the node count. Each
// retained node later carries the correlation-model completion of the recent
// window (its "prediction").

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corrcast/correlation.hpp"
#include "corrcast/error.hpp"
#include "corrcast/fracprog.hpp"
#include "corrcast/series.hpp"
#include "json.hpp"

namespace corrcast {

struct TreeParams {
  double corr_threshold = 0.8;
  int max_neighbors = 5;
  int total_cap = 10;
  double layer_sim_threshold = 0.95;
  double relax_step = 0.05;
  double corr_floor = 0.5;
  std::size_t stage_len = 144;
  std::size_t m = 36;
  std::size_t n = 6;
  bool include_target_site = true;

  void validate() const {
    if (!(corr_floor > 0 && corr_floor <= corr_threshold && corr_threshold <= 1)) {
      throw ValidationError("tree params: need 0 < corr_floor <= corr_threshold <= 1");
    }
    if (max_neighbors < 1) throw ValidationError("tree params: max_neighbors must be >= 1");
    if (total_cap < 1) throw ValidationError("tree params: total_cap must be >= 1");
    if (!(relax_step > 0)) throw ValidationError("tree params: relax_step must be positive");
    if (stage_len < 1) throw ValidationError("tree params: stage_len must be >= 1");
    if (m < 2 || n < 1) throw ValidationError("tree params: need m >= 2 and n >= 1");
  }
};

struct KnowledgeNode {
  std::string source_site;
  std::size_t offset = 0;
  std::vector<double> sequence;  // m + n values
  double rho = 0;                // signed, first m values vs the recent window
  std::optional<std::vector<double>> prediction;
  std::optional<double> prediction_rho;
};

struct KnowledgeLayer {
  int stage_id = 0;
  std::vector<KnowledgeNode> nodes;
};

struct KnowledgeTree {
  std::string target_site;
  std::vector<double> recent_window;
  std::vector<KnowledgeLayer> layers;
  TreeParams params_used;
  std::size_t history_end = 0;
  int relaxations = 0;
  std::vector<std::string> dropped;  // reasons for nodes removed by attach_predictions

  std::size_t node_count() const {
    std::size_t c = 0;
    for (const auto& l : layers) c += l.nodes.size();
    return c;
  }
};

namespace detail {

// Descending strength with deterministic tie-breaks.
inline bool node_stronger(const KnowledgeNode& a, const KnowledgeNode& b) {
  const double ra = std::abs(a.rho), rb = std::abs(b.rho);
  if (ra != rb) return ra > rb;
  if (a.offset != b.offset) return a.offset < b.offset;
  return a.source_site < b.source_site;
}

// Ascending |rho| (the encoder input order).
inline bool node_weaker(const KnowledgeNode& a, const KnowledgeNode& b) {
  const double ra = std::abs(a.rho), rb = std::abs(b.rho);
  if (ra != rb) return ra < rb;
  if (a.source_site != b.source_site) return a.source_site < b.source_site;
  return a.offset < b.offset;
}

inline double safe_abs_rho(std::span<const double> a, std::span<const double> b) {
  try {
    return std::abs(pearson(a, b).rho);
  } catch (const DegenerateCorrelation&) {
    return 0.0;
  }
}

}  // namespace detail

// All nodes of the tree ordered ascending by |rho|.
inline std::vector<KnowledgeNode> ordered_nodes(const KnowledgeTree& tree) {
  std::vector<KnowledgeNode> all;
  for (const auto& l : tree.layers) all.insert(all.end(), l.nodes.begin(), l.nodes.end());
  std::stable_sort(all.begin(), all.end(), detail::node_weaker);
  return all;
}

// Splits the candidate offsets [0, history_end - m - n] into consecutive,
// non-overlapping stages of stage_len offsets, aligned so the last stage ends
// at the most recent admissible offset (a partial oldest stage is dropped).
// Each layer holds, per site, the window in that stage best correlated with
// `recent` (ties: earliest offset). Layers come out oldest first.
inline std::vector<KnowledgeLayer> segment_layers(const SiteGrid& grid, std::span<const double> recent,
                                                  const TreeParams& params,
                                                  std::optional<std::size_t> history_end = std::nullopt) {
  params.validate();
  if (recent.size() != params.m) throw ValidationError("segment_layers: recent window must have length m");
  const std::size_t end = history_end.value_or(grid.length());
  if (end > grid.length()) throw ValidationError("segment_layers: history_end beyond grid");
  if (end < params.stage_len + params.m + params.n) {
    throw ValidationError("segment_layers: history of " + std::to_string(end) + " periods is shorter than one stage (" +
                          std::to_string(params.stage_len) + ") plus m + n");
  }
  const std::size_t offsets = end - params.m - params.n + 1;
  const std::size_t stages = offsets / params.stage_len;
  const std::size_t first_offset = offsets - stages * params.stage_len;
  const auto c = detail::center(recent);

  std::vector<KnowledgeLayer> layers(stages);
  for (std::size_t k = 0; k < stages; ++k) layers[k].stage_id = static_cast<int>(k);

  for (std::size_t s = 0; s < grid.site_count(); ++s) {
    const auto& series = grid.series[s];
    if (!params.include_target_site && series.site_id == grid.target_site) continue;
    std::vector<std::optional<std::pair<std::size_t, double>>> best(stages);
    detail::scan_series(series.view(), c.centered, c.norm, first_offset, offsets - 1,
                        [&](std::size_t off, std::optional<double> rho) {
                          if (!rho) return;
                          auto& b = best[(off - first_offset) / params.stage_len];
                          if (!b || std::abs(*rho) > std::abs(b->second)) b = std::make_pair(off, *rho);
                        });
    for (std::size_t k = 0; k < stages; ++k) {
      if (!best[k]) continue;
      KnowledgeNode node;
      node.source_site = series.site_id;
      node.offset = best[k]->first;
      node.rho = best[k]->second;
      node.sequence.assign(series.values.begin() + static_cast<std::ptrdiff_t>(node.offset),
                           series.values.begin() + static_cast<std::ptrdiff_t>(node.offset + params.m + params.n));
      layers[k].nodes.push_back(std::move(node));
    }
  }
  return layers;
}

// Keeps nodes with |rho| >= threshold, at most max_neighbors of them (the
// strongest), ordered ascending by |rho|. An empty result means the layer is
// ignored.
inline KnowledgeLayer prune_layer(const KnowledgeLayer& layer, std::span<const double> recent,
                                  double corr_threshold, int max_neighbors) {
  KnowledgeLayer out;
  out.stage_id = layer.stage_id;
  for (const auto& node : layer.nodes) {
    if (node.sequence.size() < recent.size()) throw ValidationError("prune_layer: node shorter than recent window");
    KnowledgeNode copy = node;
    try {
      copy.rho = pearson(std::span<const double>(node.sequence).first(recent.size()), recent).rho;
    } catch (const DegenerateCorrelation&) {
      continue;
    }
    if (std::abs(copy.rho) >= corr_threshold) out.nodes.push_back(std::move(copy));
  }
  std::sort(out.nodes.begin(), out.nodes.end(), detail::node_stronger);
  if (out.nodes.size() > static_cast<std::size_t>(std::max(max_neighbors, 0))) {
    out.nodes.resize(static_cast<std::size_t>(max_neighbors));
  }
  std::reverse(out.nodes.begin(), out.nodes.end());
  return out;
}

// Mean |rho| between the two layers' node sequences paired by rank
// (strongest with strongest, ...). Zero when either layer is empty.
inline double layer_similarity(const KnowledgeLayer& a, const KnowledgeLayer& b) {
  auto ranked = [](const KnowledgeLayer& l) {
    auto nodes = l.nodes;
    std::sort(nodes.begin(), nodes.end(), detail::node_stronger);
    return nodes;
  };
  const auto ra = ranked(a), rb = ranked(b);
  const std::size_t pairs = std::min(ra.size(), rb.size());
  if (pairs == 0) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < pairs; ++i) sum += detail::safe_abs_rho(ra[i].sequence, rb[i].sequence);
  return sum / static_cast<double>(pairs);
}

// Drops empty layers and, among layers whose similarity reaches the
// threshold, keeps only the most recent one.
inline std::vector<KnowledgeLayer> dedupe_layers(const std::vector<KnowledgeLayer>& layers,
                                                 double layer_sim_threshold) {
  std::vector<KnowledgeLayer> sorted = layers;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const KnowledgeLayer& x, const KnowledgeLayer& y) { return x.stage_id < y.stage_id; });
  std::vector<KnowledgeLayer> kept;  // newest first while building
  for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
    if (it->nodes.empty()) continue;
    const bool duplicate = std::any_of(kept.begin(), kept.end(), [&](const KnowledgeLayer& k) {
      return layer_similarity(*it, k) >= layer_sim_threshold;
    });
    if (!duplicate) kept.push_back(*it);
  }
  std::reverse(kept.begin(), kept.end());
  return kept;
}

namespace detail {

inline std::vector<KnowledgeLayer> cap_nodes(std::vector<KnowledgeLayer> layers, int total_cap) {
  std::vector<KnowledgeNode> all;
  for (const auto& l : layers) all.insert(all.end(), l.nodes.begin(), l.nodes.end());
  if (all.size() <= static_cast<std::size_t>(total_cap)) return layers;
  std::sort(all.begin(), all.end(), node_stronger);
  all.resize(static_cast<std::size_t>(total_cap));
  auto survives = [&](const KnowledgeNode& n) {
    return std::any_of(all.begin(), all.end(), [&](const KnowledgeNode& a) {
      return a.offset == n.offset && a.source_site == n.source_site;
    });
  };
  std::vector<KnowledgeLayer> out;
  for (auto& l : layers) {
    KnowledgeLayer kept{l.stage_id, {}};
    for (auto& n : l.nodes) {
      if (survives(n)) kept.nodes.push_back(std::move(n));
    }
    if (!kept.nodes.empty()) out.push_back(std::move(kept));
  }
  return out;
}

}  // namespace detail

// Segment, prune, dedupe and cap. When no node survives pruning, the
// correlation threshold is relaxed by relax_step (down to corr_floor) and
// pruning restarts.
inline KnowledgeTree assemble_tree(const SiteGrid& grid, std::span<const double> recent, const TreeParams& params,
                                   std::optional<std::size_t> history_end = std::nullopt) {
  params.validate();
  const auto raw = segment_layers(grid, recent, params, history_end);
  for (int round = 0;; ++round) {
    const double threshold = params.corr_threshold - round * params.relax_step;
    if (threshold < params.corr_floor - 1e-12) {
      throw EmptyTreeError("assemble_tree: no node reaches the correlation floor " +
                           std::to_string(params.corr_floor));
    }
    std::vector<KnowledgeLayer> pruned;
    for (const auto& layer : raw) {
      pruned.push_back(prune_layer(layer, recent, threshold, params.max_neighbors));
    }
    auto layers = dedupe_layers(pruned, params.layer_sim_threshold);
    if (layers.empty()) continue;
    KnowledgeTree tree;
    tree.target_site = grid.target_site;
    tree.recent_window.assign(recent.begin(), recent.end());
    tree.layers = detail::cap_nodes(std::move(layers), params.total_cap);
    tree.params_used = params;
    tree.params_used.corr_threshold = threshold;
    tree.history_end = history_end.value_or(grid.length());
    tree.relaxations = round;
    return tree;
  }
}

// Runs the correlation model on every node; nodes whose solve fails are
// removed (reason recorded in tree.dropped).
inline KnowledgeTree attach_predictions(KnowledgeTree tree, const Bounds& bounds, const BisectionConfig& cfg = {}) {
  if (tree.node_count() == 0) throw EmptyTreeError("attach_predictions: empty tree");
  const std::size_t m = tree.recent_window.size();
  std::vector<KnowledgeLayer> layers;
  for (auto& layer : tree.layers) {
    KnowledgeLayer kept{layer.stage_id, {}};
    for (auto& node : layer.nodes) {
      WindowMatch match;
      match.source_site = node.source_site;
      match.offset = node.offset;
      match.his.assign(node.sequence.begin(), node.sequence.begin() + static_cast<std::ptrdiff_t>(m));
      match.ref.assign(node.sequence.begin() + static_cast<std::ptrdiff_t>(m), node.sequence.end());
      match.rho = node.rho;
      try {
        const auto sol = forecast_solution(match, tree.recent_window, bounds, cfg);
        node.prediction = sol.y_star;
        node.prediction_rho = sol.rho_achieved;
        kept.nodes.push_back(std::move(node));
      } catch (const std::exception& e) {
        tree.dropped.push_back(node.source_site + "@" + std::to_string(node.offset) + ": " + e.what());
      }
    }
    if (!kept.nodes.empty()) layers.push_back(std::move(kept));
  }
  if (layers.empty()) throw EmptyTreeError("attach_predictions: every node failed to solve");
  tree.layers = std::move(layers);
  return tree;
}

// ---------------------------------------------------------------------------
// JSON persistence.

inline constexpr const char* kTreeSchema = "corrcast.knowledge_tree";
inline constexpr int kTreeSchemaVersion = 1;

inline nlohmann::json tree_params_to_json(const TreeParams& p) {
  return {{"corr_threshold", p.corr_threshold}, {"max_neighbors", p.max_neighbors},
          {"total_cap", p.total_cap},           {"layer_sim_threshold", p.layer_sim_threshold},
          {"relax_step", p.relax_step},         {"corr_floor", p.corr_floor},
          {"stage_len", p.stage_len},           {"m", p.m},
          {"n", p.n},                           {"include_target_site", p.include_target_site}};
}

// Missing keys keep their defaults.
inline TreeParams tree_params_from_json(const nlohmann::json& j, TreeParams p = {}) {
  p.corr_threshold = j.value("corr_threshold", p.corr_threshold);
  p.max_neighbors = j.value("max_neighbors", p.max_neighbors);
  p.total_cap = j.value("total_cap", p.total_cap);
  p.layer_sim_threshold = j.value("layer_sim_threshold", p.layer_sim_threshold);
  p.relax_step = j.value("relax_step", p.relax_step);
  p.corr_floor = j.value("corr_floor", p.corr_floor);
  p.stage_len = j.value("stage_len", p.stage_len);
  p.m = j.value("m", p.m);
  p.n = j.value("n", p.n);
  p.include_target_site = j.value("include_target_site", p.include_target_site);
  return p;
}

inline nlohmann::json tree_to_json(const KnowledgeTree& tree) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : tree.layers) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : l.nodes) {
      nlohmann::json jn{{"source_site", n.source_site}, {"offset", n.offset}, {"sequence", n.sequence}, {"rho", n.rho}};
      if (n.prediction) jn["prediction"] = *n.prediction;
      if (n.prediction_rho) jn["prediction_rho"] = *n.prediction_rho;
      nodes.push_back(std::move(jn));
    }
    layers.push_back({{"stage_id", l.stage_id}, {"nodes", std::move(nodes)}});
  }
  return {{"schema", kTreeSchema},
          {"version", kTreeSchemaVersion},
          {"target_site", tree.target_site},
          {"recent_window", tree.recent_window},
          {"history_end", tree.history_end},
          {"relaxations", tree.relaxations},
          {"params_used", tree_params_to_json(tree.params_used)},
          {"layers", std::move(layers)},
          {"dropped", tree.dropped}};
}

inline KnowledgeTree tree_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("version")) throw VersionError("knowledge tree: missing version field");
  if (j.value("schema", std::string{}) != kTreeSchema) throw ParseError("knowledge tree: wrong schema");
  if (j.at("version").get<int>() != kTreeSchemaVersion) {
    throw VersionError("knowledge tree: unsupported version " + j.at("version").dump());
  }
  try {
    KnowledgeTree t;
    t.target_site = j.at("target_site").get<std::string>();
    t.recent_window = j.at("recent_window").get<std::vector<double>>();
    t.history_end = j.at("history_end").get<std::size_t>();
    t.relaxations = j.at("relaxations").get<int>();
    t.params_used = tree_params_from_json(j.at("params_used"));
    t.dropped = j.value("dropped", std::vector<std::string>{});
    for (const auto& jl : j.at("layers")) {
      KnowledgeLayer l;
      l.stage_id = jl.at("stage_id").get<int>();
      for (const auto& jn : jl.at("nodes")) {
        KnowledgeNode n;
        n.source_site = jn.at("source_site").get<std::string>();
        n.offset = jn.at("offset").get<std::size_t>();
        n.sequence = jn.at("sequence").get<std::vector<double>>();
        n.rho = jn.at("rho").get<double>();
        if (jn.contains("prediction")) n.prediction = jn.at("prediction").get<std::vector<double>>();
        if (jn.contains("prediction_rho")) n.prediction_rho = jn.at("prediction_rho").get<double>();
        l.nodes.push_back(std::move(n));
      }
      t.layers.push_back(std::move(l));
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("knowledge tree: ") + e.what());
  }
}

inline void save_tree(const KnowledgeTree& tree, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << tree_to_json(tree).dump(1) << '\n';
}

inline KnowledgeTree load_tree(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return tree_from_json(j);
}

inline bool operator==(const KnowledgeNode& a, const KnowledgeNode& b) {
  return a.source_site == b.source_site && a.offset == b.offset && a.sequence == b.sequence && a.rho == b.rho &&
         a.prediction == b.prediction && a.prediction_rho == b.prediction_rho;
}

inline bool operator==(const KnowledgeLayer& a, const KnowledgeLayer& b) {
  return a.stage_id == b.stage_id && a.nodes == b.nodes;
}

inline bool operator==(const KnowledgeTree& a, const KnowledgeTree& b) {
  return a.target_site == b.target_site && a.recent_window == b.recent_window && a.layers == b.layers &&
         tree_params_to_json(a.params_used) == tree_params_to_json(b.params_used) &&
         a.history_end == b.history_end && a.relaxations == b.relaxations && a.dropped == b.dropped;
}

}  // namespace corrcast
