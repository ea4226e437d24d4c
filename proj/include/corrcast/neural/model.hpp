#pragma once

// Dual-encoder sequence model.
//
//   encoder-1  scalar stream of knowledge nodes (ascending |rho|): each node's
//              m+n values, then its n predictions (optimized_corr only), with
//              a learned separator value between consecutive nodes
//   encoder-2  the recent window
//   fusion     affine map [h1; h2] -> decoder h0 (decoder c0 = 0)
//   decoder    recon_len reconstruction steps of the recent window's tail,
//              then n horizon steps; scalar affine head on every step
//
// plain_seq2seq drops encoder-1 (fusion reads h2 only). plain_lstm has no
// fusion and no separate decoder: the encoder-2 cell simply keeps running, so
// the whole thing is one classical LSTM/GRU over recent then the forecast.
//
// All values enter the network as (v - shift) / scale and leave through the
// inverse map.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corrcast/error.hpp"
#include "corrcast/knowledge.hpp"
#include "corrcast/neural/cell.hpp"
#include "corrcast/random.hpp"

namespace corrcast::nn {

enum class Variant { optimized_corr, non_optimized_corr, plain_seq2seq, plain_lstm };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::optimized_corr: return "optimized_corr";
    case Variant::non_optimized_corr: return "non_optimized_corr";
    case Variant::plain_seq2seq: return "plain_seq2seq";
    case Variant::plain_lstm: return "plain_lstm";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "optimized_corr") return Variant::optimized_corr;
  if (s == "non_optimized_corr") return Variant::non_optimized_corr;
  if (s == "plain_seq2seq") return Variant::plain_seq2seq;
  if (s == "plain_lstm") return Variant::plain_lstm;
  throw ValidationError("unknown model variant '" + s + "'");
}

inline bool uses_knowledge(Variant v) { return v == Variant::optimized_corr || v == Variant::non_optimized_corr; }

struct ModelConfig {
  Variant variant = Variant::optimized_corr;
  CellKind cell = CellKind::lstm;
  int hidden_dim = 32;
  std::size_t m = 36;
  std::size_t n = 6;
  std::size_t recon_len = 6;

  void validate() const {
    if (hidden_dim < 1) throw ValidationError("model: hidden_dim must be >= 1");
    if (m < 2 || n < 1) throw ValidationError("model: need m >= 2 and n >= 1");
    if (recon_len >= m) throw ValidationError("model: recon_len must be < m");
  }
  std::size_t decoder_steps() const { return recon_len + n; }
};

class Seq2SeqKnowledgeModel {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  struct Offsets {
    std::size_t encoder1 = npos, separator = npos, encoder2 = npos, fusion_w = npos, fusion_b = npos,
                decoder = npos, head_w = npos, head_b = npos;
  };

  struct Block {
    std::string name;
    std::size_t offset;
    std::size_t size;
  };

  ModelConfig config;
  Vec theta;
  double shift = 0;
  double scale = 1;

  explicit Seq2SeqKnowledgeModel(ModelConfig cfg) : config(cfg) {
    config.validate();
    const std::size_t H = static_cast<std::size_t>(config.hidden_dim);
    const std::size_t cell = cell_shape().param_count();
    std::size_t at = 0;
    auto take = [&](std::size_t& slot, std::size_t size, const char* name) {
      slot = at;
      blocks_.push_back({name, at, size});
      at += size;
    };
    if (uses_knowledge(config.variant)) {
      take(off_.encoder1, cell, "encoder1");
      take(off_.separator, 1, "separator");
    }
    take(off_.encoder2, cell, "encoder2");
    if (config.variant != Variant::plain_lstm) {
      const std::size_t in = uses_knowledge(config.variant) ? 2 * H : H;
      take(off_.fusion_w, H * in, "fusion_w");
      take(off_.fusion_b, H, "fusion_b");
      take(off_.decoder, cell, "decoder");
    } else {
      off_.decoder = off_.encoder2;
    }
    take(off_.head_w, H, "head_w");
    take(off_.head_b, 1, "head_b");
    theta = Vec::Zero(static_cast<Eigen::Index>(at));
  }

  // Uniform in [-1/sqrt(H), 1/sqrt(H)], including biases and the separator.
  static Seq2SeqKnowledgeModel initialized(ModelConfig cfg, std::uint64_t seed) {
    Seq2SeqKnowledgeModel model(cfg);
    Rng rng(seed);
    const double a = 1.0 / std::sqrt(static_cast<double>(model.config.hidden_dim));
    for (Eigen::Index i = 0; i < model.theta.size(); ++i) model.theta[i] = rng.uniform(-a, a);
    return model;
  }

  CellShape cell_shape() const { return {config.cell, 1, config.hidden_dim}; }
  const Offsets& offsets() const { return off_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::size_t param_count() const { return static_cast<std::size_t>(theta.size()); }

  bool has_encoder1() const { return off_.encoder1 != npos; }
  bool has_fusion() const { return off_.fusion_w != npos; }

  CellView encoder1() const { return view_at(off_.encoder1); }
  CellView encoder2() const { return view_at(off_.encoder2); }
  CellView decoder() const { return view_at(off_.decoder); }
  double separator() const { return theta[static_cast<Eigen::Index>(off_.separator)]; }
  std::size_t fusion_in() const { return uses_knowledge(config.variant) ? 2 * config.hidden_dim : config.hidden_dim; }
  ConstMatMap fusion_w() const {
    return {theta.data() + off_.fusion_w, config.hidden_dim, static_cast<Eigen::Index>(fusion_in())};
  }
  ConstVecMap fusion_b() const { return {theta.data() + off_.fusion_b, config.hidden_dim}; }
  ConstVecMap head_w() const { return {theta.data() + off_.head_w, config.hidden_dim}; }
  double head_b() const { return theta[static_cast<Eigen::Index>(off_.head_b)]; }

  double normalize(double v) const { return (v - shift) / scale; }
  double denormalize(double v) const { return shift + scale * v; }

 private:
  CellView view_at(std::size_t off) const {
    if (off == npos) throw ValidationError("model: component absent in this variant");
    return {cell_shape(), theta.data() + off};
  }

  Offsets off_;
  std::vector<Block> blocks_;
};

// Mean/std of every value in the recent windows.
inline void fit_normalizer(Seq2SeqKnowledgeModel& model, const std::vector<std::vector<double>>& windows) {
  double sum = 0, sq = 0;
  std::size_t count = 0;
  for (const auto& w : windows) {
    for (double v : w) {
      sum += v;
      sq += v * v;
      ++count;
    }
  }
  if (count == 0) throw ValidationError("fit_normalizer: no data");
  const double mean = sum / static_cast<double>(count);
  const double var = std::max(sq / static_cast<double>(count) - mean * mean, 0.0);
  model.shift = mean;
  model.scale = std::sqrt(var) > 1e-6 ? std::sqrt(var) : 1.0;
}

// ---------------------------------------------------------------------------
// Encoder-1 input.

struct EncoderStream {
  std::vector<double> values;
  std::vector<std::uint8_t> separator;  // 1 where the learned separator is fed instead of values[i]

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
};

// Flattens nodes that must already be in ascending |rho| order.
inline EncoderStream knowledge_stream(std::span<const KnowledgeNode> nodes, bool with_predictions) {
  EncoderStream s;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (i > 0 && std::abs(nodes[i].rho) < std::abs(nodes[i - 1].rho)) {
      throw ContractError("knowledge_stream: nodes must be ordered by ascending |rho|");
    }
    if (i > 0) {
      s.values.push_back(0.0);
      s.separator.push_back(1);
    }
    for (double v : nodes[i].sequence) {
      s.values.push_back(v);
      s.separator.push_back(0);
    }
    if (with_predictions) {
      if (!nodes[i].prediction) throw ValidationError("knowledge_stream: node " + nodes[i].source_site + " has no prediction");
      for (double v : *nodes[i].prediction) {
        s.values.push_back(v);
        s.separator.push_back(0);
      }
    }
  }
  return s;
}

inline EncoderStream knowledge_stream(const KnowledgeTree& tree, bool with_predictions) {
  const auto nodes = ordered_nodes(tree);
  return knowledge_stream(nodes, with_predictions);
}

struct Sample {
  EncoderStream knowledge;     // empty for plain variants
  std::vector<double> recent;  // m values
  std::vector<double> future;  // n targets (may be empty at pure inference)
};

inline Sample make_sample(const ModelConfig& cfg, const KnowledgeTree* tree, std::vector<double> recent,
                          std::vector<double> future = {}) {
  Sample s;
  if (uses_knowledge(cfg.variant)) {
    if (!tree || tree->node_count() == 0) throw EmptyTreeError("model variant needs a non-empty knowledge tree");
    s.knowledge = knowledge_stream(*tree, cfg.variant == Variant::optimized_corr);
  }
  s.recent = std::move(recent);
  s.future = std::move(future);
  return s;
}

// ---------------------------------------------------------------------------
// Forward pass.

struct ForwardResult {
  std::vector<double> recon;    // recon_len values, m/s
  std::vector<double> horizon;  // n values, m/s
};

// Recorded intermediates of a batch of samples run side by side (batch 1 for
// the single-sample API); backward() needs a teacher-forced tape.
struct ForwardTape {
  SequenceTape encoder1, encoder2, decoder;
  Mat fusion_input;  // fusion_in() x B
  std::vector<std::uint8_t> separator_mask;
  Mat outputs;  // normalized, decoder_steps() x B
  int batch = 0;
  bool teacher = false;
  bool valid = false;
};

namespace detail {

inline void check_sample(const Seq2SeqKnowledgeModel& model, const Sample& s, bool teacher) {
  const auto& cfg = model.config;
  if (s.recent.size() != cfg.m) throw ValidationError("forward: recent window must have length m");
  if (teacher && s.future.size() != cfg.n) throw ValidationError("forward: teacher forcing needs n targets");
  if (uses_knowledge(cfg.variant)) {
    if (s.knowledge.empty()) throw EmptyTreeError("forward: knowledge variant given an empty tree");
    if (s.knowledge.separator.size() != s.knowledge.values.size()) {
      throw ValidationError("forward: malformed encoder stream");
    }
  }
}

}  // namespace detail

// Samples batched together must share the encoder-1 layout (same separator
// mask); plain variants batch freely.
inline void forward_batch(const Seq2SeqKnowledgeModel& model, std::span<const Sample* const> batch, bool teacher,
                          ForwardTape& tp) {
  if (batch.empty()) throw ValidationError("forward: empty batch");
  for (const Sample* s : batch) detail::check_sample(model, *s, teacher);
  const auto& cfg = model.config;
  const int H = cfg.hidden_dim;
  const int B = static_cast<int>(batch.size());
  const Eigen::Index Bi = B;
  tp.valid = false;
  tp.teacher = teacher;
  tp.batch = B;

  const int m = static_cast<int>(cfg.m);
  Mat x2(1, m * Bi);
  for (int t = 0; t < m; ++t) {
    for (int j = 0; j < B; ++j) x2(0, t * Bi + j) = model.normalize(batch[j]->recent[static_cast<std::size_t>(t)]);
  }
  const Mat zero = Mat::Zero(H, Bi);
  run_batch(model.encoder2(), x2, B, zero, Mat(), tp.encoder2);
  const int T2 = tp.encoder2.steps;

  Mat h0, c0;
  if (cfg.variant == Variant::plain_lstm) {
    h0 = tp.encoder2.hs(T2);
    if (model.cell_shape().has_cell_state()) c0 = tp.encoder2.cs(T2);
  } else {
    tp.fusion_input.resize(static_cast<Eigen::Index>(model.fusion_in()), Bi);
    if (model.has_encoder1()) {
      const auto& mask = batch[0]->knowledge.separator;
      for (const Sample* s : batch) {
        if (s->knowledge.separator != mask) throw ValidationError("forward: batched encoder streams differ in layout");
      }
      const int T1 = static_cast<int>(mask.size());
      Mat x1(1, T1 * Bi);
      const double sep = model.separator();
      for (int t = 0; t < T1; ++t) {
        for (int j = 0; j < B; ++j) {
          x1(0, t * Bi + j) = mask[static_cast<std::size_t>(t)]
                                  ? sep
                                  : model.normalize(batch[j]->knowledge.values[static_cast<std::size_t>(t)]);
        }
      }
      tp.separator_mask = mask;
      run_batch(model.encoder1(), x1, B, zero, Mat(), tp.encoder1);
      tp.fusion_input.topRows(H) = tp.encoder1.hs(tp.encoder1.steps);
      tp.fusion_input.bottomRows(H) = tp.encoder2.hs(T2);
    } else {
      tp.fusion_input = tp.encoder2.hs(T2);
    }
    h0.noalias() = model.fusion_w() * tp.fusion_input;
    h0.colwise() += model.fusion_b();
  }

  const auto dec = model.decoder();
  const int T = static_cast<int>(cfg.decoder_steps());
  const int R = static_cast<int>(cfg.recon_len);
  tp.decoder.reset(dec.shape, T, B);
  tp.decoder.set_initial(h0, c0);
  tp.outputs.resize(T, Bi);
  const auto w = model.head_w();
  const double b = model.head_b();
  const std::size_t base = cfg.m - cfg.recon_len - 1;  // recent index fed at step 0
  for (int k = 0; k < T; ++k) {
    for (int j = 0; j < B; ++j) {
      double in;
      if (k <= R) {
        in = model.normalize(batch[j]->recent[base + static_cast<std::size_t>(k)]);
      } else if (teacher) {
        in = model.normalize(batch[j]->future[static_cast<std::size_t>(k - R - 1)]);
      } else {
        in = tp.outputs(k - 1, j);
      }
      tp.decoder.x(0, k * Bi + j) = in;
    }
    run_step(dec, tp.decoder, k);
    tp.outputs.row(k).noalias() = w.transpose() * tp.decoder.hs(k + 1);
    tp.outputs.row(k).array() += b;
  }
  tp.valid = true;
}

inline ForwardResult forward(const Seq2SeqKnowledgeModel& model, const Sample& sample, bool teacher = false,
                             ForwardTape* tape = nullptr) {
  ForwardTape local;
  ForwardTape& tp = tape ? *tape : local;
  const Sample* one[] = {&sample};
  forward_batch(model, one, teacher, tp);
  const int R = static_cast<int>(model.config.recon_len);
  ForwardResult out;
  for (int k = 0; k < tp.outputs.rows(); ++k) {
    (k < R ? out.recon : out.horizon).push_back(model.denormalize(tp.outputs(k, 0)));
  }
  return out;
}

// Inference convenience: builds the encoder stream from the tree.
inline ForwardResult forward(const Seq2SeqKnowledgeModel& model, const KnowledgeTree* tree,
                             std::span<const double> recent) {
  return forward(model, make_sample(model.config, tree, {recent.begin(), recent.end()}));
}

// Gradient of the loss w.r.t. every parameter given dL/d(normalized output)
// per decoder step and sample (decoder_steps() x B). Accumulates into `grad`
// (same layout as theta).
inline void backward(const Seq2SeqKnowledgeModel& model, const ForwardTape& tape, const Eigen::Ref<const Mat>& d_out,
                     Vec& grad) {
  if (!tape.valid) throw ValidationError("backward: no recorded forward pass");
  if (!tape.teacher) throw ValidationError("backward: needs a teacher-forced forward pass");
  if (grad.size() != model.theta.size()) throw ValidationError("backward: gradient buffer has wrong size");
  const auto& cfg = model.config;
  const int H = cfg.hidden_dim;
  const int T = tape.decoder.steps;
  const int B = tape.batch;
  if (d_out.rows() != T || d_out.cols() != B) throw ValidationError("backward: output gradient shape");
  const auto& off = model.offsets();
  const CellShape shape = model.cell_shape();
  auto gview = [&](std::size_t o) { return CellGradView{shape, grad.data() + o}; };

  const auto w = model.head_w();
  VecMap gw(grad.data() + off.head_w, H);
  Mat dh_out(H, T * static_cast<Eigen::Index>(B));
  for (int k = 0; k < T; ++k) {
    dh_out.middleCols(k * B, B).noalias() = w * d_out.row(k);
    gw.noalias() += tape.decoder.hs(k + 1) * d_out.row(k).transpose();
  }
  grad[static_cast<Eigen::Index>(off.head_b)] += d_out.sum();

  const Mat none;
  const auto dec = backward_sequence(model.decoder(), tape.decoder, dh_out, none, none, gview(off.decoder));
  if (cfg.variant == Variant::plain_lstm) {
    backward_sequence(model.encoder2(), tape.encoder2, none, dec.dh0, dec.dc0, gview(off.encoder2));
    return;
  }
  MatMap gfw(grad.data() + off.fusion_w, H, static_cast<Eigen::Index>(model.fusion_in()));
  VecMap gfb(grad.data() + off.fusion_b, H);
  gfw.noalias() += dec.dh0 * tape.fusion_input.transpose();
  gfb += dec.dh0.rowwise().sum();
  const Mat d_in = model.fusion_w().transpose() * dec.dh0;
  if (model.has_encoder1()) {
    backward_sequence(model.encoder2(), tape.encoder2, none, d_in.bottomRows(H), none, gview(off.encoder2));
    const auto e1 = backward_sequence(model.encoder1(), tape.encoder1, none, d_in.topRows(H), none,
                                      gview(off.encoder1));
    double gs = 0;
    for (int t = 0; t < tape.encoder1.steps; ++t) {
      if (tape.separator_mask[static_cast<std::size_t>(t)]) gs += e1.dx.middleCols(t * B, B).sum();
    }
    grad[static_cast<Eigen::Index>(off.separator)] += gs;
  } else {
    backward_sequence(model.encoder2(), tape.encoder2, none, d_in, none, gview(off.encoder2));
  }
}

inline void backward(const Seq2SeqKnowledgeModel& model, const ForwardTape& tape, std::span<const double> d_out,
                     Vec& grad) {
  if (tape.valid && (static_cast<Eigen::Index>(d_out.size()) != tape.decoder.steps || tape.batch != 1)) {
    throw ValidationError("backward: output gradient length");
  }
  backward(model, tape, ConstMatMap(d_out.data(), static_cast<Eigen::Index>(d_out.size()), 1), grad);
}

}  // namespace corrcast::nn
