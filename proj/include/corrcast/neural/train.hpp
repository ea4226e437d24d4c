#pragma once

// Batch loss with analytic gradient, finite-difference gradient check, and
// the training loop.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <map>
#include <cmath>
#include <numeric>
#include <vector>

#include "corrcast/error.hpp"
#include "corrcast/neural/loss.hpp"
#include "corrcast/neural/model.hpp"
#include "corrcast/neural/optimizer.hpp"
#include "corrcast/random.hpp"

namespace corrcast::nn {

struct BatchLoss {
  double loss = 0;
  double rmse_horizon = 0;  // normalized units
  double rmse_recon = 0;
};

namespace detail {

// Normalized decoder targets: recon tail of the recent window, then future.
inline std::vector<double> decoder_targets(const Seq2SeqKnowledgeModel& model, const Sample& s) {
  const auto& cfg = model.config;
  std::vector<double> t;
  t.reserve(cfg.decoder_steps());
  for (std::size_t k = cfg.m - cfg.recon_len; k < cfg.m; ++k) t.push_back(model.normalize(s.recent[k]));
  for (double v : s.future) t.push_back(model.normalize(v));
  return t;
}

inline std::size_t tape_doubles(const Seq2SeqKnowledgeModel& model, const Sample& s) {
  const std::size_t H = static_cast<std::size_t>(model.config.hidden_dim);
  const std::size_t steps = s.knowledge.size() + model.config.m + model.config.decoder_steps();
  return steps * H * static_cast<std::size_t>(model.cell_shape().gates() + 2);
}

// Wider batches fall out of cache: 16-32 columns per step measured fastest
// for hidden sizes 8-32.
inline constexpr std::size_t kMaxBatchColumns = 32;

// Samples sharing an encoder-1 layout, in order of first appearance, cut into
// chunks of at most kMaxBatchColumns.
inline std::vector<std::vector<const Sample*>> layout_groups(std::span<const Sample> samples) {
  std::vector<std::vector<const Sample*>> groups;
  std::map<std::vector<std::uint8_t>, std::size_t> open;
  for (const auto& s : samples) {
    auto it = open.find(s.knowledge.separator);
    if (it == open.end() || groups[it->second].size() == kMaxBatchColumns) {
      open[s.knowledge.separator] = groups.size();
      groups.emplace_back();
      it = open.find(s.knowledge.separator);
    }
    groups[it->second].push_back(&s);
  }
  return groups;
}

}  // namespace detail

// Loss over the batch with RMSE pooled across every sample and step. With
// `teacher` false the decoder runs autoregressively (evaluation). When `grad`
// is given (teacher forcing required) it receives dLoss/dtheta. Samples are
// run in groups of equal encoder-1 layout.
inline BatchLoss batch_loss(const Seq2SeqKnowledgeModel& model, std::span<const Sample> samples,
                            const LossConfig& cfg, bool teacher = true, Vec* grad = nullptr) {
  cfg.validate();
  if (samples.empty()) throw ValidationError("batch_loss: empty batch");
  if (grad && !teacher) throw ValidationError("batch_loss: gradients need teacher forcing");
  const auto kind = cfg.resolved(model.config.variant);
  const int R = static_cast<int>(model.config.recon_len);
  const int T = static_cast<int>(model.config.decoder_steps());
  for (const auto& s : samples) {
    if (s.future.size() != model.config.n) throw ValidationError("batch_loss: sample without n targets");
  }

  std::size_t budget = 0;
  for (const auto& s : samples) budget += detail::tape_doubles(model, s);
  const bool keep = grad && budget < (std::size_t{1} << 25);
  const auto groups = detail::layout_groups(samples);
  std::vector<ForwardTape> tapes(keep ? groups.size() : 0);
  std::vector<Mat> errors(groups.size());

  double sse_h = 0, sse_r = 0;
  ForwardTape scratch;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& group = groups[gi];
    ForwardTape& tp = keep ? tapes[gi] : scratch;
    forward_batch(model, group, teacher, tp);
    Mat& e = errors[gi];
    e.resize(T, static_cast<Eigen::Index>(group.size()));
    for (std::size_t j = 0; j < group.size(); ++j) {
      const auto target = detail::decoder_targets(model, *group[j]);
      const auto col = static_cast<Eigen::Index>(j);
      for (int k = 0; k < T; ++k) e(k, col) = tp.outputs(k, col) - target[static_cast<std::size_t>(k)];
    }
    sse_r += e.topRows(R).squaredNorm();
    sse_h += e.bottomRows(T - R).squaredNorm();
  }
  const double nh = static_cast<double>(samples.size() * model.config.n);
  const double nr = static_cast<double>(samples.size()) * R;
  BatchLoss out;
  out.rmse_horizon = std::sqrt(sse_h / nh);
  out.rmse_recon = R ? std::sqrt(sse_r / nr) : 0.0;
  const double reg = cfg.lambda * model.theta.squaredNorm();
  out.loss = (kind == LossKind::point ? out.rmse_horizon
                                      : cfg.alpha1 * out.rmse_horizon + cfg.alpha2 * out.rmse_recon) + reg;
  if (!grad) return out;

  const double wh = kind == LossKind::point ? 1.0 : cfg.alpha1;
  const double wr = kind == LossKind::point ? 0.0 : cfg.alpha2;
  const double ch = out.rmse_horizon > 0 ? wh / (nh * out.rmse_horizon) : 0.0;
  const double cr = out.rmse_recon > 0 ? wr / (nr * out.rmse_recon) : 0.0;
  *grad = 2 * cfg.lambda * model.theta;
  Mat d;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    d = errors[gi];
    d.topRows(R) *= cr;
    d.bottomRows(T - R) *= ch;
    if (keep) {
      backward(model, tapes[gi], d, *grad);
    } else {
      forward_batch(model, groups[gi], true, scratch);
      backward(model, scratch, d, *grad);
    }
  }
  return out;
}

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

// Central differences on every parameter against the analytic gradient.
inline GradCheckReport grad_check(const Seq2SeqKnowledgeModel& model, std::span<const Sample> samples,
                                  const LossConfig& cfg, double fd_epsilon = 1e-5) {
  Vec analytic;
  batch_loss(model, samples, cfg, true, &analytic);
  Seq2SeqKnowledgeModel probe = model;
  GradCheckReport rep;
  for (Eigen::Index i = 0; i < probe.theta.size(); ++i) {
    const double keep = probe.theta[i];
    probe.theta[i] = keep + fd_epsilon;
    const double up = batch_loss(probe, samples, cfg).loss;
    probe.theta[i] = keep - fd_epsilon;
    const double down = batch_loss(probe, samples, cfg).loss;
    probe.theta[i] = keep;
    const double fd = (up - down) / (2 * fd_epsilon);
    const double rel = std::abs(analytic[i] - fd) / std::max(1e-8, std::abs(analytic[i]) + std::abs(fd));
    if (i == 0 || rel > rep.max_rel_error) rep = {rel, static_cast<std::size_t>(i), analytic[i], fd};
  }
  return rep;
}

struct TrainConfig {
  int epochs = 500;
  std::size_t batch_size = 0;  // 0 = full batch
  double clip_norm = 0;        // 0 = no gradient clipping
  LossConfig loss;
  OptimizerConfig optimizer;

  void validate() const {
    if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (!(clip_norm >= 0)) throw ValidationError("train: clip_norm must be >= 0");
    loss.validate();
    optimizer.validate();
  }
};

struct TrainHistory {
  std::vector<double> train_loss;  // teacher-forced, before that epoch's updates
  std::vector<double> test_loss;   // autoregressive, after the epoch; empty without a test set
  double seconds = 0;
};

inline TrainHistory train(Seq2SeqKnowledgeModel& model, const std::vector<Sample>& train_set, const TrainConfig& cfg,
                          const std::vector<Sample>* test_set = nullptr) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t N = train_set.size();
  const std::size_t B = cfg.batch_size == 0 ? N : std::min(cfg.batch_size, N);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.optimizer.seed);
  OptimizerState state;
  TrainHistory hist;
  Vec grad;
  std::vector<Sample> batch;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (B < N) {
      for (std::size_t i = N - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    }
    double weighted = 0;
    for (std::size_t start = 0; start < N; start += B) {
      const std::size_t stop = std::min(N, start + B);
      std::span<const Sample> view;
      if (B == N) {
        view = train_set;
      } else {
        batch.clear();
        for (std::size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);
        view = batch;
      }
      const auto bl = batch_loss(model, view, cfg.loss, true, &grad);
      if (!std::isfinite(bl.loss) || !grad.allFinite()) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch), epoch);
      }
      if (cfg.clip_norm > 0) {
        const double norm = grad.norm();
        if (norm > cfg.clip_norm) grad *= cfg.clip_norm / norm;
      }
      optimizer_step(cfg.optimizer, model.theta, grad, state);
      weighted += bl.loss * static_cast<double>(stop - start);
    }
    hist.train_loss.push_back(weighted / static_cast<double>(N));
    if (test_set && !test_set->empty()) {
      const double tl = batch_loss(model, *test_set, cfg.loss, false).loss;
      if (!std::isfinite(tl)) throw DivergenceError("test loss non-finite at epoch " + std::to_string(epoch), epoch);
      hist.test_loss.push_back(tl);
    }
  }
  hist.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return hist;
}

// Autoregressive n-step forecast in m/s.
inline std::vector<double> predict(const Seq2SeqKnowledgeModel& model, const Sample& sample) {
  return forward(model, sample, false).horizon;
}

// predict() over many samples, batched by encoder-1 layout; results keep the
// input order.
inline std::vector<std::vector<double>> predict_all(const Seq2SeqKnowledgeModel& model,
                                                    std::span<const Sample> samples) {
  std::vector<std::vector<double>> out(samples.size());
  ForwardTape tp;
  const int R = static_cast<int>(model.config.recon_len);
  for (const auto& group : detail::layout_groups(samples)) {
    forward_batch(model, group, false, tp);
    for (std::size_t j = 0; j < group.size(); ++j) {
      auto& p = out[static_cast<std::size_t>(group[j] - samples.data())];
      for (Eigen::Index k = R; k < tp.outputs.rows(); ++k) {
        p.push_back(model.denormalize(tp.outputs(k, static_cast<Eigen::Index>(j))));
      }
    }
  }
  return out;
}

}  // namespace corrcast::nn
