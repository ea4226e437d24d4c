#pragma once

// Recurrent cells over a flat parameter buffer.
//
// Every cell stores its parameters as three stacked blocks
//   W : (G*H) x I   input weights, gates stacked row-wise
//   U : (G*H) x H   recurrent weights
//   b : (G*H)       biases
// with gate order  rnn_tanh: [h]   lstm: [a, i, f, o]   gru: [z, r, n].
//
//   rnn_tanh  h' = tanh(W x + U h + b)
//   lstm      a = tanh(.), i,f,o = sigmoid(.), c' = i*a + f*c, h' = o*tanh(c')
//   gru       z,r = sigmoid(.), n = tanh(W_n x + U_n (r*h) + b_n),
//             h' = (1 - z)*h + z*n

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "corrcast/error.hpp"
#include "corrcast/random.hpp"

namespace corrcast::nn {

enum class CellKind { rnn_tanh, lstm, gru };

inline const char* to_string(CellKind k) {
  switch (k) {
    case CellKind::rnn_tanh: return "rnn_tanh";
    case CellKind::lstm: return "lstm";
    case CellKind::gru: return "gru";
  }
  return "?";
}

inline CellKind cell_kind_from_string(const std::string& s) {
  if (s == "rnn_tanh" || s == "rnn") return CellKind::rnn_tanh;
  if (s == "lstm") return CellKind::lstm;
  if (s == "gru") return CellKind::gru;
  throw ValidationError("unknown cell kind '" + s + "'");
}

struct CellShape {
  CellKind kind = CellKind::lstm;
  int input_dim = 1;
  int hidden_dim = 8;

  int gates() const {
    switch (kind) {
      case CellKind::rnn_tanh: return 1;
      case CellKind::lstm: return 4;
      case CellKind::gru: return 3;
    }
    return 0;
  }
  std::size_t param_count() const {
    const std::size_t gh = static_cast<std::size_t>(gates() * hidden_dim);
    return gh * static_cast<std::size_t>(input_dim + hidden_dim + 1);
  }
  bool has_cell_state() const { return kind == CellKind::lstm; }
};

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using ConstMatMap = Eigen::Map<const Mat>;
using ConstVecMap = Eigen::Map<const Vec>;
using MatMap = Eigen::Map<Mat>;
using VecMap = Eigen::Map<Vec>;

template <typename Scalar>
struct BasicCellView {
  CellShape shape;
  Scalar* data = nullptr;

  int gh() const { return shape.gates() * shape.hidden_dim; }
  auto W() const { return Eigen::Map<std::conditional_t<std::is_const_v<Scalar>, const Mat, Mat>>(data, gh(), shape.input_dim); }
  auto U() const {
    return Eigen::Map<std::conditional_t<std::is_const_v<Scalar>, const Mat, Mat>>(data + gh() * shape.input_dim, gh(),
                                                                                   shape.hidden_dim);
  }
  auto b() const {
    return Eigen::Map<std::conditional_t<std::is_const_v<Scalar>, const Vec, Vec>>(
        data + gh() * (shape.input_dim + shape.hidden_dim), gh());
  }
};

using CellView = BasicCellView<const double>;
using CellGradView = BasicCellView<double>;

// Standalone, owning parameter set for one cell.
struct CellParams {
  CellShape shape;
  Vec theta;

  static CellParams zeros(CellShape s) { return {s, Vec::Zero(static_cast<Eigen::Index>(s.param_count()))}; }

  static CellParams uniform(CellShape s, Rng& rng) {
    auto p = zeros(s);
    const double a = 1.0 / std::sqrt(static_cast<double>(s.hidden_dim));
    for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] = rng.uniform(-a, a);
    return p;
  }

  CellView view() const { return {shape, theta.data()}; }
  CellGradView mutable_view() { return {shape, theta.data()}; }
};

struct RecurrentState {
  Vec h;
  Vec c;  // lstm only; empty otherwise

  static RecurrentState zeros(const CellShape& s) {
    return {Vec::Zero(s.hidden_dim), s.has_cell_state() ? Vec::Zero(s.hidden_dim) : Vec()};
  }
};

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Elementwise activations built on Eigen's vectorized exp (its tanh is scalar
// for doubles). tanh(v) = 1 - 2 / (1 + e^{2v}) keeps ~1e-16 absolute error and
// maps 0 to exactly 0.
template <typename Expr>
auto sigmoid_of(const Expr& v) {
  return (1.0 + (-v.array()).exp()).inverse();
}

template <typename Expr>
auto tanh_of(const Expr& v) {
  return 1.0 - 2.0 * ((2.0 * v.array()).exp() + 1.0).inverse();
}

// Activations of one unrolled sequence, or of `batch` equally long sequences
// run side by side. Step t occupies columns [t*batch, (t+1)*batch).
struct SequenceTape {
  CellShape shape;
  int steps = 0;
  int batch = 1;
  Mat x;      // I x (T*B)
  Mat h;      // H x ((T+1)*B), block 0 is the initial state
  Mat c;      // H x ((T+1)*B), lstm only
  Mat gates;  // (G*H) x (T*B), post-activation
  Mat scratch;

  void reset(const CellShape& s, int t, int b = 1) {
    shape = s;
    steps = t;
    batch = b;
    x.resize(s.input_dim, t * b);
    h.resize(s.hidden_dim, (t + 1) * b);
    if (s.has_cell_state()) c.resize(s.hidden_dim, (t + 1) * b);
    gates.resize(s.gates() * s.hidden_dim, t * b);
    scratch.resize(s.gates() * s.hidden_dim, b);
  }

  auto xs(int t) { return x.middleCols(t * batch, batch); }
  auto hs(int t) { return h.middleCols(t * batch, batch); }
  auto cs(int t) { return c.middleCols(t * batch, batch); }
  auto gs(int t) { return gates.middleCols(t * batch, batch); }
  auto xs(int t) const { return x.middleCols(t * batch, batch); }
  auto hs(int t) const { return h.middleCols(t * batch, batch); }
  auto cs(int t) const { return c.middleCols(t * batch, batch); }
  auto gs(int t) const { return gates.middleCols(t * batch, batch); }

  void set_initial(const RecurrentState& st) {
    h.col(0) = st.h;
    if (shape.has_cell_state()) c.col(0) = st.c.size() ? st.c : Vec::Zero(shape.hidden_dim);
  }

  // h0, c0: H x B (c0 may be empty).
  void set_initial(const Mat& h0, const Mat& c0) {
    hs(0) = h0;
    if (shape.has_cell_state()) {
      if (c0.size()) {
        cs(0) = c0;
      } else {
        cs(0).setZero();
      }
    }
  }

  RecurrentState state(int t) const {
    return {h.col(t), shape.has_cell_state() ? Vec(c.col(t)) : Vec()};
  }
};

inline void check_shape(const CellView& cell, const SequenceTape& tape) {
  if (cell.shape.kind != tape.shape.kind || cell.shape.input_dim != tape.shape.input_dim ||
      cell.shape.hidden_dim != tape.shape.hidden_dim) {
    throw ValidationError("cell/tape shape mismatch");
  }
}

// Advances the tape from step t to t+1 using input block t.
inline void run_step(const CellView& cell, SequenceTape& tape, int t) {
  const int H = cell.shape.hidden_dim;
  auto& pre = tape.scratch;
  const auto W = cell.W();
  const auto U = cell.U();
  const auto b = cell.b();
  auto g = tape.gs(t);
  switch (cell.shape.kind) {
    case CellKind::rnn_tanh: {
      pre.noalias() = W * tape.xs(t);
      pre.noalias() += U * tape.hs(t);
      pre.colwise() += b;
      g = tanh_of(pre);
      tape.hs(t + 1) = g;
      break;
    }
    case CellKind::lstm: {
      pre.noalias() = W * tape.xs(t);
      pre.noalias() += U * tape.hs(t);
      pre.colwise() += b;
      g.topRows(H) = tanh_of(pre.topRows(H));
      g.bottomRows(3 * H) = sigmoid_of(pre.bottomRows(3 * H));
      const auto a = g.middleRows(0, H).array();
      const auto i = g.middleRows(H, H).array();
      const auto f = g.middleRows(2 * H, H).array();
      const auto o = g.middleRows(3 * H, H).array();
      tape.cs(t + 1) = (i * a + f * tape.cs(t).array()).matrix();
      tape.hs(t + 1) = (o * tanh_of(tape.cs(t + 1))).matrix();
      break;
    }
    case CellKind::gru: {
      pre.noalias() = W * tape.xs(t);
      pre.topRows(2 * H).noalias() += U.topRows(2 * H) * tape.hs(t);
      pre.colwise() += b;
      g.topRows(2 * H) = sigmoid_of(pre.topRows(2 * H));
      const Mat rh = (g.middleRows(H, H).array() * tape.hs(t).array()).matrix();
      pre.bottomRows(H).noalias() += U.bottomRows(H) * rh;
      g.bottomRows(H) = tanh_of(pre.bottomRows(H));
      const auto z = g.topRows(H).array();
      tape.hs(t + 1) = ((1.0 - z) * tape.hs(t).array() + z * g.bottomRows(H).array()).matrix();
      break;
    }
  }
}

// Runs `inputs` (I x T) from `init` and records everything on `tape`.
inline void run_sequence(const CellView& cell, const Eigen::Ref<const Mat>& inputs, const RecurrentState& init,
                         SequenceTape& tape) {
  if (inputs.rows() != cell.shape.input_dim) throw ValidationError("sequence input dimension mismatch");
  if (init.h.size() != cell.shape.hidden_dim) throw ValidationError("initial state dimension mismatch");
  tape.reset(cell.shape, static_cast<int>(inputs.cols()));
  tape.x = inputs;
  tape.set_initial(init);
  for (int t = 0; t < tape.steps; ++t) run_step(cell, tape, t);
}

// Batched form: `inputs` is I x (T*B) in step-major blocks, h0/c0 are H x B.
inline void run_batch(const CellView& cell, const Eigen::Ref<const Mat>& inputs, int batch, const Mat& h0,
                      const Mat& c0, SequenceTape& tape) {
  if (batch < 1 || inputs.cols() % batch != 0) throw ValidationError("batch input is not a whole number of steps");
  if (inputs.rows() != cell.shape.input_dim) throw ValidationError("sequence input dimension mismatch");
  if (h0.rows() != cell.shape.hidden_dim || h0.cols() != batch) {
    throw ValidationError("initial state dimension mismatch");
  }
  tape.reset(cell.shape, static_cast<int>(inputs.cols() / batch), batch);
  tape.x = inputs;
  tape.set_initial(h0, c0);
  for (int t = 0; t < tape.steps; ++t) run_step(cell, tape, t);
}

struct SequenceGrads {
  Mat dx;   // I x (T*B)
  Mat dh0;  // gradient w.r.t. the initial hidden state, H x B
  Mat dc0;  // lstm only
};

// Backpropagation through time. `dh_out` (H x (T*B), may be empty) is the
// loss gradient w.r.t. each emitted h_{t+1}; dh_final/dc_final (H x B, may be
// empty) enter at the last state. Parameter gradients are added into `grad`.
inline SequenceGrads backward_sequence(const CellView& cell, const SequenceTape& tape,
                                       const Eigen::Ref<const Mat>& dh_out, const Eigen::Ref<const Mat>& dh_final,
                                       const Eigen::Ref<const Mat>& dc_final, const CellGradView& grad) {
  check_shape(cell, tape);
  const int H = cell.shape.hidden_dim;
  const int T = tape.steps;
  const int B = tape.batch;
  const int GH = cell.gh();
  const auto W = cell.W();
  const auto U = cell.U();
  const bool lstm = cell.shape.kind == CellKind::lstm;
  const bool gru = cell.shape.kind == CellKind::gru;
  if (dh_out.size() && (dh_out.rows() != H || dh_out.cols() != T * B)) {
    throw ValidationError("backward: output gradient shape");
  }

  Mat dpre(GH, T * B);
  Mat rh;  // gru: r * h_prev per step
  if (gru) rh.resize(H, T * B);
  Mat dh = dh_final.size() ? Mat(dh_final) : Mat::Zero(H, B);
  Mat dc = lstm ? (dc_final.size() ? Mat(dc_final) : Mat::Zero(H, B)) : Mat();
  Mat dh_prev(H, B), tc, dct, drh;

  for (int t = T - 1; t >= 0; --t) {
    if (dh_out.size()) dh += dh_out.middleCols(t * B, B);
    const auto g = tape.gs(t);
    auto dp = dpre.middleCols(t * B, B);
    switch (cell.shape.kind) {
      case CellKind::rnn_tanh: {
        const auto hn = g.array();
        dp = (dh.array() * (1.0 - hn * hn)).matrix();
        dh_prev.noalias() = U.transpose() * dp;
        break;
      }
      case CellKind::lstm: {
        const auto a = g.middleRows(0, H).array();
        const auto i = g.middleRows(H, H).array();
        const auto f = g.middleRows(2 * H, H).array();
        const auto o = g.middleRows(3 * H, H).array();
        tc = tanh_of(tape.cs(t + 1)).matrix();
        dct = (dc.array() + dh.array() * o * (1.0 - tc.array().square())).matrix();
        dp.middleRows(0, H) = (dct.array() * i * (1.0 - a * a)).matrix();
        dp.middleRows(H, H) = (dct.array() * a * i * (1.0 - i)).matrix();
        dp.middleRows(2 * H, H) = (dct.array() * tape.cs(t).array() * f * (1.0 - f)).matrix();
        dp.middleRows(3 * H, H) = (dh.array() * tc.array() * o * (1.0 - o)).matrix();
        dc = (dct.array() * f).matrix();
        dh_prev.noalias() = U.transpose() * dp;
        break;
      }
      case CellKind::gru: {
        const auto z = g.middleRows(0, H).array();
        const auto r = g.middleRows(H, H).array();
        const auto n = g.middleRows(2 * H, H).array();
        const auto hp = tape.hs(t).array();
        rh.middleCols(t * B, B) = (r * hp).matrix();
        dp.middleRows(2 * H, H) = (dh.array() * z * (1.0 - n * n)).matrix();
        dp.middleRows(0, H) = (dh.array() * (n - hp) * z * (1.0 - z)).matrix();
        drh.noalias() = U.bottomRows(H).transpose() * dp.middleRows(2 * H, H);
        dp.middleRows(H, H) = (drh.array() * hp * r * (1.0 - r)).matrix();
        dh_prev = (dh.array() * (1.0 - z) + drh.array() * r).matrix();
        dh_prev.noalias() += U.topRows(2 * H).transpose() * dp.topRows(2 * H);
        break;
      }
    }
    dh.swap(dh_prev);
  }

  auto gW = grad.W();
  auto gU = grad.U();
  auto gb = grad.b();
  gW.noalias() += dpre * tape.x.transpose();
  if (gru) {
    gU.topRows(2 * H).noalias() += dpre.topRows(2 * H) * tape.h.leftCols(T * B).transpose();
    gU.bottomRows(H).noalias() += dpre.bottomRows(H) * rh.transpose();
  } else {
    gU.noalias() += dpre * tape.h.leftCols(T * B).transpose();
  }
  gb += dpre.rowwise().sum();

  SequenceGrads out;
  out.dx.noalias() = W.transpose() * dpre;
  out.dh0 = std::move(dh);
  if (lstm) out.dc0 = std::move(dc);
  return out;
}

// ---------------------------------------------------------------------------
// Single-step API.

inline RecurrentState cell_step(const CellView& cell, const Vec& x, const RecurrentState& prev) {
  if (x.size() != cell.shape.input_dim || prev.h.size() != cell.shape.hidden_dim ||
      (cell.shape.has_cell_state() && prev.c.size() != cell.shape.hidden_dim)) {
    throw ValidationError(std::string(to_string(cell.shape.kind)) + " step: dimension mismatch");
  }
  SequenceTape tape;
  tape.reset(cell.shape, 1);
  tape.x.col(0) = x;
  tape.set_initial(prev);
  run_step(cell, tape, 0);
  return tape.state(1);
}

// Affine scalar read-out y = w . h + b.
struct OutputHead {
  Vec w;
  double b = 0;
  double operator()(const Vec& h) const { return w.dot(h) + b; }
};

inline std::pair<Vec, double> rnn_step(const CellView& cell, const OutputHead& head, const Vec& x, const Vec& h_prev) {
  if (cell.shape.kind != CellKind::rnn_tanh) throw ValidationError("rnn_step: cell is not rnn_tanh");
  auto st = cell_step(cell, x, {h_prev, Vec()});
  const double y = head(st.h);
  return {std::move(st.h), y};
}

inline RecurrentState lstm_step(const CellView& cell, const Vec& x, const RecurrentState& prev) {
  if (cell.shape.kind != CellKind::lstm) throw ValidationError("lstm_step: cell is not lstm");
  return cell_step(cell, x, prev);
}

inline Vec gru_step(const CellView& cell, const Vec& x, const Vec& h_prev) {
  if (cell.shape.kind != CellKind::gru) throw ValidationError("gru_step: cell is not gru");
  return cell_step(cell, x, {h_prev, Vec()}).h;
}

// Runs `steps` decoder steps from `init`. Step 0 consumes `first_input`;
// step k > 0 consumes teacher[k-1] when a teacher sequence is given and the
// previous step's output otherwise.
inline std::vector<double> decode(const CellView& cell, const RecurrentState& init, int steps, const OutputHead& head,
                                  double first_input = 0.0, const std::vector<double>* teacher = nullptr) {
  if (steps < 1) throw ValidationError("decode: need at least one step");
  if (cell.shape.input_dim != 1) throw ValidationError("decode: scalar-input cell required");
  if (teacher && teacher->size() + 1 < static_cast<std::size_t>(steps)) {
    throw ValidationError("decode: teacher sequence too short");
  }
  SequenceTape tape;
  tape.reset(cell.shape, steps);
  tape.set_initial(init);
  std::vector<double> out;
  for (int k = 0; k < steps; ++k) {
    tape.x(0, k) = k == 0 ? first_input : teacher ? (*teacher)[static_cast<std::size_t>(k - 1)] : out.back();
    run_step(cell, tape, k);
    out.push_back(head(tape.h.col(k + 1)));
  }
  return out;
}

// Left fold of the step function from the zero state.
inline std::pair<RecurrentState, std::vector<RecurrentState>> encode(const CellView& cell,
                                                                     const std::vector<Vec>& inputs) {
  if (inputs.empty()) throw ValidationError("encode: empty sequence");
  Mat x(cell.shape.input_dim, static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (inputs[t].size() != cell.shape.input_dim) throw ValidationError("encode: input dimension mismatch");
    x.col(static_cast<Eigen::Index>(t)) = inputs[t];
  }
  SequenceTape tape;
  run_sequence(cell, x, RecurrentState::zeros(cell.shape), tape);
  std::vector<RecurrentState> states;
  for (int t = 1; t <= tape.steps; ++t) states.push_back(tape.state(t));
  return {states.back(), std::move(states)};
}

}  // namespace corrcast::nn
