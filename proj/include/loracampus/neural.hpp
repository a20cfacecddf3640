#pragma once

// Small dense-network kernel: stacked LSTM with a linear readout for
// forecasting, a ReLU MLP with softmax output for counting, exact gradients
// (backpropagation through time for the LSTM) and RMSprop/Adam.
//
// Everything is float64 and single-threaded, so a fixed seed gives
// bit-identical results.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "loracampus/error.hpp"
#include "loracampus/rng.hpp"

namespace loracampus::nn {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    }
    return t;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace kernel {

// out(B x N) = a(B x K) * wt(K x N) + bias, with wt the transposed weights.
inline void affine(const Matrix& a, const Matrix& wt, const std::vector<double>& bias, Matrix& out) {
  const auto n = wt.cols();
  out = Matrix(a.rows(), n);
  for (std::size_t b = 0; b < a.rows(); ++b) {
    double* o = out.row(b);
    std::copy(bias.begin(), bias.end(), o);
    const double* ar = a.row(b);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double av = ar[k];
      if (av == 0.0) continue;
      const double* w = wt.row(k);
      for (std::size_t j = 0; j < n; ++j) o[j] += av * w[j];
    }
  }
}

// da(B x K) += dz(B x N) * w(N x K)
inline void backprop_input(const Matrix& dz, const Matrix& w, Matrix& da) {
  const auto k = w.cols();
  for (std::size_t b = 0; b < dz.rows(); ++b) {
    double* d = da.row(b);
    const double* g = dz.row(b);
    for (std::size_t n = 0; n < dz.cols(); ++n) {
      const double gv = g[n];
      if (gv == 0.0) continue;
      const double* wr = w.row(n);
      for (std::size_t j = 0; j < k; ++j) d[j] += gv * wr[j];
    }
  }
}

// dw(N x K) += dz^T(N x B) * a(B x K); db += column sums of dz
inline void accumulate_weights(const Matrix& dz, const Matrix& a, Matrix& dw, std::vector<double>& db) {
  const auto k = a.cols();
  for (std::size_t b = 0; b < dz.rows(); ++b) {
    const double* g = dz.row(b);
    const double* ar = a.row(b);
    for (std::size_t n = 0; n < dz.cols(); ++n) {
      const double gv = g[n];
      db[n] += gv;
      if (gv == 0.0) continue;
      double* w = dw.row(n);
      for (std::size_t j = 0; j < k; ++j) w[j] += gv * ar[j];
    }
  }
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace kernel

// ---------------------------------------------------------------- layers

struct Dense {
  Matrix w;  // out x in
  std::vector<double> b;

  std::size_t in() const { return w.cols(); }
  std::size_t out() const { return w.rows(); }
};

/// One LSTM layer. `w` stacks the pre-activation weights of the input,
/// forget and output gates and the candidate memory, in that order, over the
/// concatenation [x_t, h_{t-1}].
struct LstmLayer {
  std::size_t input = 0;
  std::size_t hidden = 0;
  Matrix w;  // 4H x (I + H)
  std::vector<double> b;  // 4H
};

struct LstmState {
  std::vector<double> h;
  std::vector<double> c;
};

struct LstmModel {
  std::vector<LstmLayer> layers;
  Dense head;  // final top-layer h -> forecast

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().input; }
  std::size_t output_dim() const { return head.out(); }
};

struct MlpNet {
  std::vector<Dense> layers;  // ReLU between layers, softmax after the last

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out(); }
};

// ---------------------------------------------------------------- init

namespace detail {

inline Dense init_dense(std::size_t in, std::size_t out, Rng& rng) {
  Dense d{Matrix(out, in), std::vector<double>(out, 0.0)};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : d.w.data()) v = rng.uniform(-bound, bound);
  return d;
}

}  // namespace detail

/// Stacked LSTM: `hidden` lists the layer widths bottom-up. Weights are
/// uniform in +-1/sqrt(fan_in); the forget-gate bias starts at 1.
inline LstmModel make_lstm(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t output,
                           std::uint64_t seed) {
  if (input == 0 || output == 0 || hidden.empty()) throw Error(Errc::DimMismatch, "empty LSTM dimensions");
  Rng rng(seed);
  LstmModel m;
  std::size_t in = input;
  for (auto h : hidden) {
    if (h == 0) throw Error(Errc::DimMismatch, "zero-width LSTM layer");
    LstmLayer l{in, h, Matrix(4 * h, in + h), std::vector<double>(4 * h, 0.0)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in + h));
    for (auto& v : l.w.data()) v = rng.uniform(-bound, bound);
    std::fill(l.b.begin() + static_cast<std::ptrdiff_t>(h), l.b.begin() + static_cast<std::ptrdiff_t>(2 * h), 1.0);
    m.layers.push_back(std::move(l));
    in = h;
  }
  m.head = detail::init_dense(in, output, rng);
  return m;
}

inline MlpNet make_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw Error(Errc::DimMismatch, "an MLP needs input and output dims");
  Rng rng(seed);
  MlpNet net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] == 0 || dims[i + 1] == 0) throw Error(Errc::DimMismatch, "zero-width MLP layer");
    net.layers.push_back(detail::init_dense(dims[i], dims[i + 1], rng));
  }
  return net;
}

// ---------------------------------------------------------------- parameter views

inline std::vector<std::span<double>> parameters(LstmModel& m) {
  std::vector<std::span<double>> out;
  for (auto& l : m.layers) {
    out.emplace_back(l.w.data());
    out.emplace_back(l.b);
  }
  out.emplace_back(m.head.w.data());
  out.emplace_back(m.head.b);
  return out;
}

inline std::vector<std::span<double>> parameters(MlpNet& net) {
  std::vector<std::span<double>> out;
  for (auto& d : net.layers) {
    out.emplace_back(d.w.data());
    out.emplace_back(d.b);
  }
  return out;
}

// A zero-filled model of the same shape, used to hold gradients.
template <typename Model>
Model zeros_like(const Model& m) {
  Model z = m;
  for (auto s : parameters(z)) std::fill(s.begin(), s.end(), 0.0);
  return z;
}

// ---------------------------------------------------------------- LSTM forward

namespace detail {

struct LstmStepCache {
  Matrix a;                 // [x, h_prev], B x (I + H)
  Matrix i, f, o, g;        // gate activations, B x H
  Matrix c_prev, c, tanh_c;  // B x H
};

// One batched time step; fills `cache` when given.
inline void lstm_step_batch(const LstmLayer& l, const Matrix& wt, const Matrix& x, const Matrix& h_prev,
                            const Matrix& c_prev, Matrix& h, Matrix& c, LstmStepCache* cache) {
  const auto bsz = x.rows();
  const auto hdim = l.hidden;
  Matrix a(bsz, l.input + hdim);
  for (std::size_t b = 0; b < bsz; ++b) {
    std::copy(x.row(b), x.row(b) + l.input, a.row(b));
    std::copy(h_prev.row(b), h_prev.row(b) + hdim, a.row(b) + l.input);
  }
  Matrix z;
  kernel::affine(a, wt, l.b, z);
  h = Matrix(bsz, hdim);
  c = Matrix(bsz, hdim);
  Matrix gi(bsz, hdim), gf(bsz, hdim), go(bsz, hdim), gg(bsz, hdim), tc(bsz, hdim);
  for (std::size_t b = 0; b < bsz; ++b) {
    const double* zr = z.row(b);
    for (std::size_t j = 0; j < hdim; ++j) {
      const double iv = kernel::sigmoid(zr[j]);
      const double fv = kernel::sigmoid(zr[hdim + j]);
      const double ov = kernel::sigmoid(zr[2 * hdim + j]);
      const double gv = std::tanh(zr[3 * hdim + j]);
      const double cv = fv * c_prev(b, j) + iv * gv;
      const double t = std::tanh(cv);
      c(b, j) = cv;
      h(b, j) = ov * t;
      gi(b, j) = iv;
      gf(b, j) = fv;
      go(b, j) = ov;
      gg(b, j) = gv;
      tc(b, j) = t;
    }
  }
  if (cache) {
    cache->a = std::move(a);
    cache->i = std::move(gi);
    cache->f = std::move(gf);
    cache->o = std::move(go);
    cache->g = std::move(gg);
    cache->c_prev = c_prev;
    cache->c = c;
    cache->tanh_c = std::move(tc);
  }
}

}  // namespace detail

/// One cell update: gates from W [x; h_prev] + b, then
/// c = f*c_prev + i*g and h = o*tanh(c).
inline LstmState lstm_step(std::span<const double> x, const LstmState& state, const LstmLayer& layer) {
  if (x.size() != layer.input || state.h.size() != layer.hidden || state.c.size() != layer.hidden) {
    throw Error(Errc::DimMismatch, "lstm_step: input/state sizes do not match the layer");
  }
  Matrix xm(1, layer.input), hm(1, layer.hidden), cm(1, layer.hidden);
  std::copy(x.begin(), x.end(), xm.row(0));
  std::copy(state.h.begin(), state.h.end(), hm.row(0));
  std::copy(state.c.begin(), state.c.end(), cm.row(0));
  Matrix h, c;
  detail::lstm_step_batch(layer, layer.w.transposed(), xm, hm, cm, h, c, nullptr);
  return {h.data(), c.data()};
}

/// A batch of equal-length sequences: steps[t] is (batch x input).
struct SequenceBatch {
  std::vector<Matrix> steps;
  Matrix targets;  // batch x output

  std::size_t size() const { return targets.rows(); }
};

namespace detail {

struct LstmForwardCache {
  std::vector<std::vector<LstmStepCache>> steps;  // [layer][t]
  Matrix top;                                     // final top-layer h, B x H
  Matrix out;                                     // B x output
};

inline void check_lstm(const LstmModel& m) {
  if (m.layers.empty()) throw Error(Errc::DimMismatch, "LSTM without layers");
  std::size_t in = m.layers.front().input;
  for (const auto& l : m.layers) {
    if (l.input != in || l.w.rows() != 4 * l.hidden || l.w.cols() != l.input + l.hidden || l.b.size() != 4 * l.hidden) {
      throw Error(Errc::DimMismatch, "LSTM layer dims do not chain");
    }
    in = l.hidden;
  }
  if (m.head.in() != in || m.head.b.size() != m.head.out()) throw Error(Errc::DimMismatch, "readout dims do not match");
}

inline Matrix lstm_forward_batch(const LstmModel& m, const std::vector<Matrix>& steps, LstmForwardCache* cache) {
  check_lstm(m);
  if (steps.empty()) throw Error(Errc::EmptySequence, "empty input sequence");
  const auto bsz = steps.front().rows();
  for (const auto& s : steps) {
    if (s.rows() != bsz || s.cols() != m.input_dim()) throw Error(Errc::DimMismatch, "input step has the wrong shape");
  }
  if (cache) cache->steps.assign(m.layers.size(), {});
  std::vector<Matrix> seq = steps;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& l = m.layers[li];
    const auto wt = l.w.transposed();
    Matrix h(bsz, l.hidden), c(bsz, l.hidden);
    if (cache) cache->steps[li].resize(seq.size());
    for (std::size_t t = 0; t < seq.size(); ++t) {
      Matrix hn, cn;
      lstm_step_batch(l, wt, seq[t], h, c, hn, cn, cache ? &cache->steps[li][t] : nullptr);
      h = std::move(hn);
      c = std::move(cn);
      seq[t] = h;
    }
  }
  Matrix out;
  kernel::affine(seq.back(), m.head.w.transposed(), m.head.b, out);
  if (cache) {
    cache->top = seq.back();
    cache->out = out;
  }
  return out;
}

}  // namespace detail

/// Runs the stack over one sequence from zero states and maps the last
/// top-layer h through the readout.
inline std::vector<double> lstm_forward(const std::vector<std::vector<double>>& sequence, const LstmModel& m) {
  if (sequence.empty()) throw Error(Errc::EmptySequence, "empty input sequence");
  std::vector<Matrix> steps;
  for (const auto& x : sequence) {
    if (x.size() != m.input_dim()) throw Error(Errc::DimMismatch, "input vector has the wrong size");
    Matrix s(1, x.size());
    std::copy(x.begin(), x.end(), s.row(0));
    steps.push_back(std::move(s));
  }
  return detail::lstm_forward_batch(m, steps, nullptr).data();
}

// Predictions for every sequence of a batch, batch x output.
inline Matrix lstm_predict(const LstmModel& m, const std::vector<Matrix>& steps) {
  return detail::lstm_forward_batch(m, steps, nullptr);
}

// ---------------------------------------------------------------- MLP forward

/// In-place numerically stable softmax (max subtracted first).
inline void softmax_inplace(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (auto& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : z) v /= sum;
}

inline std::vector<double> softmax(std::vector<double> z) {
  if (z.empty()) throw Error(Errc::DimMismatch, "softmax of an empty vector");
  softmax_inplace(z);
  return z;
}

namespace detail {

inline void check_mlp(const MlpNet& net) {
  if (net.layers.empty()) throw Error(Errc::DimMismatch, "MLP without layers");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& d = net.layers[i];
    if (d.b.size() != d.out() || (i > 0 && d.in() != net.layers[i - 1].out())) {
      throw Error(Errc::DimMismatch, "MLP layer dims do not chain");
    }
  }
}

// acts[0] = input, acts[i+1] = output of layer i (ReLU applied except last,
// which holds logits).
inline std::vector<Matrix> mlp_forward_batch(const MlpNet& net, const Matrix& x) {
  check_mlp(net);
  if (x.cols() != net.input_dim()) throw Error(Errc::DimMismatch, "input has the wrong width");
  std::vector<Matrix> acts{x};
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Matrix z;
    kernel::affine(acts.back(), net.layers[i].w.transposed(), net.layers[i].b, z);
    if (i + 1 < net.layers.size()) {
      for (auto& v : z.data()) v = std::max(v, 0.0);
    }
    acts.push_back(std::move(z));
  }
  return acts;
}

}  // namespace detail

inline Matrix mlp_logits(const MlpNet& net, const Matrix& x) { return detail::mlp_forward_batch(net, x).back(); }

// Class probabilities for every row of x.
inline Matrix mlp_predict(const MlpNet& net, const Matrix& x) {
  auto p = mlp_logits(net, x);
  for (std::size_t r = 0; r < p.rows(); ++r) softmax_inplace({p.row(r), p.cols()});
  return p;
}

inline std::vector<double> mlp_forward(std::span<const double> x, const MlpNet& net) {
  Matrix xm(1, x.size());
  std::copy(x.begin(), x.end(), xm.row(0));
  return mlp_predict(net, xm).data();
}

// ---------------------------------------------------------------- losses

enum class Loss { Mse, CrossEntropy };

template <typename Model>
struct LossAndGrad {
  double loss = 0.0;
  Model grad;
  Matrix output;  // predictions (LSTM) or logits (MLP) of the batch
};

/// Mean squared error over batch and outputs; LSTM forecasting only.
inline LossAndGrad<LstmModel> loss_and_gradients(const LstmModel& m, const SequenceBatch& batch, Loss loss = Loss::Mse) {
  if (loss != Loss::Mse) throw Error(Errc::InvalidConfig, "the LSTM forecaster is trained with MSE");
  if (batch.size() == 0) throw Error(Errc::EmptyInput, "empty batch");
  detail::LstmForwardCache cache;
  const auto out = detail::lstm_forward_batch(m, batch.steps, &cache);
  if (batch.targets.rows() != out.rows() || batch.targets.cols() != out.cols()) {
    throw Error(Errc::DimMismatch, "targets do not match the model output");
  }
  const auto bsz = out.rows();
  const double denom = static_cast<double>(out.rows() * out.cols());
  LossAndGrad<LstmModel> r{0.0, zeros_like(m), {}};
  Matrix dout(bsz, out.cols());
  for (std::size_t k = 0; k < out.data().size(); ++k) {
    const double e = out.data()[k] - batch.targets.data()[k];
    r.loss += e * e;
    dout.data()[k] = 2.0 * e / denom;
  }
  r.loss /= denom;
  if (!std::isfinite(r.loss)) throw Error(Errc::NonFiniteLoss, "MSE is not finite");
  r.output = out;

  kernel::accumulate_weights(dout, cache.top, r.grad.head.w, r.grad.head.b);
  Matrix dtop(bsz, m.head.in());
  kernel::backprop_input(dout, m.head.w, dtop);

  // dh_in[t]: gradient arriving at layer li's output h_t from above.
  const auto steps = batch.steps.size();
  std::vector<Matrix> dh_in(steps);
  for (std::size_t t = 0; t + 1 < steps; ++t) dh_in[t] = Matrix(bsz, m.layers.back().hidden);
  dh_in[steps - 1] = std::move(dtop);

  for (std::size_t li = m.layers.size(); li-- > 0;) {
    const auto& l = m.layers[li];
    auto& gl = r.grad.layers[li];
    const auto hdim = l.hidden;
    Matrix dh_next(bsz, hdim), dc_next(bsz, hdim);
    std::vector<Matrix> dx(steps);
    for (std::size_t t = steps; t-- > 0;) {
      const auto& cs = cache.steps[li][t];
      Matrix dz(bsz, 4 * hdim);
      for (std::size_t b = 0; b < bsz; ++b) {
        double* dzr = dz.row(b);
        for (std::size_t j = 0; j < hdim; ++j) {
          const double dh = dh_in[t](b, j) + dh_next(b, j);
          const double o = cs.o(b, j), tc = cs.tanh_c(b, j), i = cs.i(b, j), f = cs.f(b, j), g = cs.g(b, j);
          const double dc = dh * o * (1.0 - tc * tc) + dc_next(b, j);
          dzr[j] = dc * g * i * (1.0 - i);
          dzr[hdim + j] = dc * cs.c_prev(b, j) * f * (1.0 - f);
          dzr[2 * hdim + j] = dh * tc * o * (1.0 - o);
          dzr[3 * hdim + j] = dc * i * (1.0 - g * g);
          dc_next(b, j) = dc * f;
        }
      }
      kernel::accumulate_weights(dz, cs.a, gl.w, gl.b);
      Matrix da(bsz, l.input + hdim);
      kernel::backprop_input(dz, l.w, da);
      dx[t] = Matrix(bsz, l.input);
      for (std::size_t b = 0; b < bsz; ++b) {
        std::copy(da.row(b), da.row(b) + l.input, dx[t].row(b));
        std::copy(da.row(b) + l.input, da.row(b) + l.input + hdim, dh_next.row(b));
      }
    }
    dh_in = std::move(dx);
  }
  return r;
}

/// Mean cross-entropy of softmax(logits) against target distributions
/// (one-hot rows); MLP counting only.
inline LossAndGrad<MlpNet> loss_and_gradients(const MlpNet& net, const Matrix& x, const Matrix& targets,
                                               Loss loss = Loss::CrossEntropy) {
  if (loss != Loss::CrossEntropy) throw Error(Errc::InvalidConfig, "the MLP counter is trained with cross-entropy");
  if (x.rows() == 0) throw Error(Errc::EmptyInput, "empty batch");
  const auto acts = detail::mlp_forward_batch(net, x);
  const auto& logits = acts.back();
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
    throw Error(Errc::DimMismatch, "targets do not match the model output");
  }
  const auto bsz = x.rows();
  LossAndGrad<MlpNet> r{0.0, zeros_like(net), {}};
  Matrix delta(bsz, logits.cols());
  for (std::size_t b = 0; b < bsz; ++b) {
    const double* z = logits.row(b);
    const double mx = *std::max_element(z, z + logits.cols());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) sum += std::exp(z[c] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      const double y = targets(b, c);
      if (y != 0.0) r.loss -= y * (z[c] - lse);
      delta(b, c) = (std::exp(z[c] - lse) - y) / static_cast<double>(bsz);
    }
  }
  r.loss /= static_cast<double>(bsz);
  if (!std::isfinite(r.loss)) throw Error(Errc::NonFiniteLoss, "cross-entropy is not finite");
  r.output = logits;

  for (std::size_t i = net.layers.size(); i-- > 0;) {
    auto& g = r.grad.layers[i];
    kernel::accumulate_weights(delta, acts[i], g.w, g.b);
    if (i == 0) break;
    Matrix prev(bsz, net.layers[i].in());
    kernel::backprop_input(delta, net.layers[i].w, prev);
    // ReLU derivative, taken from the stored activation
    for (std::size_t k = 0; k < prev.data().size(); ++k) {
      if (acts[i].data()[k] <= 0.0) prev.data()[k] = 0.0;
    }
    delta = std::move(prev);
  }
  return r;
}

// ---------------------------------------------------------------- optimizers

enum class OptKind { RmsProp, Adam };

struct OptConfig {
  double lr = 1e-3;
  double rho = 0.9;  // RMSprop decay
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  Optimizer(OptKind kind, OptConfig cfg = {}) : kind_(kind), cfg_(cfg) {}

  OptKind kind() const { return kind_; }
  std::int64_t steps() const { return t_; }

  /// RMSprop: s = rho*s + (1-rho)*g^2, p -= lr*g/sqrt(s+eps).
  /// Adam: bias-corrected first/second moments, p -= lr*m^/(sqrt(v^)+eps).
  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<double>>& grads) {
    if (params.size() != grads.size()) throw Error(Errc::ShapeMismatch, "parameter/gradient group count differs");
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.emplace_back(p.size(), 0.0);
        second_.emplace_back(p.size(), 0.0);
      }
    }
    if (first_.size() != params.size()) throw Error(Errc::ShapeMismatch, "parameter groups changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].size() != grads[i].size() || params[i].size() != first_[i].size()) {
        throw Error(Errc::ShapeMismatch, "parameter group " + std::to_string(i) + " changed shape");
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i];
      const auto g = grads[i];
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j];
        if (kind_ == OptKind::RmsProp) {
          v[j] = cfg_.rho * v[j] + (1.0 - cfg_.rho) * gj * gj;
          p[j] -= cfg_.lr * gj / std::sqrt(v[j] + cfg_.eps);
        } else {
          m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
          v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
          p[j] -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
        }
      }
    }
  }

  template <typename Model>
  void step(Model& model, Model& grad) {
    step(parameters(model), parameters(grad));
  }

 private:
  OptKind kind_;
  OptConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> first_, second_;
};

// ---------------------------------------------------------------- checkpoints

inline constexpr std::string_view kCheckpointFormat = "loracampus-model";
inline constexpr int kCheckpointVersion = 1;
// Weight matrices are row-major, out x in; LSTM rows are gate-stacked i,f,o,g
// over columns [x, h_prev].
inline constexpr std::string_view kLayoutTag = "rowmajor-out-in/lstm-ifog-x-h";

namespace detail {

inline nlohmann::json dense_json(const Dense& d) {
  return {{"in", d.in()}, {"out", d.out()}, {"w", d.w.data()}, {"b", d.b}};
}

inline Dense dense_from_json(const nlohmann::json& j) {
  Dense d{Matrix(j.at("out").get<std::size_t>(), j.at("in").get<std::size_t>()), j.at("b").get<std::vector<double>>()};
  d.w.data() = j.at("w").get<std::vector<double>>();
  if (d.w.data().size() != d.in() * d.out() || d.b.size() != d.out()) {
    throw Error(Errc::FormatError, "dense layer arrays do not match its dims");
  }
  return d;
}

inline void check_header(const nlohmann::json& j, std::string_view kind) {
  if (j.value("format", "") != kCheckpointFormat || j.value("version", 0) != kCheckpointVersion ||
      j.value("layout", "") != kLayoutTag || j.value("kind", "") != kind) {
    throw Error(Errc::FormatError, "not a " + std::string(kind) + " checkpoint of a supported version/layout");
  }
}

}  // namespace detail

inline std::string save_checkpoint(const LstmModel& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers) {
    layers.push_back({{"input", l.input}, {"hidden", l.hidden}, {"w", l.w.data()}, {"b", l.b}});
  }
  nlohmann::json j = {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"layout", kLayoutTag},
                      {"kind", "lstm"},             {"layers", layers},                {"head", detail::dense_json(m.head)}};
  return j.dump() + "\n";
}

inline std::string save_checkpoint(const MlpNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& d : net.layers) layers.push_back(detail::dense_json(d));
  nlohmann::json j = {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"layout", kLayoutTag},
                      {"kind", "mlp"},              {"layers", layers}};
  return j.dump() + "\n";
}

inline LstmModel load_lstm_checkpoint(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    detail::check_header(j, "lstm");
    LstmModel m;
    for (const auto& lj : j.at("layers")) {
      LstmLayer l;
      l.input = lj.at("input").get<std::size_t>();
      l.hidden = lj.at("hidden").get<std::size_t>();
      l.w = Matrix(4 * l.hidden, l.input + l.hidden);
      l.w.data() = lj.at("w").get<std::vector<double>>();
      l.b = lj.at("b").get<std::vector<double>>();
      if (l.w.data().size() != 4 * l.hidden * (l.input + l.hidden)) throw Error(Errc::FormatError, "bad LSTM weights");
      m.layers.push_back(std::move(l));
    }
    m.head = detail::dense_from_json(j.at("head"));
    detail::check_lstm(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, std::string("malformed checkpoint: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::FormatError) throw;
    throw Error(Errc::FormatError, e.what());
  }
}

inline MlpNet load_mlp_checkpoint(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    detail::check_header(j, "mlp");
    MlpNet net;
    for (const auto& dj : j.at("layers")) net.layers.push_back(detail::dense_from_json(dj));
    detail::check_mlp(net);
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, std::string("malformed checkpoint: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::FormatError) throw;
    throw Error(Errc::FormatError, e.what());
  }
}

}  // namespace loracampus::nn
