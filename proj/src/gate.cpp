#include "mcqa/gate.hpp"

#include <cmath>

#include "mcqa/errors.hpp"
#include "mcqa/kernels.hpp"
#include "mcqa/rng.hpp"

namespace mcqa {

namespace {

template <typename T>
Matrix<T> xavier(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix<T> m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(rng.uniform(-limit, limit));
  return m;
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <typename T>
GateParams<T> init_gate(std::size_t d_model, std::size_t heads, std::uint64_t seed) {
  if (heads == 0 || d_model % heads != 0) throw ConfigError("gate head count must divide d_model");
  Rng rng(seed);
  GateParams<T> p;
  p.attention.n_heads = heads;
  p.attention.wq = xavier<T>(d_model, d_model, rng);
  p.attention.bq = Matrix<T>(1, d_model);
  p.attention.wk = xavier<T>(d_model, d_model, rng);
  p.attention.bk = Matrix<T>(1, d_model);
  p.w_self = xavier<T>(d_model, d_model, rng);
  p.w_context = xavier<T>(d_model, d_model, rng);
  p.bias = Matrix<T>(1, d_model, T{2});  // gamma starts near 0.88, mostly self
  return p;
}

template <typename T>
Matrix<T> pool_answers(const LayerStates<T>& states, const SpanMap& spans, PoolingKind kind,
                       const PoolingParams<T>& params, std::vector<PoolTrace<T>>* traces) {
  const std::size_t n = spans.answer_spans.size();
  Matrix<T> out(n, states.final().cols());
  if (traces) traces->assign(n, PoolTrace<T>{});
  for (std::size_t i = 0; i < n; ++i) {
    const auto pooled = pool_span(states, spans.answer_spans[i], kind, params, traces ? &(*traces)[i] : nullptr);
    std::copy(pooled.begin(), pooled.end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
AnswerReps<T> gated_interaction(const Matrix<T>& raw, const GateParams<T>& params, GateTrace<T>* trace) {
  const std::size_t n = raw.rows();
  const std::size_t d = raw.cols();
  if (n == 0) throw ContractError("gated interaction needs at least one answer");
  if (d != params.width() || params.attention.width() != d || params.w_context.rows() != d ||
      params.w_self.cols() != d || params.w_context.cols() != d || params.bias.size() != d) {
    throw ShapeError("gate parameter width does not match answer width " + std::to_string(d));
  }
  GateTrace<T> local;
  GateTrace<T>& t = trace ? *trace : local;

  AnswerReps<T> out;
  out.raw = raw;
  if (n == 1) {
    t.bypassed = true;
    out.gated = raw;
    out.weights = Matrix<T>(1, 1);
    return out;
  }
  t.bypassed = false;
  AttentionOutput<T> att = mha(raw, raw, raw, params.attention, AttentionMask{{}, true}, &t.attention);
  out.weights = std::move(att.weights);
  t.context = std::move(att.context);

  Matrix<T> z(n, d);
  kernels::gemm(n, d, d, raw.data(), params.w_self.data(), z.data());
  kernels::gemm(n, d, d, t.context.data(), params.w_context.data(), z.data(), true);
  t.gamma = Matrix<T>(n, d);
  out.gated = Matrix<T>(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const T g = sigmoid(z(i, c) + params.bias[c]);
      t.gamma(i, c) = g;
      out.gated(i, c) = g * raw(i, c) + (T(1) - g) * t.context(i, c);
    }
  }
  return out;
}

template <typename T>
void gated_interaction_backward(const Matrix<T>& raw, const GateParams<T>& params, const GateTrace<T>& trace,
                                const Matrix<T>& d_gated, GateParams<T>& grads, Matrix<T>& d_raw) {
  const std::size_t n = raw.rows();
  const std::size_t d = raw.cols();
  if (trace.bypassed) {
    for (std::size_t i = 0; i < d_raw.size(); ++i) d_raw[i] += d_gated[i];
    return;
  }
  Matrix<T> d_context(n, d);
  Matrix<T> dz(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const T g = trace.gamma(i, c);
      const T dg = d_gated(i, c);
      d_raw(i, c) += dg * g;
      d_context(i, c) += dg * (T(1) - g);
      dz(i, c) = dg * (raw(i, c) - trace.context(i, c)) * g * (T(1) - g);
      grads.bias[c] += dz(i, c);
    }
  }
  kernels::gemm_tn(d, n, d, raw.data(), dz.data(), grads.w_self.data(), true);
  kernels::gemm_tn(d, n, d, trace.context.data(), dz.data(), grads.w_context.data(), true);
  kernels::gemm_nt(n, d, d, dz.data(), params.w_self.data(), d_raw.data(), true);
  kernels::gemm_nt(n, d, d, dz.data(), params.w_context.data(), d_context.data(), true);

  Matrix<T> dq(n, d), dk(n, d);
  mha_backward(raw, raw, raw, params.attention, trace.attention, d_context, grads.attention, dq, dk, d_raw);
  for (std::size_t i = 0; i < d_raw.size(); ++i) d_raw[i] += dq[i] + dk[i];
}

#define MCQA_INSTANTIATE_GATE(T)                                                                                  \
  template GateParams<T> init_gate<T>(std::size_t, std::size_t, std::uint64_t);                                  \
  template Matrix<T> pool_answers<T>(const LayerStates<T>&, const SpanMap&, PoolingKind, const PoolingParams<T>&, \
                                     std::vector<PoolTrace<T>>*);                                                \
  template AnswerReps<T> gated_interaction<T>(const Matrix<T>&, const GateParams<T>&, GateTrace<T>*);            \
  template void gated_interaction_backward<T>(const Matrix<T>&, const GateParams<T>&, const GateTrace<T>&,       \
                                              const Matrix<T>&, GateParams<T>&, Matrix<T>&);

MCQA_INSTANTIATE_GATE(float)
MCQA_INSTANTIATE_GATE(double)

#undef MCQA_INSTANTIATE_GATE

}  // namespace mcqa
