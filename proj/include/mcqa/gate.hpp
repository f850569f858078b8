#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mcqa/encoder.hpp"
#include "mcqa/layout.hpp"
#include "mcqa/pooling.hpp"

namespace mcqa {

/// Inter-answer interaction parameters. The attention uses query/key
/// projections only: its context is the head-averaged attention applied to
/// the raw answer vectors.
template <typename T>
struct GateParams {
  MHAParams<T> attention;
  Matrix<T> w_self;     // d x d, applied to the answer's own vector
  Matrix<T> w_context;  // d x d, applied to the attended context
  Matrix<T> bias;       // 1 x d

  std::size_t width() const { return w_self.rows(); }
};

template <typename T>
GateParams<T> init_gate(std::size_t d_model, std::size_t heads, std::uint64_t seed);

template <typename P, typename F>
void visit_gate(P& p, F&& f) {
  visit_mha(p.attention, "gate.attention.", f);
  if (!p.w_self.empty()) f(std::string("gate.w_self"), p.w_self);
  if (!p.w_context.empty()) f(std::string("gate.w_context"), p.w_context);
  if (!p.bias.empty()) f(std::string("gate.bias"), p.bias);
}

template <typename T>
struct AnswerReps {
  Matrix<T> raw;      // n x d pooled answer spans
  Matrix<T> gated;    // n x d
  Matrix<T> weights;  // n x n, row i holds the weight of answer j for target i; zero diagonal
};

template <typename T>
struct GateTrace {
  bool bypassed = false;
  AttentionCache<T> attention;
  Matrix<T> context;  // n x d
  Matrix<T> gamma;    // n x d
};

/// Pools every answer span of `spans` from the final layer (or per `kind`).
template <typename T>
Matrix<T> pool_answers(const LayerStates<T>& states, const SpanMap& spans, PoolingKind kind,
                       const PoolingParams<T>& params, std::vector<PoolTrace<T>>* traces = nullptr);

/// For n >= 2: attention of each answer over the others, context
/// c_i = sum_{j != i} a_ij h_j, gate g_i = sigmoid(h_i W_self + c_i W_context + b),
/// output g_i * h_i + (1 - g_i) * c_i. For n = 1 the output is the input.
template <typename T>
AnswerReps<T> gated_interaction(const Matrix<T>& raw, const GateParams<T>& params, GateTrace<T>* trace = nullptr);

/// Accumulates parameter gradients and d_raw (pre-shaped n x d).
template <typename T>
void gated_interaction_backward(const Matrix<T>& raw, const GateParams<T>& params, const GateTrace<T>& trace,
                                const Matrix<T>& d_gated, GateParams<T>& grads, Matrix<T>& d_raw);

}  // namespace mcqa
