#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mcqa/encoder.hpp"
#include "mcqa/matrix.hpp"

namespace mcqa {

enum class PoolingKind { Cls, Max, Mean, Attentive, LayerwiseCls };

std::string_view to_string(PoolingKind kind);
/// Accepts "cls", "max", "mean", "attentive", "layerwise-cls".
PoolingKind parse_pooling(std::string_view name);

/// Pooling used for answer spans. CLS-style kinds read only position 0, so
/// answer spans fall back to mean pooling for them.
PoolingKind answer_pooling(PoolingKind question_kind);

/// Final-layer row at BOS. The span must start at position 0.
template <typename T>
std::vector<T> pool_cls(const LayerStates<T>& states, PositionRange span);

/// Elementwise maximum over the span rows. Ties resolve to the lowest row,
/// which is the row recorded in `argmax` (one entry per column).
template <typename T>
std::vector<T> pool_max(const Matrix<T>& rows, PositionRange span, std::vector<std::size_t>* argmax = nullptr);
template <typename T>
std::vector<T> pool_max(const Matrix<T>& rows);

template <typename T>
std::vector<T> pool_mean(const Matrix<T>& rows, PositionRange span);
template <typename T>
std::vector<T> pool_mean(const Matrix<T>& rows);

/// softmax_t(<row_t, v>)-weighted sum of the span rows.
template <typename T>
std::vector<T> pool_attentive(const Matrix<T>& rows, PositionRange span, std::span<const T> v,
                              std::vector<T>* weights = nullptr);
template <typename T>
std::vector<T> pool_attentive(const Matrix<T>& rows, std::span<const T> v, std::vector<T>* weights = nullptr);

/// softmax(w)-weighted sum of the BOS row of every stored layer (embedding layer included).
template <typename T>
std::vector<T> pool_layerwise_cls(const LayerStates<T>& states, std::span<const T> layer_logits,
                                  std::vector<T>* weights = nullptr);

/// Learnable pooling state: an attention vector for attentive pooling and
/// layer logits for layerwise CLS pooling. Unused tensors stay empty.
template <typename T>
struct PoolingParams {
  PoolingKind kind = PoolingKind::Max;
  Matrix<T> attention_vector;  // 1 x d_model
  Matrix<T> layer_logits;      // 1 x (n_layers + 1)
};

template <typename T>
PoolingParams<T> init_pooling(PoolingKind kind, std::size_t d_model, std::size_t stored_layers);

template <typename P, typename F>
void visit_pooling(P& p, F&& f) {
  if (!p.attention_vector.empty()) f(std::string("pooling.attention_vector"), p.attention_vector);
  if (!p.layer_logits.empty()) f(std::string("pooling.layer_logits"), p.layer_logits);
}

template <typename T>
struct PoolTrace {
  PoolingKind kind = PoolingKind::Max;
  PositionRange span;
  std::vector<std::size_t> argmax;
  std::vector<T> weights;
};

/// Pools `span` with `kind` using `params` for the learnable kinds. MAX, MEAN
/// and ATTENTIVE read the final layer only.
template <typename T>
std::vector<T> pool_span(const LayerStates<T>& states, PositionRange span, PoolingKind kind,
                         const PoolingParams<T>& params, PoolTrace<T>* trace = nullptr);

/// Accumulates gradients of a pooled vector into per-layer state gradients
/// (allocated on first use) and into the pooling parameters.
template <typename T>
void pool_span_backward(const LayerStates<T>& states, const PoolingParams<T>& params, const PoolTrace<T>& trace,
                        std::span<const T> d_out, std::vector<Matrix<T>>& d_states, PoolingParams<T>& grads);

}  // namespace mcqa
