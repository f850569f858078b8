#include "mcqa/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mcqa/errors.hpp"

namespace mcqa {

std::string_view to_string(PoolingKind kind) {
  switch (kind) {
    case PoolingKind::Cls: return "cls";
    case PoolingKind::Max: return "max";
    case PoolingKind::Mean: return "mean";
    case PoolingKind::Attentive: return "attentive";
    case PoolingKind::LayerwiseCls: return "layerwise-cls";
  }
  return "unknown";
}

PoolingKind parse_pooling(std::string_view name) {
  if (name == "cls") return PoolingKind::Cls;
  if (name == "max") return PoolingKind::Max;
  if (name == "mean") return PoolingKind::Mean;
  if (name == "attentive") return PoolingKind::Attentive;
  if (name == "layerwise-cls") return PoolingKind::LayerwiseCls;
  throw ConfigError("unknown pooling '" + std::string(name) + "' (expected cls, max, mean, attentive or layerwise-cls)");
}

PoolingKind answer_pooling(PoolingKind question_kind) {
  if (question_kind == PoolingKind::Cls || question_kind == PoolingKind::LayerwiseCls) return PoolingKind::Mean;
  return question_kind;
}

namespace {

template <typename T>
void check_span(const Matrix<T>& rows, PositionRange span) {
  if (span.last < span.first) throw ContractError("empty pooling span");
  if (span.last >= rows.rows()) {
    throw ContractError("pooling span [" + std::to_string(span.first) + ", " + std::to_string(span.last) +
                        "] outside " + std::to_string(rows.rows()) + " rows");
  }
}

template <typename T>
PositionRange whole(const Matrix<T>& rows) {
  if (rows.rows() == 0) throw ContractError("empty pooling span");
  return {0, rows.rows() - 1};
}

// Numerically stable softmax of `logits` in place.
template <typename T>
void softmax_in_place(std::vector<T>& logits) {
  const T best = *std::max_element(logits.begin(), logits.end());
  T total = 0;
  for (auto& v : logits) {
    v = std::exp(v - best);
    total += v;
  }
  for (auto& v : logits) v /= total;
}

template <typename T>
Matrix<T>& state_grad(std::vector<Matrix<T>>& d_states, const LayerStates<T>& states, std::size_t layer) {
  if (d_states.size() != states.num_layers()) d_states.resize(states.num_layers());
  if (d_states[layer].empty()) d_states[layer] = Matrix<T>(states.states[layer].rows(), states.states[layer].cols());
  return d_states[layer];
}

}  // namespace

template <typename T>
std::vector<T> pool_cls(const LayerStates<T>& states, PositionRange span) {
  if (span.first != 0) throw ContractError("CLS pooling needs a span starting at position 0");
  check_span(states.final(), span);
  const auto row = states.final().row(0);
  return {row.begin(), row.end()};
}

template <typename T>
std::vector<T> pool_max(const Matrix<T>& rows, PositionRange span, std::vector<std::size_t>* argmax) {
  check_span(rows, span);
  const auto first = rows.row(span.first);
  std::vector<T> out(first.begin(), first.end());
  if (argmax) argmax->assign(rows.cols(), span.first);
  for (std::size_t r = span.first + 1; r <= span.last; ++r) {
    const auto row = rows.row(r);
    for (std::size_t c = 0; c < out.size(); ++c) {
      if (row[c] > out[c]) {
        out[c] = row[c];
        if (argmax) (*argmax)[c] = r;
      }
    }
  }
  return out;
}

template <typename T>
std::vector<T> pool_max(const Matrix<T>& rows) {
  return pool_max(rows, whole(rows));
}

template <typename T>
std::vector<T> pool_mean(const Matrix<T>& rows, PositionRange span) {
  check_span(rows, span);
  std::vector<T> out(rows.cols(), T{0});
  for (std::size_t r = span.first; r <= span.last; ++r) {
    const auto row = rows.row(r);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
  }
  const auto count = static_cast<T>(span.size());
  for (auto& v : out) v /= count;
  return out;
}

template <typename T>
std::vector<T> pool_mean(const Matrix<T>& rows) {
  return pool_mean(rows, whole(rows));
}

template <typename T>
std::vector<T> pool_attentive(const Matrix<T>& rows, PositionRange span, std::span<const T> v,
                              std::vector<T>* weights) {
  check_span(rows, span);
  if (v.size() != rows.cols()) throw ShapeError("attention vector width does not match row width");
  std::vector<T> w(span.size());
  for (std::size_t t = 0; t < w.size(); ++t) {
    const auto row = rows.row(span.first + t);
    T dot = 0;
    for (std::size_t c = 0; c < v.size(); ++c) dot += row[c] * v[c];
    w[t] = dot;
  }
  softmax_in_place(w);
  std::vector<T> out(rows.cols(), T{0});
  for (std::size_t t = 0; t < w.size(); ++t) {
    const auto row = rows.row(span.first + t);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w[t] * row[c];
  }
  if (weights) *weights = std::move(w);
  return out;
}

template <typename T>
std::vector<T> pool_attentive(const Matrix<T>& rows, std::span<const T> v, std::vector<T>* weights) {
  return pool_attentive(rows, whole(rows), v, weights);
}

template <typename T>
std::vector<T> pool_layerwise_cls(const LayerStates<T>& states, std::span<const T> layer_logits,
                                  std::vector<T>* weights) {
  if (layer_logits.size() != states.num_layers()) {
    throw ShapeError("layer logits length " + std::to_string(layer_logits.size()) + " does not match " +
                     std::to_string(states.num_layers()) + " stored layers");
  }
  if (states.seq_len() == 0) throw ContractError("empty pooling span");
  std::vector<T> w(layer_logits.begin(), layer_logits.end());
  softmax_in_place(w);
  std::vector<T> out(states.final().cols(), T{0});
  for (std::size_t l = 0; l < w.size(); ++l) {
    const auto row = states.states[l].row(0);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w[l] * row[c];
  }
  if (weights) *weights = std::move(w);
  return out;
}

template <typename T>
PoolingParams<T> init_pooling(PoolingKind kind, std::size_t d_model, std::size_t stored_layers) {
  PoolingParams<T> p;
  p.kind = kind;
  if (kind == PoolingKind::Attentive) p.attention_vector = Matrix<T>(1, d_model);
  if (kind == PoolingKind::LayerwiseCls) p.layer_logits = Matrix<T>(1, stored_layers);
  return p;
}

template <typename T>
std::vector<T> pool_span(const LayerStates<T>& states, PositionRange span, PoolingKind kind,
                         const PoolingParams<T>& params, PoolTrace<T>* trace) {
  PoolTrace<T> local;
  PoolTrace<T>& t = trace ? *trace : local;
  t.kind = kind;
  t.span = span;
  switch (kind) {
    case PoolingKind::Cls: return pool_cls(states, span);
    case PoolingKind::Max: return pool_max(states.final(), span, &t.argmax);
    case PoolingKind::Mean: return pool_mean(states.final(), span);
    case PoolingKind::Attentive:
      return pool_attentive(states.final(), span, params.attention_vector.values(), &t.weights);
    case PoolingKind::LayerwiseCls:
      if (span.first != 0) throw ContractError("layerwise CLS pooling needs a span starting at position 0");
      return pool_layerwise_cls(states, params.layer_logits.values(), &t.weights);
  }
  throw ContractError("unknown pooling kind");
}

template <typename T>
void pool_span_backward(const LayerStates<T>& states, const PoolingParams<T>& params, const PoolTrace<T>& trace,
                        std::span<const T> d_out, std::vector<Matrix<T>>& d_states, PoolingParams<T>& grads) {
  const std::size_t last = states.num_layers() - 1;
  const auto& final_rows = states.final();
  switch (trace.kind) {
    case PoolingKind::Cls: {
      auto& g = state_grad(d_states, states, last);
      auto row = g.row(0);
      for (std::size_t c = 0; c < d_out.size(); ++c) row[c] += d_out[c];
      return;
    }
    case PoolingKind::Max: {
      auto& g = state_grad(d_states, states, last);
      for (std::size_t c = 0; c < d_out.size(); ++c) g(trace.argmax[c], c) += d_out[c];
      return;
    }
    case PoolingKind::Mean: {
      auto& g = state_grad(d_states, states, last);
      const T inv = static_cast<T>(1.0 / static_cast<double>(trace.span.size()));
      for (std::size_t r = trace.span.first; r <= trace.span.last; ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < d_out.size(); ++c) row[c] += d_out[c] * inv;
      }
      return;
    }
    case PoolingKind::Attentive: {
      auto& g = state_grad(d_states, states, last);
      const auto v = params.attention_vector.values();
      const auto& w = trace.weights;
      std::vector<T> dots(w.size());
      T mean_dot = 0;
      for (std::size_t t = 0; t < w.size(); ++t) {
        const auto row = final_rows.row(trace.span.first + t);
        T dot = 0;
        for (std::size_t c = 0; c < d_out.size(); ++c) dot += d_out[c] * row[c];
        dots[t] = dot;
        mean_dot += w[t] * dot;
      }
      auto dv = grads.attention_vector.values();
      for (std::size_t t = 0; t < w.size(); ++t) {
        const std::size_t r = trace.span.first + t;
        const T d_logit = w[t] * (dots[t] - mean_dot);
        const auto row = final_rows.row(r);
        auto grow = g.row(r);
        for (std::size_t c = 0; c < d_out.size(); ++c) {
          grow[c] += w[t] * d_out[c] + d_logit * v[c];
          dv[c] += d_logit * row[c];
        }
      }
      return;
    }
    case PoolingKind::LayerwiseCls: {
      const auto& w = trace.weights;
      std::vector<T> dots(w.size());
      T mean_dot = 0;
      for (std::size_t l = 0; l < w.size(); ++l) {
        const auto row = states.states[l].row(0);
        T dot = 0;
        for (std::size_t c = 0; c < d_out.size(); ++c) dot += d_out[c] * row[c];
        dots[l] = dot;
        mean_dot += w[l] * dot;
      }
      auto dw = grads.layer_logits.values();
      for (std::size_t l = 0; l < w.size(); ++l) {
        auto grow = state_grad(d_states, states, l).row(0);
        for (std::size_t c = 0; c < d_out.size(); ++c) grow[c] += w[l] * d_out[c];
        dw[l] += w[l] * (dots[l] - mean_dot);
      }
      return;
    }
  }
}

#define MCQA_INSTANTIATE_POOLING(T)                                                                              \
  template std::vector<T> pool_cls<T>(const LayerStates<T>&, PositionRange);                                    \
  template std::vector<T> pool_max<T>(const Matrix<T>&, PositionRange, std::vector<std::size_t>*);              \
  template std::vector<T> pool_max<T>(const Matrix<T>&);                                                         \
  template std::vector<T> pool_mean<T>(const Matrix<T>&, PositionRange);                                        \
  template std::vector<T> pool_mean<T>(const Matrix<T>&);                                                        \
  template std::vector<T> pool_attentive<T>(const Matrix<T>&, PositionRange, std::span<const T>, std::vector<T>*); \
  template std::vector<T> pool_attentive<T>(const Matrix<T>&, std::span<const T>, std::vector<T>*);             \
  template std::vector<T> pool_layerwise_cls<T>(const LayerStates<T>&, std::span<const T>, std::vector<T>*);    \
  template PoolingParams<T> init_pooling<T>(PoolingKind, std::size_t, std::size_t);                             \
  template std::vector<T> pool_span<T>(const LayerStates<T>&, PositionRange, PoolingKind, const PoolingParams<T>&, \
                                       PoolTrace<T>*);                                                            \
  template void pool_span_backward<T>(const LayerStates<T>&, const PoolingParams<T>&, const PoolTrace<T>&,        \
                                      std::span<const T>, std::vector<Matrix<T>>&, PoolingParams<T>&);

MCQA_INSTANTIATE_POOLING(float)
MCQA_INSTANTIATE_POOLING(double)

#undef MCQA_INSTANTIATE_POOLING

}  // namespace mcqa
