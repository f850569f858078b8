#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mcqa/data.hpp"
#include "mcqa/encoder.hpp"
#include "mcqa/gate.hpp"
#include "mcqa/layout.hpp"
#include "mcqa/pooling.hpp"

namespace mcqa {

enum class ScorerActivation { Tanh, Identity };

/// Two-layer scoring MLP: score = act(x W_h + b_h) w_o + b_o.
template <typename T>
struct ScorerParams {
  ScorerActivation activation = ScorerActivation::Tanh;
  Matrix<T> hidden_weight;  // input x hidden
  Matrix<T> hidden_bias;    // 1 x hidden
  Matrix<T> out_weight;     // hidden x 1
  Matrix<T> out_bias;       // 1 x 1

  std::size_t input_width() const { return hidden_weight.rows(); }
};

template <typename P, typename F>
void visit_scorer(P& p, F&& f) {
  f(std::string("scorer.hidden_weight"), p.hidden_weight);
  f(std::string("scorer.hidden_bias"), p.hidden_bias);
  f(std::string("scorer.out_weight"), p.out_weight);
  f(std::string("scorer.out_bias"), p.out_bias);
}

struct ModelOptions {
  Scheme scheme = Scheme::OneAnswerNPasses;
  PoolingKind pooling = PoolingKind::Max;
  /// Inter-answer gate; only valid with the one-pass scheme.
  bool gate = false;
  /// Score g(q + a) when true, g(a) alone when false.
  bool qa_concat = true;
  std::size_t gate_heads = 2;
  ScorerActivation activation = ScorerActivation::Tanh;

  void validate() const;
  friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

template <typename T>
struct ModelBundle {
  ModelOptions options;
  EncoderParams<T> encoder;
  PoolingParams<T> pooling;
  GateParams<T> gate;
  ScorerParams<T> scorer;
  /// Optimizer steps applied so far.
  std::uint64_t trained_steps = 0;
};

/// Visits every non-empty tensor of the bundle in a fixed order.
template <typename P, typename F>
void visit_model(P& m, F&& f) {
  visit_encoder(m.encoder, f);
  visit_pooling(m.pooling, f);
  visit_gate(m.gate, f);
  visit_scorer(m.scorer, f);
}

/// Learning-rate group of a tensor: "encoder" or "head".
std::string_view parameter_group(std::string_view tensor_name);

template <typename T>
ModelBundle<T> init_model(const ModelOptions& options, const EncoderConfig& config, std::uint64_t seed);

template <typename T>
ModelBundle<T> zeros_like(const ModelBundle<T>& model);

template <typename U, typename T>
ModelBundle<U> cast_model(const ModelBundle<T>& model);

template <typename T>
std::size_t parameter_count(const ModelBundle<T>& model);

// ---------------------------------------------------------------------------

template <typename T>
struct PassTrace {
  Layout layout;
  LayerStates<T> states;
  EncoderTrace<T> encoder;
  PoolTrace<T> question;
  std::vector<PoolTrace<T>> answers;
};

template <typename T>
struct ScoreTrace {
  std::vector<PassTrace<T>> passes;
  Matrix<T> raw_answers;  // one-pass scheme only
  GateTrace<T> gate;
  Matrix<T> scorer_input;  // n x input width
  Matrix<T> hidden_pre;
  Matrix<T> hidden;
};

/// Scores every candidate of `instance`. Pairwise schemes run one encoder
/// pass per candidate; the one-pass scheme encodes all candidates together.
template <typename T>
std::vector<T> forward_scores(const QAInstance& instance, const ModelBundle<T>& model,
                              ScoreTrace<T>* trace = nullptr, const DropoutContext* dropout = nullptr);

/// Encoder inputs the scheme produces for `instance`, one per pass.
std::vector<Layout> scheme_layouts(const QAInstance& instance, const ModelOptions& options, std::size_t max_len);

/// Scores from already-encoded passes (layouts from scheme_layouts).
template <typename T>
std::vector<T> score_encoded(const QAInstance& instance, const ModelBundle<T>& model, std::span<const Layout> layouts,
                             std::span<const LayerStates<T>> states);

/// Pairwise scoring where each pass appends the listed candidates to the
/// question (the appended-answers probe). Requires a pairwise-scheme model.
template <typename T>
std::vector<T> forward_scores_appended(const QAInstance& instance, const ModelBundle<T>& model,
                                       std::span<const std::size_t> appended);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(scores).
template <typename T>
void backward_scores(const QAInstance& instance, const ModelBundle<T>& model, const ScoreTrace<T>& trace,
                     std::span<const T> d_scores, ModelBundle<T>& grads);

/// Argmax with ties to the lowest index. Throws EvaluationError on NaN or empty input.
template <typename T>
std::size_t select(std::span<const T> scores);

/// Softmax cross-entropy -log softmax(scores)[gold]; fills d_scores when given.
template <typename T>
T loss(std::span<const T> scores, std::size_t gold, std::vector<T>* d_scores = nullptr);

}  // namespace mcqa
