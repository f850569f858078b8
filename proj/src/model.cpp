#include "mcqa/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "mcqa/errors.hpp"
#include "mcqa/kernels.hpp"

namespace mcqa {

void ModelOptions::validate() const {
  if (gate && scheme != Scheme::AllAnswersOnePass) {
    throw ConfigError("the answer gate requires the na1p scheme");
  }
  if (gate_heads == 0) throw ConfigError("gate_heads must be at least 1");
}

std::string_view parameter_group(std::string_view tensor_name) {
  return tensor_name.starts_with("encoder.") ? "encoder" : "head";
}

namespace {

template <typename T>
Matrix<T> xavier(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix<T> m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(rng.uniform(-limit, limit));
  return m;
}

template <typename T>
T activate(ScorerActivation act, T x) {
  return act == ScorerActivation::Tanh ? std::tanh(x) : x;
}

template <typename T>
T activate_grad(ScorerActivation act, T y) {
  return act == ScorerActivation::Tanh ? T(1) - y * y : T(1);
}

template <typename T>
std::vector<T> score_rows(const ScorerParams<T>& scorer, ScoreTrace<T>& t) {
  const std::size_t n = t.scorer_input.rows();
  const std::size_t hidden = scorer.hidden_weight.cols();
  if (t.scorer_input.cols() != scorer.input_width()) throw ShapeError("scorer input width mismatch");
  t.hidden_pre = Matrix<T>(n, hidden);
  kernels::gemm(n, scorer.input_width(), hidden, t.scorer_input.data(), scorer.hidden_weight.data(),
                t.hidden_pre.data());
  t.hidden = Matrix<T>(n, hidden);
  std::vector<T> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    T s = scorer.out_bias[0];
    for (std::size_t h = 0; h < hidden; ++h) {
      t.hidden_pre(i, h) += scorer.hidden_bias[h];
      const T a = activate(scorer.activation, t.hidden_pre(i, h));
      t.hidden(i, h) = a;
      s += a * scorer.out_weight[h];
    }
    scores[i] = s;
  }
  return scores;
}

template <typename T>
void put_row(Matrix<T>& dst, std::size_t row, std::size_t offset, std::span<const T> values) {
  std::copy(values.begin(), values.end(), dst.row(row).begin() + static_cast<std::ptrdiff_t>(offset));
}

using LayoutFn = std::function<Layout(const QAInstance&, std::size_t, std::size_t)>;

// Pooling and scoring over passes whose layout and states are filled in.
template <typename T>
std::vector<T> head_pairwise(const ModelBundle<T>& model, ScoreTrace<T>& t, bool keep_trace) {
  const std::size_t n = t.passes.size();
  const std::size_t d = model.encoder.config.d_model;
  const bool concat = model.options.qa_concat;
  const PoolingKind qkind = model.options.pooling;
  const PoolingKind akind = answer_pooling(qkind);
  t.scorer_input = Matrix<T>(n, concat ? 2 * d : d);
  for (std::size_t i = 0; i < n; ++i) {
    PassTrace<T>& pass = t.passes[i];
    if (concat) {
      const auto q = pool_span(pass.states, pass.layout.spans.question_span, qkind, model.pooling, &pass.question);
      put_row<T>(t.scorer_input, i, 0, q);
    }
    pass.answers.assign(1, PoolTrace<T>{});
    const auto a = pool_span(pass.states, pass.layout.spans.answer_spans[0], akind, model.pooling, &pass.answers[0]);
    put_row<T>(t.scorer_input, i, concat ? d : 0, a);
    if (!keep_trace) pass.states = LayerStates<T>{};
  }
  return score_rows(model.scorer, t);
}

template <typename T>
std::vector<T> head_one_pass(const ModelBundle<T>& model, ScoreTrace<T>& t) {
  PassTrace<T>& pass = t.passes[0];
  const std::size_t n = pass.layout.spans.answer_spans.size();
  const std::size_t d = model.encoder.config.d_model;
  const bool concat = model.options.qa_concat;
  const PoolingKind qkind = model.options.pooling;
  t.raw_answers = pool_answers(pass.states, pass.layout.spans, answer_pooling(qkind), model.pooling, &pass.answers);
  const Matrix<T>* answers = &t.raw_answers;
  AnswerReps<T> reps;
  if (model.options.gate) {
    reps = gated_interaction(t.raw_answers, model.gate, &t.gate);
    answers = &reps.gated;
  }
  t.scorer_input = Matrix<T>(n, concat ? 2 * d : d);
  std::vector<T> q;
  if (concat) q = pool_span(pass.states, pass.layout.spans.question_span, qkind, model.pooling, &pass.question);
  for (std::size_t i = 0; i < n; ++i) {
    if (concat) put_row<T>(t.scorer_input, i, 0, q);
    put_row<T>(t.scorer_input, i, concat ? d : 0, answers->row(i));
  }
  return score_rows(model.scorer, t);
}

template <typename T>
std::vector<T> forward_pairwise(const QAInstance& instance, const ModelBundle<T>& model, const LayoutFn& layout_of,
                                ScoreTrace<T>& t, bool keep_trace, const DropoutContext* dropout) {
  const std::size_t n = instance.answers.size();
  t.passes.assign(n, PassTrace<T>{});
  for (std::size_t i = 0; i < n; ++i) {
    PassTrace<T>& pass = t.passes[i];
    pass.layout = layout_of(instance, i, model.encoder.config.max_len);
    pass.states = encode(pass.layout.sequence, model.encoder, keep_trace ? &pass.encoder : nullptr, dropout);
  }
  return head_pairwise(model, t, keep_trace);
}

template <typename T>
std::vector<T> forward_one_pass(const QAInstance& instance, const ModelBundle<T>& model, ScoreTrace<T>& t,
                                bool keep_trace, const DropoutContext* dropout) {
  t.passes.assign(1, PassTrace<T>{});
  PassTrace<T>& pass = t.passes[0];
  pass.layout = layout_na1p(instance, model.encoder.config.max_len);
  pass.states = encode(pass.layout.sequence, model.encoder, keep_trace ? &pass.encoder : nullptr, dropout);
  return head_one_pass(model, t);
}

}  // namespace

template <typename T>
ModelBundle<T> init_model(const ModelOptions& options, const EncoderConfig& config, std::uint64_t seed) {
  options.validate();
  config.validate();
  ModelBundle<T> m;
  m.options = options;
  m.encoder = init_encoder<T>(config, seed);
  const std::size_t d = config.d_model;
  m.pooling = init_pooling<T>(options.pooling, d, config.n_layers + 1);
  if (options.gate) m.gate = init_gate<T>(d, options.gate_heads, Rng::derive(seed, 1).next());
  Rng rng = Rng::derive(seed, 2);
  m.scorer.activation = options.activation;
  m.scorer.hidden_weight = xavier<T>(options.qa_concat ? 2 * d : d, d, rng);
  m.scorer.hidden_bias = Matrix<T>(1, d);
  m.scorer.out_weight = xavier<T>(d, 1, rng);
  m.scorer.out_bias = Matrix<T>(1, 1);
  return m;
}

template <typename T>
ModelBundle<T> zeros_like(const ModelBundle<T>& model) {
  ModelBundle<T> out = model;
  visit_model(out, [](const std::string&, Matrix<T>& m) { m.zero(); });
  return out;
}

template <typename U, typename T>
ModelBundle<U> cast_model(const ModelBundle<T>& model) {
  ModelBundle<U> out;
  out.options = model.options;
  out.trained_steps = model.trained_steps;
  out.encoder = cast_encoder<U>(model.encoder);
  out.pooling.kind = model.pooling.kind;
  out.pooling.attention_vector = model.pooling.attention_vector.template cast<U>();
  out.pooling.layer_logits = model.pooling.layer_logits.template cast<U>();
  const auto& g = model.gate;
  out.gate.attention.n_heads = g.attention.n_heads;
  out.gate.attention.wq = g.attention.wq.template cast<U>();
  out.gate.attention.bq = g.attention.bq.template cast<U>();
  out.gate.attention.wk = g.attention.wk.template cast<U>();
  out.gate.attention.bk = g.attention.bk.template cast<U>();
  out.gate.w_self = g.w_self.template cast<U>();
  out.gate.w_context = g.w_context.template cast<U>();
  out.gate.bias = g.bias.template cast<U>();
  out.scorer.activation = model.scorer.activation;
  out.scorer.hidden_weight = model.scorer.hidden_weight.template cast<U>();
  out.scorer.hidden_bias = model.scorer.hidden_bias.template cast<U>();
  out.scorer.out_weight = model.scorer.out_weight.template cast<U>();
  out.scorer.out_bias = model.scorer.out_bias.template cast<U>();
  return out;
}

template <typename T>
std::size_t parameter_count(const ModelBundle<T>& model) {
  std::size_t total = 0;
  visit_model(model, [&](const std::string&, const Matrix<T>& m) { total += m.size(); });
  return total;
}

template <typename T>
std::vector<T> forward_scores(const QAInstance& instance, const ModelBundle<T>& model, ScoreTrace<T>* trace,
                              const DropoutContext* dropout) {
  if (instance.answers.empty()) throw ContractError("instance has no answers");
  ScoreTrace<T> local;
  ScoreTrace<T>& t = trace ? *trace : local;
  const bool keep = trace != nullptr;
  switch (model.options.scheme) {
    case Scheme::OneAnswerNPasses:
      return forward_pairwise(instance, model, LayoutFn(layout_1anp), t, keep, dropout);
    case Scheme::AllAnswersNPasses:
      // With a single candidate there is nothing to contrast, so the pass is the plain pair.
      if (instance.answers.size() == 1) {
        return forward_pairwise(instance, model, LayoutFn(layout_1anp), t, keep, dropout);
      }
      return forward_pairwise(instance, model, LayoutFn(layout_nanp), t, keep, dropout);
    case Scheme::AllAnswersOnePass:
      return forward_one_pass(instance, model, t, keep, dropout);
  }
  throw ContractError("unknown scheme");
}

std::vector<Layout> scheme_layouts(const QAInstance& instance, const ModelOptions& options, std::size_t max_len) {
  std::vector<Layout> out;
  const std::size_t n = instance.answers.size();
  switch (options.scheme) {
    case Scheme::OneAnswerNPasses:
      for (std::size_t i = 0; i < n; ++i) out.push_back(layout_1anp(instance, i, max_len));
      break;
    case Scheme::AllAnswersNPasses:
      for (std::size_t i = 0; i < n; ++i) {
        out.push_back(n == 1 ? layout_1anp(instance, i, max_len) : layout_nanp(instance, i, max_len));
      }
      break;
    case Scheme::AllAnswersOnePass:
      out.push_back(layout_na1p(instance, max_len));
      break;
  }
  return out;
}

template <typename T>
std::vector<T> score_encoded(const QAInstance& instance, const ModelBundle<T>& model, std::span<const Layout> layouts,
                             std::span<const LayerStates<T>> states) {
  if (layouts.size() != states.size()) throw ShapeError("one state set is needed per layout");
  const bool one_pass = model.options.scheme == Scheme::AllAnswersOnePass;
  if (layouts.size() != (one_pass ? 1 : instance.answers.size())) {
    throw ShapeError("pass count does not match the scheme");
  }
  ScoreTrace<T> t;
  t.passes.resize(layouts.size());
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    t.passes[i].layout = layouts[i];
    t.passes[i].states = states[i];
  }
  return one_pass ? head_one_pass(model, t) : head_pairwise(model, t, false);
}

template <typename T>
std::vector<T> forward_scores_appended(const QAInstance& instance, const ModelBundle<T>& model,
                                       std::span<const std::size_t> appended) {
  if (model.options.scheme == Scheme::AllAnswersOnePass) {
    throw ContractError("appended-answer scoring needs a pairwise-scheme model");
  }
  ScoreTrace<T> t;
  const std::vector<std::size_t> list(appended.begin(), appended.end());
  const LayoutFn layout_of = [&list](const QAInstance& inst, std::size_t i, std::size_t max_len) {
    return layout_appended(inst, i, list, max_len);
  };
  return forward_pairwise(instance, model, layout_of, t, false, nullptr);
}

template <typename T>
void backward_scores(const QAInstance& instance, const ModelBundle<T>& model, const ScoreTrace<T>& trace,
                     std::span<const T> d_scores, ModelBundle<T>& grads) {
  const std::size_t n = instance.answers.size();
  const std::size_t d = model.encoder.config.d_model;
  const bool concat = model.options.qa_concat;
  const auto& scorer = model.scorer;
  const std::size_t hidden = scorer.hidden_weight.cols();
  const std::size_t width = scorer.input_width();
  if (d_scores.size() != n) throw ShapeError("score gradient count does not match candidate count");

  // Scorer.
  Matrix<T> d_hidden_pre(n, hidden);
  for (std::size_t i = 0; i < n; ++i) {
    grads.scorer.out_bias[0] += d_scores[i];
    for (std::size_t h = 0; h < hidden; ++h) {
      grads.scorer.out_weight[h] += d_scores[i] * trace.hidden(i, h);
      d_hidden_pre(i, h) =
          d_scores[i] * scorer.out_weight[h] * activate_grad(scorer.activation, trace.hidden(i, h));
      grads.scorer.hidden_bias[h] += d_hidden_pre(i, h);
    }
  }
  kernels::gemm_tn(width, n, hidden, trace.scorer_input.data(), d_hidden_pre.data(),
                   grads.scorer.hidden_weight.data(), true);
  Matrix<T> d_input(n, width);
  kernels::gemm_nt(n, hidden, width, d_hidden_pre.data(), scorer.hidden_weight.data(), d_input.data());
  const std::size_t answer_offset = concat ? d : 0;

  if (model.options.scheme == Scheme::AllAnswersOnePass) {
    const PassTrace<T>& pass = trace.passes[0];
    std::vector<Matrix<T>> d_states(pass.states.num_layers());
    Matrix<T> d_answers(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(d_input.row(i).data() + answer_offset, d, d_answers.row(i).data());
    }
    Matrix<T> d_raw(n, d);
    if (model.options.gate) {
      gated_interaction_backward(trace.raw_answers, model.gate, trace.gate, d_answers, grads.gate, d_raw);
    } else {
      d_raw = std::move(d_answers);
    }
    if (concat) {
      std::vector<T> d_q(d, T{0});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) d_q[c] += d_input(i, c);
      }
      pool_span_backward<T>(pass.states, model.pooling, pass.question, d_q, d_states, grads.pooling);
    }
    for (std::size_t i = 0; i < n; ++i) {
      pool_span_backward<T>(pass.states, model.pooling, pass.answers[i], d_raw.row(i), d_states, grads.pooling);
    }
    encode_backward(pass.layout.sequence, model.encoder, pass.states, pass.encoder, std::move(d_states),
                    grads.encoder);
    return;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const PassTrace<T>& pass = trace.passes[i];
    std::vector<Matrix<T>> d_states(pass.states.num_layers());
    const auto row = std::span<const T>(d_input.row(i));
    if (concat) {
      pool_span_backward<T>(pass.states, model.pooling, pass.question, row.subspan(0, d), d_states, grads.pooling);
    }
    pool_span_backward<T>(pass.states, model.pooling, pass.answers[0], row.subspan(answer_offset, d), d_states,
                          grads.pooling);
    encode_backward(pass.layout.sequence, model.encoder, pass.states, pass.encoder, std::move(d_states),
                    grads.encoder);
  }
}

template <typename T>
std::size_t select(std::span<const T> scores) {
  if (scores.empty()) throw EvaluationError("no scores to select from");
  std::size_t best = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw EvaluationError("NaN score for candidate " + std::to_string(i));
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

template <typename T>
T loss(std::span<const T> scores, std::size_t gold, std::vector<T>* d_scores) {
  if (gold >= scores.size()) throw ContractError("gold index out of range");
  for (T s : scores) {
    if (!std::isfinite(s)) throw EvaluationError("non-finite score in loss");
  }
  const T best = *std::max_element(scores.begin(), scores.end());
  T total = 0;
  for (T s : scores) total += std::exp(s - best);
  const T log_norm = best + std::log(total);
  if (d_scores) {
    d_scores->resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      (*d_scores)[i] = std::exp(scores[i] - log_norm) - (i == gold ? T(1) : T(0));
    }
  }
  return log_norm - scores[gold];
}

#define MCQA_INSTANTIATE_MODEL(T)                                                                                \
  template ModelBundle<T> init_model<T>(const ModelOptions&, const EncoderConfig&, std::uint64_t);             \
  template ModelBundle<T> zeros_like<T>(const ModelBundle<T>&);                                                  \
  template std::size_t parameter_count<T>(const ModelBundle<T>&);                                                \
  template std::vector<T> forward_scores<T>(const QAInstance&, const ModelBundle<T>&, ScoreTrace<T>*,           \
                                            const DropoutContext*);                                              \
  template std::vector<T> forward_scores_appended<T>(const QAInstance&, const ModelBundle<T>&,                  \
                                                     std::span<const std::size_t>);                              \
  template std::vector<T> score_encoded<T>(const QAInstance&, const ModelBundle<T>&, std::span<const Layout>,   \
                                           std::span<const LayerStates<T>>);                                     \
  template void backward_scores<T>(const QAInstance&, const ModelBundle<T>&, const ScoreTrace<T>&,              \
                                   std::span<const T>, ModelBundle<T>&);                                         \
  template std::size_t select<T>(std::span<const T>);                                                            \
  template T loss<T>(std::span<const T>, std::size_t, std::vector<T>*);

MCQA_INSTANTIATE_MODEL(float)
MCQA_INSTANTIATE_MODEL(double)

template ModelBundle<double> cast_model<double, float>(const ModelBundle<float>&);
template ModelBundle<float> cast_model<float, double>(const ModelBundle<double>&);
template ModelBundle<double> cast_model<double, double>(const ModelBundle<double>&);
template ModelBundle<float> cast_model<float, float>(const ModelBundle<float>&);

#undef MCQA_INSTANTIATE_MODEL

}  // namespace mcqa
