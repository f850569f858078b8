#include "mcqa/train.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mcqa/errors.hpp"
#include "mcqa/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mcqa {

namespace {

int thread_count(int workers) {
#ifdef _OPENMP
  return workers > 0 ? workers : omp_get_max_threads();
#else
  (void)workers;
  return 1;
#endif
}

template <typename T>
std::vector<Matrix<T>*> tensor_list(ModelBundle<T>& model, std::vector<std::string>* names = nullptr) {
  std::vector<Matrix<T>*> out;
  visit_model(model, [&](const std::string& name, Matrix<T>& m) {
    out.push_back(&m);
    if (names) names->push_back(name);
  });
  return out;
}

}  // namespace

template <typename T>
T instance_gradients(const QAInstance& instance, const ModelBundle<T>& model, ModelBundle<T>& grads,
                     const DropoutContext* dropout) {
  ScoreTrace<T> trace;
  const std::vector<T> scores = forward_scores(instance, model, &trace, dropout);
  std::vector<T> d_scores;
  const T value = loss<T>(scores, instance.gold, &d_scores);
  backward_scores<T>(instance, model, trace, d_scores, grads);
  return value;
}

template <typename T>
EvalResult evaluate(std::span<const QAInstance> dataset, const ModelBundle<T>& model, int workers) {
  EvalResult result;
  if (dataset.empty()) return result;
  result.predictions.assign(dataset.size(), 0);
  std::vector<double> losses(dataset.size(), 0.0);
  const auto count = static_cast<long long>(dataset.size());
  [[maybe_unused]] const int threads = thread_count(workers);
  std::vector<std::string> errors(dataset.size());
#pragma omp parallel for schedule(dynamic, 4) num_threads(threads) if (threads > 1)
  for (long long k = 0; k < count; ++k) {
    const auto i = static_cast<std::size_t>(k);
    try {
      const auto scores = forward_scores(dataset[i], model);
      result.predictions[i] = select<T>(scores);
      losses[i] = static_cast<double>(loss<T>(scores, dataset[i].gold));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) throw EvaluationError("instance '" + dataset[i].id + "': " + errors[i]);
  }
  std::size_t correct = 0;
  double total_loss = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    correct += result.predictions[i] == dataset[i].gold;
    total_loss += losses[i];
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  result.mean_loss = total_loss / static_cast<double>(dataset.size());
  return result;
}

TrainResult train(std::span<const QAInstance> train_set, std::span<const QAInstance> dev_set,
                  ModelBundle<float> model, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (train_set.empty()) throw ContractError("training set is empty");
  if (config.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(config.lr_encoder >= 0.0) || !(config.lr_head >= 0.0)) throw ConfigError("learning rates must be >= 0");

  TrainResult result;
  result.model = model;
  if (config.epochs == 0) return result;
  const std::span<const QAInstance> dev = dev_set.empty() ? train_set : dev_set;

  std::vector<std::string> names;
  std::vector<Matrix<float>*> params = tensor_list(model, &names);
  std::vector<float> rates;
  for (const auto& name : names) {
    rates.push_back(static_cast<float>(parameter_group(name) == "encoder" ? config.lr_encoder : config.lr_head));
  }

  const double dropout_rate = model.encoder.config.dropout;
  const int threads = thread_count(config.workers);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  result.best_dev_accuracy = -1.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng = Rng::derive(config.seed, epoch);
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t batch = std::min(config.batch_size, order.size() - start);
      std::vector<ModelBundle<float>> grads(batch);
      std::vector<double> losses(batch, 0.0);
      std::vector<std::string> errors(batch);
      std::vector<unsigned char> non_finite(batch, 0);
      const auto count = static_cast<long long>(batch);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads) if (threads > 1)
      for (long long k = 0; k < count; ++k) {
        const auto b = static_cast<std::size_t>(k);
        const std::size_t index = order[start + b];
        try {
          grads[b] = zeros_like(model);
          Rng dropout_rng = Rng::derive(config.seed ^ 0x64726f70ULL, epoch, index);
          const DropoutContext dropout{dropout_rate, &dropout_rng};
          losses[b] = instance_gradients<float>(train_set[index], model, grads[b],
                                                dropout_rate > 0.0 ? &dropout : nullptr);
        } catch (const EvaluationError& e) {
          errors[b] = e.what();
          non_finite[b] = 1;
        } catch (const std::exception& e) {
          errors[b] = e.what();
        }
      }
      for (std::size_t b = 0; b < batch; ++b) {
        const auto& instance = train_set[order[start + b]];
        if (!errors[b].empty() && !non_finite[b]) {
          throw EvaluationError("instance '" + instance.id + "': " + errors[b]);
        }
        if (non_finite[b] || !std::isfinite(losses[b])) {
          throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                std::to_string(start / config.batch_size) + " (instance '" + instance.id +
                                "'); lower the learning rates or enable gradient clipping");
        }
        epoch_loss += losses[b];
      }

      // Ordered reduction keeps the update independent of the worker count.
      std::vector<std::vector<Matrix<float>*>> grad_lists;
      grad_lists.reserve(batch);
      for (auto& g : grads) grad_lists.push_back(tensor_list(g));
      const float inv_batch = 1.0f / static_cast<float>(batch);
      for (std::size_t t = 0; t < params.size(); ++t) {
        Matrix<float>& sum = *grad_lists[0][t];
        for (std::size_t b = 1; b < batch; ++b) {
          const Matrix<float>& g = *grad_lists[b][t];
          for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
        }
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] *= inv_batch;
      }
      float scale = 1.0f;
      if (config.max_grad_norm > 0.0) {
        double norm2 = 0.0;
        for (std::size_t t = 0; t < params.size(); ++t) {
          for (float v : grad_lists[0][t]->values()) norm2 += static_cast<double>(v) * v;
        }
        const double norm = std::sqrt(norm2);
        if (norm > config.max_grad_norm) scale = static_cast<float>(config.max_grad_norm / norm);
      }
      for (std::size_t t = 0; t < params.size(); ++t) {
        Matrix<float>& p = *params[t];
        const Matrix<float>& g = *grad_lists[0][t];
        const float step = rates[t] * scale;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= step * g[i];
      }
      ++model.trained_steps;
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.train_loss = epoch_loss / static_cast<double>(train_set.size());
    metrics.dev_accuracy = evaluate<float>(dev, model, config.workers).accuracy;
    result.history.push_back(metrics);
    if (on_epoch) on_epoch(metrics);
    if (metrics.dev_accuracy > result.best_dev_accuracy) {
      result.best_dev_accuracy = metrics.dev_accuracy;
      result.best_epoch = epoch;
      result.model = model;
    }
    if (metrics.dev_accuracy >= config.target_accuracy) break;
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> argmax_signature(const ScoreTrace<double>& trace) {
  std::vector<std::size_t> sig;
  for (const auto& pass : trace.passes) {
    sig.insert(sig.end(), pass.question.argmax.begin(), pass.question.argmax.end());
    for (const auto& a : pass.answers) sig.insert(sig.end(), a.argmax.begin(), a.argmax.end());
  }
  return sig;
}

}  // namespace

GradCheckResult grad_check(const ModelBundle<double>& model, const QAInstance& instance,
                           const GradCheckOptions& options) {
  if (model.encoder.config.dropout != 0.0) throw ContractError("gradient checks require dropout = 0");
  if (!(options.epsilon > 0.0)) throw ConfigError("epsilon must be positive");

  ModelBundle<double> grads = zeros_like(model);
  instance_gradients<double>(instance, model, grads);

  ModelBundle<double> probe = model;
  std::vector<std::string> names;
  std::vector<Matrix<double>*> tensors = tensor_list(probe, &names);
  std::vector<Matrix<double>*> grad_tensors = tensor_list(grads);

  std::vector<std::size_t> selected;
  for (std::size_t t = 0; t < names.size(); ++t) {
    bool keep = options.include_prefixes.empty();
    for (const auto& prefix : options.include_prefixes) keep = keep || names[t].starts_with(prefix);
    if (keep) selected.push_back(t);
  }
  if (selected.empty()) throw ConfigError("no tensors match the gradient-check prefixes");

  // Token rows that can carry gradient.
  std::set<TokenId> tokens;
  {
    ScoreTrace<double> trace;
    forward_scores(instance, model, &trace);
    for (const auto& pass : trace.passes) tokens.insert(pass.layout.sequence.ids.begin(), pass.layout.sequence.ids.end());
  }
  const std::vector<TokenId> token_rows(tokens.begin(), tokens.end());

  const auto evaluate_loss = [&](std::vector<std::size_t>* signature) {
    ScoreTrace<double> trace;
    const auto scores = forward_scores(instance, probe, &trace);
    if (signature) *signature = argmax_signature(trace);
    return loss<double>(scores, instance.gold);
  };
  std::vector<std::size_t> base_signature;
  evaluate_loss(&base_signature);

  GradCheckResult result;
  Rng rng(options.seed);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  const std::size_t target = std::max(options.samples, selected.size());
  std::size_t attempts = 0;
  while (result.entries.size() < target && attempts < 50 * target) {
    ++attempts;
    const std::size_t pick = result.entries.size() < selected.size() ? result.entries.size()
                                                                        : static_cast<std::size_t>(rng.below(selected.size()));
    const std::size_t t = selected[pick];
    Matrix<double>& tensor = *tensors[t];
    std::size_t index;
    if (names[t] == "encoder.token_embedding") {
      index = token_rows[rng.below(token_rows.size())] * tensor.cols() + rng.below(tensor.cols());
    } else if (names[t] == "encoder.position_embedding") {
      std::size_t longest = 0;
      for (const auto& a : instance.answers) longest += a.size() + 1;
      longest = std::min(tensor.rows(), instance.question.size() + longest + 4);
      index = rng.below(longest) * tensor.cols() + rng.below(tensor.cols());
    } else {
      index = rng.below(tensor.size());
    }
    if (!seen.insert({t, index}).second && seen.size() < 1000000) continue;

    const double original = tensor[index];
    std::vector<std::size_t> sig_plus, sig_minus;
    tensor[index] = original + options.epsilon;
    const double plus = evaluate_loss(&sig_plus);
    tensor[index] = original - options.epsilon;
    const double minus = evaluate_loss(&sig_minus);
    tensor[index] = original;
    if (sig_plus != base_signature || sig_minus != base_signature) {
      ++result.skipped;
      continue;
    }
    GradCheckEntry entry;
    entry.tensor = names[t];
    entry.index = index;
    entry.analytic = (*grad_tensors[t])[index];
    entry.numeric = (plus - minus) / (2.0 * options.epsilon);
    const double denom = std::max({std::abs(entry.analytic), std::abs(entry.numeric), options.denominator_floor});
    entry.relative_error = std::abs(entry.analytic - entry.numeric) / denom;
    result.max_relative_error = std::max(result.max_relative_error, entry.relative_error);
    ++result.samples_per_tensor[entry.tensor];
    result.entries.push_back(std::move(entry));
  }
  return result;
}

template float instance_gradients<float>(const QAInstance&, const ModelBundle<float>&, ModelBundle<float>&,
                                         const DropoutContext*);
template double instance_gradients<double>(const QAInstance&, const ModelBundle<double>&, ModelBundle<double>&,
                                           const DropoutContext*);
template EvalResult evaluate<float>(std::span<const QAInstance>, const ModelBundle<float>&, int);
template EvalResult evaluate<double>(std::span<const QAInstance>, const ModelBundle<double>&, int);

}  // namespace mcqa
