#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mcqa/model.hpp"

namespace mcqa {

struct TrainConfig {
  /// Plain mini-batch gradient descent with separate rates for the encoder
  /// body and for the pooling, gate and scoring heads.
  double lr_encoder = 0.03;
  double lr_head = 0.1;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 7;
  /// Stop after the first epoch whose dev accuracy reaches this value; > 1 disables.
  double target_accuracy = 2.0;
  /// Global gradient-norm clip; 0 disables.
  double max_grad_norm = 0.0;
  /// OpenMP threads for per-instance gradients and evaluation (0 = runtime default).
  int workers = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
};

struct TrainResult {
  /// Parameters from the epoch with the best dev accuracy (earliest on ties).
  ModelBundle<float> model;
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_dev_accuracy = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<std::size_t> predictions;
};

template <typename T>
EvalResult evaluate(std::span<const QAInstance> dataset, const ModelBundle<T>& model, int workers = 0);

/// Deterministic given config.seed, independent of the worker count.
/// Throws DivergenceError when a loss turns non-finite.
TrainResult train(std::span<const QAInstance> train_set, std::span<const QAInstance> dev_set,
                  ModelBundle<float> model, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Loss and parameter gradients of one instance.
template <typename T>
T instance_gradients(const QAInstance& instance, const ModelBundle<T>& model, ModelBundle<T>& grads,
                     const DropoutContext* dropout = nullptr);

struct GradCheckOptions {
  double epsilon = 1e-5;
  std::size_t samples = 200;
  std::uint64_t seed = 0;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double denominator_floor = 1e-5;
  /// Only tensors whose names start with one of these prefixes; empty means all.
  std::vector<std::string> include_prefixes;
};

struct GradCheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<GradCheckEntry> entries;
  /// Samples dropped because a max-pool argmax changed inside the difference stencil.
  std::size_t skipped = 0;
  std::map<std::string, std::size_t> samples_per_tensor;
};

/// Central finite differences of the instance loss against analytic
/// gradients. Every selected tensor gets at least one sample; the rest are
/// spread uniformly over tensors. Embedding rows are drawn from tokens that
/// occur in the encoded sequences.
GradCheckResult grad_check(const ModelBundle<double>& model, const QAInstance& instance,
                           const GradCheckOptions& options = {});

}  // namespace mcqa
