#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mcqa/model.hpp"

namespace mcqa {

struct CostEstimate {
  std::size_t passes = 0;
  std::vector<std::size_t> pass_lengths;
  std::size_t total_tokens = 0;
  /// Sum of seq_len^2 over passes (one layer).
  std::size_t attention_units = 0;
  /// n_layers * d_model * attention_units.
  std::size_t attention_flops = 0;
};

/// Analytic encoder cost of one instance under `scheme`, ignoring truncation.
CostEstimate estimate_cost(std::size_t question_len, std::span<const std::size_t> answer_lens, Scheme scheme,
                           const EncoderConfig& config);

/// Deterministic byte accounting with a hard budget.
class MemoryAccountant {
 public:
  explicit MemoryAccountant(std::size_t budget) : budget_(budget) {}

  /// Returns false (and records nothing) when the request would exceed the budget.
  bool allocate(std::size_t bytes);
  void release(std::size_t bytes);

  std::size_t budget() const { return budget_; }
  std::size_t live() const { return live_; }
  std::size_t peak() const { return peak_; }

 private:
  std::size_t budget_;
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
};

inline constexpr std::size_t kValueBytes = sizeof(float);

std::size_t weight_bytes(const EncoderConfig& config);
/// Layer states kept for pooling: (n_layers + 1) * seq_len * d_model values.
std::size_t resident_state_bytes(std::size_t seq_len, const EncoderConfig& config);
/// Per-layer scratch: q, k, v and context (4 seq_len d_model), attention
/// weights (n_heads seq_len^2) and the feed-forward hidden layer (seq_len d_ff).
std::size_t transient_bytes(std::size_t seq_len, const EncoderConfig& config);

/// Replays inference of `batch` copies of an instance whose passes have the
/// given lengths. Returns true when the peak stays within the budget.
bool batch_fits(std::size_t batch, std::span<const std::size_t> pass_lengths, const EncoderConfig& config,
                std::size_t budget, std::size_t* peak = nullptr);

/// Largest fitting batch, by doubling then binary search, capped at `limit`.
/// Throws ConfigError when a batch of one does not fit.
std::size_t find_max_batch(std::span<const std::size_t> pass_lengths, const EncoderConfig& config, std::size_t budget,
                           std::size_t limit);

struct BenchOptions {
  std::size_t instances = 1000;
  std::size_t memory_budget_bytes = std::size_t{64} << 20;
  std::size_t repetitions = 3;
  int workers = 1;
};

struct BenchReport {
  Scheme scheme = Scheme::OneAnswerNPasses;
  std::size_t max_batch = 0;
  std::size_t peak_bytes = 0;
  double wall_time_seconds = 0.0;
  std::vector<double> repetition_seconds;
  CostEstimate cost;
  /// Percent change against the baseline report (zero for the baseline itself).
  double delta_batch_percent = 0.0;
  double delta_time_percent = 0.0;
};

/// Duplicates `instance` to `instances` copies and runs batched inference for
/// each model at its own max batch. One warm-up batch is excluded; the
/// reported time is the median over repetitions. Deltas are relative to the
/// first model.
std::vector<BenchReport> run_benchmark(std::span<const ModelBundle<float>> models, const QAInstance& instance,
                                       const BenchOptions& options);

/// Scores of every instance in one batch of pairwise or one-pass inference.
std::vector<std::vector<float>> infer_batch(std::span<const QAInstance> batch, const ModelBundle<float>& model,
                                            int workers = 1);

struct PilotPoint {
  std::size_t k = 0;
  double accuracy = 0.0;
};

struct PilotResult {
  std::vector<PilotPoint> curve;
  std::vector<std::string> warnings;
};

/// Evaluates a pairwise model with k = 0..k_max randomly chosen candidates
/// appended to each question. Choices depend only on (seed, instance, k).
PilotResult pilot_append_experiment(std::span<const QAInstance> dataset, const ModelBundle<float>& model,
                                    std::size_t k_max, std::uint64_t seed, int workers = 0);

}  // namespace mcqa
