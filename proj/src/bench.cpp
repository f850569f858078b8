#include "mcqa/bench.hpp"

#include <algorithm>
#include <chrono>

#include "mcqa/errors.hpp"
#include "mcqa/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mcqa {

CostEstimate estimate_cost(std::size_t question_len, std::span<const std::size_t> answer_lens, Scheme scheme,
                           const EncoderConfig& config) {
  CostEstimate cost;
  const std::size_t n = answer_lens.size();
  std::size_t answers_total = 0;
  for (std::size_t a : answer_lens) answers_total += a;

  switch (scheme) {
    case Scheme::OneAnswerNPasses:
      for (std::size_t a : answer_lens) cost.pass_lengths.push_back(question_len + a + 4);
      break;
    case Scheme::AllAnswersNPasses: {
      const std::size_t extended = n == 1 ? question_len : question_len + answers_total + n;
      for (std::size_t a : answer_lens) cost.pass_lengths.push_back(extended + a + 4);
      break;
    }
    case Scheme::AllAnswersOnePass:
      if (n > 0) cost.pass_lengths.push_back(1 + question_len + answers_total + n + 2);
      break;
  }
  cost.passes = cost.pass_lengths.size();
  for (std::size_t len : cost.pass_lengths) {
    cost.total_tokens += len;
    cost.attention_units += len * len;
  }
  cost.attention_flops = config.n_layers * config.d_model * cost.attention_units;
  return cost;
}

bool MemoryAccountant::allocate(std::size_t bytes) {
  if (bytes > budget_ || live_ > budget_ - bytes) return false;
  live_ += bytes;
  peak_ = std::max(peak_, live_);
  return true;
}

void MemoryAccountant::release(std::size_t bytes) {
  if (bytes > live_) throw ContractError("releasing more bytes than are live");
  live_ -= bytes;
}

std::size_t weight_bytes(const EncoderConfig& config) { return encoder_parameter_count(config) * kValueBytes; }

std::size_t resident_state_bytes(std::size_t seq_len, const EncoderConfig& config) {
  return (config.n_layers + 1) * seq_len * config.d_model * kValueBytes;
}

std::size_t transient_bytes(std::size_t seq_len, const EncoderConfig& config) {
  return (4 * seq_len * config.d_model + config.n_heads * seq_len * seq_len + seq_len * config.d_ff) * kValueBytes;
}

bool batch_fits(std::size_t batch, std::span<const std::size_t> pass_lengths, const EncoderConfig& config,
                std::size_t budget, std::size_t* peak) {
  MemoryAccountant memory(budget);
  const auto report = [&](bool ok) {
    if (peak) *peak = memory.peak();
    return ok;
  };
  if (!memory.allocate(weight_bytes(config))) return report(false);
  // Every sequence of the batch is in flight at once.
  std::size_t states = 0;
  for (std::size_t len : pass_lengths) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (!memory.allocate(resident_state_bytes(len, config))) return report(false);
      states += resident_state_bytes(len, config);
    }
  }
  for (std::size_t layer = 0; layer < config.n_layers; ++layer) {
    std::size_t scratch = 0;
    for (std::size_t len : pass_lengths) {
      for (std::size_t b = 0; b < batch; ++b) {
        if (!memory.allocate(transient_bytes(len, config))) return report(false);
        scratch += transient_bytes(len, config);
      }
    }
    memory.release(scratch);
  }
  memory.release(states);
  return report(true);
}

std::size_t find_max_batch(std::span<const std::size_t> pass_lengths, const EncoderConfig& config, std::size_t budget,
                           std::size_t limit) {
  if (limit == 0) throw ConfigError("batch limit must be at least 1");
  if (!batch_fits(1, pass_lengths, config, budget)) {
    throw ConfigError("memory budget of " + std::to_string(budget) + " bytes cannot hold a batch of one");
  }
  std::size_t good = 1;
  std::size_t bad = 0;
  while (bad == 0) {
    const std::size_t next = std::min(good * 2, limit);
    if (next == good) return good;
    if (batch_fits(next, pass_lengths, config, budget)) {
      good = next;
    } else {
      bad = next;
    }
  }
  while (bad - good > 1) {
    const std::size_t mid = good + (bad - good) / 2;
    (batch_fits(mid, pass_lengths, config, budget) ? good : bad) = mid;
  }
  return good;
}

std::vector<std::vector<float>> infer_batch(std::span<const QAInstance> batch, const ModelBundle<float>& model,
                                            int workers) {
  std::vector<std::vector<Layout>> layouts;
  std::vector<TokenSequence> sequences;
  for (const auto& instance : batch) {
    layouts.push_back(scheme_layouts(instance, model.options, model.encoder.config.max_len));
    for (const auto& l : layouts.back()) sequences.push_back(l.sequence);
  }
  const auto states = encode_batch<float>(sequences, model.encoder, workers);
  std::vector<std::vector<float>> scores;
  std::size_t next = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t passes = layouts[i].size();
    scores.push_back(score_encoded<float>(batch[i], model, layouts[i],
                                          std::span<const LayerStates<float>>(states).subspan(next, passes)));
    next += passes;
  }
  return scores;
}

std::vector<BenchReport> run_benchmark(std::span<const ModelBundle<float>> models, const QAInstance& instance,
                                       const BenchOptions& options) {
  if (options.instances == 0) throw ContractError("benchmark needs at least one instance");
  if (options.repetitions == 0) throw ContractError("benchmark needs at least one repetition");
  if (models.empty()) return {};
  for (const auto& m : models) {
    if (!(m.encoder.config == models[0].encoder.config)) {
      throw ContractError("benchmarked models must share the encoder config");
    }
  }

  std::vector<std::size_t> answer_lens;
  for (const auto& a : instance.answers) answer_lens.push_back(a.size());

  std::vector<BenchReport> reports;
  for (const auto& model : models) {
    const auto& config = model.encoder.config;
    BenchReport r;
    r.scheme = model.options.scheme;
    r.cost = estimate_cost(instance.question.size(), answer_lens, r.scheme, config);
    r.max_batch = find_max_batch(r.cost.pass_lengths, config, options.memory_budget_bytes, options.instances);
    batch_fits(r.max_batch, r.cost.pass_lengths, config, options.memory_budget_bytes, &r.peak_bytes);

    const std::vector<QAInstance> batch(r.max_batch, instance);
    infer_batch(batch, model, options.workers);  // warm-up
    for (std::size_t rep = 0; rep < options.repetitions; ++rep) {
      const auto start = std::chrono::steady_clock::now();
      for (std::size_t done = 0; done < options.instances; done += r.max_batch) {
        const std::size_t size = std::min(r.max_batch, options.instances - done);
        infer_batch(std::span<const QAInstance>(batch).first(size), model, options.workers);
      }
      r.repetition_seconds.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    std::vector<double> sorted = r.repetition_seconds;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    r.wall_time_seconds = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    reports.push_back(std::move(r));
  }
  const BenchReport& base = reports.front();
  for (auto& r : reports) {
    r.delta_batch_percent = 100.0 * (static_cast<double>(r.max_batch) - static_cast<double>(base.max_batch)) /
                            static_cast<double>(base.max_batch);
    r.delta_time_percent = 100.0 * (r.wall_time_seconds - base.wall_time_seconds) / base.wall_time_seconds;
  }
  return reports;
}

PilotResult pilot_append_experiment(std::span<const QAInstance> dataset, const ModelBundle<float>& model,
                                    std::size_t k_max, std::uint64_t seed, int workers) {
  if (model.options.scheme == Scheme::AllAnswersOnePass) {
    throw ContractError("the pilot experiment needs a pairwise-scheme model");
  }
  if (dataset.empty()) throw ContractError("pilot dataset is empty");
  for (const auto& instance : dataset) {
    if (k_max >= instance.answers.size()) {
      throw ContractError("k_max must be below the candidate count of every instance");
    }
  }
  PilotResult result;
  if (model.trained_steps == 0) result.warnings.push_back("model has not been trained; the curve reflects random weights");

#ifdef _OPENMP
  const int threads = workers > 0 ? workers : omp_get_max_threads();
#else
  (void)workers;
  const int threads = 1;
#endif
  for (std::size_t k = 0; k <= k_max; ++k) {
    std::vector<unsigned char> correct(dataset.size(), 0);
    std::vector<std::string> errors(dataset.size());
    const auto count = static_cast<long long>(dataset.size());
#pragma omp parallel for schedule(dynamic, 4) num_threads(threads) if (threads > 1)
    for (long long idx = 0; idx < count; ++idx) {
      const auto i = static_cast<std::size_t>(idx);
      try {
        const QAInstance& instance = dataset[i];
        std::vector<std::size_t> pool(instance.answers.size());
        for (std::size_t a = 0; a < pool.size(); ++a) pool[a] = a;
        Rng rng = Rng::derive(seed, i, k);
        rng.shuffle(pool);
        pool.resize(k);
        const auto scores = forward_scores_appended<float>(instance, model, pool);
        correct[i] = select<float>(scores) == instance.gold;
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (!errors[i].empty()) throw EvaluationError("instance '" + dataset[i].id + "': " + errors[i]);
      hits += correct[i];
    }
    result.curve.push_back({k, static_cast<double>(hits) / static_cast<double>(dataset.size())});
  }
  return result;
}

}  // namespace mcqa
