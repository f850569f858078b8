// Command-line front end: train, eval, bench, pilot, gradcheck, cost, generate.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mcqa/bench.hpp"
#include "mcqa/checkpoint.hpp"
#include "mcqa/config.hpp"
#include "mcqa/errors.hpp"
#include "mcqa/kernels.hpp"
#include "mcqa/train.hpp"

using nlohmann::json;
using namespace mcqa;

namespace {

struct Args {
  std::string scheme = "1anp";
  std::string pooling = "max";
  std::string gate = "off";
  std::string qa_concat = "on";
  std::string config_path;
  std::uint64_t seed = 7;
  std::string out;
  std::string data;
  std::string dev;
  std::string test;
  std::string checkpoint;
  int workers = 0;

  std::size_t q_len = 8;
  std::size_t a_len = 2;
  std::size_t n = 5;
  std::size_t count = 1000;
  std::size_t instances = 1000;
  std::size_t repetitions = 3;
  std::size_t k_max = 4;
  std::size_t samples = 200;
  double target_accuracy = 2.0;
  double tolerance = 1e-4;
};

void add_model_flags(CLI::App* cmd, Args& a) {
  cmd->add_option("--scheme", a.scheme, "Encoding scheme")->check(CLI::IsMember({"1anp", "nanp", "na1p"}));
  cmd->add_option("--pooling", a.pooling, "Question pooling")
      ->check(CLI::IsMember({"cls", "max", "mean", "attentive", "layerwise-cls"}));
  cmd->add_option("--gate", a.gate, "Inter-answer gate (na1p only)")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--qa-concat", a.qa_concat, "Score [q; a] instead of a alone")->check(CLI::IsMember({"on", "off"}));
}

void add_common_flags(CLI::App* cmd, Args& a) {
  cmd->add_option("--config", a.config_path, "key = value config file");
  cmd->add_option("--seed", a.seed, "Random seed");
  cmd->add_option("--out", a.out, "Write the JSON report here (default: stdout)");
  cmd->add_option("--workers", a.workers, "OpenMP threads (0 = runtime default)");
}

RunConfig run_config(const Args& a) {
  RunConfig config;
  if (!a.config_path.empty()) config = load_config(a.config_path);
  return config;
}

ModelOptions model_options(const Args& a) {
  ModelOptions o;
  o.scheme = parse_scheme(a.scheme);
  o.pooling = parse_pooling(a.pooling);
  o.gate = a.gate == "on";
  o.qa_concat = a.qa_concat == "on";
  o.validate();
  return o;
}

json config_json(const RunConfig& c) {
  return {{"d_model", c.encoder.d_model},       {"n_layers", c.encoder.n_layers},
          {"n_heads", c.encoder.n_heads},       {"d_ff", c.encoder.d_ff},
          {"max_len", c.encoder.max_len},       {"dropout", c.encoder.dropout},
          {"lr_encoder", c.train.lr_encoder},   {"lr_head", c.train.lr_head},
          {"epochs", c.train.epochs},           {"batch_size", c.train.batch_size},
          {"memory_budget_bytes", c.memory_budget_bytes}};
}

json options_json(const ModelOptions& o) {
  return {{"scheme", std::string(to_string(o.scheme))},
          {"pooling", std::string(to_string(o.pooling))},
          {"gate", o.gate},
          {"qa_concat", o.qa_concat}};
}

json environment_json(int workers) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return {{"timestamp", stamp},
          {"max_threads", kernels::max_threads()},
          {"workers", workers},
          {"compiler", __VERSION__},
          {"cxx_standard", __cplusplus}};
}

void emit(const json& report, const std::string& path) {
  if (path.empty()) {
    std::cout << report.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write report " + path);
  out << report.dump(2) << "\n";
}

struct Data {
  Vocab vocab;
  std::vector<QAInstance> train, dev, test;
};

// Files when given, otherwise the synthetic key/lock task.
Data load_data(const Args& a, const Vocab* fixed_vocab) {
  Data d;
  if (a.data.empty()) {
    SyntheticTask task;
    d.vocab = task.vocab();
    d.train = generate_synthetic(a.count, a.n, a.q_len, a.a_len, a.seed, task);
    d.dev = generate_synthetic(std::max<std::size_t>(a.count / 5, 1), a.n, a.q_len, a.a_len, a.seed + 1, task);
    d.test = generate_synthetic(std::max<std::size_t>(a.count / 5, 1), a.n, a.q_len, a.a_len, a.seed + 2, task);
    return d;
  }
  Dataset train = load_dataset(a.data, fixed_vocab);
  d.vocab = fixed_vocab ? *fixed_vocab : train.vocab;
  d.train = std::move(train.instances);
  if (!a.dev.empty()) d.dev = load_dataset(a.dev, &d.vocab).instances;
  if (!a.test.empty()) d.test = load_dataset(a.test, &d.vocab).instances;
  return d;
}

json history_json(const std::vector<EpochMetrics>& history) {
  json out = json::array();
  for (const auto& m : history) {
    out.push_back({{"epoch", m.epoch}, {"train_loss", m.train_loss}, {"dev_accuracy", m.dev_accuracy}});
  }
  return out;
}

int cmd_train(const Args& a) {
  RunConfig config = run_config(a);
  config.train.seed = a.seed;
  config.train.workers = a.workers;
  config.train.target_accuracy = a.target_accuracy;
  const ModelOptions options = model_options(a);
  Data data = load_data(a, nullptr);
  config.encoder.vocab_size = data.vocab.size();

  auto model = init_model<float>(options, config.encoder, a.seed);
  const auto result = train(data.train, data.dev, model, config.train, [](const EpochMetrics& m) {
    std::fprintf(stderr, "epoch %zu  loss %.4f  dev %.4f\n", m.epoch, m.train_loss, m.dev_accuracy);
  });
  if (!a.checkpoint.empty()) save_checkpoint(a.checkpoint, result.model, &data.vocab);

  json report;
  report["command"] = "train";
  report["config"] = config_json(config);
  report["options"] = options_json(options);
  report["seed"] = a.seed;
  report["metrics"] = {{"history", history_json(result.history)},
                       {"best_epoch", result.best_epoch},
                       {"best_dev_accuracy", result.best_dev_accuracy},
                       {"parameters", parameter_count(result.model)}};
  if (!data.test.empty()) {
    const auto test = evaluate<float>(data.test, result.model, a.workers);
    report["metrics"]["test_accuracy"] = test.accuracy;
    report["metrics"]["test_loss"] = test.mean_loss;
  }
  report["environment"] = environment_json(a.workers);
  emit(report, a.out);
  return 0;
}

Checkpoint require_checkpoint(const Args& a) {
  if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return load_checkpoint(a.checkpoint);
}

int cmd_eval(const Args& a) {
  const Checkpoint ck = require_checkpoint(a);
  const Vocab vocab = ck.vocab ? *ck.vocab : SyntheticTask{}.vocab();
  const Data data = load_data(a, &vocab);
  const auto& set = a.data.empty() ? data.test : data.train;
  const auto result = evaluate<float>(set, ck.model, a.workers);
  json report;
  report["command"] = "eval";
  report["options"] = options_json(ck.model.options);
  report["metrics"] = {{"accuracy", result.accuracy}, {"mean_loss", result.mean_loss}, {"instances", set.size()}};
  report["environment"] = environment_json(a.workers);
  emit(report, a.out);
  return 0;
}

json cost_json(const CostEstimate& c) {
  return {{"passes", c.passes},
          {"pass_lengths", c.pass_lengths},
          {"total_tokens", c.total_tokens},
          {"attention_units", c.attention_units},
          {"attention_flops", c.attention_flops}};
}

int cmd_cost(const Args& a) {
  RunConfig config = run_config(a);
  const std::vector<std::size_t> answers(a.n, a.a_len);
  json report;
  report["command"] = "cost";
  report["config"] = config_json(config);
  report["workload"] = {{"question_len", a.q_len}, {"answer_len", a.a_len}, {"n", a.n}};
  const auto base = estimate_cost(a.q_len, answers, Scheme::OneAnswerNPasses, config.encoder);
  for (Scheme s : {Scheme::OneAnswerNPasses, Scheme::AllAnswersNPasses, Scheme::AllAnswersOnePass}) {
    const auto c = estimate_cost(a.q_len, answers, s, config.encoder);
    json entry = cost_json(c);
    entry["token_ratio_vs_1anp"] = static_cast<double>(c.total_tokens) / static_cast<double>(base.total_tokens);
    report["schemes"][std::string(to_string(s))] = entry;
  }
  emit(report, a.out);
  return 0;
}

int cmd_bench(const Args& a) {
  RunConfig config = run_config(a);
  SyntheticTask task;
  config.encoder.vocab_size = task.vocab().size();
  config.encoder.max_len = std::max(config.encoder.max_len, a.q_len + a.n * (a.a_len + 1) + 8);
  const QAInstance instance = generate_synthetic(1, a.n, a.q_len, a.a_len, a.seed, task)[0];

  ModelOptions baseline;
  baseline.pooling = parse_pooling(a.pooling);
  ModelOptions candidate = baseline;
  candidate.scheme = a.scheme == "1anp" ? Scheme::AllAnswersOnePass : parse_scheme(a.scheme);
  candidate.gate = a.gate == "on" && candidate.scheme == Scheme::AllAnswersOnePass;
  const std::vector<ModelBundle<float>> models{init_model<float>(baseline, config.encoder, a.seed),
                                               init_model<float>(candidate, config.encoder, a.seed)};
  BenchOptions bo;
  bo.instances = a.instances;
  bo.memory_budget_bytes = config.memory_budget_bytes;
  bo.repetitions = a.repetitions;
  bo.workers = a.workers > 0 ? a.workers : 1;
  const auto reports = run_benchmark(models, instance, bo);

  json report;
  report["command"] = "bench";
  report["config"] = config_json(config);
  report["workload"] = {{"question_len", a.q_len}, {"answer_len", a.a_len}, {"n", a.n},
                        {"instances", a.instances}, {"repetitions", a.repetitions}};
  for (const auto& r : reports) {
    report["reports"].push_back({{"scheme", std::string(to_string(r.scheme))},
                                 {"max_batch", r.max_batch},
                                 {"peak_bytes", r.peak_bytes},
                                 {"wall_time_seconds", r.wall_time_seconds},
                                 {"repetition_seconds", r.repetition_seconds},
                                 {"delta_batch_percent", r.delta_batch_percent},
                                 {"delta_time_percent", r.delta_time_percent},
                                 {"cost", cost_json(r.cost)}});
  }
  report["token_ratio"] = static_cast<double>(reports[1].cost.total_tokens) /
                          static_cast<double>(reports[0].cost.total_tokens);
  report["environment"] = environment_json(bo.workers);
  emit(report, a.out);
  return 0;
}

int cmd_pilot(const Args& a) {
  Vocab vocab;
  ModelBundle<float> model;
  std::optional<Checkpoint> ck;
  if (!a.checkpoint.empty()) {
    ck = load_checkpoint(a.checkpoint);
    model = ck->model;
    vocab = ck->vocab ? *ck->vocab : SyntheticTask{}.vocab();
  }
  Data data = load_data(a, ck ? &vocab : nullptr);
  if (!ck) {
    RunConfig config = run_config(a);
    config.encoder.vocab_size = data.vocab.size();
    config.train.seed = a.seed;
    config.train.workers = a.workers;
    config.train.target_accuracy = a.target_accuracy;
    Args pairwise = a;
    pairwise.scheme = "1anp";
    pairwise.gate = "off";
    model = train(data.train, data.dev, init_model<float>(model_options(pairwise), config.encoder, a.seed),
                  config.train)
                .model;
  }
  const auto& set = !data.dev.empty() ? data.dev : data.train;
  const auto result = pilot_append_experiment(set, model, a.k_max, a.seed, a.workers);
  for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  json report;
  report["command"] = "pilot";
  report["options"] = options_json(model.options);
  report["seed"] = a.seed;
  for (const auto& p : result.curve) report["metrics"]["curve"].push_back({{"k", p.k}, {"accuracy", p.accuracy}});
  report["warnings"] = result.warnings;
  report["environment"] = environment_json(a.workers);
  emit(report, a.out);
  return 0;
}

int cmd_gradcheck(const Args& a) {
  RunConfig config = run_config(a);
  config.encoder.dropout = 0.0;
  const ModelOptions options = model_options(a);
  SyntheticTask task;
  config.encoder.vocab_size = task.vocab().size();
  const QAInstance instance = generate_synthetic(1, a.n, a.q_len, a.a_len, a.seed, task)[0];
  const auto model = init_model<double>(options, config.encoder, a.seed);
  GradCheckOptions go;
  go.samples = a.samples;
  go.seed = a.seed;
  const auto result = grad_check(model, instance, go);

  json report;
  report["command"] = "gradcheck";
  report["config"] = config_json(config);
  report["options"] = options_json(options);
  report["metrics"] = {{"max_relative_error", result.max_relative_error},
                       {"samples", result.entries.size()},
                       {"skipped", result.skipped},
                       {"tolerance", a.tolerance},
                       {"passed", result.max_relative_error < a.tolerance},
                       {"samples_per_tensor", result.samples_per_tensor}};
  report["environment"] = environment_json(a.workers);
  emit(report, a.out);
  return result.max_relative_error < a.tolerance ? 0 : 1;
}

int cmd_generate(const Args& a) {
  if (a.out.empty()) throw ConfigError("--out is required for generate");
  SyntheticTask task;
  const auto instances = generate_synthetic(a.count, a.n, a.q_len, a.a_len, a.seed, task);
  save_dataset(a.out, instances, task.vocab());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiple-choice QA encoders: pairwise and single-pass scoring"};
  app.require_subcommand(1);
  Args a;

  auto* train_cmd = app.add_subcommand("train", "Train a model and report per-epoch metrics");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* bench_cmd = app.add_subcommand("bench", "Batch-size and wall-time benchmark of 1anp against another scheme");
  auto* pilot_cmd = app.add_subcommand("pilot", "Accuracy of a pairwise model as candidates are appended");
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check in double precision");
  auto* cost_cmd = app.add_subcommand("cost", "Analytic token and attention cost per scheme");
  auto* gen_cmd = app.add_subcommand("generate", "Write a synthetic key/lock dataset as JSON Lines");

  for (auto* cmd : {train_cmd, eval_cmd, bench_cmd, pilot_cmd, grad_cmd, cost_cmd, gen_cmd}) add_common_flags(cmd, a);
  for (auto* cmd : {train_cmd, pilot_cmd, grad_cmd, bench_cmd}) add_model_flags(cmd, a);
  for (auto* cmd : {train_cmd, eval_cmd, pilot_cmd}) {
    cmd->add_option("--data", a.data, "Training (or evaluation) JSON Lines file; synthetic data when omitted");
    cmd->add_option("--dev", a.dev, "Dev JSON Lines file");
    cmd->add_option("--test", a.test, "Test JSON Lines file");
    cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint path");
  }
  for (auto* cmd : {train_cmd, pilot_cmd}) {
    cmd->add_option("--target-accuracy", a.target_accuracy, "Stop once dev accuracy reaches this");
  }
  for (auto* cmd : {train_cmd, eval_cmd, pilot_cmd, grad_cmd, bench_cmd, cost_cmd, gen_cmd}) {
    cmd->add_option("--q-len", a.q_len, "Synthetic question length");
    cmd->add_option("--a-len", a.a_len, "Synthetic answer length");
    cmd->add_option("--n", a.n, "Answers per question");
  }
  for (auto* cmd : {train_cmd, eval_cmd, pilot_cmd, gen_cmd}) {
    cmd->add_option("--count", a.count, "Synthetic training instances");
  }
  bench_cmd->add_option("--instances", a.instances, "Duplicated instances per timing run");
  bench_cmd->add_option("--repetitions", a.repetitions, "Timing repetitions (median reported)");
  pilot_cmd->add_option("--k-max", a.k_max, "Largest number of appended candidates");
  grad_cmd->add_option("--samples", a.samples, "Sampled parameters");
  grad_cmd->add_option("--tolerance", a.tolerance, "Maximum relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(a);
    if (*eval_cmd) return cmd_eval(a);
    if (*bench_cmd) return cmd_bench(a);
    if (*pilot_cmd) return cmd_pilot(a);
    if (*grad_cmd) return cmd_gradcheck(a);
    if (*cost_cmd) return cmd_cost(a);
    if (*gen_cmd) return cmd_generate(a);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
