// Acceptance gate: runs every criterion and prints one PASS/FAIL line each.
// Usage: acceptance [--report-dir DIR] [criterion ids...]   (no ids runs all nine)
// With --report-dir each criterion's line is also written to DIR/acceptance_<id>.txt.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcqa/bench.hpp"
#include "mcqa/errors.hpp"
#include "mcqa/layout.hpp"
#include "mcqa/pooling.hpp"
#include "mcqa/train.hpp"
#include "oracles.hpp"

using namespace mcqa;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_seconds;  // 0 = none
  std::function<Outcome()> run;
};

// Counts failed checks and keeps the first few messages.
class Tally {
 public:
  void check(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    ++failures_;
    if (messages_.size() < 5) messages_.push_back(what);
  }
  Outcome outcome(const std::string& summary) const {
    std::ostringstream os;
    os << summary << "; " << checks_ - failures_ << "/" << checks_ << " checks";
    for (const auto& m : messages_) os << "\n      " << m;
    return {failures_ == 0, os.str()};
  }

 private:
  std::size_t checks_ = 0, failures_ = 0;
  std::vector<std::string> messages_;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

const SyntheticTask kTask{};

EncoderConfig desk_config() {
  EncoderConfig c;
  c.vocab_size = kTask.vocab().size();
  return c;
}

ModelOptions options_for(Scheme s, bool gate, bool concat = true) {
  ModelOptions o;
  o.scheme = s;
  o.pooling = PoolingKind::Max;
  o.gate = gate;
  o.qa_concat = concat;
  return o;
}

const std::vector<QAInstance>& train_split() {
  static const auto data = generate_synthetic(1000, 5, 8, 2, 7, kTask);
  return data;
}

const std::vector<QAInstance>& dev_split() {
  static const auto data = generate_synthetic(200, 5, 8, 2, 8, kTask);
  return data;
}

TrainResult fit(const ModelOptions& options, std::uint64_t seed, double stop_at) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.target_accuracy = stop_at;
  return train(train_split(), dev_split(), init_model<float>(options, desk_config(), seed), cfg);
}

// 1AnP + MAX models shared by the learnability and pilot criteria.
const TrainResult& pairwise_model(std::uint64_t seed) {
  static std::map<std::uint64_t, TrainResult> cache;
  auto it = cache.find(seed);
  if (it == cache.end()) it = cache.emplace(seed, fit(options_for(Scheme::OneAnswerNPasses, false), seed, 0.95)).first;
  return it->second;
}

// ---------------------------------------------------------------------------

Outcome pooling_suite() {
  Tally t;
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = 1 + rng.below(16), d = 1 + rng.below(32);
    const auto m = oracle::random_matrix<double>(len, d, rng, 3.0);
    const std::size_t first = rng.below(len);
    const PositionRange span{first, first + rng.below(len - first)};
    const auto rows = oracle::rows_of(m, span.first, span.last);
    t.check(pool_max(m, span) == oracle::column_max(rows), "max differs on trial " + std::to_string(trial));
    t.check(pool_mean(m, span) == oracle::column_mean(rows), "mean differs on trial " + std::to_string(trial));

    std::vector<double> v(d);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    const auto att = pool_attentive<double>(m, span, v);
    const auto att_ref = oracle::attentive(rows, v);
    double worst = 0.0;
    for (std::size_t c = 0; c < d; ++c) worst = std::max(worst, std::abs(att[c] - att_ref[c]));
    t.check(worst < 1e-6, "attentive error " + fmt("%.3g", worst));

    const std::size_t layers = 1 + rng.below(6);
    LayerStates<double> states;
    for (std::size_t l = 0; l < layers; ++l) states.states.push_back(oracle::random_matrix<double>(len, d, rng, 3.0));
    std::vector<double> logits(layers);
    for (auto& x : logits) x = rng.uniform(-3.0, 3.0);
    const auto lw = pool_layerwise_cls<double>(states, logits);
    oracle::Rows bos;
    for (const auto& s : states.states) bos.push_back(oracle::rows_of(s, 0, 0)[0]);
    const auto lw_ref = oracle::weighted_sum(bos, oracle::softmax(logits));
    worst = 0.0;
    for (std::size_t c = 0; c < d; ++c) worst = std::max(worst, std::abs(lw[c] - lw_ref[c]));
    t.check(worst < 1e-6, "layerwise CLS error " + fmt("%.3g", worst));
  }
  return t.outcome("1000 random matrices");
}

Outcome layout_suite() {
  Tally t;
  Rng rng(202);
  for (int trial = 0; trial < 1000; ++trial) {
    QAInstance inst;
    inst.question.resize(1 + rng.below(40));
    for (auto& x : inst.question) x = static_cast<TokenId>(4 + rng.below(50));
    const std::size_t n = 1 + rng.below(8);
    std::size_t total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      inst.answers.emplace_back(1 + rng.below(10));
      for (auto& x : inst.answers.back()) x = static_cast<TokenId>(4 + rng.below(50));
      total += inst.answers.back().size();
    }
    const std::size_t q = inst.question.size();
    const std::string tag = " (trial " + std::to_string(trial) + ")";

    for (std::size_t i = 0; i < n; ++i) {
      const auto one = layout_1anp(inst, i);
      t.check(one.sequence.size() == q + inst.answers[i].size() + 4, "1AnP length" + tag);
      t.check(one.spans.question_span == PositionRange{0, q + 1}, "1AnP question span" + tag);
      t.check(one.spans.answer_spans.size() == 1 &&
                  one.spans.answer_spans[0] == PositionRange{q + 2, one.sequence.size() - 1},
              "1AnP answer span" + tag);
      const auto nanp = layout_nanp(inst, i);
      t.check(nanp.sequence.size() == q + total + n + inst.answers[i].size() + 4, "nAnP length" + tag);
    }

    const auto all = layout_na1p(inst);
    const auto& ids = all.sequence.ids;
    t.check(ids.size() == 1 + q + total + n + 2, "nA1P length" + tag);
    t.check(ids.front() == kBosId && ids.back() == kEosId, "nA1P frame" + tag);
    const auto& spans = all.spans.answer_spans;
    t.check(spans.size() == n, "nA1P span count" + tag);
    t.check(all.spans.question_span == PositionRange{0, q + 1}, "nA1P question span" + tag);
    if (spans.size() == n) {
      // Question span ends where the first answer span starts minus one; answer spans share one separator.
      t.check(spans.front().first == all.spans.question_span.last + 1, "first answer span start" + tag);
      t.check(spans.back().last == ids.size() - 1, "last answer span end" + tag);
      for (std::size_t j = 0; j < n; ++j) {
        t.check(ids[spans[j].first] == kEosId && ids[spans[j].last] == kEosId, "span separators" + tag);
        t.check(spans[j].size() == inst.answers[j].size() + 2, "span width" + tag);
        if (j + 1 < n) t.check(spans[j].last == spans[j + 1].first, "shared separator" + tag);
      }
    }
    if (n == 1) {
      t.check(all.sequence.ids == layout_1anp(inst, 0).sequence.ids, "nA1P(n=1) tokens" + tag);
      t.check(all.spans.answer_spans == layout_1anp(inst, 0).spans.answer_spans, "nA1P(n=1) spans" + tag);
    }
  }
  return t.outcome("1000 random instances");
}

Outcome gate_suite() {
  Tally t;
  Rng rng(303);

  {
    const auto p = init_gate<double>(8, 2, 3);
    const auto h = oracle::random_matrix<double>(1, 8, rng);
    Matrix<double> raw(4, 8);
    for (std::size_t i = 0; i < 4; ++i) std::copy_n(h.data(), 8, raw.row(i).data());
    const auto reps = gated_interaction(raw, p);
    bool exact = true;
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t c = 0; c < 8; ++c) exact = exact && reps.gated(i, c) == h[c];
    }
    t.check(exact, "identical answers are not a fixed point");
  }
  {
    auto p = init_gate<double>(6, 2, 4);
    p.w_self.zero();
    p.w_context.zero();
    p.bias.zero();
    const auto raw = oracle::random_matrix<double>(3, 6, rng);
    GateTrace<double> trace;
    gated_interaction(raw, p, &trace);
    bool half = true;
    for (std::size_t i = 0; i < trace.gamma.size(); ++i) half = half && trace.gamma[i] == 0.5;
    t.check(half, "zero parameters do not give gamma = 0.5");
  }

  double worst = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(5);
    const std::size_t heads = 1 + rng.below(3);
    const std::size_t d = heads * (1 + rng.below(6));
    const auto p = init_gate<double>(d, heads, rng.next());
    const auto raw = oracle::random_matrix<double>(n, d, rng, 2.0);
    GateTrace<double> trace;
    const auto reps = gated_interaction(raw, p, &trace);
    const auto o = oracle::recompute_gate(raw, p);
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) row += reps.weights(i, j);
        worst = std::max(worst, std::abs(reps.weights(i, j) - o.weights[i][j]));
      }
      t.check(reps.weights(i, i) == 0.0, "self weight is not zero");
      t.check(std::abs(row - 1.0) < 1e-6, "off-diagonal row sum " + fmt("%.12f", row));
      for (std::size_t c = 0; c < d; ++c) {
        worst = std::max(worst, std::abs(trace.context(i, c) - o.context[i][c]));
        worst = std::max(worst, std::abs(trace.gamma(i, c) - o.gamma[i][c]));
        worst = std::max(worst, std::abs(reps.gated(i, c) - o.gated[i][c]));
      }
    }

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    Matrix<double> shuffled(n, d);
    for (std::size_t i = 0; i < n; ++i) std::copy_n(raw.row(perm[i]).data(), d, shuffled.row(i).data());
    const auto moved = gated_interaction(shuffled, p);
    double drift = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) drift = std::max(drift, std::abs(moved.gated(i, c) - reps.gated(perm[i], c)));
    }
    t.check(drift < 1e-12, "permutation equivariance drift " + fmt("%.3g", drift));
  }
  t.check(worst < 1e-6, "oracle mismatch " + fmt("%.3g", worst));
  return t.outcome("300 random gates, max oracle error " + fmt("%.2g", worst));
}

Outcome gradient_check() {
  const auto inst = generate_synthetic(1, 5, 8, 2, 11, kTask)[0];
  const auto model = init_model<double>(options_for(Scheme::AllAnswersOnePass, true), desk_config(), 7);
  GradCheckOptions opts;
  opts.samples = 300;
  const auto r = grad_check(model, inst, opts);
  std::size_t tensors = 0, covered = 0;
  visit_model(model, [&](const std::string& name, const Matrix<double>&) {
    ++tensors;
    covered += r.samples_per_tensor.count(name);
  });
  std::set<std::string> groups;
  for (const auto& e : r.entries) groups.insert(std::string(parameter_group(e.tensor)));
  Outcome o;
  o.pass = r.max_relative_error < 1e-4 && r.entries.size() >= 200 && covered == tensors && groups.size() == 2;
  o.detail = "max relative error " + fmt("%.3g", r.max_relative_error) + " over " + std::to_string(r.entries.size()) +
             " samples (" + std::to_string(r.skipped) + " skipped), " + std::to_string(covered) + "/" +
             std::to_string(tensors) + " tensors covered";
  return o;
}

Outcome scheme_equivalence() {
  Tally t;
  Rng rng(505);
  std::vector<QAInstance> data;
  for (int i = 0; i < 200; ++i) {
    QAInstance inst;
    inst.id = "single-" + std::to_string(i);
    inst.question.resize(1 + rng.below(30));
    for (auto& x : inst.question) x = kTask.filler_token(rng.below(kTask.fillers));
    inst.answers.emplace_back(1 + rng.below(8));
    for (auto& x : inst.answers.back()) x = kTask.lock_token(rng.below(kTask.symbols));
    data.push_back(inst);
  }
  for (PoolingKind kind : {PoolingKind::Cls, PoolingKind::Max, PoolingKind::Mean, PoolingKind::Attentive,
                           PoolingKind::LayerwiseCls}) {
    auto base = options_for(Scheme::AllAnswersOnePass, true);
    base.pooling = kind;
    const auto shared = init_model<float>(base, desk_config(), 9);
    std::vector<ModelBundle<float>> variants;
    for (Scheme s : {Scheme::OneAnswerNPasses, Scheme::AllAnswersNPasses, Scheme::AllAnswersOnePass}) {
      ModelBundle<float> m = shared;
      m.options.scheme = s;
      m.options.gate = s == Scheme::AllAnswersOnePass;
      variants.push_back(m);
    }
    for (const auto& inst : data) {
      const auto ref = forward_scores(inst, variants[0]);
      for (std::size_t v = 1; v < variants.size(); ++v) {
        const auto s = forward_scores(inst, variants[v]);
        t.check(s == ref, std::string(to_string(kind)) + " scores differ for " + inst.id);
        t.check(select<float>(s) == select<float>(ref), "selection differs for " + inst.id);
      }
    }
  }
  return t.outcome("200 single-candidate instances x 5 poolings");
}

Outcome learnability() {
  const auto& pairwise = pairwise_model(7);
  const auto one_pass = fit(options_for(Scheme::AllAnswersOnePass, true), 7, 0.95);
  Outcome o;
  o.pass = pairwise.best_dev_accuracy >= 0.90 && pairwise.best_epoch <= 30 && one_pass.best_dev_accuracy >= 0.85;
  o.detail = "1AnP+MAX dev " + fmt("%.3f", pairwise.best_dev_accuracy) + " at epoch " +
             std::to_string(pairwise.best_epoch) + " (need 0.90); nA1P+MAX+gate dev " +
             fmt("%.3f", one_pass.best_dev_accuracy) + " at epoch " + std::to_string(one_pass.best_epoch) +
             " (need 0.85)";
  return o;
}

Outcome ablation() {
  const std::vector<std::uint64_t> seeds{7, 8, 9};
  const struct {
    const char* name;
    ModelOptions options;
  } arms[] = {{"gate+concat", options_for(Scheme::AllAnswersOnePass, true)},
              {"concat", options_for(Scheme::AllAnswersOnePass, false)},
              {"max only", options_for(Scheme::AllAnswersOnePass, false, false)}};
  std::vector<double> mean;
  std::ostringstream os;
  for (const auto& arm : arms) {
    double sum = 0.0;
    os << arm.name << " [";
    for (std::uint64_t seed : seeds) {
      const double acc = fit(arm.options, seed, 2.0).best_dev_accuracy;
      sum += acc;
      os << fmt(" %.3f", acc);
    }
    mean.push_back(sum / static_cast<double>(seeds.size()));
    os << " ] mean " << fmt("%.4f", mean.back()) << "; ";
  }
  Outcome o;
  o.pass = mean[0] >= mean[1] - 0.01 && mean[1] >= mean[2] - 0.01;
  o.detail = os.str() + "tolerance 0.01";
  return o;
}

Outcome efficiency() {
  const auto inst = generate_synthetic(1, 5, 48, 8, 13, kTask)[0];
  const std::vector<ModelBundle<float>> models{
      init_model<float>(options_for(Scheme::OneAnswerNPasses, false), desk_config(), 7),
      init_model<float>(options_for(Scheme::AllAnswersOnePass, true), desk_config(), 7)};
  BenchOptions opts;  // 1000 instances, 64 MiB, 3 repetitions, one worker
  const auto r = run_benchmark(models, inst, opts);
  const bool ratio_exact = r[0].cost.total_tokens == 300 && r[1].cost.total_tokens == 96;
  Outcome o;
  o.pass = ratio_exact && r[1].max_batch > r[0].max_batch && r[1].wall_time_seconds < r[0].wall_time_seconds;
  o.detail = "max batch " + std::to_string(r[0].max_batch) + " -> " + std::to_string(r[1].max_batch) + " (" +
             fmt("%+.1f%%", r[1].delta_batch_percent) + "), time " + fmt("%.2f s", r[0].wall_time_seconds) + " -> " +
             fmt("%.2f s", r[1].wall_time_seconds) + " (" + fmt("%+.1f%%", r[1].delta_time_percent) + "), tokens " +
             std::to_string(r[1].cost.total_tokens) + "/" + std::to_string(r[0].cost.total_tokens);
  return o;
}

Outcome pilot() {
  const std::vector<std::uint64_t> seeds{7, 8, 9};
  double first = 0.0, last = 0.0;
  std::ostringstream os;
  for (std::uint64_t seed : seeds) {
    const auto result = pilot_append_experiment(dev_split(), pairwise_model(seed).model, 4, seed);
    first += result.curve.front().accuracy;
    last += result.curve.back().accuracy;
    os << "seed " << seed << " [";
    for (const auto& p : result.curve) os << fmt(" %.3f", p.accuracy);
    os << " ]; ";
  }
  first /= static_cast<double>(seeds.size());
  last /= static_cast<double>(seeds.size());
  Outcome o;
  o.pass = first - last >= 0.02;
  o.detail = os.str() + "mean k=0 " + fmt("%.3f", first) + ", k=4 " + fmt("%.3f", last);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "pooling oracle suite", 10.0, pooling_suite},
      {2, "layout suite", 5.0, layout_suite},
      {3, "gate suite", 0.0, gate_suite},
      {4, "gradient check nA1P+MAX+gate", 60.0, gradient_check},
      {5, "scheme equivalence at n=1", 0.0, scheme_equivalence},
      {6, "learnability", 0.0, learnability},
      {7, "ablation ordering", 0.0, ablation},
      {8, "efficiency", 300.0, efficiency},
      {9, "pilot curve", 0.0, pilot},
  };
  std::set<int> selected;
  std::string report_dir;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--report-dir" && i + 1 < argc) {
      report_dir = argv[++i];
    } else {
      selected.insert(std::atoi(arg.c_str()));
    }
  }

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit_seconds > 0 && seconds >= c.time_limit_seconds) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f s", c.time_limit_seconds) + " limit";
    }
    failed += !o.pass;
    char head[160];
    std::snprintf(head, sizeof head, "%s [%d] %s (%.1f s): ", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), seconds);
    const std::string line = head + o.detail + "\n";
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    if (!report_dir.empty()) std::ofstream(report_dir + "/acceptance_" + std::to_string(c.id) + ".txt") << line;
  }
  return failed == 0 ? 0 : 1;
}
