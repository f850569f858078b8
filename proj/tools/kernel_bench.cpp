// Serial vs OpenMP timings for the dense kernels and batched encoding.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <vector>

#include "CLI11.hpp"
#include "mcqa/data.hpp"
#include "mcqa/encoder.hpp"
#include "mcqa/kernels.hpp"
#include "mcqa/layout.hpp"
#include "mcqa/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

template <typename F>
double median_seconds(int reps, F&& f) {
  f();
  std::vector<double> t;
  for (int r = 0; r < reps; ++r) {
    const auto start = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel benchmark: serial reference against OpenMP"};
  int reps = 5;
  int threads = 0;
  std::size_t sequences = 64;
  app.add_option("--repetitions", reps, "Timed repetitions per case");
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");
  app.add_option("--sequences", sequences, "Sequences per encode_batch call");
  CLI11_PARSE(app, argc, argv);
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif
  std::printf("threads: %d\n", mcqa::kernels::max_threads());
  std::printf("%-24s %12s %12s %8s %s\n", "case", "serial_ms", "omp_ms", "speedup", "identical");

  mcqa::Rng rng(1);
  for (const auto [m, k, n] : {std::array<std::size_t, 3>{96, 64, 64}, {96, 64, 256}, {256, 256, 256},
                               {512, 512, 512}}) {
    std::vector<float> a(m * k), b(k * n), c1(m * n), c2(m * n);
    for (auto& v : a) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : b) v = static_cast<float>(rng.uniform(-1, 1));
    const double ts = median_seconds(reps, [&] { mcqa::kernels::serial::gemm(m, k, n, a.data(), b.data(), c1.data(), false); });
    const double tp = median_seconds(reps, [&] { mcqa::kernels::omp::gemm(m, k, n, a.data(), b.data(), c2.data(), false); });
    char name[64];
    std::snprintf(name, sizeof name, "gemm %zux%zux%zu", m, k, n);
    std::printf("%-24s %12.3f %12.3f %8.2f %s\n", name, ts * 1e3, tp * 1e3, ts / tp, c1 == c2 ? "yes" : "no");
  }

  mcqa::SyntheticTask task;
  mcqa::EncoderConfig config;
  config.vocab_size = task.vocab().size();
  const auto params = mcqa::init_encoder<float>(config, 3);
  const auto instances = mcqa::generate_synthetic(sequences, 5, 48, 8, 3, task);
  std::vector<mcqa::TokenSequence> batch;
  for (const auto& inst : instances) batch.push_back(mcqa::layout_na1p(inst).sequence);
  std::vector<mcqa::LayerStates<float>> s1, s2;
  const double ts = median_seconds(reps, [&] { s1 = mcqa::encode_batch<float>(batch, params, 1); });
  const double tp = median_seconds(reps, [&] { s2 = mcqa::encode_batch<float>(batch, params, 0); });
  bool same = s1.size() == s2.size();
  for (std::size_t i = 0; same && i < s1.size(); ++i) same = s1[i].final() == s2[i].final();
  char name[64];
  std::snprintf(name, sizeof name, "encode_batch x%zu", sequences);
  std::printf("%-24s %12.3f %12.3f %8.2f %s\n", name, ts * 1e3, tp * 1e3, ts / tp, same ? "yes" : "no");
  return 0;
}
