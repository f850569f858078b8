#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "mcqa/errors.hpp"
#include "mcqa/pooling.hpp"
#include "oracles.hpp"

using namespace mcqa;

namespace {

Matrix<double> mat(std::size_t rows, std::size_t cols, std::vector<double> v) { return {rows, cols, std::move(v)}; }

LayerStates<double> states_of(std::vector<Matrix<double>> layers) { return LayerStates<double>{std::move(layers)}; }

}  // namespace

TEST_CASE("CLS reads the final-layer BOS row") {
  const auto states = states_of({mat(3, 2, {9, 9, 9, 9, 9, 9}), mat(3, 2, {1, 2, 3, 4, 5, 6})});
  CHECK(pool_cls(states, {0, 2}) == std::vector<double>{1, 2});
  CHECK(pool_cls(states, {0, 1}) == std::vector<double>{1, 2});
  CHECK(pool_cls(states_of({mat(1, 2, {7, 8})}), {0, 0}) == std::vector<double>{7, 8});
  CHECK_THROWS_AS(pool_cls(states, {1, 2}), ContractError);
}

TEST_CASE("max pooling") {
  CHECK(pool_max(mat(3, 2, {1, 4, 3, 2, 0, 5})) == std::vector<double>{3, 5});
  CHECK(pool_max(mat(1, 3, {1, -2, 3})) == std::vector<double>{1, -2, 3});
  std::vector<std::size_t> argmax;
  const auto rows = mat(4, 2, {0, 0, 2, 1, 2, 1, 1, 1});
  CHECK(pool_max(rows, {1, 3}, &argmax) == std::vector<double>{2, 1});
  CHECK(argmax == std::vector<std::size_t>{1, 1});  // ties go to the lowest row
  CHECK_THROWS_AS(pool_max(rows, {3, 2}), ContractError);
  CHECK_THROWS_AS(pool_max(rows, {2, 4}), ContractError);
}

TEST_CASE("mean pooling") {
  CHECK(pool_mean(mat(2, 2, {1, 4, 3, 2})) == std::vector<double>{2, 3});
  CHECK(pool_mean(mat(1, 2, {5, 6})) == std::vector<double>{5, 6});
  CHECK(pool_mean(mat(3, 1, {1, 2, 4}), {1, 2}) == std::vector<double>{3});
}

TEST_CASE("attentive pooling") {
  Rng rng(1);
  const auto rows = oracle::random_matrix<double>(6, 4, rng);
  const std::vector<double> zero(4, 0.0);
  std::vector<double> weights;
  const auto out = pool_attentive<double>(rows, zero, &weights);
  const auto mean = pool_mean(rows);
  for (std::size_t c = 0; c < 4; ++c) CHECK(out[c] == doctest::Approx(mean[c]).epsilon(1e-12));
  double sum = 0.0;
  for (double w : weights) sum += w;
  CHECK(std::abs(sum - 1.0) < 1e-9);

  // A large v aligned with one row drives the weights onto it.
  Matrix<double> basis(3, 3);
  basis(0, 0) = 1.0;
  basis(1, 1) = 1.0;
  basis(2, 2) = 1.0;
  const std::vector<double> v{0.0, 1e3, 0.0};
  const auto picked = pool_attentive<double>(basis, v);
  CHECK(std::abs(picked[0] - 0.0) < 1e-4);
  CHECK(std::abs(picked[1] - 1.0) < 1e-4);
  CHECK(std::abs(picked[2] - 0.0) < 1e-4);

  const std::vector<double> narrow(3, 0.0);
  CHECK_THROWS_AS(pool_attentive<double>(rows, narrow), ShapeError);
}

TEST_CASE("layerwise CLS pooling") {
  const auto one = states_of({mat(2, 2, {1, 2, 3, 4})});
  const std::vector<double> w1{5.0};
  CHECK(pool_layerwise_cls<double>(one, w1) == std::vector<double>{1, 2});

  const auto three = states_of({mat(2, 2, {1, 2, 0, 0}), mat(2, 2, {3, 4, 0, 0}), mat(2, 2, {5, 9, 0, 0})});
  const std::vector<double> zeros(3, 0.0);
  const auto avg = pool_layerwise_cls<double>(three, zeros);
  CHECK(avg[0] == doctest::Approx(3.0));
  CHECK(avg[1] == doctest::Approx(5.0));

  const std::vector<double> wrong(2, 0.0);
  CHECK_THROWS_AS(pool_layerwise_cls<double>(three, wrong), ShapeError);
}

TEST_CASE("random matrices against brute-force oracles") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = 1 + rng.below(12), d = 1 + rng.below(16);
    const auto m = oracle::random_matrix<double>(len + 2, d, rng);
    const PositionRange span{1 + rng.below(len), 0};
    const PositionRange s{span.first, span.first + rng.below(len + 2 - span.first)};
    const auto rows = oracle::rows_of(m, s.first, s.last);

    const auto mx = pool_max(m, s);
    const auto mn = pool_mean(m, s);
    CHECK(mx == oracle::column_max(rows));
    CHECK(mn == oracle::column_mean(rows));
    for (std::size_t c = 0; c < d; ++c) {
      CHECK(mx[c] >= mn[c]);
    }

    std::vector<double> v(d);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    const auto att = pool_attentive<double>(m, s, v);
    const auto att_ref = oracle::attentive(rows, v);
    for (std::size_t c = 0; c < d; ++c) {
      CHECK(std::abs(att[c] - att_ref[c]) < 1e-6);
      // Envelope property.
      double lo = rows[0][c], hi = rows[0][c];
      for (const auto& r : rows) lo = std::min(lo, r[c]), hi = std::max(hi, r[c]);
      CHECK(att[c] >= lo - 1e-12);
      CHECK(att[c] <= hi + 1e-12);
      CHECK(mn[c] >= lo - 1e-12);
      CHECK(mn[c] <= hi + 1e-12);
    }
  }
}

TEST_CASE("max and mean are invariant to row permutations") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = 2 + rng.below(8), d = 1 + rng.below(8);
    const auto m = oracle::random_matrix<double>(len, d, rng);
    std::vector<std::size_t> order(len);
    for (std::size_t i = 0; i < len; ++i) order[i] = i;
    rng.shuffle(order);
    Matrix<double> p(len, d);
    for (std::size_t r = 0; r < len; ++r) std::copy_n(m.row(order[r]).data(), d, p.row(r).data());
    CHECK(pool_max(m) == pool_max(p));
    const auto a = pool_mean(m), b = pool_mean(p);
    for (std::size_t c = 0; c < d; ++c) CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-12));
  }
}

TEST_CASE("layerwise CLS against a direct weighted sum") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t layers = 1 + rng.below(5), d = 1 + rng.below(10), len = 1 + rng.below(5);
    std::vector<Matrix<double>> ms;
    for (std::size_t l = 0; l < layers; ++l) ms.push_back(oracle::random_matrix<double>(len, d, rng));
    std::vector<double> w(layers);
    for (auto& x : w) x = rng.uniform(-3.0, 3.0);
    const auto out = pool_layerwise_cls<double>(states_of(ms), w);
    oracle::Rows bos;
    for (const auto& m : ms) bos.push_back(oracle::rows_of(m, 0, 0)[0]);
    const auto ref = oracle::weighted_sum(bos, oracle::softmax(w));
    for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(out[c] - ref[c]) < 1e-6);
  }
}

TEST_CASE("pool_span dispatch and backward routes max ties to the lowest row") {
  const auto states = states_of({mat(3, 2, {0, 0, 0, 0, 0, 0}), mat(3, 2, {1, 5, 1, 2, 0, 5})});
  const auto params = init_pooling<double>(PoolingKind::Max, 2, 2);
  PoolTrace<double> trace;
  CHECK(pool_span(states, {0, 2}, PoolingKind::Max, params, &trace) == std::vector<double>{1, 5});
  CHECK(trace.argmax == std::vector<std::size_t>{0, 0});

  std::vector<Matrix<double>> d_states(2);
  auto grads = init_pooling<double>(PoolingKind::Max, 2, 2);
  const std::vector<double> d_out{1.0, 2.0};
  pool_span_backward<double>(states, params, trace, d_out, d_states, grads);
  REQUIRE(d_states[1].rows() == 3);
  CHECK(d_states[1](0, 0) == 1.0);
  CHECK(d_states[1](0, 1) == 2.0);
  CHECK(d_states[1](1, 0) == 0.0);
  CHECK(d_states[1](2, 1) == 0.0);
}

TEST_CASE("learnable pooling parameters start at zero and only exist when used") {
  const auto att = init_pooling<double>(PoolingKind::Attentive, 4, 3);
  CHECK(att.attention_vector.cols() == 4);
  for (double v : att.attention_vector.values()) CHECK(v == 0.0);
  const auto lw = init_pooling<double>(PoolingKind::LayerwiseCls, 4, 3);
  CHECK(lw.layer_logits.cols() == 3);
  const auto mx = init_pooling<double>(PoolingKind::Max, 4, 3);
  std::size_t tensors = 0;
  visit_pooling(mx, [&](const std::string&, const Matrix<double>&) { ++tensors; });
  CHECK(tensors == 0);
}

TEST_CASE("pooling names and answer fallback") {
  for (PoolingKind k : {PoolingKind::Cls, PoolingKind::Max, PoolingKind::Mean, PoolingKind::Attentive,
                        PoolingKind::LayerwiseCls}) {
    CHECK(parse_pooling(to_string(k)) == k);
  }
  CHECK(answer_pooling(PoolingKind::Cls) == PoolingKind::Mean);
  CHECK(answer_pooling(PoolingKind::LayerwiseCls) == PoolingKind::Mean);
  CHECK(answer_pooling(PoolingKind::Attentive) == PoolingKind::Attentive);
  CHECK_THROWS_AS(parse_pooling("sum"), ConfigError);
}
