#include "mcqa/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mcqa/errors.hpp"
#include "mcqa/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mcqa {

void EncoderConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_len == 0) {
    throw ConfigError("encoder sizes must all be at least 1");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

std::size_t encoder_parameter_count(const EncoderConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t per_layer = 4 * d               // two layer norms
                                + 4 * (d * d + d)   // q, k, v, o projections
                                + d * c.d_ff + c.d_ff + c.d_ff * d + d;
  return c.vocab_size * d + c.max_len * d + c.n_layers * per_layer;
}

namespace {

template <typename T>
void linear(const Matrix<T>& x, const Matrix<T>& weight, const Matrix<T>& bias, Matrix<T>& y) {
  y = Matrix<T>(x.rows(), weight.cols());
  kernels::gemm(x.rows(), x.cols(), weight.cols(), x.data(), weight.data(), y.data());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
}

// Accumulates dW += x^T dy, db += colsum(dy), dx += dy W^T (dx may be null).
template <typename T>
void linear_backward(const Matrix<T>& x, const Matrix<T>& weight, const Matrix<T>& dy, Matrix<T>& d_weight,
                     Matrix<T>& d_bias, Matrix<T>* dx) {
  kernels::gemm_tn(x.cols(), x.rows(), dy.cols(), x.data(), dy.data(), d_weight.data(), true);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    auto row = dy.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) d_bias[c] += row[c];
  }
  if (dx) kernels::gemm_nt(dy.rows(), dy.cols(), weight.rows(), dy.data(), weight.data(), dx->data(), true);
}

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

template <typename T>
T gelu(T x) {
  const T u = static_cast<T>(kGeluScale) * (x + static_cast<T>(kGeluCubic) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T u = static_cast<T>(kGeluScale) * (x + static_cast<T>(kGeluCubic) * x * x * x);
  const T t = std::tanh(u);
  const T du = static_cast<T>(kGeluScale) * (T(1) + T(3) * static_cast<T>(kGeluCubic) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

// Copies columns [col, col + width) of `src` into a contiguous rows x width matrix.
template <typename T>
Matrix<T> column_block(const Matrix<T>& src, std::size_t col, std::size_t width) {
  Matrix<T> out(src.rows(), width);
  for (std::size_t r = 0; r < src.rows(); ++r) {
    std::copy_n(src.row(r).data() + col, width, out.row(r).data());
  }
  return out;
}

template <typename T>
Matrix<T> column_block_transposed(const Matrix<T>& src, std::size_t col, std::size_t width) {
  Matrix<T> out(width, src.rows());
  for (std::size_t r = 0; r < src.rows(); ++r) {
    for (std::size_t c = 0; c < width; ++c) out(c, r) = src(r, col + c);
  }
  return out;
}

template <typename T>
void add_column_block(Matrix<T>& dst, const Matrix<T>& block, std::size_t col) {
  for (std::size_t r = 0; r < block.rows(); ++r) {
    T* out = dst.row(r).data() + col;
    const T* in = block.row(r).data();
    for (std::size_t c = 0; c < block.cols(); ++c) out[c] += in[c];
  }
}

bool key_allowed(const AttentionMask& mask, std::size_t query, std::size_t key) {
  if (!mask.key_valid.empty() && !mask.key_valid[key]) return false;
  return !(mask.exclude_self && query == key);
}

template <typename T>
void zero_padded_rows(Matrix<T>& m, const std::vector<std::uint8_t>& mask) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (!mask[r]) std::fill(m.row(r).begin(), m.row(r).end(), T{0});
  }
}

template <typename T>
Matrix<T> uniform_matrix(std::size_t rows, std::size_t cols, double limit, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(rng.uniform(-limit, limit));
  return m;
}

template <typename T>
Matrix<T> xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return uniform_matrix<T>(fan_in, fan_out, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

template <typename T>
Matrix<T> dropout_keep(std::size_t rows, std::size_t cols, const DropoutContext& dropout) {
  Matrix<T> keep(rows, cols);
  const T scale = static_cast<T>(1.0 / (1.0 - dropout.rate));
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = dropout.rng->uniform() < dropout.rate ? T{0} : scale;
  return keep;
}

template <typename T>
void multiply_in_place(Matrix<T>& m, const Matrix<T>& scale) {
  for (std::size_t i = 0; i < m.size(); ++i) m[i] *= scale[i];
}

}  // namespace

template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.d_model;
  EncoderParams<T> p;
  p.config = config;
  p.token_embedding = uniform_matrix<T>(config.vocab_size, d, 1.0, rng);
  p.position_embedding = uniform_matrix<T>(config.max_len, d, 1.0, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    EncoderLayerParams<T> layer;
    layer.ln1_gain = Matrix<T>(1, d, T{1});
    layer.ln1_bias = Matrix<T>(1, d);
    layer.attention.n_heads = config.n_heads;
    layer.attention.wq = xavier<T>(d, d, rng);
    layer.attention.bq = Matrix<T>(1, d);
    layer.attention.wk = xavier<T>(d, d, rng);
    layer.attention.bk = Matrix<T>(1, d);
    layer.attention.wv = xavier<T>(d, d, rng);
    layer.attention.bv = Matrix<T>(1, d);
    layer.attention.wo = xavier<T>(d, d, rng);
    layer.attention.bo = Matrix<T>(1, d);
    layer.ln2_gain = Matrix<T>(1, d, T{1});
    layer.ln2_bias = Matrix<T>(1, d);
    layer.ff_in_weight = xavier<T>(d, config.d_ff, rng);
    layer.ff_in_bias = Matrix<T>(1, config.d_ff);
    layer.ff_out_weight = xavier<T>(config.d_ff, d, rng);
    layer.ff_out_bias = Matrix<T>(1, d);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

template <typename T>
EncoderParams<T> zeros_like(const EncoderParams<T>& params) {
  EncoderParams<T> out = params;
  visit_encoder(out, [](const std::string&, Matrix<T>& m) { m.zero(); });
  return out;
}

template <typename U, typename T>
EncoderParams<U> cast_encoder(const EncoderParams<T>& params) {
  EncoderParams<U> out;
  out.config = params.config;
  out.token_embedding = params.token_embedding.template cast<U>();
  out.position_embedding = params.position_embedding.template cast<U>();
  for (const auto& layer : params.layers) {
    EncoderLayerParams<U> o;
    o.ln1_gain = layer.ln1_gain.template cast<U>();
    o.ln1_bias = layer.ln1_bias.template cast<U>();
    o.attention.n_heads = layer.attention.n_heads;
    o.attention.wq = layer.attention.wq.template cast<U>();
    o.attention.bq = layer.attention.bq.template cast<U>();
    o.attention.wk = layer.attention.wk.template cast<U>();
    o.attention.bk = layer.attention.bk.template cast<U>();
    o.attention.wv = layer.attention.wv.template cast<U>();
    o.attention.bv = layer.attention.bv.template cast<U>();
    o.attention.wo = layer.attention.wo.template cast<U>();
    o.attention.bo = layer.attention.bo.template cast<U>();
    o.ln2_gain = layer.ln2_gain.template cast<U>();
    o.ln2_bias = layer.ln2_bias.template cast<U>();
    o.ff_in_weight = layer.ff_in_weight.template cast<U>();
    o.ff_in_bias = layer.ff_in_bias.template cast<U>();
    o.ff_out_weight = layer.ff_out_weight.template cast<U>();
    o.ff_out_bias = layer.ff_out_bias.template cast<U>();
    out.layers.push_back(std::move(o));
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
AttentionOutput<T> mha(const Matrix<T>& query, const Matrix<T>& keys, const Matrix<T>& values,
                       const MHAParams<T>& params, const AttentionMask& mask, AttentionCache<T>* cache) {
  const std::size_t d = params.width();
  const std::size_t heads = params.n_heads;
  if (heads == 0 || d % heads != 0) throw ShapeError("attention width not divisible by head count");
  if (query.cols() != d || keys.cols() != d || values.cols() != d) {
    throw ShapeError("attention input width does not match projection width " + std::to_string(d));
  }
  if (keys.rows() != values.rows()) throw ShapeError("attention keys and values differ in count");
  if (!mask.key_valid.empty() && mask.key_valid.size() != keys.rows()) {
    throw ShapeError("attention key mask length does not match key count");
  }
  const std::size_t m = query.rows();
  const std::size_t s = keys.rows();
  const std::size_t dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  AttentionCache<T> local;
  AttentionCache<T>& c = cache ? *cache : local;
  linear(query, params.wq, params.bq, c.q);
  linear(keys, params.wk, params.bk, c.k);
  if (params.projects_values()) {
    linear(values, params.wv, params.bv, c.v);
  } else {
    c.v = Matrix<T>();
  }

  AttentionOutput<T> out;
  out.weights = Matrix<T>(m, s);
  c.head_weights.assign(heads, Matrix<T>());
  if (params.projects_values()) c.heads = Matrix<T>(m, d);

  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix<T> qh = column_block(c.q, h * dh, dh);
    const Matrix<T> kht = column_block_transposed(c.k, h * dh, dh);
    Matrix<T> w(m, s);
    kernels::gemm(m, dh, s, qh.data(), kht.data(), w.data());
    for (std::size_t i = 0; i < m; ++i) {
      auto row = w.row(i);
      T best = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s; ++j) {
        if (key_allowed(mask, i, j)) best = std::max(best, row[j] * scale);
      }
      if (best == -std::numeric_limits<T>::infinity()) {
        std::fill(row.begin(), row.end(), T{0});
        continue;
      }
      T total = 0;
      for (std::size_t j = 0; j < s; ++j) {
        if (key_allowed(mask, i, j)) {
          row[j] = std::exp(row[j] * scale - best);
          total += row[j];
        } else {
          row[j] = 0;
        }
      }
      for (std::size_t j = 0; j < s; ++j) row[j] /= total;
    }
    if (params.projects_values()) {
      const Matrix<T> vh = column_block(c.v, h * dh, dh);
      Matrix<T> ctx(m, dh);
      kernels::gemm(m, s, dh, w.data(), vh.data(), ctx.data());
      add_column_block(c.heads, ctx, h * dh);
    }
    for (std::size_t i = 0; i < w.size(); ++i) out.weights[i] += w[i];
    c.head_weights[h] = std::move(w);
  }
  const T inv_heads = static_cast<T>(1.0 / static_cast<double>(heads));
  for (std::size_t i = 0; i < out.weights.size(); ++i) out.weights[i] *= inv_heads;

  if (params.projects_values()) {
    linear(c.heads, params.wo, params.bo, out.context);
  } else {
    out.context = Matrix<T>(m, d);
    kernels::gemm(m, s, d, out.weights.data(), values.data(), out.context.data());
  }
  return out;
}

template <typename T>
void mha_backward(const Matrix<T>& query, const Matrix<T>& keys, const Matrix<T>& values,
                  const MHAParams<T>& params, const AttentionCache<T>& cache, const Matrix<T>& d_context,
                  MHAParams<T>& grads, Matrix<T>& d_query, Matrix<T>& d_keys, Matrix<T>& d_values) {
  const std::size_t d = params.width();
  const std::size_t heads = params.n_heads;
  const std::size_t m = query.rows();
  const std::size_t s = keys.rows();
  const std::size_t dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const T inv_heads = static_cast<T>(1.0 / static_cast<double>(heads));

  Matrix<T> dq(m, d), dk(s, d), dv;
  Matrix<T> d_heads;
  Matrix<T> d_mean;  // raw-value path only
  if (params.projects_values()) {
    d_heads = Matrix<T>(m, d);
    linear_backward(cache.heads, params.wo, d_context, grads.wo, grads.bo, &d_heads);
    dv = Matrix<T>(s, d);
  } else {
    // context = mean_weights * values
    d_mean = Matrix<T>(m, s);
    kernels::gemm_nt(m, d, s, d_context.data(), values.data(), d_mean.data());
    Matrix<T> mean_weights(m, s);
    for (const auto& w : cache.head_weights) {
      for (std::size_t i = 0; i < w.size(); ++i) mean_weights[i] += w[i];
    }
    for (std::size_t i = 0; i < mean_weights.size(); ++i) mean_weights[i] *= inv_heads;
    kernels::gemm_tn(s, m, d, mean_weights.data(), d_context.data(), d_values.data(), true);
  }

  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix<T>& w = cache.head_weights[h];
    Matrix<T> dw(m, s);
    if (params.projects_values()) {
      const Matrix<T> d_ctx = column_block(d_heads, h * dh, dh);
      const Matrix<T> vh = column_block(cache.v, h * dh, dh);
      kernels::gemm_nt(m, dh, s, d_ctx.data(), vh.data(), dw.data());
      Matrix<T> dvh(s, dh);
      kernels::gemm_tn(s, m, dh, w.data(), d_ctx.data(), dvh.data());
      add_column_block(dv, dvh, h * dh);
    } else {
      for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = d_mean[i] * inv_heads;
    }
    // Softmax backward, then the 1/sqrt(dh) scale.
    for (std::size_t i = 0; i < m; ++i) {
      auto wr = w.row(i);
      auto dr = dw.row(i);
      T dot = 0;
      for (std::size_t j = 0; j < s; ++j) dot += wr[j] * dr[j];
      for (std::size_t j = 0; j < s; ++j) dr[j] = wr[j] * (dr[j] - dot) * scale;
    }
    const Matrix<T> qh = column_block(cache.q, h * dh, dh);
    const Matrix<T> kh = column_block(cache.k, h * dh, dh);
    Matrix<T> dqh(m, dh), dkh(s, dh);
    kernels::gemm(m, s, dh, dw.data(), kh.data(), dqh.data());
    kernels::gemm_tn(s, m, dh, dw.data(), qh.data(), dkh.data());
    add_column_block(dq, dqh, h * dh);
    add_column_block(dk, dkh, h * dh);
  }

  linear_backward(query, params.wq, dq, grads.wq, grads.bq, &d_query);
  linear_backward(keys, params.wk, dk, grads.wk, grads.bk, &d_keys);
  if (params.projects_values()) linear_backward(values, params.wv, dv, grads.wv, grads.bv, &d_values);
}

// ---------------------------------------------------------------------------

template <typename T>
void layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias, Matrix<T>& out,
                LayerNormCache<T>* cache) {
  const std::size_t d = x.cols();
  if (gain.size() != d || bias.size() != d) throw ShapeError("layer norm parameter width mismatch");
  out = Matrix<T>(x.rows(), d);
  if (cache) {
    cache->normalized = Matrix<T>(x.rows(), d);
    cache->inv_std.assign(x.rows(), T{0});
  }
  const T inv_d = static_cast<T>(1.0 / static_cast<double>(d));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    T mean = 0;
    for (T v : in) mean += v;
    mean *= inv_d;
    T var = 0;
    for (T v : in) var += (v - mean) * (v - mean);
    var *= inv_d;
    const T inv_std = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEpsilon));
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      const T xhat = (in[c] - mean) * inv_std;
      if (cache) cache->normalized(r, c) = xhat;
      o[c] = xhat * gain[c] + bias[c];
    }
    if (cache) cache->inv_std[r] = inv_std;
  }
}

template <typename T>
void layer_norm_backward(const Matrix<T>& d_out, const Matrix<T>& gain, const LayerNormCache<T>& cache,
                         Matrix<T>& d_gain, Matrix<T>& d_bias, Matrix<T>& d_x) {
  const std::size_t d = d_out.cols();
  const T inv_d = static_cast<T>(1.0 / static_cast<double>(d));
  std::vector<T> dxhat(d);
  for (std::size_t r = 0; r < d_out.rows(); ++r) {
    auto dy = d_out.row(r);
    auto xhat = cache.normalized.row(r);
    T mean_dxhat = 0;
    T mean_dxhat_xhat = 0;
    for (std::size_t c = 0; c < d; ++c) {
      d_gain[c] += dy[c] * xhat[c];
      d_bias[c] += dy[c];
      dxhat[c] = dy[c] * gain[c];
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * xhat[c];
    }
    mean_dxhat *= inv_d;
    mean_dxhat_xhat *= inv_d;
    auto dx = d_x.row(r);
    const T inv_std = cache.inv_std[r];
    for (std::size_t c = 0; c < d; ++c) dx[c] += inv_std * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
  }
}

// ---------------------------------------------------------------------------

template <typename T>
LayerStates<T> encode(const TokenSequence& seq, const EncoderParams<T>& params, EncoderTrace<T>* trace,
                      const DropoutContext* dropout) {
  const auto& config = params.config;
  const std::size_t len = seq.size();
  const std::size_t d = config.d_model;
  if (len == 0) throw LengthError("cannot encode an empty sequence");
  if (len > config.max_len) {
    throw LengthError("sequence of " + std::to_string(len) + " tokens exceeds max length " +
                      std::to_string(config.max_len));
  }
  if (seq.attention_mask.size() != len) throw ShapeError("attention mask length differs from sequence length");
  for (TokenId id : seq.ids) {
    if (id >= config.vocab_size) throw ValidationError("token id " + std::to_string(id) + " outside vocabulary");
  }
  const bool use_dropout = dropout && dropout->rate > 0.0 && dropout->rng;

  LayerStates<T> out;
  out.states.reserve(config.n_layers + 1);
  Matrix<T> x(len, d);
  for (std::size_t t = 0; t < len; ++t) {
    if (!seq.attention_mask[t]) continue;
    auto row = x.row(t);
    auto tok = params.token_embedding.row(seq.ids[t]);
    auto pos = params.position_embedding.row(t);
    for (std::size_t c = 0; c < d; ++c) row[c] = tok[c] + pos[c];
  }
  out.states.push_back(x);
  if (trace) trace->blocks.assign(config.n_layers, BlockTrace<T>{});

  const AttentionMask mask{seq.attention_mask, false};
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const auto& layer = params.layers[l];
    BlockTrace<T> local;
    BlockTrace<T>& b = trace ? trace->blocks[l] : local;

    layer_norm(x, layer.ln1_gain, layer.ln1_bias, b.normed1, &b.ln1);
    AttentionOutput<T> att = mha(b.normed1, b.normed1, b.normed1, layer.attention, mask, &b.attention);
    if (use_dropout) {
      b.attention_keep = dropout_keep<T>(len, d, *dropout);
      multiply_in_place(att.context, b.attention_keep);
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += att.context[i];

    layer_norm(x, layer.ln2_gain, layer.ln2_bias, b.normed2, &b.ln2);
    linear(b.normed2, layer.ff_in_weight, layer.ff_in_bias, b.ff_pre);
    b.ff_act = Matrix<T>(len, config.d_ff);
    for (std::size_t i = 0; i < b.ff_pre.size(); ++i) b.ff_act[i] = gelu(b.ff_pre[i]);
    Matrix<T> ff;
    linear(b.ff_act, layer.ff_out_weight, layer.ff_out_bias, ff);
    if (use_dropout) {
      b.ff_keep = dropout_keep<T>(len, d, *dropout);
      multiply_in_place(ff, b.ff_keep);
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += ff[i];
    zero_padded_rows(x, seq.attention_mask);
    out.states.push_back(x);
  }
  return out;
}

template <typename T>
void encode_backward(const TokenSequence& seq, const EncoderParams<T>& params, const LayerStates<T>& states,
                     const EncoderTrace<T>& trace, std::vector<Matrix<T>> d_states, EncoderParams<T>& grads) {
  const auto& config = params.config;
  const std::size_t len = seq.size();
  const std::size_t d = config.d_model;
  if (d_states.size() != config.n_layers + 1) throw ShapeError("state gradient count does not match layer count");

  Matrix<T> dx = d_states[config.n_layers].empty() ? Matrix<T>(len, d) : std::move(d_states[config.n_layers]);
  for (std::size_t l = config.n_layers; l-- > 0;) {
    const auto& layer = params.layers[l];
    auto& g = grads.layers[l];
    const BlockTrace<T>& b = trace.blocks[l];
    zero_padded_rows(dx, seq.attention_mask);

    // x_out = mid + ff
    Matrix<T> d_ff = dx;
    if (!b.ff_keep.empty()) multiply_in_place(d_ff, b.ff_keep);
    Matrix<T> d_act(len, config.d_ff);
    linear_backward(b.ff_act, layer.ff_out_weight, d_ff, g.ff_out_weight, g.ff_out_bias, &d_act);
    for (std::size_t i = 0; i < d_act.size(); ++i) d_act[i] *= gelu_grad(b.ff_pre[i]);
    Matrix<T> d_normed2(len, d);
    linear_backward(b.normed2, layer.ff_in_weight, d_act, g.ff_in_weight, g.ff_in_bias, &d_normed2);
    Matrix<T>& d_mid = dx;
    layer_norm_backward(d_normed2, layer.ln2_gain, b.ln2, g.ln2_gain, g.ln2_bias, d_mid);

    // mid = input + attention
    Matrix<T> d_att = d_mid;
    if (!b.attention_keep.empty()) multiply_in_place(d_att, b.attention_keep);
    Matrix<T> dq(len, d), dk(len, d), dv(len, d);
    mha_backward(b.normed1, b.normed1, b.normed1, layer.attention, b.attention, d_att, g.attention, dq, dk, dv);
    for (std::size_t i = 0; i < dq.size(); ++i) dq[i] += dk[i] + dv[i];
    layer_norm_backward(dq, layer.ln1_gain, b.ln1, g.ln1_gain, g.ln1_bias, d_mid);

    if (!d_states[l].empty()) {
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d_states[l][i];
    }
  }
  zero_padded_rows(dx, seq.attention_mask);
  for (std::size_t t = 0; t < len; ++t) {
    if (!seq.attention_mask[t]) continue;
    auto src = dx.row(t);
    auto tok = grads.token_embedding.row(seq.ids[t]);
    auto pos = grads.position_embedding.row(t);
    for (std::size_t c = 0; c < d; ++c) {
      tok[c] += src[c];
      pos[c] += src[c];
    }
  }
  (void)states;
}

template <typename T>
std::vector<LayerStates<T>> encode_batch(std::span<const TokenSequence> batch, const EncoderParams<T>& params,
                                         int workers) {
  const std::vector<TokenSequence> padded = pad_batch(batch);
  std::vector<LayerStates<T>> out(padded.size());
  const auto count = static_cast<long long>(padded.size());
#ifdef _OPENMP
  const int threads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
#endif
  for (long long i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] = encode(padded[static_cast<std::size_t>(i)], params);
  }
  (void)workers;
  return out;
}

#define MCQA_INSTANTIATE_ENCODER(T)                                                                              \
  template EncoderParams<T> init_encoder<T>(const EncoderConfig&, std::uint64_t);                               \
  template EncoderParams<T> zeros_like<T>(const EncoderParams<T>&);                                              \
  template AttentionOutput<T> mha<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, const MHAParams<T>&, \
                                     const AttentionMask&, AttentionCache<T>*);                                  \
  template void mha_backward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, const MHAParams<T>&,      \
                                const AttentionCache<T>&, const Matrix<T>&, MHAParams<T>&, Matrix<T>&,           \
                                Matrix<T>&, Matrix<T>&);                                                         \
  template void layer_norm<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, Matrix<T>&,                 \
                              LayerNormCache<T>*);                                                               \
  template void layer_norm_backward<T>(const Matrix<T>&, const Matrix<T>&, const LayerNormCache<T>&, Matrix<T>&, \
                                       Matrix<T>&, Matrix<T>&);                                                  \
  template LayerStates<T> encode<T>(const TokenSequence&, const EncoderParams<T>&, EncoderTrace<T>*,            \
                                    const DropoutContext*);                                                      \
  template void encode_backward<T>(const TokenSequence&, const EncoderParams<T>&, const LayerStates<T>&,        \
                                   const EncoderTrace<T>&, std::vector<Matrix<T>>, EncoderParams<T>&);           \
  template std::vector<LayerStates<T>> encode_batch<T>(std::span<const TokenSequence>, const EncoderParams<T>&, \
                                                       int);

MCQA_INSTANTIATE_ENCODER(float)
MCQA_INSTANTIATE_ENCODER(double)

template EncoderParams<double> cast_encoder<double, float>(const EncoderParams<float>&);
template EncoderParams<float> cast_encoder<float, double>(const EncoderParams<double>&);
template EncoderParams<double> cast_encoder<double, double>(const EncoderParams<double>&);
template EncoderParams<float> cast_encoder<float, float>(const EncoderParams<float>&);

#undef MCQA_INSTANTIATE_ENCODER

}  // namespace mcqa
