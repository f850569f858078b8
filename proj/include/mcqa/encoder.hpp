#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mcqa/layout.hpp"
#include "mcqa/matrix.hpp"
#include "mcqa/rng.hpp"

namespace mcqa {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_len = 128;
  double dropout = 0.0;

  /// Throws ConfigError on zero counts, d_model % n_heads != 0 or dropout outside [0, 1).
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Multi-head attention projections. When the value/output projections are
/// empty the attention returns head-averaged weights applied to the raw values.
template <typename T>
struct MHAParams {
  std::size_t n_heads = 1;
  Matrix<T> wq, bq, wk, bk;
  Matrix<T> wv, bv, wo, bo;

  std::size_t width() const { return wq.rows(); }
  bool projects_values() const { return !wv.empty(); }
};

template <typename T>
struct EncoderLayerParams {
  Matrix<T> ln1_gain, ln1_bias;
  MHAParams<T> attention;
  Matrix<T> ln2_gain, ln2_bias;
  Matrix<T> ff_in_weight, ff_in_bias;
  Matrix<T> ff_out_weight, ff_out_bias;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  Matrix<T> token_embedding;     // vocab x d_model
  Matrix<T> position_embedding;  // max_len x d_model
  std::vector<EncoderLayerParams<T>> layers;
};

/// Hidden states of every layer; states[0] is the embedding layer.
template <typename T>
struct LayerStates {
  std::vector<Matrix<T>> states;

  const Matrix<T>& final() const { return states.back(); }
  std::size_t num_layers() const { return states.size(); }
  std::size_t seq_len() const { return states.empty() ? 0 : states.front().rows(); }
};

// Tensor visitation. `P` may be const or non-const; `f(name, matrix)` is
// called for every non-empty tensor in a fixed order.
template <typename P, typename F>
void visit_mha(P& p, const std::string& prefix, F&& f) {
  const auto visit = [&](const char* name, auto& m) {
    if (!m.empty()) f(prefix + name, m);
  };
  visit("wq", p.wq);
  visit("bq", p.bq);
  visit("wk", p.wk);
  visit("bk", p.bk);
  visit("wv", p.wv);
  visit("bv", p.bv);
  visit("wo", p.wo);
  visit("bo", p.bo);
}

template <typename P, typename F>
void visit_encoder(P& p, F&& f) {
  f(std::string("encoder.token_embedding"), p.token_embedding);
  f(std::string("encoder.position_embedding"), p.position_embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const std::string prefix = "encoder.layer" + std::to_string(l) + ".";
    f(prefix + "ln1_gain", layer.ln1_gain);
    f(prefix + "ln1_bias", layer.ln1_bias);
    visit_mha(layer.attention, prefix + "attention.", f);
    f(prefix + "ln2_gain", layer.ln2_gain);
    f(prefix + "ln2_bias", layer.ln2_bias);
    f(prefix + "ff_in_weight", layer.ff_in_weight);
    f(prefix + "ff_in_bias", layer.ff_in_bias);
    f(prefix + "ff_out_weight", layer.ff_out_weight);
    f(prefix + "ff_out_bias", layer.ff_out_bias);
  }
}

/// Closed-form scalar parameter count.
std::size_t encoder_parameter_count(const EncoderConfig& config);

/// Deterministic initialization: linear weights uniform in +-sqrt(6/(fan_in+fan_out)),
/// embeddings uniform in +-1, layer-norm gains 1, all biases 0.
template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Zero-filled tensors with the shapes of `params`, for gradient accumulation.
template <typename T>
EncoderParams<T> zeros_like(const EncoderParams<T>& params);

template <typename U, typename T>
EncoderParams<U> cast_encoder(const EncoderParams<T>& params);

// ---------------------------------------------------------------------------
// Attention

struct AttentionMask {
  /// Per-key validity; empty means every key is valid.
  std::span<const std::uint8_t> key_valid;
  /// Query row i never attends to key row i.
  bool exclude_self = false;
};

template <typename T>
struct AttentionCache {
  Matrix<T> q, k, v;
  std::vector<Matrix<T>> head_weights;  // per head, queries x keys
  Matrix<T> heads;                      // concatenated per-head context before the output projection
};

template <typename T>
struct AttentionOutput {
  Matrix<T> context;
  Matrix<T> weights;  // head-averaged, queries x keys
};

/// Scaled dot-product multi-head attention. Rows of `weights` sum to 1 over
/// the allowed keys and are 0 elsewhere; a query with no allowed key gets a
/// zero row and a zero context.
template <typename T>
AttentionOutput<T> mha(const Matrix<T>& query, const Matrix<T>& keys, const Matrix<T>& values,
                       const MHAParams<T>& params, const AttentionMask& mask = {},
                       AttentionCache<T>* cache = nullptr);

/// Accumulates parameter gradients into `grads` and input gradients into
/// d_query / d_keys / d_values, which must already have the input shapes.
template <typename T>
void mha_backward(const Matrix<T>& query, const Matrix<T>& keys, const Matrix<T>& values,
                  const MHAParams<T>& params, const AttentionCache<T>& cache, const Matrix<T>& d_context,
                  MHAParams<T>& grads, Matrix<T>& d_query, Matrix<T>& d_keys, Matrix<T>& d_values);

// ---------------------------------------------------------------------------
// Layer norm

inline constexpr double kLayerNormEpsilon = 1e-6;

template <typename T>
struct LayerNormCache {
  Matrix<T> normalized;  // before gain and bias
  std::vector<T> inv_std;
};

template <typename T>
void layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias, Matrix<T>& out,
                LayerNormCache<T>* cache = nullptr);

template <typename T>
void layer_norm_backward(const Matrix<T>& d_out, const Matrix<T>& gain, const LayerNormCache<T>& cache,
                         Matrix<T>& d_gain, Matrix<T>& d_bias, Matrix<T>& d_x);

// ---------------------------------------------------------------------------
// Encoder

struct DropoutContext {
  double rate = 0.0;
  Rng* rng = nullptr;
};

template <typename T>
struct BlockTrace {
  LayerNormCache<T> ln1;
  Matrix<T> normed1;
  AttentionCache<T> attention;
  Matrix<T> attention_keep;  // dropout scale per element, empty without dropout
  LayerNormCache<T> ln2;
  Matrix<T> normed2;
  Matrix<T> ff_pre;
  Matrix<T> ff_act;
  Matrix<T> ff_keep;
};

template <typename T>
struct EncoderTrace {
  std::vector<BlockTrace<T>> blocks;
};

/// Pre-norm transformer encoder. Padded positions are masked as keys and
/// zeroed in every returned state. Throws LengthError when the sequence is
/// longer than max_len and ValidationError for out-of-vocabulary ids.
template <typename T>
LayerStates<T> encode(const TokenSequence& seq, const EncoderParams<T>& params, EncoderTrace<T>* trace = nullptr,
                      const DropoutContext* dropout = nullptr);

/// Backpropagates gradients given per-layer state gradients (empty entries
/// count as zero) and accumulates parameter gradients into `grads`.
template <typename T>
void encode_backward(const TokenSequence& seq, const EncoderParams<T>& params, const LayerStates<T>& states,
                     const EncoderTrace<T>& trace, std::vector<Matrix<T>> d_states, EncoderParams<T>& grads);

/// Encodes a batch, running sequences on up to `workers` OpenMP threads
/// (0 = runtime default). Results are independent of the worker count.
template <typename T>
std::vector<LayerStates<T>> encode_batch(std::span<const TokenSequence> batch, const EncoderParams<T>& params,
                                         int workers = 1);

}  // namespace mcqa
