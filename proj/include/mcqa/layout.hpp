#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "mcqa/data.hpp"
#include "mcqa/matrix.hpp"

namespace mcqa {

/// Question-answer encoding schemes.
enum class Scheme {
  OneAnswerNPasses,  ///< 1AnP: question paired with each candidate, n passes.
  AllAnswersNPasses, ///< nAnP: all candidates appended to the question, then paired, n passes.
  AllAnswersOnePass, ///< nA1P: question and every candidate in one pass.
};

std::string_view to_string(Scheme scheme);
/// Accepts "1anp", "nanp", "na1p".
Scheme parse_scheme(std::string_view name);

struct TokenSequence {
  TokenIds ids;
  /// 1 for real tokens, 0 for right padding.
  std::vector<std::uint8_t> attention_mask;

  std::size_t size() const { return ids.size(); }
  std::size_t unpadded_length() const;
};

struct SpanMap {
  /// BOS through the first EOS after the question, inclusive.
  PositionRange question_span;
  /// One span per encoded candidate: leading separator, answer tokens, trailing separator.
  std::vector<PositionRange> answer_spans;
};

struct Layout {
  TokenSequence sequence;
  SpanMap spans;
};

inline constexpr std::size_t kNoLengthLimit = std::numeric_limits<std::size_t>::max();

/// [BOS, Q, EOS, EOS, A_i, EOS]. Over-length inputs lose question tokens
/// from the right; LengthError when the answer alone does not fit.
Layout layout_1anp(const QAInstance& instance, std::size_t answer, std::size_t max_len = kNoLengthLimit);

/// 1AnP frame over the extended question Q + EOS + A_1 + ... + EOS + A_n.
Layout layout_nanp(const QAInstance& instance, std::size_t answer, std::size_t max_len = kNoLengthLimit);

/// 1AnP frame over Q extended with the listed candidates (in list order),
/// each preceded by one EOS. An empty list reproduces layout_1anp.
Layout layout_appended(const QAInstance& instance, std::size_t answer, std::span<const std::size_t> appended,
                       std::size_t max_len = kNoLengthLimit);

/// [BOS, Q, EOS, EOS, A_1, EOS, A_2, EOS, ..., A_n, EOS] with n answer spans;
/// consecutive spans share their separator.
Layout layout_na1p(const QAInstance& instance, std::size_t max_len = kNoLengthLimit);

/// Right-pads every sequence to the longest one with PAD and mask 0.
std::vector<TokenSequence> pad_batch(std::span<const TokenSequence> sequences);

}  // namespace mcqa
