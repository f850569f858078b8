#include "mcqa/layout.hpp"

#include <algorithm>
#include <string>

#include "mcqa/errors.hpp"

namespace mcqa {

std::string_view to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::OneAnswerNPasses: return "1anp";
    case Scheme::AllAnswersNPasses: return "nanp";
    case Scheme::AllAnswersOnePass: return "na1p";
  }
  return "unknown";
}

Scheme parse_scheme(std::string_view name) {
  if (name == "1anp") return Scheme::OneAnswerNPasses;
  if (name == "nanp") return Scheme::AllAnswersNPasses;
  if (name == "na1p") return Scheme::AllAnswersOnePass;
  throw ConfigError("unknown scheme '" + std::string(name) + "' (expected 1anp, nanp or na1p)");
}

std::size_t TokenSequence::unpadded_length() const {
  return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), std::uint8_t{1}));
}

namespace {

void check_answer_index(const QAInstance& instance, std::size_t answer) {
  if (answer >= instance.answers.size()) {
    throw ContractError("answer index " + std::to_string(answer) + " out of range for " +
                        std::to_string(instance.answers.size()) + " answers");
  }
}

Layout question_answer_frame(std::span<const TokenId> question, const TokenIds& answer, std::size_t max_len) {
  const std::size_t fixed = answer.size() + 4;
  if (fixed > max_len) {
    throw LengthError("answer of " + std::to_string(answer.size()) + " tokens does not fit max length " +
                      std::to_string(max_len));
  }
  const std::size_t q_len = std::min(question.size(), max_len - fixed);

  Layout layout;
  auto& ids = layout.sequence.ids;
  ids.reserve(q_len + fixed);
  ids.push_back(kBosId);
  ids.insert(ids.end(), question.begin(), question.begin() + static_cast<std::ptrdiff_t>(q_len));
  ids.push_back(kEosId);
  ids.push_back(kEosId);
  ids.insert(ids.end(), answer.begin(), answer.end());
  ids.push_back(kEosId);
  layout.sequence.attention_mask.assign(ids.size(), 1);
  layout.spans.question_span = {0, q_len + 1};
  layout.spans.answer_spans.push_back({q_len + 2, ids.size() - 1});
  return layout;
}

}  // namespace

Layout layout_1anp(const QAInstance& instance, std::size_t answer, std::size_t max_len) {
  check_answer_index(instance, answer);
  return question_answer_frame(instance.question, instance.answers[answer], max_len);
}

Layout layout_appended(const QAInstance& instance, std::size_t answer, std::span<const std::size_t> appended,
                       std::size_t max_len) {
  check_answer_index(instance, answer);
  TokenIds extended = instance.question;
  for (std::size_t j : appended) {
    check_answer_index(instance, j);
    extended.push_back(kEosId);
    extended.insert(extended.end(), instance.answers[j].begin(), instance.answers[j].end());
  }
  return question_answer_frame(extended, instance.answers[answer], max_len);
}

Layout layout_nanp(const QAInstance& instance, std::size_t answer, std::size_t max_len) {
  std::vector<std::size_t> all(instance.answers.size());
  for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
  return layout_appended(instance, answer, all, max_len);
}

Layout layout_na1p(const QAInstance& instance, std::size_t max_len) {
  std::size_t answer_tokens = 0;
  for (const auto& a : instance.answers) answer_tokens += a.size();
  const std::size_t n = instance.answers.size();
  if (n == 0) throw ContractError("instance has no answers");
  const std::size_t fixed = 1 + answer_tokens + n + 2;
  if (fixed > max_len) {
    throw LengthError("answers of " + std::to_string(answer_tokens) + " tokens do not fit max length " +
                      std::to_string(max_len));
  }
  const std::size_t q_len = std::min(instance.question.size(), max_len - fixed);

  Layout layout;
  auto& ids = layout.sequence.ids;
  ids.reserve(q_len + fixed);
  ids.push_back(kBosId);
  ids.insert(ids.end(), instance.question.begin(), instance.question.begin() + static_cast<std::ptrdiff_t>(q_len));
  ids.push_back(kEosId);
  layout.spans.question_span = {0, q_len + 1};
  ids.push_back(kEosId);
  for (const auto& a : instance.answers) {
    const std::size_t first = ids.size() - 1;
    ids.insert(ids.end(), a.begin(), a.end());
    ids.push_back(kEosId);
    layout.spans.answer_spans.push_back({first, ids.size() - 1});
  }
  layout.sequence.attention_mask.assign(ids.size(), 1);
  return layout;
}

std::vector<TokenSequence> pad_batch(std::span<const TokenSequence> sequences) {
  std::size_t longest = 0;
  for (const auto& s : sequences) longest = std::max(longest, s.size());
  std::vector<TokenSequence> out(sequences.begin(), sequences.end());
  for (auto& s : out) {
    s.ids.resize(longest, kPadId);
    s.attention_mask.resize(longest, 0);
  }
  return out;
}

}  // namespace mcqa
