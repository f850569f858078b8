#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mcqa {

using TokenId = std::uint32_t;
using TokenIds = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr TokenId kFirstSurfaceId = 4;

/// A question, its ordered candidate answers and the index of the correct one.
struct QAInstance {
  std::string id;
  TokenIds question;
  std::vector<TokenIds> answers;
  std::size_t gold = 0;

  std::size_t num_answers() const { return answers.size(); }
  friend bool operator==(const QAInstance&, const QAInstance&) = default;
};

/// Word-level vocabulary. Ids 0-3 are reserved (PAD, BOS, EOS, UNK) and are
/// never assigned to surface tokens.
class Vocab {
 public:
  Vocab() = default;

  /// Builds a vocabulary assigning ids 4, 5, ... in the given order.
  static Vocab from_tokens(std::span<const std::string> surface_tokens);

  /// Returns the id of `token`, inserting it if absent.
  TokenId add(std::string_view token);

  /// Id of `token`, or UNK.
  TokenId lookup(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;

  /// Surface form of an id; reserved ids render as <pad>, <s>, </s>, <unk>.
  std::string token(TokenId id) const;

  /// Total id count including the reserved ids.
  std::size_t size() const { return kFirstSurfaceId + surface_.size(); }
  std::span<const std::string> surface_tokens() const { return surface_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.surface_ == b.surface_; }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::unordered_map<std::string, TokenId, Hash, std::equal_to<>> ids_;
  std::vector<std::string> surface_;
};

/// Lowercased whitespace split of `text`.
std::vector<std::string> split_words(std::string_view text);

/// Whitespace tokenization with lowercasing; unknown words map to UNK.
TokenIds tokenize(std::string_view text, const Vocab& vocab);

/// Joins surface forms with single spaces.
std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab);

/// Throws ValidationError unless the instance has at least `min_answers`
/// candidates, non-empty question and answers, gold < n, and every id is a
/// non-structural id below `vocab_size`.
void validate_instance(const QAInstance& instance, std::size_t vocab_size, std::size_t min_answers = 2);

struct LoadOptions {
  /// Per-field token cap; longer questions and answers are truncated from the right.
  std::size_t max_tokens = 64;
};

struct Dataset {
  std::vector<QAInstance> instances;
  Vocab vocab;
};

/// Reads a JSON Lines file of {"id","question","choices","answer_index"}
/// records. With no vocabulary, one is built from the whole file in order of
/// first appearance.
Dataset load_dataset(const std::filesystem::path& path, const Vocab* vocab = nullptr,
                     const LoadOptions& options = {});

/// Parses JSON Lines text; `source` is used in error messages only.
Dataset parse_dataset(std::string_view text, const Vocab* vocab = nullptr, const LoadOptions& options = {});

/// Writes instances in the JSON Lines format accepted by load_dataset.
void save_dataset(const std::filesystem::path& path, std::span<const QAInstance> instances, const Vocab& vocab);
std::string serialize_dataset(std::span<const QAInstance> instances, const Vocab& vocab);

/// Parameters of the key/lock synthetic task. Every question contains one key
/// token; the correct answer is the only candidate holding the matching lock
/// token, where the key-to-lock map is a fixed permutation of the symbol set.
struct SyntheticTask {
  std::size_t symbols = 8;
  std::size_t fillers = 32;
  std::uint64_t mapping_seed = 0x6b65796c6f636bULL;

  Vocab vocab() const;
  TokenId key_token(std::size_t symbol) const { return kFirstSurfaceId + static_cast<TokenId>(symbol); }
  TokenId lock_token(std::size_t symbol) const {
    return kFirstSurfaceId + static_cast<TokenId>(symbols + symbol);
  }
  TokenId filler_token(std::size_t index) const {
    return kFirstSurfaceId + static_cast<TokenId>(2 * symbols + index);
  }
  /// lock_of()[k] is the lock symbol matching key symbol k.
  std::vector<std::size_t> lock_of() const;
};

std::vector<QAInstance> generate_synthetic(std::size_t num_instances, std::size_t answers_per_question,
                                           std::size_t question_len, std::size_t answer_len, std::uint64_t seed,
                                           const SyntheticTask& task = {});

}  // namespace mcqa
