#include "mcqa/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mcqa/errors.hpp"
#include "mcqa/rng.hpp"

namespace mcqa {

using nlohmann::json;

Vocab Vocab::from_tokens(std::span<const std::string> surface_tokens) {
  Vocab vocab;
  for (const auto& token : surface_tokens) {
    if (vocab.find(token)) throw ValidationError("duplicate vocabulary token '" + token + "'");
    vocab.add(token);
  }
  return vocab;
}

TokenId Vocab::add(std::string_view token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(size());
  surface_.emplace_back(token);
  ids_.emplace(std::string(token), id);
  return id;
}

TokenId Vocab::lookup(std::string_view token) const { return find(token).value_or(kUnkId); }

std::optional<TokenId> Vocab::find(std::string_view token) const {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  return std::nullopt;
}

std::string Vocab::token(TokenId id) const {
  switch (id) {
    case kPadId: return "<pad>";
    case kBosId: return "<s>";
    case kEosId: return "</s>";
    case kUnkId: return "<unk>";
    default: break;
  }
  if (id >= size()) throw ValidationError("token id " + std::to_string(id) + " outside vocabulary");
  return surface_[id - kFirstSurfaceId];
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

TokenIds tokenize(std::string_view text, const Vocab& vocab) {
  TokenIds ids;
  for (const auto& word : split_words(text)) ids.push_back(vocab.lookup(word));
  return ids;
}

std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(ids[i]);
  }
  return out;
}

void validate_instance(const QAInstance& instance, std::size_t vocab_size, std::size_t min_answers) {
  const auto fail = [&](const std::string& what) {
    throw ValidationError("instance '" + instance.id + "': " + what);
  };
  if (instance.answers.size() < min_answers) {
    fail("needs at least " + std::to_string(min_answers) + " answers, has " +
         std::to_string(instance.answers.size()));
  }
  if (instance.question.empty()) fail("empty question");
  if (instance.gold >= instance.answers.size()) {
    fail("gold index " + std::to_string(instance.gold) + " out of range for " +
         std::to_string(instance.answers.size()) + " answers");
  }
  const auto check_ids = [&](const TokenIds& ids, const char* field) {
    for (TokenId id : ids) {
      if (id >= vocab_size) fail(std::string(field) + " token id " + std::to_string(id) + " >= vocabulary size");
      if (id == kPadId || id == kBosId || id == kEosId) fail(std::string(field) + " contains a reserved id");
    }
  };
  check_ids(instance.question, "question");
  for (const auto& answer : instance.answers) {
    if (answer.empty()) fail("empty answer");
    check_ids(answer, "answer");
  }
}

namespace {

struct RawRecord {
  std::string id;
  std::vector<std::string> question;
  std::vector<std::vector<std::string>> choices;
  std::int64_t answer_index = 0;
  std::size_t line = 0;
};

RawRecord parse_record(std::string_view text, std::size_t line) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line);
  }
  if (!doc.is_object()) throw ParseError("record is not a JSON object", line);
  const auto require = [&](const char* key) -> const json& {
    auto it = doc.find(key);
    if (it == doc.end()) throw ParseError(std::string("missing field '") + key + "'", line);
    return *it;
  };
  RawRecord record;
  record.line = line;
  const auto& id = require("id");
  const auto& question = require("question");
  const auto& choices = require("choices");
  const auto& answer = require("answer_index");
  if (!id.is_string()) throw ParseError("'id' must be a string", line);
  if (!question.is_string()) throw ParseError("'question' must be a string", line);
  if (!choices.is_array()) throw ParseError("'choices' must be an array", line);
  if (!answer.is_number_integer()) throw ParseError("'answer_index' must be an integer", line);
  record.id = id.get<std::string>();
  record.question = split_words(question.get<std::string>());
  for (const auto& choice : choices) {
    if (!choice.is_string()) throw ParseError("every choice must be a string", line);
    record.choices.push_back(split_words(choice.get<std::string>()));
  }
  record.answer_index = answer.get<std::int64_t>();
  return record;
}

std::string at_line(std::size_t line, const std::string& what) {
  return "line " + std::to_string(line) + ": " + what;
}

TokenIds to_ids(const std::vector<std::string>& words, const Vocab& vocab, std::size_t cap) {
  TokenIds ids;
  const std::size_t count = std::min(words.size(), cap);
  ids.reserve(count);
  for (std::size_t i = 0; i < count; ++i) ids.push_back(vocab.lookup(words[i]));
  return ids;
}

}  // namespace

Dataset parse_dataset(std::string_view text, const Vocab* vocab, const LoadOptions& options) {
  if (options.max_tokens == 0) throw ConfigError("max_tokens must be at least 1");
  std::vector<RawRecord> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const bool blank = std::all_of(line.begin(), line.end(), [](char c) {
      return std::isspace(static_cast<unsigned char>(c));
    });
    if (!blank) {
      RawRecord record = parse_record(line, line_no);
      const auto n = static_cast<std::int64_t>(record.choices.size());
      if (record.answer_index < 0 || record.answer_index >= n) {
        throw ValidationError(at_line(line_no, "answer_index " + std::to_string(record.answer_index) +
                                                   " out of range for " + std::to_string(n) + " choices"));
      }
      if (record.choices.size() < 2) throw ValidationError(at_line(line_no, "at least two choices are required"));
      if (record.question.empty()) throw ValidationError(at_line(line_no, "empty question text"));
      for (const auto& choice : record.choices) {
        if (choice.empty()) throw ValidationError(at_line(line_no, "empty answer text"));
      }
      records.push_back(std::move(record));
    }
    if (end == text.size()) break;
    start = end + 1;
  }

  Dataset dataset;
  if (vocab) {
    dataset.vocab = *vocab;
  } else {
    for (const auto& record : records) {
      for (const auto& word : record.question) dataset.vocab.add(word);
      for (const auto& choice : record.choices) {
        for (const auto& word : choice) dataset.vocab.add(word);
      }
    }
  }
  dataset.instances.reserve(records.size());
  for (const auto& record : records) {
    QAInstance instance;
    instance.id = record.id;
    instance.question = to_ids(record.question, dataset.vocab, options.max_tokens);
    for (const auto& choice : record.choices) {
      instance.answers.push_back(to_ids(choice, dataset.vocab, options.max_tokens));
    }
    instance.gold = static_cast<std::size_t>(record.answer_index);
    try {
      validate_instance(instance, dataset.vocab.size());
    } catch (const ValidationError& e) {
      throw ValidationError(at_line(record.line, e.what()));
    }
    dataset.instances.push_back(std::move(instance));
  }
  return dataset;
}

Dataset load_dataset(const std::filesystem::path& path, const Vocab* vocab, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_dataset(buffer.str(), vocab, options);
}

std::string serialize_dataset(std::span<const QAInstance> instances, const Vocab& vocab) {
  std::string out;
  for (const auto& instance : instances) {
    json record;
    record["id"] = instance.id;
    record["question"] = detokenize(instance.question, vocab);
    json choices = json::array();
    for (const auto& answer : instance.answers) choices.push_back(detokenize(answer, vocab));
    record["choices"] = std::move(choices);
    record["answer_index"] = instance.gold;
    out += record.dump();
    out.push_back('\n');
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, std::span<const QAInstance> instances, const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write dataset file " + path.string());
  out << serialize_dataset(instances, vocab);
}

Vocab SyntheticTask::vocab() const {
  std::vector<std::string> tokens;
  for (std::size_t k = 0; k < symbols; ++k) tokens.push_back("key" + std::to_string(k));
  for (std::size_t k = 0; k < symbols; ++k) tokens.push_back("lock" + std::to_string(k));
  for (std::size_t f = 0; f < fillers; ++f) tokens.push_back("w" + std::to_string(f));
  return Vocab::from_tokens(tokens);
}

std::vector<std::size_t> SyntheticTask::lock_of() const {
  std::vector<std::size_t> mapping(symbols);
  for (std::size_t k = 0; k < symbols; ++k) mapping[k] = k;
  Rng rng(mapping_seed);
  rng.shuffle(mapping);
  return mapping;
}

std::vector<QAInstance> generate_synthetic(std::size_t num_instances, std::size_t answers_per_question,
                                           std::size_t question_len, std::size_t answer_len, std::uint64_t seed,
                                           const SyntheticTask& task) {
  if (num_instances == 0 || question_len == 0 || answer_len == 0) {
    throw ContractError("synthetic counts and lengths must be at least 1");
  }
  if (answers_per_question < 2) throw ContractError("synthetic task needs at least 2 answers per question");
  if (answers_per_question > task.symbols) {
    throw ContractError("synthetic task needs at least as many symbols as answers per question");
  }
  if (task.fillers == 0) throw ContractError("synthetic task needs at least one filler token");

  const auto lock_of = task.lock_of();
  Rng rng(seed);
  std::vector<QAInstance> out;
  out.reserve(num_instances);
  for (std::size_t index = 0; index < num_instances; ++index) {
    QAInstance instance;
    instance.id = "syn-" + std::to_string(seed) + "-" + std::to_string(index);
    instance.gold = rng.below(answers_per_question);
    const std::size_t key = rng.below(task.symbols);

    instance.question.resize(question_len);
    for (auto& token : instance.question) token = task.filler_token(rng.below(task.fillers));
    instance.question[rng.below(question_len)] = task.key_token(key);

    // Distractor locks: distinct symbols other than the matching lock.
    std::vector<std::size_t> others;
    for (std::size_t s = 0; s < task.symbols; ++s) {
      if (s != lock_of[key]) others.push_back(s);
    }
    rng.shuffle(others);

    std::size_t next_distractor = 0;
    for (std::size_t a = 0; a < answers_per_question; ++a) {
      TokenIds answer(answer_len);
      for (auto& token : answer) token = task.filler_token(rng.below(task.fillers));
      const std::size_t lock = a == instance.gold ? lock_of[key] : others[next_distractor++];
      answer[rng.below(answer_len)] = task.lock_token(lock);
      instance.answers.push_back(std::move(answer));
    }
    out.push_back(std::move(instance));
  }
  return out;
}

}  // namespace mcqa
