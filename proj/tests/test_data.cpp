#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "mcqa/data.hpp"
#include "mcqa/errors.hpp"

using namespace mcqa;

TEST_CASE("tokenize lowercases, splits on whitespace and maps unknowns to UNK") {
  const std::vector<std::string> words{"a", "b"};
  const Vocab vocab = Vocab::from_tokens(words);
  CHECK(tokenize("A b", vocab) == TokenIds{4, 5});
  CHECK(tokenize("", vocab).empty());
  CHECK(tokenize("a zzz", vocab) == TokenIds{4, 3});
  CHECK(tokenize("  a\t\nB  ", vocab) == TokenIds{4, 5});
}

TEST_CASE("vocab never hands out reserved ids") {
  Vocab vocab;
  CHECK(vocab.size() == 4);
  CHECK(vocab.add("x") == kFirstSurfaceId);
  CHECK(vocab.add("y") == kFirstSurfaceId + 1);
  CHECK(vocab.add("x") == kFirstSurfaceId);
  CHECK(vocab.lookup("nope") == kUnkId);
  CHECK_FALSE(vocab.find("nope").has_value());
  CHECK(vocab.token(kBosId) == "<s>");
  CHECK(vocab.token(kEosId) == "</s>");
  CHECK(vocab.token(kFirstSurfaceId + 1) == "y");
}

TEST_CASE("parse maps record fields directly") {
  const Dataset d = parse_dataset(R"({"id":"q1","question":"a b","choices":["c","d"],"answer_index":1})");
  REQUIRE(d.instances.size() == 1);
  const auto& inst = d.instances[0];
  CHECK(inst.id == "q1");
  CHECK(inst.question.size() == 2);
  CHECK(inst.answers.size() == 2);
  CHECK(inst.gold == 1);
  CHECK(d.vocab.size() == 8);
}

TEST_CASE("malformed and invalid records are rejected") {
  SUBCASE("answer index out of range") {
    CHECK_THROWS_AS(parse_dataset(R"({"id":"q","question":"a","choices":["b","c","d","e"],"answer_index":5})"),
                    ValidationError);
  }
  SUBCASE("negative answer index") {
    CHECK_THROWS_AS(parse_dataset(R"({"id":"q","question":"a","choices":["b","c"],"answer_index":-1})"),
                    ValidationError);
  }
  SUBCASE("empty answer text") {
    CHECK_THROWS_AS(parse_dataset(R"({"id":"q","question":"a","choices":["b","  "],"answer_index":0})"),
                    ValidationError);
  }
  SUBCASE("single choice") {
    CHECK_THROWS_AS(parse_dataset(R"({"id":"q","question":"a","choices":["b"],"answer_index":0})"), ValidationError);
  }
  SUBCASE("bad JSON carries the line number") {
    const std::string text = R"({"id":"q","question":"a","choices":["b","c"],"answer_index":0})"
                             "\n\n{not json}\n";
    try {
      parse_dataset(text);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("missing field") {
    CHECK_THROWS_AS(parse_dataset(R"({"id":"q","choices":["b","c"],"answer_index":0})"), ParseError);
  }
  SUBCASE("wrong type") {
    CHECK_THROWS_AS(parse_dataset(R"({"id":"q","question":"a","choices":"b c","answer_index":0})"), ParseError);
  }
}

TEST_CASE("a supplied vocabulary maps unseen words to UNK") {
  const std::vector<std::string> words{"a", "b"};
  const Vocab vocab = Vocab::from_tokens(words);
  const Dataset d = parse_dataset(R"({"id":"q","question":"a new","choices":["b","c"],"answer_index":0})", &vocab);
  CHECK(d.instances[0].question == TokenIds{4, kUnkId});
  CHECK(d.instances[0].answers[1] == TokenIds{kUnkId});
  CHECK(d.vocab == vocab);
}

TEST_CASE("fields longer than the limit are truncated from the right") {
  LoadOptions opts;
  opts.max_tokens = 2;
  const Dataset d = parse_dataset(R"({"id":"q","question":"a b c d","choices":["e f g","h"],"answer_index":0})",
                                  nullptr, opts);
  CHECK(d.instances[0].question == TokenIds{4, 5});
  CHECK(d.instances[0].answers[0].size() == 2);
}

TEST_CASE("load, serialize and reload is the identity on instances") {
  const std::string text =
      R"({"id":"a","question":"where is the cat","choices":["on the mat","in a box","gone"],"answer_index":2})"
      "\n"
      R"({"id":"b","question":"Which color","choices":["red","blue"],"answer_index":0})"
      "\n";
  const Dataset first = parse_dataset(text);
  const Dataset second = parse_dataset(serialize_dataset(first.instances, first.vocab), &first.vocab);
  CHECK(second.instances == first.instances);

  const auto path = std::filesystem::temp_directory_path() / "mcqa_roundtrip.jsonl";
  save_dataset(path, first.instances, first.vocab);
  const Dataset third = load_dataset(path, &first.vocab);
  CHECK(third.instances == first.instances);
  std::filesystem::remove(path);
}

TEST_CASE("reloading with the returned vocabulary reproduces token ids") {
  const std::string text = R"({"id":"x","question":"one two three","choices":["two","four"],"answer_index":1})";
  const Dataset first = parse_dataset(text);
  const Dataset again = parse_dataset(text, &first.vocab);
  CHECK(again.instances == first.instances);
}

TEST_CASE("validate_instance enforces the instance invariants") {
  QAInstance inst{"i", {4, 5}, {{6}, {7}}, 1};
  CHECK_NOTHROW(validate_instance(inst, 8));
  CHECK_THROWS_AS(validate_instance(inst, 7), ValidationError);
  inst.gold = 2;
  CHECK_THROWS_AS(validate_instance(inst, 8), ValidationError);
  inst.gold = 0;
  inst.answers[1].clear();
  CHECK_THROWS_AS(validate_instance(inst, 8), ValidationError);
  inst.answers[1] = {kEosId};
  CHECK_THROWS_AS(validate_instance(inst, 8), ValidationError);
  inst.answers.pop_back();
  CHECK_THROWS_AS(validate_instance(inst, 8), ValidationError);
}

TEST_CASE("synthetic generation is deterministic") {
  const auto a = generate_synthetic(1000, 5, 12, 3, 7);
  const auto b = generate_synthetic(1000, 5, 12, 3, 7);
  CHECK(a == b);
  CHECK_FALSE(a == generate_synthetic(1000, 5, 12, 3, 8));
}

TEST_CASE("synthetic instances embed one key and exactly one matching lock") {
  const SyntheticTask task;
  const auto lock_of = task.lock_of();
  const auto vocab = task.vocab();
  std::set<std::size_t> image(lock_of.begin(), lock_of.end());
  CHECK(image.size() == task.symbols);
  for (const auto& inst : generate_synthetic(300, 5, 12, 3, 3, task)) {
    CHECK_NOTHROW(validate_instance(inst, vocab.size()));
    CHECK(inst.question.size() == 12);
    std::size_t keys = 0, key = 0;
    for (TokenId t : inst.question) {
      if (t >= task.key_token(0) && t < task.key_token(task.symbols)) ++keys, key = t - task.key_token(0);
    }
    REQUIRE(keys == 1);
    std::size_t matching = 0;
    for (std::size_t a = 0; a < inst.answers.size(); ++a) {
      CHECK(inst.answers[a].size() == 3);
      for (TokenId t : inst.answers[a]) {
        if (t == task.lock_token(lock_of[key])) {
          ++matching;
          CHECK(a == inst.gold);
        }
      }
    }
    CHECK(matching == 1);
  }
}

TEST_CASE("gold indices are uniform within five standard deviations") {
  const std::size_t count = 10000, n = 5;
  std::vector<std::size_t> hist(n, 0);
  for (const auto& inst : generate_synthetic(count, n, 4, 1, 99)) ++hist[inst.gold];
  const double p = 1.0 / static_cast<double>(n);
  const double mean = static_cast<double>(count) * p;
  const double sigma = std::sqrt(static_cast<double>(count) * p * (1.0 - p));
  for (std::size_t c : hist) CHECK(std::abs(static_cast<double>(c) - mean) <= 5.0 * sigma);

  // The majority-class baseline sits near chance.
  const double majority = static_cast<double>(*std::max_element(hist.begin(), hist.end())) / count;
  CHECK(majority == doctest::Approx(p).epsilon(0.1));
}

TEST_CASE("synthetic preconditions") {
  CHECK_THROWS_AS(generate_synthetic(0, 5, 4, 1, 1), ContractError);
  CHECK_THROWS_AS(generate_synthetic(10, 1, 4, 1, 1), ContractError);
  CHECK_THROWS_AS(generate_synthetic(10, 9, 4, 1, 1), ContractError);
  CHECK_THROWS_AS(generate_synthetic(10, 5, 0, 1, 1), ContractError);
}
