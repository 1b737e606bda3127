#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "lst/corpus.hpp"
#include "lst/errors.hpp"
#include "lst/synthetic.hpp"

using namespace lst;

namespace {

std::vector<std::string> random_tags(std::size_t n, std::mt19937_64& rng) {
  static const std::vector<std::string> pool{"O", "O", "B-A", "I-A", "B-B", "I-B"};
  std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
  std::vector<std::string> tags;
  for (std::size_t i = 0; i < n; ++i) tags.push_back(pool[d(rng)]);
  return tags;
}

std::vector<EntitySpan> brute_spans(const std::vector<std::string>& tags) {
  std::vector<EntitySpan> out;
  for (const std::string type : {"A", "B"}) {
    for (std::size_t start = 0; start < tags.size(); ++start) {
      for (std::size_t end = start + 1; end <= tags.size(); ++end) {
        bool ok = tags[start] == "B-" + type;
        for (std::size_t k = start + 1; ok && k < end; ++k) ok = tags[k] == "I-" + type;
        if (ok && end < tags.size()) ok = tags[end] != "I-" + type;
        if (ok) out.push_back({0, start, end, type});
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("parse_conll examples") {
  const TaggedCorpus one = parse_conll("ACL B-CONF\n\n");
  REQUIRE(one.sentences.size() == 1);
  CHECK(one.label_set == std::vector<std::string>{"CONF"});
  CHECK(extract_spans(one) == std::vector<EntitySpan>{{0, 0, 1, "CONF"}});

  const TaggedCorpus orphan = parse_conll("Bob I-PER\nsaid O\n");
  CHECK(orphan.sentences[0].tags == std::vector<std::string>{"B-PER", "O"});
  CHECK(orphan.repairs == 1);

  const TaggedCorpus empty = parse_conll("");
  CHECK(empty.sentences.empty());
  CHECK(empty.label_set.empty());

  const TaggedCorpus crlf = parse_conll("a O\r\nb B-X\r\n\r\n\r\nc I-Y\r\n");
  CHECK(crlf.sentences.size() == 2);
  CHECK(crlf.repairs == 1);
  CHECK(crlf.label_set == std::vector<std::string>{"X", "Y"});
}

TEST_CASE("parse_conll errors carry the line number") {
  const auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_conll(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("a O\nb\n") == 2);
  CHECK(line_of("a O\n\nb O extra\n") == 3);
  CHECK(line_of("a BAD\n") == 1);
  CHECK(line_of("a O\n") == 0);
}

TEST_CASE("parse and serialize round-trip") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Sentence> sentences;
    const std::size_t n = 1 + trial % 5;
    for (std::size_t s = 0; s < n; ++s) {
      Sentence sent;
      sent.tags = random_tags(1 + (s + trial) % 7, rng);
      for (std::size_t t = 0; t < sent.tags.size(); ++t) sent.tokens.push_back("w" + std::to_string(rng() % 100));
      sentences.push_back(std::move(sent));
    }
    const TaggedCorpus corpus = make_corpus(sentences);
    const TaggedCorpus again = parse_conll(to_conll(corpus));
    CHECK(again.sentences == corpus.sentences);
    CHECK(again.label_set == corpus.label_set);
    CHECK(again.repairs == 0);
    CHECK(to_conll(again) == to_conll(corpus));
  }
}

TEST_CASE("extract_spans examples") {
  CHECK(extract_spans({"B-PER", "I-PER", "O"}) == std::vector<EntitySpan>{{0, 0, 2, "PER"}});
  CHECK(extract_spans({"B-PER", "B-PER"}) == std::vector<EntitySpan>{{0, 0, 1, "PER"}, {0, 1, 2, "PER"}});
  CHECK(extract_spans({"O", "O"}).empty());
}

TEST_CASE("extract_spans equals the brute-force oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    auto tags = random_tags(1 + trial % 12, rng);
    repair_bio(tags);
    auto spans = extract_spans(tags);
    std::sort(spans.begin(), spans.end());
    CHECK(spans == brute_spans(tags));
    for (const auto& s : spans) {
      CHECK(s.start < s.end);
      CHECK(s.end <= tags.size());
    }
  }
}

TEST_CASE("micro_f1 examples") {
  const std::vector<EntitySpan> gold{{0, 0, 1, "A"}, {1, 2, 4, "B"}};
  const auto same = micro_f1(gold, gold);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);

  const std::vector<EntitySpan> pred{{0, 0, 1, "A"}, {1, 2, 3, "B"}};
  const auto half = micro_f1(gold, pred);
  CHECK(half.precision == 0.5);
  CHECK(half.recall == 0.5);
  CHECK(half.f1 == 0.5);

  const auto none = micro_f1(gold, {});
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);

  const std::vector<EntitySpan> wrong_type{{0, 0, 1, "B"}};
  CHECK(micro_f1(gold, wrong_type).f1 == 0.0);
}

TEST_CASE("micro_f1 swaps precision and recall under argument swap") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto g = random_tags(10, rng);
    auto p = random_tags(10, rng);
    repair_bio(g);
    repair_bio(p);
    const auto a = micro_f1(extract_spans(g), extract_spans(p));
    const auto b = micro_f1(extract_spans(p), extract_spans(g));
    CHECK(a.precision == b.recall);
    CHECK(a.recall == b.precision);
    CHECK(a.f1 == doctest::Approx(b.f1).epsilon(1e-15));
  }
}

TEST_CASE("greedy_sample contract") {
  SynthSpec spec;
  spec.seed = 11;
  spec.target_train_sentences = 200;
  const TaggedCorpus corpus = generate_synthetic(spec).target_train;
  const auto available = entity_counts(corpus);
  for (std::size_t k : {1u, 5u, 20u, 1000u}) {
    const TaggedCorpus sample = greedy_sample(corpus, k, 42);
    const auto counts = entity_counts(sample);
    for (const auto& [type, total] : available) {
      CHECK(counts.count(type));
      if (counts.count(type)) CHECK(counts.at(type) >= std::min(k, total));
    }
    for (const auto& s : sample.sentences) {
      const auto it = std::find(corpus.sentences.begin(), corpus.sentences.end(), s);
      REQUIRE(it != corpus.sentences.end());
    }
    CHECK(sample.sentences.size() <= corpus.sentences.size());
    CHECK(greedy_sample(corpus, k, 42).sentences == sample.sentences);
  }
  CHECK(greedy_sample(corpus, 1000, 1).sentences.size() == corpus.sentences.size());

  const TaggedCorpus rare = make_corpus({{{"a"}, {"B-R"}}, {{"b"}, {"B-F"}}, {{"c"}, {"B-F"}}, {{"d"}, {"B-F"}}});
  const auto small = greedy_sample(rare, 2, 0);
  CHECK(entity_counts(small).at("R") == 1);
  CHECK(entity_counts(small).at("F") == 2);
  CHECK_THROWS_AS(greedy_sample(rare, 0, 0), InputError);
}

TEST_CASE("greedy_sample draws sentences without duplicates") {
  std::vector<Sentence> sentences;
  for (int i = 0; i < 30; ++i) sentences.push_back({{"t" + std::to_string(i), "x"}, {"B-A", i % 3 == 0 ? "B-B" : "O"}});
  const TaggedCorpus corpus = make_corpus(sentences);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto sample = greedy_sample(corpus, 4, seed);
    std::set<std::string> first_tokens;
    for (const auto& s : sample.sentences) CHECK(first_tokens.insert(s.tokens[0]).second);
  }
}

TEST_CASE("synthetic generator") {
  SynthSpec spec;
  spec.source_sentences = 100;
  spec.target_train_sentences = 80;
  spec.target_test_sentences = 50;
  const SynthCorpora a = generate_synthetic(spec);
  const SynthCorpora b = generate_synthetic(spec);
  CHECK(a.source_train.sentences == b.source_train.sentences);
  CHECK(a.target_test.sentences == b.target_test.sentences);
  CHECK(a.source_train.sentences.size() == 100);
  CHECK(a.target_train.sentences.size() == 80);
  CHECK(a.source_train.label_set == std::vector<std::string>{"ORG", "PER"});
  CHECK(a.target_train.label_set == std::vector<std::string>{"BAND", "CONFERENCE", "MUSICIAN", "RESEARCHER"});
  CHECK(a.source_train.repairs == 0);
  CHECK(a.target_train.repairs == 0);
  for (const auto& s : a.target_train.sentences) {
    CHECK(s.size() >= spec.min_length);
    CHECK_FALSE(extract_spans(s.tags).empty());
  }
  CHECK(parse_conll(to_conll(a.target_test)).sentences == a.target_test.sentences);

  SynthSpec other = spec;
  other.seed = spec.seed + 1;
  CHECK(generate_synthetic(other).source_train.sentences != a.source_train.sentences);

  CHECK(SynthSpec::from_json(spec.to_json()).to_json() == spec.to_json());
  CHECK_THROWS_AS(SynthSpec::from_json({{"bogus", 1}}), InputError);
  CHECK_THROWS_AS(SynthSpec::from_json({{"two_token_rate", 1.5}}), InputError);
  CHECK_THROWS_AS(SynthSpec::from_json({{"refinement", {{{"target", "X"}, {"source", "NOPE"}}}}}), InputError);
}
