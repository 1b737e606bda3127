#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace lst {

struct Sentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;

  std::size_t size() const { return tokens.size(); }
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

/// Sentences with validated BIO tags. label_set holds entity types (no
/// prefixes, no O) in sorted order.
struct TaggedCorpus {
  std::vector<Sentence> sentences;
  std::vector<std::string> label_set;
  /// Orphan I- tags rewritten to B- while building the corpus.
  std::size_t repairs = 0;

  bool empty() const { return sentences.empty(); }
  std::size_t token_count() const;
};

struct EntitySpan {
  std::size_t sentence_index = 0;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::string type;

  friend auto operator<=>(const EntitySpan&, const EntitySpan&) = default;
};

struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// "B-PER" -> "PER", "I-PER" -> "PER", "O" -> "".
std::string entity_type(std::string_view tag);
bool is_valid_tag(std::string_view tag);

/// Rewrites every I-X that does not continue an X span into B-X. Returns the number of rewrites.
std::size_t repair_bio(std::vector<std::string>& tags);

/// Validates tags, repairs orphans and derives the label set.
TaggedCorpus make_corpus(std::vector<Sentence> sentences);

TaggedCorpus parse_conll(std::string_view text);
std::string to_conll(const TaggedCorpus& corpus);
TaggedCorpus read_conll_file(const std::filesystem::path& path);
void write_conll_file(const std::filesystem::path& path, const TaggedCorpus& corpus);

/// Maximal B-X (I-X)* runs of a repaired tag sequence.
std::vector<EntitySpan> extract_spans(const std::vector<std::string>& tags, std::size_t sentence_index = 0);
std::vector<EntitySpan> extract_spans(const TaggedCorpus& corpus);

/// Exact-match micro P/R/F1 pooled over all spans.
PrfScore micro_f1(const std::vector<EntitySpan>& gold, const std::vector<EntitySpan>& pred);

/// Entity (span) counts per type.
std::map<std::string, std::size_t> entity_counts(const TaggedCorpus& corpus);

/// Greedy few-shot selection: types are visited rarest first and each is
/// topped up to k entities from a seeded shuffle of the sentences containing it.
TaggedCorpus greedy_sample(const TaggedCorpus& corpus, std::size_t k, std::uint64_t seed);

}  // namespace lst
