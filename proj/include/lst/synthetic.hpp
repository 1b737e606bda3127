#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lst/corpus.hpp"

namespace lst {

/// Generator settings for a coarse-to-fine transfer pair of corpora.
///
/// Each source label owns a pool of entity names and a set of marker words
/// that directly precede its entities. Each target label refines one source
/// label and owns context words. A sentence draws a topic index k; every
/// entity in it takes the k-th refinement (cyclically) of its source label,
/// and one context word of each such target label appears somewhere in the
/// sentence. Distractors are pool names without a marker, tagged O.
/// Target-domain names may come from a disjoint pool (domain shift).
struct SynthSpec {
  std::uint64_t seed = 7;
  std::vector<std::string> source_labels{"PER", "ORG"};
  /// (target label, source label) pairs; order fixes the refinement index.
  std::vector<std::pair<std::string, std::string>> refinement{
      {"RESEARCHER", "PER"}, {"MUSICIAN", "PER"}, {"CONFERENCE", "ORG"}, {"BAND", "ORG"}};
  std::size_t names_per_label = 12;
  std::size_t markers_per_label = 3;
  std::size_t context_words_per_label = 3;
  std::size_t filler_vocab = 40;
  std::size_t min_length = 6;
  std::size_t max_length = 12;
  std::size_t max_entities = 2;
  double two_token_rate = 0.3;
  double distractor_rate = 0.5;
  /// Probability that a target-domain entity name comes from the source name
  /// pool; otherwise it comes from a disjoint target-only pool.
  double target_name_overlap = 0.0;
  /// Probability that a target-domain entity keeps its source marker word.
  double target_marker_rate = 1.0;
  std::size_t source_sentences = 400;
  std::size_t target_train_sentences = 600;
  std::size_t target_test_sentences = 300;

  /// Missing keys keep their defaults; unknown keys are rejected.
  static SynthSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Throws InputError on inconsistent settings.
  void validate() const;
};

struct SynthCorpora {
  TaggedCorpus source_train;
  TaggedCorpus target_train;
  TaggedCorpus target_test;
};

SynthCorpora generate_synthetic(const SynthSpec& spec);

}  // namespace lst
