#include "lst/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <random>
#include <set>

#include "lst/errors.hpp"

namespace lst {
namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

bool chance(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

struct Piece {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
};

class Generator {
 public:
  explicit Generator(const SynthSpec& spec) : spec_(spec) {
    for (const auto& [target, source] : spec_.refinement) children_[source].push_back(target);
  }

  TaggedCorpus corpus(std::size_t count, bool target_domain, std::mt19937_64& rng) const {
    std::vector<Sentence> out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) out.push_back(sentence(target_domain, rng));
    return make_corpus(std::move(out));
  }

 private:
  std::string name(const std::string& source, bool target_domain, std::mt19937_64& rng) const {
    const bool shifted = target_domain && !chance(rng, spec_.target_name_overlap);
    return lower(source) + (shifted ? "_t" : "_n") + std::to_string(pick(rng, spec_.names_per_label));
  }

  Sentence sentence(bool target_domain, std::mt19937_64& rng) const {
    const std::size_t length = spec_.min_length + pick(rng, spec_.max_length - spec_.min_length + 1);
    const std::size_t n_entities = 1 + pick(rng, spec_.max_entities);
    const std::size_t topic = pick(rng, 1024);

    std::vector<Piece> pieces;
    std::set<std::string> present;
    for (std::size_t e = 0; e < n_entities; ++e) {
      const std::string& source = spec_.source_labels[pick(rng, spec_.source_labels.size())];
      std::string label = source;
      if (target_domain) {
        const auto& kids = children_.at(source);
        label = kids[topic % kids.size()];
        present.insert(label);
      }
      Piece p;
      if (!target_domain || chance(rng, spec_.target_marker_rate)) {
        p.tokens.push_back(lower(source) + "_m" + std::to_string(pick(rng, spec_.markers_per_label)));
        p.tags.push_back("O");
      }
      p.tokens.push_back(name(source, target_domain, rng));
      p.tags.push_back("B-" + label);
      if (chance(rng, spec_.two_token_rate)) {
        p.tokens.push_back(name(source, target_domain, rng));
        p.tags.push_back("I-" + label);
      }
      pieces.push_back(std::move(p));
    }
    for (const auto& label : present) {
      pieces.push_back({{lower(label) + "_c" + std::to_string(pick(rng, spec_.context_words_per_label))}, {"O"}});
    }
    if (chance(rng, spec_.distractor_rate)) {
      const std::string& source = spec_.source_labels[pick(rng, spec_.source_labels.size())];
      pieces.push_back({{name(source, target_domain, rng)}, {"O"}});
    }
    std::size_t used = 0;
    for (const auto& p : pieces) used += p.tokens.size();
    for (std::size_t f = used; f < length; ++f) {
      pieces.push_back({{"w" + std::to_string(pick(rng, spec_.filler_vocab))}, {"O"}});
    }
    std::shuffle(pieces.begin(), pieces.end(), rng);

    Sentence s;
    for (const auto& p : pieces) {
      s.tokens.insert(s.tokens.end(), p.tokens.begin(), p.tokens.end());
      s.tags.insert(s.tags.end(), p.tags.begin(), p.tags.end());
    }
    return s;
  }

  const SynthSpec& spec_;
  std::map<std::string, std::vector<std::string>> children_;
};

}  // namespace

void SynthSpec::validate() const {
  if (source_labels.empty()) throw InputError("synth: no source labels");
  if (refinement.empty()) throw InputError("synth: empty refinement map");
  std::set<std::string> sources(source_labels.begin(), source_labels.end());
  if (sources.size() != source_labels.size()) throw InputError("synth: duplicate source label");
  std::set<std::string> targets;
  std::set<std::string> refined;
  for (const auto& [target, source] : refinement) {
    if (!sources.count(source)) throw InputError("synth: target label " + target + " refines unknown " + source);
    if (!targets.insert(target).second) throw InputError("synth: duplicate target label " + target);
    refined.insert(source);
  }
  if (refined.size() != sources.size()) throw InputError("synth: every source label needs at least one refinement");
  for (const auto& l : sources) {
    if (!is_valid_tag("B-" + l)) throw InputError("synth: bad label name " + l);
  }
  for (const auto& l : targets) {
    if (!is_valid_tag("B-" + l)) throw InputError("synth: bad label name " + l);
  }
  if (names_per_label == 0 || markers_per_label == 0 || context_words_per_label == 0 || filler_vocab == 0) {
    throw InputError("synth: vocabulary sizes must be positive");
  }
  if (min_length == 0 || max_length < min_length) throw InputError("synth: bad sentence length range");
  if (max_entities == 0) throw InputError("synth: max_entities must be positive");
  const auto bad_rate = [](double r) { return !(r >= 0.0 && r <= 1.0); };
  if (bad_rate(two_token_rate) || bad_rate(distractor_rate) || bad_rate(target_name_overlap) ||
      bad_rate(target_marker_rate)) {
    throw InputError("synth: rates must lie in [0, 1]");
  }
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"seed", "source_labels", "refinement", "names_per_label",
                                           "markers_per_label", "context_words_per_label", "filler_vocab",
                                           "min_length", "max_length", "max_entities", "two_token_rate",
                                           "distractor_rate", "target_name_overlap", "target_marker_rate",
                                           "source_sentences", "target_train_sentences",
                                           "target_test_sentences"};
  if (!j.is_object()) throw InputError("synth spec must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InputError("synth spec: unknown key '" + key + "'");
  }
  SynthSpec s;
  try {
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("source_labels")) s.source_labels = j["source_labels"].get<std::vector<std::string>>();
    if (j.contains("refinement")) {
      s.refinement.clear();
      for (const auto& item : j["refinement"]) {
        s.refinement.emplace_back(item.at("target").get<std::string>(), item.at("source").get<std::string>());
      }
    }
    auto read = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j[key].get<std::remove_reference_t<decltype(field)>>();
    };
    read("names_per_label", s.names_per_label);
    read("markers_per_label", s.markers_per_label);
    read("context_words_per_label", s.context_words_per_label);
    read("filler_vocab", s.filler_vocab);
    read("min_length", s.min_length);
    read("max_length", s.max_length);
    read("max_entities", s.max_entities);
    read("two_token_rate", s.two_token_rate);
    read("distractor_rate", s.distractor_rate);
    read("target_name_overlap", s.target_name_overlap);
    read("target_marker_rate", s.target_marker_rate);
    read("source_sentences", s.source_sentences);
    read("target_train_sentences", s.target_train_sentences);
    read("target_test_sentences", s.target_test_sentences);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json SynthSpec::to_json() const {
  nlohmann::json refs = nlohmann::json::array();
  for (const auto& [target, source] : refinement) refs.push_back({{"target", target}, {"source", source}});
  return {{"seed", seed},
          {"source_labels", source_labels},
          {"refinement", refs},
          {"names_per_label", names_per_label},
          {"markers_per_label", markers_per_label},
          {"context_words_per_label", context_words_per_label},
          {"filler_vocab", filler_vocab},
          {"min_length", min_length},
          {"max_length", max_length},
          {"max_entities", max_entities},
          {"two_token_rate", two_token_rate},
          {"distractor_rate", distractor_rate},
          {"target_name_overlap", target_name_overlap},
          {"target_marker_rate", target_marker_rate},
          {"source_sentences", source_sentences},
          {"target_train_sentences", target_train_sentences},
          {"target_test_sentences", target_test_sentences}};
}

SynthCorpora generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Generator gen(spec);
  std::mt19937_64 rng(spec.seed);
  SynthCorpora out;
  out.source_train = gen.corpus(spec.source_sentences, false, rng);
  out.target_train = gen.corpus(spec.target_train_sentences, true, rng);
  out.target_test = gen.corpus(spec.target_test_sentences, true, rng);
  return out;
}

}  // namespace lst
