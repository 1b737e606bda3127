#include "lst/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "lst/errors.hpp"

namespace lst {

std::size_t TaggedCorpus::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

std::string entity_type(std::string_view tag) {
  if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') return std::string(tag.substr(2));
  return {};
}

bool is_valid_tag(std::string_view tag) {
  return tag == "O" || !entity_type(tag).empty();
}

std::size_t repair_bio(std::vector<std::string>& tags) {
  std::size_t repairs = 0;
  std::string open;  // type of the span the previous tag belongs to
  for (auto& tag : tags) {
    if (tag == "O") {
      open.clear();
      continue;
    }
    std::string type = entity_type(tag);
    if (tag[0] == 'I' && type != open) {
      tag = "B-" + type;
      ++repairs;
    }
    open = std::move(type);
  }
  return repairs;
}

TaggedCorpus make_corpus(std::vector<Sentence> sentences) {
  TaggedCorpus corpus;
  std::set<std::string> labels;
  for (auto& s : sentences) {
    if (s.tokens.size() != s.tags.size()) throw InputError("sentence has mismatched token and tag counts");
    for (const auto& tag : s.tags) {
      if (!is_valid_tag(tag)) throw InputError("invalid BIO tag '" + tag + "'");
      if (tag != "O") labels.insert(entity_type(tag));
    }
    corpus.repairs += repair_bio(s.tags);
  }
  corpus.sentences = std::move(sentences);
  corpus.label_set.assign(labels.begin(), labels.end());
  return corpus;
}

TaggedCorpus parse_conll(std::string_view text) {
  std::vector<Sentence> sentences;
  Sentence current;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::istringstream fields{std::string(line)};
    std::vector<std::string> parts;
    for (std::string f; fields >> f;) parts.push_back(std::move(f));
    if (parts.empty()) {
      if (!current.tokens.empty()) sentences.push_back(std::move(current));
      current = Sentence{};
      continue;
    }
    if (parts.size() != 2) throw ParseError("expected 2 fields, found " + std::to_string(parts.size()), line_no);
    if (!is_valid_tag(parts[1])) throw ParseError("invalid BIO tag '" + parts[1] + "'", line_no);
    current.tokens.push_back(std::move(parts[0]));
    current.tags.push_back(std::move(parts[1]));
  }
  if (!current.tokens.empty()) sentences.push_back(std::move(current));
  return make_corpus(std::move(sentences));
}

std::string to_conll(const TaggedCorpus& corpus) {
  std::string out;
  for (const auto& s : corpus.sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) out += s.tokens[i] + " " + s.tags[i] + "\n";
    out += "\n";
  }
  return out;
}

TaggedCorpus read_conll_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_conll(buf.str());
}

void write_conll_file(const std::filesystem::path& path, const TaggedCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_conll(corpus);
}

std::vector<EntitySpan> extract_spans(const std::vector<std::string>& tags, std::size_t sentence_index) {
  std::vector<EntitySpan> spans;
  std::size_t i = 0;
  while (i < tags.size()) {
    if (tags[i] == "O") {
      ++i;
      continue;
    }
    // Repaired input: every span opens with B-, but tolerate a leading I- the same way.
    const std::string type = entity_type(tags[i]);
    std::size_t j = i + 1;
    while (j < tags.size() && tags[j][0] == 'I' && entity_type(tags[j]) == type) ++j;
    spans.push_back({sentence_index, i, j, type});
    i = j;
  }
  return spans;
}

std::vector<EntitySpan> extract_spans(const TaggedCorpus& corpus) {
  std::vector<EntitySpan> all;
  for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
    auto spans = extract_spans(corpus.sentences[s].tags, s);
    all.insert(all.end(), spans.begin(), spans.end());
  }
  return all;
}

PrfScore micro_f1(const std::vector<EntitySpan>& gold, const std::vector<EntitySpan>& pred) {
  std::vector<EntitySpan> g = gold;
  std::vector<EntitySpan> p = pred;
  std::sort(g.begin(), g.end());
  std::sort(p.begin(), p.end());
  std::vector<EntitySpan> common;
  std::set_intersection(g.begin(), g.end(), p.begin(), p.end(), std::back_inserter(common));
  const double tp = static_cast<double>(common.size());
  PrfScore score;
  score.precision = p.empty() ? 0.0 : tp / static_cast<double>(p.size());
  score.recall = g.empty() ? 0.0 : tp / static_cast<double>(g.size());
  const double denom = score.precision + score.recall;
  score.f1 = denom == 0.0 ? 0.0 : 2.0 * score.precision * score.recall / denom;
  return score;
}

std::map<std::string, std::size_t> entity_counts(const TaggedCorpus& corpus) {
  std::map<std::string, std::size_t> counts;
  for (const auto& label : corpus.label_set) counts[label] = 0;
  for (const auto& span : extract_spans(corpus)) ++counts[span.type];
  return counts;
}

TaggedCorpus greedy_sample(const TaggedCorpus& corpus, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw InputError("greedy_sample: k must be at least 1");

  std::vector<std::map<std::string, std::size_t>> per_sentence(corpus.sentences.size());
  for (const auto& span : extract_spans(corpus)) ++per_sentence[span.sentence_index][span.type];

  std::vector<std::pair<std::size_t, std::string>> order;
  for (const auto& [type, count] : entity_counts(corpus)) order.emplace_back(count, type);
  std::sort(order.begin(), order.end());

  std::mt19937_64 rng(seed);
  std::vector<bool> taken(corpus.sentences.size(), false);
  std::map<std::string, std::size_t> sampled;
  for (const auto& [total, type] : order) {
    std::vector<std::size_t> candidates;
    for (std::size_t s = 0; s < per_sentence.size(); ++s) {
      if (!taken[s] && per_sentence[s].count(type)) candidates.push_back(s);
    }
    std::shuffle(candidates.begin(), candidates.end(), rng);
    for (std::size_t s : candidates) {
      if (sampled[type] >= k) break;
      taken[s] = true;
      for (const auto& [t, c] : per_sentence[s]) sampled[t] += c;
    }
  }

  std::vector<Sentence> chosen;
  for (std::size_t s = 0; s < taken.size(); ++s) {
    if (taken[s]) chosen.push_back(corpus.sentences[s]);
  }
  return make_corpus(std::move(chosen));
}

}  // namespace lst
