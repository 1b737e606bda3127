#include "lst/label_graph.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include <json.hpp>

#include "lst/errors.hpp"

namespace lst {
namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

Matrix pool_columns(const Matrix& probs, const Matrix& pooling) {
  if (pooling.empty()) return probs;
  if (pooling.rows() != probs.cols()) {
    throw ShapeError("pooling matrix " + pooling.shape_string() + " for " + probs.shape_string() + " probabilities");
  }
  return matmul(probs, pooling);
}

}  // namespace

std::size_t ConditionalTable::index_of(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw InputError("label '" + label + "' not in conditional table");
  return static_cast<std::size_t>(it - labels.begin());
}

ConditionalTable ConditionalTable::restrict_to(std::span<const std::string> subset) const {
  ConditionalTable out;
  out.rows = Matrix(subset.size(), rows.cols());
  for (std::size_t r = 0; r < subset.size(); ++r) {
    const std::size_t src = index_of(subset[r]);
    out.labels.push_back(subset[r]);
    std::copy(rows.row(src).begin(), rows.row(src).end(), out.rows.row(r).begin());
    out.support_counts.push_back(support_counts.at(src));
  }
  return out;
}

NormalizedNodes normalize_nodes(const Matrix& raw) {
  const double n = static_cast<double>(raw.rows());
  const double total = sum(pairwise_l2(raw));
  if (total == 0.0) return {raw, 1.0, true};
  NormalizedNodes out{raw, n * n * (1.0 / total), false};
  out.nodes *= out.scale;
  return out;
}

LabelGraph::LabelGraph(std::vector<std::string> labels, Matrix nodes, double threshold, bool degenerate)
    : labels_(std::move(labels)), nodes_(std::move(nodes)), threshold_(threshold), degenerate_(degenerate) {
  if (labels_.size() != nodes_.rows()) throw ShapeError("label graph: label count does not match node rows");
  distances_ = pairwise_l2(nodes_);
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t j = i + 1; j < size(); ++j) {
      if (distances_(i, j) < threshold_) edges_.push_back({i, j, distances_(i, j)});
    }
  }
}

std::optional<double> LabelGraph::edge_weight(std::size_t i, std::size_t j) const {
  if (i > j) std::swap(i, j);
  for (const auto& e : edges_) {
    if (e.i == i && e.j == j) return e.weight;
  }
  return std::nullopt;
}

Matrix LabelGraph::adjacency() const {
  Matrix a(size(), size());
  for (const auto& e : edges_) a(e.i, e.j) = a(e.j, e.i) = 1.0;
  return a;
}

std::string LabelGraph::to_json() const {
  std::string out = "{\"labels\": [";
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (i) out += ", ";
    out += nlohmann::json(labels_[i]).dump();
  }
  out += "], \"nodes\": [";
  for (std::size_t i = 0; i < nodes_.rows(); ++i) {
    out += i ? ", [" : "[";
    for (std::size_t j = 0; j < nodes_.cols(); ++j) {
      if (j) out += ", ";
      out += fixed6(nodes_(i, j));
    }
    out += "]";
  }
  out += "], \"edges\": [";
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    if (k) out += ", ";
    out += "{\"i\": " + std::to_string(edges_[k].i) + ", \"j\": " + std::to_string(edges_[k].j) +
           ", \"w\": " + fixed6(edges_[k].weight) + "}";
  }
  out += "]}\n";
  return out;
}

std::string LabelGraph::edges_csv() const {
  std::string out = "label";
  for (const auto& l : labels_) out += "," + l;
  out += "\n";
  for (std::size_t i = 0; i < size(); ++i) {
    out += labels_[i];
    for (std::size_t j = 0; j < size(); ++j) {
      const auto w = i == j ? std::nullopt : edge_weight(i, j);
      out += "," + (w ? fixed6(*w) : std::string("inf"));
    }
    out += "\n";
  }
  return out;
}

ConditionalTable estimate_conditionals(const TokenLogitFn& model, const TaggedCorpus& corpus, double temperature,
                                       std::span<const std::string> label_set, const Matrix& pooling) {
  if (corpus.token_count() == 0) throw InputError("estimate_conditionals: empty corpus");
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < label_set.size(); ++i) slot.emplace(label_set[i], i);

  std::vector<std::vector<double>> sums(label_set.size());
  std::vector<std::size_t> counts(label_set.size(), 0);
  for (const auto& sentence : corpus.sentences) {
    const Matrix probs = pool_columns(softmax_rows(model(sentence), temperature), pooling);
    if (probs.rows() != sentence.size()) throw ShapeError("tagger returned wrong number of token rows");
    for (std::size_t t = 0; t < sentence.size(); ++t) {
      auto it = slot.find(entity_type(sentence.tags[t]));
      if (it == slot.end()) continue;
      auto& acc = sums[it->second];
      if (acc.empty()) acc.assign(probs.cols(), 0.0);
      for (std::size_t c = 0; c < probs.cols(); ++c) acc[c] += probs(t, c);
      ++counts[it->second];
    }
  }

  ConditionalTable table;
  std::vector<double> data;
  std::size_t width = 0;
  for (std::size_t i = 0; i < label_set.size(); ++i) {
    if (counts[i] == 0) {
      table.excluded.push_back(label_set[i]);
      continue;
    }
    width = sums[i].size();
    for (double v : sums[i]) data.push_back(v / static_cast<double>(counts[i]));
    table.labels.push_back(label_set[i]);
    table.support_counts.push_back(counts[i]);
  }
  table.rows = Matrix(table.labels.size(), width, std::move(data));
  return table;
}

LabelGraph build_graph(std::vector<std::string> labels, const Matrix& probability_rows, double threshold) {
  if (probability_rows.rows() == 0) throw InputError("build_graph: no rows");
  if (!(threshold > 0.0)) throw InputError("build_graph: threshold must be positive");
  NormalizedNodes norm = normalize_nodes(probability_rows);
  return LabelGraph(std::move(labels), std::move(norm.nodes), threshold, norm.degenerate);
}

LabelGraph build_graph(const ConditionalTable& table, double threshold) {
  return build_graph(table.labels, table.rows, threshold);
}

std::optional<TapeGraph> target_graph_on_tape(Var token_logits, std::span<const std::string> token_types,
                                              std::span<const std::string> label_order, double temperature,
                                              const Matrix& pooling) {
  Tape& tape = *token_logits.tape();
  const std::size_t n_tokens = token_logits.value().rows();
  if (token_types.size() != n_tokens) throw ShapeError("target graph: token type count does not match logits");

  TapeGraph graph;
  std::vector<std::vector<std::size_t>> members;
  for (const auto& label : label_order) {
    std::vector<std::size_t> idx;
    for (std::size_t t = 0; t < n_tokens; ++t) {
      if (token_types[t] == label) idx.push_back(t);
    }
    if (idx.empty()) continue;
    graph.labels.push_back(label);
    members.push_back(std::move(idx));
  }
  if (graph.labels.size() < 2) return std::nullopt;

  Matrix averaging(graph.labels.size(), n_tokens);
  for (std::size_t r = 0; r < members.size(); ++r) {
    for (std::size_t t : members[r]) averaging(r, t) = 1.0 / static_cast<double>(members[r].size());
  }
  Var probs = ad::softmax_rows(token_logits, temperature);
  if (!pooling.empty()) probs = ad::matmul(probs, tape.constant(pooling));
  graph.raw_nodes = ad::matmul(tape.constant(std::move(averaging)), probs);

  const double m = static_cast<double>(graph.labels.size());
  Var total = ad::sum(ad::pairwise_l2(graph.raw_nodes));
  if (total.value()(0, 0) == 0.0) {
    graph.degenerate = true;
    graph.nodes = graph.raw_nodes;
  } else {
    graph.nodes = ad::mul_scalar(graph.raw_nodes, ad::scale(ad::reciprocal(total), m * m));
  }
  graph.distances = ad::pairwise_l2(graph.nodes);
  return graph;
}

std::optional<LabelGraph> target_graph_from_batch(const Matrix& token_logits,
                                                  std::span<const std::string> token_types,
                                                  std::span<const std::string> label_order, double temperature,
                                                  double threshold, const Matrix& pooling) {
  Tape tape;
  auto g = target_graph_on_tape(tape.constant(token_logits), token_types, label_order, temperature, pooling);
  if (!g) return std::nullopt;
  return LabelGraph(g->labels, g->nodes.value(), threshold, g->degenerate);
}

}  // namespace lst
