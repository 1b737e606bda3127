#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lst/autodiff.hpp"
#include "lst/corpus.hpp"
#include "lst/matrix.hpp"

namespace lst {

/// p(source output | gold target type), one row per target entity type.
struct ConditionalTable {
  std::vector<std::string> labels;
  Matrix rows;
  std::vector<std::size_t> support_counts;
  /// Requested labels with no token in the corpus; they have no row.
  std::vector<std::string> excluded;

  /// Sub-table with the given labels, in the given order.
  ConditionalTable restrict_to(std::span<const std::string> subset) const;
  std::size_t index_of(const std::string& label) const;
};

struct NormalizedNodes {
  Matrix nodes;
  double scale = 1.0;
  bool degenerate = false;
};

/// Scales rows by n^2 / (sum of l2 distances over all ordered row pairs), so the
/// mean ordered-pair distance becomes 1. All-identical rows come back unchanged
/// with degenerate set.
NormalizedNodes normalize_nodes(const Matrix& raw);

struct Edge {
  std::size_t i = 0;
  std::size_t j = 0;
  double weight = 0.0;
};

/// Nodes are target entity types; edges join types whose normalized node
/// distance falls below the threshold.
class LabelGraph {
 public:
  LabelGraph() = default;
  LabelGraph(std::vector<std::string> labels, Matrix nodes, double threshold, bool degenerate);

  const std::vector<std::string>& labels() const { return labels_; }
  const Matrix& nodes() const { return nodes_; }
  const Matrix& distances() const { return distances_; }
  /// Stored with i < j.
  const std::vector<Edge>& edges() const { return edges_; }
  double threshold() const { return threshold_; }
  bool degenerate() const { return degenerate_; }
  std::size_t size() const { return labels_.size(); }

  std::optional<double> edge_weight(std::size_t i, std::size_t j) const;
  /// 0/1 adjacency without self-loops.
  Matrix adjacency() const;

  /// {"labels": [...], "nodes": [[...]], "edges": [{"i":..,"j":..,"w":..}]}, 6 decimals.
  std::string to_json() const;
  /// Dense edge matrix with a label header; absent edges (and the diagonal) as "inf".
  std::string edges_csv() const;

 private:
  std::vector<std::string> labels_;
  Matrix nodes_;
  Matrix distances_;
  std::vector<Edge> edges_;
  double threshold_ = 0.0;
  bool degenerate_ = false;
};

/// Token logits of a tagger for one sentence, rows = tokens.
using TokenLogitFn = std::function<Matrix(const Sentence&)>;

/// Averages softmax(logits / temperature) over every token whose gold type
/// is y. An optional pooling matrix (logit columns x output groups) sums
/// probabilities into coarser groups after the softmax.
ConditionalTable estimate_conditionals(const TokenLogitFn& model, const TaggedCorpus& corpus, double temperature,
                                       std::span<const std::string> label_set, const Matrix& pooling = {});

LabelGraph build_graph(std::vector<std::string> labels, const Matrix& probability_rows, double threshold);
LabelGraph build_graph(const ConditionalTable& table, double threshold);

/// Differentiable per-batch target graph.
struct TapeGraph {
  std::vector<std::string> labels;
  Var raw_nodes;
  Var nodes;
  Var distances;
  bool degenerate = false;
};

/// One node per label of label_order that occurs among token_types (entity
/// type per token, "" for O): the mean of softmax(logits / T) (pooled) over
/// that label's tokens, then normalized. Returns nullopt with fewer than two
/// distinct labels.
std::optional<TapeGraph> target_graph_on_tape(Var token_logits, std::span<const std::string> token_types,
                                              std::span<const std::string> label_order, double temperature,
                                              const Matrix& pooling = {});

/// Value-only variant of target_graph_on_tape that also thresholds edges.
std::optional<LabelGraph> target_graph_from_batch(const Matrix& token_logits,
                                                  std::span<const std::string> token_types,
                                                  std::span<const std::string> label_order, double temperature,
                                                  double threshold, const Matrix& pooling = {});

}  // namespace lst
