#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lst/checkpoint.hpp"
#include "lst/config.hpp"
#include "lst/corpus.hpp"
#include "lst/gw.hpp"
#include "lst/label_graph.hpp"
#include "lst/model.hpp"

namespace lst {

struct BatchRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double cls = 0.0;
  double aux = 0.0;
  double gw = 0.0;
  double total = 0.0;
  bool gw_skipped = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_total = 0.0;
  double mean_cls = 0.0;
  double mean_aux = 0.0;
  double mean_gw = 0.0;
  std::size_t gw_skips = 0;
  /// Token accuracy (source training) or span micro-F1 (fine-tuning) on the training corpus.
  double train_metric = 0.0;
};

struct TrainLog {
  std::vector<BatchRecord> batches;
  std::vector<EpochRecord> epochs;

  nlohmann::json to_json() const;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

/// Components of the total objective for one batch.
struct BatchObjective {
  Var total;
  double cls = 0.0;
  double aux = 0.0;
  double gw = 0.0;
  bool gw_skipped = false;
  std::optional<GwResult> gw_result;
};

/// L_cls + lambda1 L_aux + lambda2 D_gw for one batch of a fused model.
/// Terms are dropped when ablated or weighted by zero. D_gw compares the
/// in-batch target graph with the source table restricted to the same labels
/// and is skipped when the batch holds fewer than two labels or either graph
/// is degenerate. A fixed_plan replaces the solver's plan (the plan is always
/// held constant for differentiation).
BatchObjective batch_objective(Tape& tape, const BoundParams& params, const TaggerModel& model,
                               std::span<const Sentence> batch, const ConditionalTable& source_table,
                               const TrainConfig& config, const EmbeddingStore* store = nullptr,
                               const Matrix* fixed_plan = nullptr);

/// Encoder plus linear tagger trained with token cross-entropy only.
TrainResult train_source(const TaggedCorpus& corpus, const TrainConfig& config, const EmbeddingStore* store = nullptr);

/// p(source type or O | gold target type) under f0 at temperature T.
ConditionalTable source_conditionals(const Checkpoint& f0, const TaggedCorpus& target, const TrainConfig& config,
                                     const EmbeddingStore* store = nullptr);
LabelGraph build_source_graph(const Checkpoint& f0, const TaggedCorpus& target, const TrainConfig& config,
                              const EmbeddingStore* store = nullptr);

/// Target model: encoder copied from f0, fresh fusion block and heads, trained
/// on the target corpus only.
TrainResult finetune(const Checkpoint& f0, const TaggedCorpus& target, const TrainConfig& config,
                     const EmbeddingStore* store = nullptr);

/// Initial target model before any update.
Checkpoint init_target_model(const Checkpoint& f0, const TaggedCorpus& target, const TrainConfig& config,
                             const EmbeddingStore* store = nullptr);

struct EvalReport {
  PrfScore score;
  std::size_t gold_spans = 0;
  std::size_t predicted_spans = 0;
  std::size_t sentences = 0;

  nlohmann::json to_json() const;
};

using TagPredictor = std::function<std::vector<std::string>(const Sentence&)>;

EvalReport evaluate_predictor(const TaggedCorpus& corpus, const TagPredictor& predict);
/// Throws InputError when the corpus uses labels the model does not know.
EvalReport evaluate(const Checkpoint& model, const TaggedCorpus& corpus, const EmbeddingStore* store = nullptr);

struct Aggregate {
  double mean = 0.0;
  /// Population standard deviation.
  double std = 0.0;
  std::size_t n = 0;
};

Aggregate aggregate(std::span<const double> values);

enum class SweepParam { Temperature, EdgeThreshold, Lambda1, Lambda2 };

SweepParam sweep_param_from_string(const std::string& name);
std::string to_string(SweepParam p);
void apply_sweep_value(TrainConfig& config, SweepParam p, double value);

struct SweepRow {
  double value = 0.0;
  Aggregate f1;
  /// Edges of the source graph built under this configuration.
  std::size_t edge_count = 0;
};

/// finetune + evaluate for each value and each seed.
std::vector<SweepRow> sweep(SweepParam param, std::span<const double> values, const TrainConfig& base,
                            const Checkpoint& f0, const TaggedCorpus& train, const TaggedCorpus& test,
                            std::span<const std::uint64_t> seeds, const EmbeddingStore* store = nullptr);

/// Header "<param>,mean_f1,std_f1,edge_count", 6-decimal values.
std::string sweep_csv(SweepParam param, std::span<const SweepRow> rows);

}  // namespace lst
