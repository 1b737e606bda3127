#include "lst/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "lst/errors.hpp"

namespace lst {
namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::size_t model_width(const TaggerModel& model, const TrainConfig& config, const EmbeddingStore* store) {
  if (model.encoder_mode == EncoderMode::File) {
    if (!store) throw InputError("file encoder mode needs an embedding store");
    return store->dim();
  }
  return model.params.has("encoder.embedding") ? model.params.at("encoder.embedding").cols() : config.d_h;
}

void sgd_step(ModelParams& params, const BoundParams& bound, double lr) {
  for (const auto& [name, var] : bound.vars()) {
    const Matrix g = var.grad();
    Matrix& p = params.at(name);
    auto pd = p.data();
    auto gd = g.data();
    for (std::size_t k = 0; k < pd.size(); ++k) pd[k] -= lr * gd[k];
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    out.emplace_back(order.begin() + static_cast<long>(start),
                     order.begin() + static_cast<long>(std::min(n, start + batch_size)));
  }
  return out;
}

double token_accuracy(const TaggerModel& model, const TaggedCorpus& corpus, const EmbeddingStore* store) {
  std::size_t right = 0;
  std::size_t total = 0;
  for (const auto& s : corpus.sentences) {
    const auto pred = predict_tags(model, s, store);
    for (std::size_t t = 0; t < s.size(); ++t) right += pred[t] == s.tags[t];
    total += s.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(right) / static_cast<double>(total);
}

Vocabulary corpus_vocabulary(Vocabulary vocab, const TaggedCorpus& corpus) {
  for (const auto& s : corpus.sentences) {
    for (const auto& t : s.tokens) vocab.add(t);
  }
  return vocab;
}

EpochRecord summarize_epoch(std::size_t epoch, std::span<const BatchRecord> batches) {
  EpochRecord e;
  e.epoch = epoch;
  for (const auto& b : batches) {
    e.mean_total += b.total;
    e.mean_cls += b.cls;
    e.mean_aux += b.aux;
    e.mean_gw += b.gw;
    e.gw_skips += b.gw_skipped;
  }
  if (!batches.empty()) {
    const double n = static_cast<double>(batches.size());
    e.mean_total /= n;
    e.mean_cls /= n;
    e.mean_aux /= n;
    e.mean_gw /= n;
  }
  return e;
}

}  // namespace

nlohmann::json TrainLog::to_json() const {
  nlohmann::json j;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"mean_total", e.mean_total},
                           {"mean_cls", e.mean_cls},
                           {"mean_aux", e.mean_aux},
                           {"mean_gw", e.mean_gw},
                           {"gw_skips", e.gw_skips},
                           {"train_metric", e.train_metric}});
  }
  j["batches"] = nlohmann::json::array();
  for (const auto& b : batches) {
    j["batches"].push_back({{"epoch", b.epoch},
                            {"batch", b.batch},
                            {"cls", b.cls},
                            {"aux", b.aux},
                            {"gw", b.gw},
                            {"total", b.total},
                            {"gw_skipped", b.gw_skipped}});
  }
  return j;
}

BatchObjective batch_objective(Tape& tape, const BoundParams& params, const TaggerModel& model,
                               std::span<const Sentence> batch, const ConditionalTable& source_table,
                               const TrainConfig& config, const EmbeddingStore* store, const Matrix* fixed_plan) {
  if (batch.empty()) throw InputError("empty batch");
  if (!model.fusion) throw InputError("batch objective needs a model with a fusion block");
  const auto& labels = model.tags.labels();

  std::vector<Var> logits;
  std::vector<Var> fused;
  std::vector<std::size_t> gold;
  std::vector<std::string> types;
  Matrix presence(batch.size(), labels.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Sentence& sentence = batch[s];
    const auto fw = forward_sentence(tape, params, model, sentence, store);
    logits.push_back(fw.logits);
    fused.push_back(fw.fusion->h_prime);
    const auto ids = model.tags.indices(sentence.tags);
    gold.insert(gold.end(), ids.begin(), ids.end());
    for (const auto& tag : sentence.tags) types.push_back(entity_type(tag));
    const Matrix row = label_presence(sentence, labels);
    std::copy(row.row(0).begin(), row.row(0).end(), presence.row(s).begin());
  }
  Var all_logits = ad::concat_rows(logits);

  BatchObjective out;
  Var cls = classification_loss(all_logits, gold);
  out.cls = cls.value()(0, 0);
  out.total = cls;

  if (config.aux_active()) {
    Var aux = auxiliary_loss(fused, params["aux.w"], params["aux.b"], presence);
    out.aux = aux.value()(0, 0);
    out.total = ad::add(out.total, ad::scale(aux, config.lambda1));
  }

  if (config.gw_active()) {
    auto target = target_graph_on_tape(all_logits, types, labels, config.temperature, model.tags.type_pooling());
    std::optional<LabelGraph> source;
    if (target && !target->degenerate) {
      source = build_graph(source_table.restrict_to(target->labels), config.edge_threshold);
    }
    if (!source || source->degenerate()) {
      out.gw_skipped = true;
    } else {
      Matrix plan;
      if (fixed_plan) {
        if (fixed_plan->rows() != source->size() || fixed_plan->cols() != target->labels.size()) {
          throw ShapeError("fixed plan " + fixed_plan->shape_string() + " does not match the batch graphs");
        }
        plan = *fixed_plan;
      } else {
        out.gw_result = gromov_wasserstein(source->distances(), target->distances.value(), config.gw_options());
        plan = out.gw_result->plan.matrix;
      }
      Var gw = ad::gw_fixed_plan(target->distances, source->distances(), plan);
      out.gw = gw.value()(0, 0);
      out.total = ad::add(out.total, ad::scale(gw, config.lambda2));
    }
  }
  return out;
}

TrainResult train_source(const TaggedCorpus& corpus, const TrainConfig& config, const EmbeddingStore* store) {
  config.validate();
  if (corpus.empty() || corpus.token_count() == 0) throw InputError("train_source: empty corpus");
  if (corpus.label_set.empty()) throw InputError("train_source: corpus has no entity labels");

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt.config = config;
  TaggerModel& model = ckpt.model;
  model.encoder_mode = config.encoder_mode;
  model.tags = TagSet(corpus.label_set);
  model.fusion = false;

  std::mt19937_64 rng(config.seed);
  if (model.encoder_mode == EncoderMode::Toy) {
    model.vocab = corpus_vocabulary(Vocabulary{}, corpus);
    init_toy_encoder(model.params, model.vocab.size(), config.d_h, rng);
  }
  const std::size_t d_h = model_width(model, config, store);
  ckpt.config.d_h = d_h;
  init_classifier(model.params, d_h, model.tags.size(), rng);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::size_t first = result.log.batches.size();
    const auto batches = make_batches(corpus.sentences.size(), config.batch_size, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Tape tape;
      BoundParams params(tape, model.params, true);
      std::vector<Var> logits;
      std::vector<std::size_t> gold;
      for (std::size_t idx : batches[b]) {
        const Sentence& s = corpus.sentences[idx];
        logits.push_back(forward_sentence(tape, params, model, s, store).logits);
        const auto ids = model.tags.indices(s.tags);
        gold.insert(gold.end(), ids.begin(), ids.end());
      }
      Var loss = classification_loss(ad::concat_rows(logits), gold);
      tape.backward(loss);
      sgd_step(model.params, params, config.learning_rate);
      BatchRecord rec;
      rec.epoch = epoch;
      rec.batch = b;
      rec.cls = rec.total = loss.value()(0, 0);
      result.log.batches.push_back(rec);
    }
    EpochRecord e = summarize_epoch(epoch, std::span(result.log.batches).subspan(first));
    e.train_metric = token_accuracy(model, corpus, store);
    result.log.epochs.push_back(e);
  }
  if (!model.params.all_finite()) throw NumericError("train_source: parameters diverged");
  return result;
}

ConditionalTable source_conditionals(const Checkpoint& f0, const TaggedCorpus& target, const TrainConfig& config,
                                     const EmbeddingStore* store) {
  if (target.label_set.empty()) throw InputError("target corpus has no entity labels");
  const TokenLogitFn logits = [&](const Sentence& s) { return predict_logits(f0.model, s, store); };
  return estimate_conditionals(logits, target, config.temperature, target.label_set, f0.model.tags.type_pooling());
}

LabelGraph build_source_graph(const Checkpoint& f0, const TaggedCorpus& target, const TrainConfig& config,
                              const EmbeddingStore* store) {
  return build_graph(source_conditionals(f0, target, config, store), config.edge_threshold);
}

Checkpoint init_target_model(const Checkpoint& f0, const TaggedCorpus& target, const TrainConfig& config,
                             const EmbeddingStore* store) {
  config.validate();
  if (target.label_set.empty()) throw InputError("finetune: target corpus has no entity labels");
  if (f0.model.fusion) throw InputError("finetune: expected a source model without a fusion block");
  if (f0.model.encoder_mode != config.encoder_mode) throw InputError("finetune: encoder mode differs from the source model");

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.source_table = source_conditionals(f0, target, config, store);
  const LabelGraph graph = build_graph(*ckpt.source_table, config.edge_threshold);

  TaggerModel& model = ckpt.model;
  model.encoder_mode = f0.model.encoder_mode;
  model.tags = TagSet(target.label_set);
  model.fusion = true;
  model.gcn_adjacency = normalized_adjacency(graph);

  std::mt19937_64 rng(config.seed);
  if (model.encoder_mode == EncoderMode::Toy) {
    model.vocab = corpus_vocabulary(f0.model.vocab, target);
    for (const auto& [name, m] : f0.model.params.tensors) {
      if (name.rfind("encoder.", 0) == 0) model.params.tensors[name] = m;
    }
    grow_embedding(model.params, model.vocab.size(), rng);
  }
  const std::size_t d_h = model_width(model, config, store);
  ckpt.config.d_h = d_h;
  init_fusion(model.params, model.tags.labels().size(), {d_h, config.d_p}, rng);
  init_classifier(model.params, d_h, model.tags.size(), rng);
  init_auxiliary(model.params, d_h, model.tags.labels().size(), rng);
  return ckpt;
}

TrainResult finetune(const Checkpoint& f0, const TaggedCorpus& target, const TrainConfig& config,
                     const EmbeddingStore* store) {
  if (target.empty()) throw InputError("finetune: empty target corpus");
  TrainResult result;
  result.checkpoint = init_target_model(f0, target, config, store);
  Checkpoint& ckpt = result.checkpoint;
  const ConditionalTable& table = *ckpt.source_table;

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Sentence> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::size_t first = result.log.batches.size();
    const auto batches = make_batches(target.sentences.size(), config.batch_size, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      batch.clear();
      for (std::size_t idx : batches[b]) batch.push_back(target.sentences[idx]);
      Tape tape;
      BoundParams params(tape, ckpt.model.params, true);
      const BatchObjective obj = batch_objective(tape, params, ckpt.model, batch, table, ckpt.config, store);
      tape.backward(obj.total);
      sgd_step(ckpt.model.params, params, config.learning_rate);
      result.log.batches.push_back({epoch, b, obj.cls, obj.aux, obj.gw, obj.total.value()(0, 0), obj.gw_skipped});
    }
    EpochRecord e = summarize_epoch(epoch, std::span(result.log.batches).subspan(first));
    e.train_metric = evaluate(ckpt, target, store).score.f1;
    result.log.epochs.push_back(e);
  }
  if (!ckpt.model.params.all_finite()) throw NumericError("finetune: parameters diverged");
  return result;
}

nlohmann::json EvalReport::to_json() const {
  return {{"precision", score.precision},
          {"recall", score.recall},
          {"f1", score.f1},
          {"gold_spans", gold_spans},
          {"predicted_spans", predicted_spans},
          {"sentences", sentences}};
}

EvalReport evaluate_predictor(const TaggedCorpus& corpus, const TagPredictor& predict) {
  EvalReport report;
  std::vector<EntitySpan> gold;
  std::vector<EntitySpan> pred;
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    const Sentence& s = corpus.sentences[i];
    auto tags = predict(s);
    if (tags.size() != s.size()) throw ShapeError("predictor returned the wrong number of tags");
    repair_bio(tags);
    const auto g = extract_spans(s.tags, i);
    const auto p = extract_spans(tags, i);
    gold.insert(gold.end(), g.begin(), g.end());
    pred.insert(pred.end(), p.begin(), p.end());
  }
  report.score = micro_f1(gold, pred);
  report.gold_spans = gold.size();
  report.predicted_spans = pred.size();
  report.sentences = corpus.sentences.size();
  return report;
}

EvalReport evaluate(const Checkpoint& model, const TaggedCorpus& corpus, const EmbeddingStore* store) {
  const auto& known = model.model.tags.labels();
  for (const auto& label : corpus.label_set) {
    if (std::find(known.begin(), known.end(), label) == known.end()) {
      throw InputError("evaluate: corpus label '" + label + "' is unknown to the model");
    }
  }
  return evaluate_predictor(corpus, [&](const Sentence& s) { return predict_tags(model.model, s, store); });
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.n = values.size();
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(a.n);
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(ss / static_cast<double>(a.n));
  return a;
}

SweepParam sweep_param_from_string(const std::string& name) {
  if (name == "T" || name == "temperature") return SweepParam::Temperature;
  if (name == "delta" || name == "edge_threshold") return SweepParam::EdgeThreshold;
  if (name == "lambda1") return SweepParam::Lambda1;
  if (name == "lambda2") return SweepParam::Lambda2;
  throw InputError("unknown sweep parameter '" + name + "' (expected T, delta, lambda1 or lambda2)");
}

std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::Temperature: return "T";
    case SweepParam::EdgeThreshold: return "delta";
    case SweepParam::Lambda1: return "lambda1";
    case SweepParam::Lambda2: return "lambda2";
  }
  return "";
}

void apply_sweep_value(TrainConfig& config, SweepParam p, double value) {
  switch (p) {
    case SweepParam::Temperature: config.temperature = value; break;
    case SweepParam::EdgeThreshold: config.edge_threshold = value; break;
    case SweepParam::Lambda1: config.lambda1 = value; break;
    case SweepParam::Lambda2: config.lambda2 = value; break;
  }
}

std::vector<SweepRow> sweep(SweepParam param, std::span<const double> values, const TrainConfig& base,
                            const Checkpoint& f0, const TaggedCorpus& train, const TaggedCorpus& test,
                            std::span<const std::uint64_t> seeds, const EmbeddingStore* store) {
  if (values.empty()) throw InputError("sweep: no values");
  if (seeds.empty()) throw InputError("sweep: no seeds");
  std::vector<SweepRow> rows;
  for (double value : values) {
    TrainConfig config = base;
    apply_sweep_value(config, param, value);
    config.validate();
    SweepRow row;
    row.value = value;
    row.edge_count = build_source_graph(f0, train, config, store).edges().size();
    std::vector<double> f1s;
    for (std::uint64_t seed : seeds) {
      config.seed = seed;
      const auto run = finetune(f0, train, config, store);
      f1s.push_back(evaluate(run.checkpoint, test, store).score.f1);
    }
    row.f1 = aggregate(f1s);
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(SweepParam param, std::span<const SweepRow> rows) {
  std::string out = to_string(param) + ",mean_f1,std_f1,edge_count\n";
  for (const auto& r : rows) {
    out += fixed6(r.value) + "," + fixed6(r.f1.mean) + "," + fixed6(r.f1.std) + "," + std::to_string(r.edge_count) + "\n";
  }
  return out;
}

}  // namespace lst
