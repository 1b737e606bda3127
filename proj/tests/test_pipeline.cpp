#include <doctest.h>

#include <cmath>
#include <set>

#include "lst/checkpoint.hpp"
#include "lst/errors.hpp"
#include "lst/grad_check.hpp"
#include "lst/pipeline.hpp"
#include "lst/synthetic.hpp"

using namespace lst;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.d_h = 8;
  c.d_p = 6;
  c.epochs = 3;
  c.batch_size = 8;
  c.learning_rate = 0.1;
  return c;
}

struct Fixture {
  SynthCorpora data;
  TaggedCorpus few_shot;
  Checkpoint f0;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture out;
    SynthSpec spec;
    spec.seed = 3;
    spec.source_sentences = 150;
    spec.target_train_sentences = 120;
    spec.target_test_sentences = 60;
    out.data = generate_synthetic(spec);
    out.few_shot = greedy_sample(out.data.target_train, 5, 1);
    TrainConfig c = small_config();
    c.epochs = 20;
    out.f0 = train_source(out.data.source_train, c).checkpoint;
    return out;
  }();
  return f;
}

std::string hash_of(const Checkpoint& c) { return hex64(fnv1a64(serialize_checkpoint(c))); }

}  // namespace

TEST_CASE("config JSON round-trip and validation") {
  TrainConfig c;
  c.temperature = 2.5;
  c.lambda2 = 0.0;
  c.ablate_aux = true;
  c.encoder_mode = EncoderMode::File;
  c.embeddings = "vectors.jsonl";
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  const TrainConfig over = TrainConfig::from_json({{"epochs", 7}}, c);
  CHECK(over.epochs == 7);
  CHECK(over.temperature == 2.5);

  CHECK_THROWS_AS(TrainConfig::from_json({{"tempreature", 1.0}}), InputError);
  CHECK_THROWS_AS(TrainConfig::from_json({{"epochs", "many"}}), InputError);
  CHECK_THROWS_AS(TrainConfig::from_json({{"encoder_mode", "bert"}}), InputError);

  const auto invalid = [](auto mutate) {
    TrainConfig t;
    mutate(t);
    return t;
  };
  CHECK_THROWS_AS(invalid([](TrainConfig& t) { t.temperature = 0.0; }).validate(), InputError);
  CHECK_THROWS_AS(invalid([](TrainConfig& t) { t.edge_threshold = -1.0; }).validate(), InputError);
  CHECK_THROWS_AS(invalid([](TrainConfig& t) { t.lambda1 = -0.1; }).validate(), InputError);
  CHECK_THROWS_AS(invalid([](TrainConfig& t) { t.lambda2 = std::nan(""); }).validate(), InputError);
  CHECK_NOTHROW(TrainConfig{}.validate());

  CHECK(TrainConfig{}.temperature == 4.0);
  CHECK(TrainConfig{}.edge_threshold == 1.5);
  CHECK(TrainConfig{}.lambda1 == 0.1);
  CHECK(TrainConfig{}.lambda2 == 0.01);
}

TEST_CASE("train_source") {
  const auto& fx = fixture();
  SUBCASE("zero epochs leaves the initialization") {
    TrainConfig c = small_config();
    c.epochs = 0;
    const auto r = train_source(fx.data.source_train, c).checkpoint;
    std::mt19937_64 rng(c.seed);
    ModelParams expected;
    init_toy_encoder(expected, r.model.vocab.size(), c.d_h, rng);
    init_classifier(expected, c.d_h, r.model.tags.size(), rng);
    CHECK(r.model.params.tensors == expected.tensors);
  }
  SUBCASE("same seed gives identical checkpoints and logs") {
    TrainConfig c = small_config();
    c.epochs = 2;
    const auto a = train_source(fx.data.source_train, c);
    const auto b = train_source(fx.data.source_train, c);
    CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
    CHECK(a.log.to_json() == b.log.to_json());
    c.seed = 2;
    CHECK(serialize_checkpoint(train_source(fx.data.source_train, c).checkpoint) != serialize_checkpoint(a.checkpoint));
  }
  SUBCASE("separable source task is learned with the default schedule") {
    SynthSpec spec;
    const auto r = train_source(generate_synthetic(spec).source_train, TrainConfig{});
    REQUIRE(r.log.epochs.size() == TrainConfig{}.epochs);
    CHECK(r.log.epochs.back().train_metric > 0.95);
  }
  SUBCASE("empty corpus is rejected") {
    CHECK_THROWS_AS(train_source(TaggedCorpus{}, small_config()), InputError);
    CHECK_THROWS_AS(train_source(make_corpus({{{"a"}, {"O"}}}), small_config()), InputError);
  }
}

TEST_CASE("checkpoint round-trip") {
  const auto& fx = fixture();
  TrainConfig c = small_config();
  c.epochs = 1;
  const Checkpoint model = finetune(fx.f0, fx.few_shot, c).checkpoint;
  const std::string bytes = serialize_checkpoint(model);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.model.params.tensors == model.model.params.tensors);
  CHECK(back.model.gcn_adjacency == model.model.gcn_adjacency);
  CHECK(back.config.to_json() == model.config.to_json());
  CHECK(back.source_graph().to_json() == model.source_graph().to_json());
  for (const auto& s : fx.data.target_test.sentences) {
    CHECK(predict_logits(back.model, s, nullptr) == predict_logits(model.model, s, nullptr));
  }

  const std::string src = serialize_checkpoint(fx.f0);
  CHECK(serialize_checkpoint(deserialize_checkpoint(src)) == src);
  CHECK_THROWS_AS(deserialize_checkpoint(src).source_graph(), InputError);

  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), InputError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), InputError);
  CHECK_THROWS_AS(deserialize_checkpoint("NOTACKPT" + bytes.substr(8)), InputError);
  std::string future = bytes;
  future[8] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(future), InputError);
  CHECK_THROWS_AS(deserialize_checkpoint(""), InputError);

  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("source graph keeps refinements of one source label together") {
  const auto& fx = fixture();
  const TrainConfig c = small_config();
  const LabelGraph g = build_source_graph(fx.f0, fx.data.target_train, c);
  const auto idx = [&](const std::string& l) {
    return static_cast<std::size_t>(std::find(g.labels().begin(), g.labels().end(), l) - g.labels().begin());
  };
  const Matrix& d = g.distances();
  const double sib_per = d(idx("RESEARCHER"), idx("MUSICIAN"));
  const double sib_org = d(idx("CONFERENCE"), idx("BAND"));
  for (const std::string a : {"RESEARCHER", "MUSICIAN"}) {
    for (const std::string b : {"CONFERENCE", "BAND"}) {
      CHECK(sib_per < d(idx(a), idx(b)));
      CHECK(sib_org < d(idx(a), idx(b)));
    }
  }
  CHECK(build_source_graph(fx.f0, fx.data.target_train, c).to_json() == g.to_json());
  const auto j = nlohmann::json::parse(g.to_json());
  CHECK(j.contains("labels"));
  CHECK(j.contains("edges"));
}

TEST_CASE("batch objective components") {
  const auto& fx = fixture();
  TrainConfig c = small_config();
  const Checkpoint init = init_target_model(fx.f0, fx.few_shot, c);
  std::vector<Sentence> batch(fx.few_shot.sentences.begin(), fx.few_shot.sentences.begin() + 6);

  SUBCASE("zero weights reduce to the classification loss") {
    TrainConfig z = c;
    z.lambda1 = z.lambda2 = 0.0;
    Tape t;
    BoundParams p(t, init.model.params, true);
    const auto obj = batch_objective(t, p, init.model, batch, *init.source_table, z);
    CHECK(obj.total.value()(0, 0) == obj.cls);
    CHECK(obj.aux == 0.0);
    CHECK(obj.gw == 0.0);
    CHECK_FALSE(obj.gw_result.has_value());
  }
  SUBCASE("total is the weighted sum of components") {
    Tape t;
    BoundParams p(t, init.model.params, true);
    const auto obj = batch_objective(t, p, init.model, batch, *init.source_table, c);
    REQUIRE_FALSE(obj.gw_skipped);
    CHECK(obj.gw > 0.0);
    CHECK(std::abs(obj.total.value()(0, 0) - (obj.cls + c.lambda1 * obj.aux + c.lambda2 * obj.gw)) <= 1e-12);
  }
  SUBCASE("single-label batches skip the GW term") {
    std::vector<Sentence> one;
    for (const auto& s : fx.few_shot.sentences) {
      std::set<std::string> types;
      for (const auto& tag : s.tags)
        if (tag != "O") types.insert(entity_type(tag));
      if (types.size() == 1) one.push_back(s);
      if (one.size() == 1) break;
    }
    REQUIRE(one.size() == 1);
    Tape t;
    BoundParams p(t, init.model.params, true);
    const auto obj = batch_objective(t, p, init.model, one, *init.source_table, c);
    CHECK(obj.gw_skipped);
    CHECK(obj.gw == 0.0);
  }
}

TEST_CASE("full objective passes a gradient check with the plan held fixed") {
  const auto& fx = fixture();
  TrainConfig c = small_config();
  c.d_p = 3;
  c.lambda1 = 0.5;
  c.lambda2 = 0.5;
  const Checkpoint init = init_target_model(fx.f0, fx.few_shot, c);
  std::vector<Sentence> batch;
  for (const auto& s : fx.few_shot.sentences) {
    std::set<std::string> types;
    for (const auto& tag : s.tags)
      if (tag != "O") types.insert(entity_type(tag));
    if (types.size() >= 2) batch.push_back(s);
    if (batch.size() == 2) break;
  }
  REQUIRE(batch.size() == 2);

  Matrix plan;
  {
    Tape t;
    BoundParams p(t, init.model.params, false);
    const auto obj = batch_objective(t, p, init.model, batch, *init.source_table, c);
    REQUIRE(obj.gw_result.has_value());
    plan = obj.gw_result->plan.matrix;
  }

  std::vector<std::string> names;
  std::vector<Matrix> values;
  for (const auto& [name, m] : init.model.params.tensors) {
    names.push_back(name);
    values.push_back(m);
  }
  const auto f = [&](Tape& tape, std::span<const Var> leaves) {
    std::map<std::string, Var> vars;
    for (std::size_t k = 0; k < names.size(); ++k) vars.emplace(names[k], leaves[k]);
    return batch_objective(tape, BoundParams(std::move(vars)), init.model, batch, *init.source_table, c, nullptr, &plan)
        .total;
  };
  const auto report = grad_check(f, values, names);
  for (const auto& e : report.params) INFO(e.name << " rel " << e.max_rel_error);
  CHECK(report.passed);
}

TEST_CASE("finetune contracts") {
  const auto& fx = fixture();
  TrainConfig c = small_config();

  SUBCASE("zero weights record total equal to classification loss") {
    TrainConfig z = c;
    z.lambda1 = z.lambda2 = 0.0;
    const auto r = finetune(fx.f0, fx.few_shot, z);
    REQUIRE_FALSE(r.log.batches.empty());
    for (const auto& b : r.log.batches) CHECK(b.total == b.cls);
  }
  SUBCASE("recorded totals match their components") {
    const auto r = finetune(fx.f0, fx.few_shot, c);
    std::size_t used = 0;
    for (const auto& b : r.log.batches) {
      CHECK(std::abs(b.total - (b.cls + c.lambda1 * b.aux + c.lambda2 * b.gw)) <= 1e-12);
      used += !b.gw_skipped;
    }
    CHECK(used > 0);
    REQUIRE(r.log.epochs.size() == c.epochs);
  }
  SUBCASE("zero weight and ablation flag give identical trajectories") {
    TrainConfig a = c, b = c;
    a.lambda2 = 0.0;
    b.ablate_gw = true;
    CHECK(finetune(fx.f0, fx.few_shot, a).checkpoint.model.params.tensors ==
          finetune(fx.f0, fx.few_shot, b).checkpoint.model.params.tensors);
    a = c;
    b = c;
    a.lambda1 = 0.0;
    b.ablate_aux = true;
    const auto ra = finetune(fx.f0, fx.few_shot, a);
    const auto rb = finetune(fx.f0, fx.few_shot, b);
    CHECK(ra.checkpoint.model.params.tensors == rb.checkpoint.model.params.tensors);
    CHECK(ra.log.to_json() == rb.log.to_json());
  }
  SUBCASE("the source model and its graph stay frozen") {
    const std::string before = hash_of(fx.f0);
    const LabelGraph graph_before = build_source_graph(fx.f0, fx.few_shot, c);
    const auto r = finetune(fx.f0, fx.few_shot, c);
    CHECK(hash_of(fx.f0) == before);
    CHECK(build_source_graph(fx.f0, fx.few_shot, c).to_json() == graph_before.to_json());
    CHECK(r.checkpoint.source_graph().to_json() == graph_before.to_json());
    CHECK(r.checkpoint.model.gcn_adjacency == normalized_adjacency(graph_before));
  }
  SUBCASE("identical seeds give identical logs") {
    CHECK(finetune(fx.f0, fx.few_shot, c).log.to_json() == finetune(fx.f0, fx.few_shot, c).log.to_json());
  }
  SUBCASE("encoder starts from the source model and heads are fresh") {
    const Checkpoint init = init_target_model(fx.f0, fx.few_shot, c);
    for (const std::string name : {"encoder.mix_prev", "encoder.mix_cur", "encoder.mix_next", "encoder.mix_bias"}) {
      CHECK(init.model.params.at(name) == fx.f0.model.params.at(name));
    }
    const Matrix& e0 = fx.f0.model.params.at("encoder.embedding");
    const Matrix& e1 = init.model.params.at("encoder.embedding");
    CHECK(e1.rows() >= e0.rows());
    for (std::size_t r = 0; r < e0.rows(); ++r)
      for (std::size_t k = 0; k < e0.cols(); ++k) CHECK(e1(r, k) == e0(r, k));
    CHECK(init.model.params.at("cls.w").cols() == 9);
    CHECK(init.model.params.has("aux.w"));
    CHECK(init.model.fusion);
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(finetune(fx.f0, make_corpus({{{"a"}, {"O"}}}), c), InputError);
    CHECK_THROWS_AS(finetune(fx.f0, TaggedCorpus{}, c), InputError);
    const Checkpoint fused = init_target_model(fx.f0, fx.few_shot, c);
    CHECK_THROWS_AS(finetune(fused, fx.few_shot, c), InputError);
  }
}

TEST_CASE("evaluate") {
  const auto& fx = fixture();
  const auto passthrough = evaluate_predictor(fx.data.target_test, [](const Sentence& s) { return s.tags; });
  CHECK(passthrough.score.f1 == 1.0);
  CHECK(passthrough.gold_spans == passthrough.predicted_spans);

  const Checkpoint untrained = init_target_model(fx.f0, fx.few_shot, small_config());
  CHECK(evaluate(untrained, fx.data.target_test).score.f1 < 0.1);

  CHECK_THROWS_AS(evaluate(untrained, fx.data.source_train), InputError);
  const TaggedCorpus subset = make_corpus({{{"x", "y"}, {"B-BAND", "O"}}});
  CHECK_NOTHROW(evaluate(untrained, subset));

  const std::vector<double> same(5, 0.42);
  const Aggregate a = aggregate(same);
  CHECK(a.std < 1e-15);
  CHECK(a.mean == doctest::Approx(0.42).epsilon(1e-15));
  const std::vector<double> two{1.0, 3.0};
  CHECK(aggregate(two).std == 1.0);

  const auto j = passthrough.to_json();
  CHECK(j["f1"] == 1.0);
}

TEST_CASE("sweeps") {
  const auto& fx = fixture();
  TrainConfig c = small_config();
  c.epochs = 2;
  const std::vector<std::uint64_t> seeds{1, 2};

  SUBCASE("a single value equals a direct run") {
    const std::vector<double> values{2.0};
    const auto rows = sweep(SweepParam::Temperature, values, c, fx.f0, fx.few_shot, fx.data.target_test, seeds);
    REQUIRE(rows.size() == 1);
    std::vector<double> direct;
    for (auto s : seeds) {
      TrainConfig d = c;
      d.temperature = 2.0;
      d.seed = s;
      direct.push_back(evaluate(finetune(fx.f0, fx.few_shot, d).checkpoint, fx.data.target_test).score.f1);
    }
    CHECK(rows[0].f1.mean == aggregate(direct).mean);
    CHECK(rows[0].f1.std == aggregate(direct).std);
  }
  SUBCASE("the zero row of a lambda2 sweep equals the GW-ablated run") {
    const std::vector<double> values{0.0, 0.01};
    const auto rows = sweep(SweepParam::Lambda2, values, c, fx.f0, fx.few_shot, fx.data.target_test, seeds);
    std::vector<double> ablated;
    for (auto s : seeds) {
      TrainConfig d = c;
      d.ablate_gw = true;
      d.seed = s;
      ablated.push_back(evaluate(finetune(fx.f0, fx.few_shot, d).checkpoint, fx.data.target_test).score.f1);
    }
    CHECK(rows[0].f1.mean == aggregate(ablated).mean);
    CHECK(rows[0].f1.std == aggregate(ablated).std);
  }
  SUBCASE("edge counts grow with the threshold") {
    const std::vector<double> values{0.2, 0.8, 1.5, 10.0};
    const std::vector<std::uint64_t> one{1};
    TrainConfig quick = c;
    quick.epochs = 0;
    const auto rows = sweep(SweepParam::EdgeThreshold, values, quick, fx.f0, fx.few_shot, fx.data.target_test, one);
    for (std::size_t k = 1; k < rows.size(); ++k) CHECK(rows[k].edge_count >= rows[k - 1].edge_count);
    CHECK(rows.back().edge_count == 6);
    const std::string csv = sweep_csv(SweepParam::EdgeThreshold, rows);
    CHECK(csv.rfind("delta,mean_f1,std_f1,edge_count\n0.200000,", 0) == 0);
  }
  CHECK(sweep_param_from_string("T") == SweepParam::Temperature);
  CHECK(sweep_param_from_string("delta") == SweepParam::EdgeThreshold);
  CHECK_THROWS_AS(sweep_param_from_string("eta"), InputError);
  const std::vector<double> none;
  CHECK_THROWS_AS(sweep(SweepParam::Lambda1, none, c, fx.f0, fx.few_shot, fx.data.target_test, seeds), InputError);
}
