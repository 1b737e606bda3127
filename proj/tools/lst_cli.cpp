#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lst/checkpoint.hpp"
#include "lst/config.hpp"
#include "lst/corpus.hpp"
#include "lst/errors.hpp"
#include "lst/gw.hpp"
#include "lst/label_graph.hpp"
#include "lst/pipeline.hpp"
#include "lst/synthetic.hpp"

namespace fs = std::filesystem;
using namespace lst;

namespace {

struct ConfigFlags {
  std::string path;
  std::optional<double> temperature;
  std::optional<double> edge_threshold;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<double> epsilon;
  std::optional<std::size_t> inner_iter;
  std::optional<std::size_t> outer_iter;
  std::optional<double> learning_rate;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> d_h;
  std::optional<std::size_t> d_p;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> encoder_mode;
  std::optional<std::string> embeddings;
  bool ablate_aux = false;
  bool ablate_gw = false;

  void attach(CLI::App* app, bool ablations) {
    app->add_option("--config", path, "JSON file mirroring TrainConfig")->check(CLI::ExistingFile);
    app->add_option("--temperature", temperature);
    app->add_option("--threshold", edge_threshold, "edge threshold delta");
    app->add_option("--lambda1", lambda1);
    app->add_option("--lambda2", lambda2);
    app->add_option("--epsilon", epsilon);
    app->add_option("--inner-iter", inner_iter);
    app->add_option("--outer-iter", outer_iter);
    app->add_option("--lr", learning_rate);
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--d-h", d_h);
    app->add_option("--d-p", d_p);
    app->add_option("--seed", seed);
    app->add_option("--encoder-mode", encoder_mode)->check(CLI::IsMember({"toy", "file"}));
    app->add_option("--embeddings", embeddings, "JSON Lines embedding file for the file encoder");
    if (ablations) {
      app->add_flag("--ablate-aux", ablate_aux);
      app->add_flag("--ablate-gw", ablate_gw);
    }
  }

  /// defaults < config file < LST_SEED < flags
  TrainConfig resolve() const {
    TrainConfig c;
    if (!path.empty()) c = TrainConfig::load(path);
    if (const char* env = std::getenv("LST_SEED")) {
      try {
        c.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw InputError(std::string("LST_SEED is not an integer: ") + env);
      }
    }
    if (temperature) c.temperature = *temperature;
    if (edge_threshold) c.edge_threshold = *edge_threshold;
    if (lambda1) c.lambda1 = *lambda1;
    if (lambda2) c.lambda2 = *lambda2;
    if (epsilon) c.epsilon = *epsilon;
    if (inner_iter) c.inner_iter = *inner_iter;
    if (outer_iter) c.outer_iter = *outer_iter;
    if (learning_rate) c.learning_rate = *learning_rate;
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (d_h) c.d_h = *d_h;
    if (d_p) c.d_p = *d_p;
    if (seed) c.seed = *seed;
    if (encoder_mode) c.encoder_mode = encoder_mode_from_string(*encoder_mode);
    if (embeddings) c.embeddings = *embeddings;
    if (ablate_aux) c.ablate_aux = true;
    if (ablate_gw) c.ablate_gw = true;
    c.validate();
    return c;
  }
};

std::optional<EmbeddingStore> load_store(const TrainConfig& c) {
  if (c.encoder_mode != EncoderMode::File) return std::nullopt;
  return EmbeddingStore::load(c.embeddings);
}

const EmbeddingStore* ptr(const std::optional<EmbeddingStore>& s) { return s ? &*s : nullptr; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

fs::path seed_path(const fs::path& base, std::size_t k) { return fs::path(base.string() + ".seed" + std::to_string(k)); }

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t end = std::min(csv.find(',', start), csv.size());
    const std::string item = csv.substr(start, end - start);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw InputError("bad sweep value '" + item + "'");
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

/// Value-only target label graph of a fused model over a corpus.
LabelGraph model_graph(const Checkpoint& model, const TaggedCorpus& corpus, const TrainConfig& c,
                       const EmbeddingStore* store) {
  const TokenLogitFn logits = [&](const Sentence& s) { return predict_logits(model.model, s, store); };
  const auto table = estimate_conditionals(logits, corpus, c.temperature, corpus.label_set, model.model.tags.type_pooling());
  return build_graph(table, c.edge_threshold);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label structure transfer for cross-domain sequence labeling"};
  app.require_subcommand(1);

  // train-source
  auto* ts = app.add_subcommand("train-source", "train the source tagger f0");
  std::string ts_train, ts_out, ts_log;
  ConfigFlags ts_cfg;
  ts->add_option("--train", ts_train)->required()->check(CLI::ExistingFile);
  ts->add_option("--out", ts_out)->required();
  ts->add_option("--log", ts_log, "write the training log as JSON");
  ts_cfg.attach(ts, false);

  // finetune
  auto* ft = app.add_subcommand("finetune", "fine-tune on target data with label structure transfer");
  std::string ft_src, ft_train, ft_out, ft_log;
  std::size_t ft_seeds = 0;
  ConfigFlags ft_cfg;
  ft->add_option("--source-model", ft_src)->required()->check(CLI::ExistingFile);
  ft->add_option("--train", ft_train)->required()->check(CLI::ExistingFile);
  ft->add_option("--out", ft_out)->required();
  ft->add_option("--log", ft_log, "write the training log as JSON");
  ft->add_option("--seeds", ft_seeds, "train N runs with seeds seed..seed+N-1 into <out>.seed<k>");
  ft_cfg.attach(ft, true);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "span micro-F1 of a model on a corpus");
  std::string ev_model, ev_test, ev_embeddings;
  std::size_t ev_seeds = 0;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--test", ev_test)->required()->check(CLI::ExistingFile);
  ev->add_option("--seeds", ev_seeds, "aggregate <model>.seed0 .. <model>.seed<N-1>");
  ev->add_option("--embeddings", ev_embeddings, "override the embedding file stored in the model");

  // sample
  auto* sa = app.add_subcommand("sample", "greedy K-shot sampling");
  std::string sa_train, sa_out;
  std::size_t sa_k = 0;
  std::uint64_t sa_seed = 0;
  sa->add_option("--train", sa_train)->required()->check(CLI::ExistingFile);
  sa->add_option("--k", sa_k)->required()->check(CLI::PositiveNumber);
  sa->add_option("--seed", sa_seed)->required();
  sa->add_option("--out", sa_out)->required();

  // export-graph
  auto* eg = app.add_subcommand("export-graph", "export the source label graph and optionally a transport plan");
  std::string eg_src, eg_train, eg_out, eg_plan, eg_model, eg_edges;
  ConfigFlags eg_cfg;
  eg->add_option("--source-model", eg_src)->required()->check(CLI::ExistingFile);
  eg->add_option("--train", eg_train)->required()->check(CLI::ExistingFile);
  eg->add_option("--out", eg_out)->required();
  eg->add_option("--edges", eg_edges, "dense edge CSV with inf for absent edges");
  auto* plan_opt = eg->add_option("--plan", eg_plan, "transport plan CSV against --model");
  eg->add_option("--model", eg_model, "fine-tuned model whose label graph is matched")->check(CLI::ExistingFile);
  plan_opt->needs(eg->get_option("--model"));
  eg_cfg.attach(eg, false);

  // sweep
  auto* sw = app.add_subcommand("sweep", "hyperparameter sweep, CSV to stdout");
  std::string sw_param, sw_values, sw_src, sw_train, sw_test;
  std::size_t sw_seeds = 5;
  ConfigFlags sw_cfg;
  sw->add_option("--param", sw_param, "T, delta, lambda1 or lambda2")->required();
  sw->add_option("--values", sw_values, "comma-separated values")->required();
  sw->add_option("--source-model", sw_src)->required()->check(CLI::ExistingFile);
  sw->add_option("--train", sw_train)->required()->check(CLI::ExistingFile);
  sw->add_option("--test", sw_test)->required()->check(CLI::ExistingFile);
  sw->add_option("--seeds", sw_seeds, "runs per value with seeds seed..seed+N-1")->check(CLI::PositiveNumber);
  sw_cfg.attach(sw, true);

  // synth
  auto* sy = app.add_subcommand("synth", "generate a synthetic source/target corpus pair");
  std::string sy_spec, sy_dir;
  sy->add_option("--spec", sy_spec)->check(CLI::ExistingFile);
  sy->add_option("--out-dir", sy_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (ts->parsed()) {
      const TrainConfig c = ts_cfg.resolve();
      const auto store = load_store(c);
      const auto result = train_source(read_conll_file(ts_train), c, ptr(store));
      save_checkpoint(ts_out, result.checkpoint);
      if (!ts_log.empty()) write_text(ts_log, result.log.to_json().dump(2) + "\n");
      const auto& last = result.log.epochs;
      std::cerr << "saved " << ts_out << " (train token accuracy "
                << (last.empty() ? 0.0 : last.back().train_metric) << ")\n";
    } else if (ft->parsed()) {
      const TrainConfig c = ft_cfg.resolve();
      const auto store = load_store(c);
      const Checkpoint f0 = load_checkpoint(ft_src);
      const TaggedCorpus train = read_conll_file(ft_train);
      const std::size_t runs = ft_seeds == 0 ? 1 : ft_seeds;
      for (std::size_t k = 0; k < runs; ++k) {
        TrainConfig run_cfg = c;
        run_cfg.seed = c.seed + k;
        const auto result = finetune(f0, train, run_cfg, ptr(store));
        const fs::path out = ft_seeds == 0 ? fs::path(ft_out) : seed_path(ft_out, k);
        save_checkpoint(out, result.checkpoint);
        if (!ft_log.empty()) {
          const fs::path log = ft_seeds == 0 ? fs::path(ft_log) : seed_path(ft_log, k);
          write_text(log, result.log.to_json().dump(2) + "\n");
        }
        std::size_t skips = 0;
        for (const auto& e : result.log.epochs) skips += e.gw_skips;
        std::cerr << "saved " << out.string() << " (graph matching skipped on " << skips << " batches)\n";
      }
    } else if (ev->parsed()) {
      const TaggedCorpus test = read_conll_file(ev_test);
      std::vector<fs::path> paths;
      if (ev_seeds == 0) {
        paths.push_back(ev_model);
      } else {
        for (std::size_t k = 0; k < ev_seeds; ++k) paths.push_back(seed_path(ev_model, k));
      }
      nlohmann::json runs = nlohmann::json::array();
      std::vector<double> f1s;
      for (const auto& p : paths) {
        const Checkpoint model = load_checkpoint(p);
        TrainConfig c = model.config;
        if (!ev_embeddings.empty()) c.embeddings = ev_embeddings;
        const auto store = load_store(c);
        const EvalReport report = evaluate(model, test, ptr(store));
        auto j = report.to_json();
        j["model"] = p.string();
        runs.push_back(j);
        f1s.push_back(report.score.f1);
      }
      nlohmann::json out;
      if (ev_seeds == 0) {
        out = runs.front();
      } else {
        const Aggregate a = aggregate(f1s);
        out = {{"runs", runs}, {"mean_f1", a.mean}, {"std_f1", a.std}, {"n", a.n}};
      }
      std::cout << out.dump(2) << "\n";
    } else if (sa->parsed()) {
      const TaggedCorpus sample = greedy_sample(read_conll_file(sa_train), sa_k, sa_seed);
      write_conll_file(sa_out, sample);
      std::cerr << "sampled " << sample.sentences.size() << " sentences\n";
    } else if (eg->parsed()) {
      const TrainConfig c = eg_cfg.resolve();
      const auto store = load_store(c);
      const Checkpoint f0 = load_checkpoint(eg_src);
      const TaggedCorpus train = read_conll_file(eg_train);
      const LabelGraph source = build_source_graph(f0, train, c, ptr(store));
      write_text(eg_out, source.to_json());
      if (!eg_edges.empty()) write_text(eg_edges, source.edges_csv());
      if (!eg_plan.empty()) {
        const Checkpoint model = load_checkpoint(eg_model);
        const LabelGraph target = model_graph(model, train, c, ptr(store));
        const auto result = gromov_wasserstein(source, target, c.gw_options());
        if (!result) throw InputError("export-graph: a label graph is degenerate, no transport plan");
        write_text(eg_plan, result->plan.to_csv(source.labels(), target.labels()));
        std::cerr << "gw distance " << result->value << "\n";
      }
    } else if (sw->parsed()) {
      const TrainConfig c = sw_cfg.resolve();
      const auto store = load_store(c);
      const SweepParam param = sweep_param_from_string(sw_param);
      const auto values = parse_values(sw_values);
      std::vector<std::uint64_t> seeds;
      for (std::size_t k = 0; k < sw_seeds; ++k) seeds.push_back(c.seed + k);
      const auto rows = sweep(param, values, c, load_checkpoint(sw_src), read_conll_file(sw_train),
                              read_conll_file(sw_test), seeds, ptr(store));
      std::cout << sweep_csv(param, rows);
    } else if (sy->parsed()) {
      SynthSpec spec;
      if (!sy_spec.empty()) {
        std::ifstream in(sy_spec);
        nlohmann::json j;
        try {
          in >> j;
        } catch (const nlohmann::json::exception& e) {
          throw InputError("synth spec: " + std::string(e.what()));
        }
        spec = SynthSpec::from_json(j);
      }
      const SynthCorpora corpora = generate_synthetic(spec);
      fs::create_directories(sy_dir);
      write_conll_file(fs::path(sy_dir) / "source_train.conll", corpora.source_train);
      write_conll_file(fs::path(sy_dir) / "target_train.conll", corpora.target_train);
      write_conll_file(fs::path(sy_dir) / "target_test.conll", corpora.target_test);
      std::cerr << "wrote " << corpora.source_train.sentences.size() << "/" << corpora.target_train.sentences.size()
                << "/" << corpora.target_test.sentences.size() << " sentences to " << sy_dir << "\n";
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
