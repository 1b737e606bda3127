#include "lst/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lst/errors.hpp"

namespace lst {
namespace {

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

// TagSet --------------------------------------------------------------------

TagSet::TagSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
  tags_.push_back("O");
  for (const auto& l : labels_) {
    tags_.push_back("B-" + l);
    tags_.push_back("I-" + l);
  }
  for (std::size_t i = 0; i < tags_.size(); ++i) index_.emplace(tags_[i], i);
}

std::size_t TagSet::index(const std::string& tag) const {
  auto it = index_.find(tag);
  if (it == index_.end()) throw InputError("tag '" + tag + "' is not in the tag set");
  return it->second;
}

std::vector<std::size_t> TagSet::indices(const std::vector<std::string>& tags) const {
  std::vector<std::size_t> out;
  out.reserve(tags.size());
  for (const auto& t : tags) out.push_back(index(t));
  return out;
}

Matrix TagSet::type_pooling() const {
  Matrix m(tags_.size(), labels_.size() + 1);
  m(0, labels_.size()) = 1.0;
  for (std::size_t l = 0; l < labels_.size(); ++l) {
    m(1 + 2 * l, l) = 1.0;
    m(2 + 2 * l, l) = 1.0;
  }
  return m;
}

// Vocabulary ----------------------------------------------------------------

Vocabulary::Vocabulary() { add(kUnkToken); }

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  if (words.empty() || words.front() != kUnkToken) throw InputError("vocabulary must start with " + std::string(kUnkToken));
  for (const auto& w : words) {
    if (index_.count(w)) throw InputError("duplicate vocabulary word '" + w + "'");
    add(w);
  }
}

std::size_t Vocabulary::add(const std::string& word) {
  auto [it, inserted] = index_.emplace(word, words_.size());
  if (inserted) words_.push_back(word);
  return it->second;
}

std::size_t Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocabulary::ids(const std::vector<std::string>& words) const {
  std::vector<std::size_t> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

// EmbeddingStore ------------------------------------------------------------

std::string EmbeddingStore::key(const std::vector<std::string>& tokens) {
  std::string k;
  for (const auto& t : tokens) {
    k += t;
    k += '\x1f';
  }
  return k;
}

void EmbeddingStore::add(const std::vector<std::string>& tokens, Matrix vectors) {
  if (tokens.empty()) throw InputError("embedding entry with no tokens");
  if (vectors.rows() != tokens.size()) throw InputError("embedding entry: vector count does not match token count");
  if (!vectors.all_finite()) throw InputError("embedding entry has non-finite values");
  if (dim_ == 0) dim_ = vectors.cols();
  if (vectors.cols() != dim_) {
    throw InputError("embedding dimension " + std::to_string(vectors.cols()) + " differs from " + std::to_string(dim_));
  }
  rows_[key(tokens)] = std::move(vectors);
}

const Matrix& EmbeddingStore::lookup(const std::vector<std::string>& tokens) const {
  auto it = rows_.find(key(tokens));
  if (it == rows_.end()) throw InputError("no stored embeddings for sentence starting '" + tokens.front() + "'");
  return it->second;
}

EmbeddingStore EmbeddingStore::parse_jsonl(std::string_view text) {
  EmbeddingStore store;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      auto tokens = obj.at("tokens").get<std::vector<std::string>>();
      const auto rows = obj.at("vectors").get<std::vector<std::vector<double>>>();
      const std::size_t dim = rows.empty() ? 0 : rows.front().size();
      std::vector<double> flat;
      for (const auto& r : rows) {
        if (r.size() != dim) throw InputError("ragged vectors");
        flat.insert(flat.end(), r.begin(), r.end());
      }
      store.add(tokens, Matrix(rows.size(), dim, std::move(flat)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("embedding file: ") + e.what(), line_no);
    } catch (const InputError& e) {
      throw ParseError(std::string("embedding file: ") + e.what(), line_no);
    }
  }
  return store;
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open embedding file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_jsonl(ss.str());
}

std::string to_string(EncoderMode mode) { return mode == EncoderMode::Toy ? "toy" : "file"; }

EncoderMode encoder_mode_from_string(const std::string& s) {
  if (s == "toy") return EncoderMode::Toy;
  if (s == "file") return EncoderMode::File;
  throw InputError("unknown encoder mode '" + s + "' (expected toy or file)");
}

// Params --------------------------------------------------------------------

Matrix& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw InputError("missing parameter '" + name + "'");
  return it->second;
}

const Matrix& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw InputError("missing parameter '" + name + "'");
  return it->second;
}

bool ModelParams::all_finite() const {
  for (const auto& [_, m] : tensors) {
    if (!m.all_finite()) return false;
  }
  return true;
}

BoundParams::BoundParams(Tape& tape, const ModelParams& params, bool trainable) {
  for (const auto& [name, m] : params.tensors) vars_.emplace(name, tape.leaf(m, trainable));
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw InputError("missing parameter '" + name + "'");
  return it->second;
}

void init_toy_encoder(ModelParams& params, std::size_t vocab_size, std::size_t d_h, std::mt19937_64& rng) {
  params.tensors["encoder.embedding"] = uniform_matrix(vocab_size, d_h, 0.5, rng);
  const double b = 0.5 * fan_in_bound(3 * d_h);
  params.tensors["encoder.mix_prev"] = uniform_matrix(d_h, d_h, b, rng);
  params.tensors["encoder.mix_cur"] = uniform_matrix(d_h, d_h, b, rng);
  params.tensors["encoder.mix_next"] = uniform_matrix(d_h, d_h, b, rng);
  params.tensors["encoder.mix_bias"] = Matrix(1, d_h);
}

void grow_embedding(ModelParams& params, std::size_t vocab_size, std::mt19937_64& rng) {
  Matrix& emb = params.at("encoder.embedding");
  if (vocab_size <= emb.rows()) return;
  const Matrix extra = uniform_matrix(vocab_size - emb.rows(), emb.cols(), 0.5, rng);
  std::vector<double> data(emb.values());
  data.insert(data.end(), extra.values().begin(), extra.values().end());
  emb = Matrix(vocab_size, emb.cols(), std::move(data));
}

void init_fusion(ModelParams& params, std::size_t n_labels, const ModelDims& dims, std::mt19937_64& rng) {
  params.tensors["fusion.label_reps"] = uniform_matrix(n_labels, dims.d_p, 0.1, rng);
  params.tensors["fusion.proj_w"] = uniform_matrix(dims.d_h, dims.d_p, fan_in_bound(dims.d_h), rng);
  params.tensors["fusion.proj_b"] = Matrix(1, dims.d_p);
  params.tensors["fusion.gcn_w1"] = uniform_matrix(dims.d_p, dims.d_p, fan_in_bound(dims.d_p), rng);
  params.tensors["fusion.gcn_w2"] = uniform_matrix(dims.d_p, dims.d_p, fan_in_bound(dims.d_p), rng);
  params.tensors["fusion.out_w"] = uniform_matrix(dims.d_p, dims.d_h, fan_in_bound(dims.d_p), rng);
  params.tensors["fusion.out_b"] = Matrix(1, dims.d_h);
}

void init_classifier(ModelParams& params, std::size_t d_h, std::size_t n_tags, std::mt19937_64& rng) {
  params.tensors["cls.w"] = uniform_matrix(d_h, n_tags, fan_in_bound(d_h), rng);
  params.tensors["cls.b"] = Matrix(1, n_tags);
}

void init_auxiliary(ModelParams& params, std::size_t d_h, std::size_t n_labels, std::mt19937_64& rng) {
  params.tensors["aux.w"] = uniform_matrix(d_h, n_labels, fan_in_bound(d_h), rng);
  params.tensors["aux.b"] = Matrix(1, n_labels);
}

Matrix normalized_adjacency(const LabelGraph& graph) {
  const std::size_t n = graph.size();
  Matrix a = graph.adjacency();
  for (std::size_t i = 0; i < n; ++i) a(i, i) = 1.0;
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a(i, j);
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a(i, j) *= inv_sqrt[i] * inv_sqrt[j];
  }
  return a;
}

// Forward -------------------------------------------------------------------

Var encode_toy(const BoundParams& p, std::span<const std::size_t> ids) {
  if (ids.empty()) throw InputError("cannot encode an empty sentence");
  Var x = ad::gather_rows(p["encoder.embedding"], ids);
  Var mix = ad::add(ad::add(ad::matmul(ad::shift_rows(x, 1), p["encoder.mix_prev"]),
                            ad::matmul(x, p["encoder.mix_cur"])),
                    ad::matmul(ad::shift_rows(x, -1), p["encoder.mix_next"]));
  return ad::add(x, ad::tanh(ad::add_row(mix, p["encoder.mix_bias"])));
}

Var encode(Tape& tape, const BoundParams& p, const TaggerModel& model, const Sentence& sentence,
           const EmbeddingStore* store) {
  if (sentence.size() == 0) throw InputError("cannot encode an empty sentence");
  if (model.encoder_mode == EncoderMode::File) {
    if (!store) throw InputError("file encoder mode needs an embedding store");
    return tape.constant(store->lookup(sentence.tokens));
  }
  const auto ids = model.vocab.ids(sentence.tokens);
  return encode_toy(p, ids);
}

LabelAttention label_attention(Var h, Var proj_w, Var proj_b, Var label_reps) {
  if (h.value().rows() == 0) throw InputError("label attention over an empty sentence");
  Var q = ad::add_row(ad::matmul(h, proj_w), proj_b);
  Var alpha = ad::softmax_rows(ad::matmul(label_reps, ad::transpose(q)));
  Var u = ad::matmul(alpha, q);
  return {q, alpha, u};
}

Var gcn_propagate(Var u, const Matrix& adjacency, Var w1, Var w2) {
  if (adjacency.rows() != u.value().rows() || adjacency.cols() != u.value().rows()) {
    throw ShapeError("gcn adjacency " + adjacency.shape_string() + " for " + u.value().shape_string() + " components");
  }
  Var a = u.tape()->constant(adjacency);
  Var hidden = ad::relu(ad::matmul(ad::matmul(a, u), w1));
  return ad::matmul(ad::matmul(a, hidden), w2);
}

Var gcn_propagate(Var u, const LabelGraph& graph, std::span<const std::string> u_labels, Var w1, Var w2) {
  if (!std::equal(graph.labels().begin(), graph.labels().end(), u_labels.begin(), u_labels.end())) {
    throw InputError("gcn: graph labels do not align with component rows");
  }
  return gcn_propagate(u, normalized_adjacency(graph), w1, w2);
}

TokenFusion token_fusion(Var h, Var q, Var u_prime, Var out_w, Var out_b) {
  Var beta = ad::softmax_rows(ad::matmul(q, ad::transpose(u_prime)));
  Var h_prime = ad::add(h, ad::add_row(ad::matmul(ad::matmul(beta, u_prime), out_w), out_b));
  return {beta, h_prime};
}

FusionTrace fuse(Var h, const BoundParams& p, const Matrix& adjacency) {
  const auto att = label_attention(h, p["fusion.proj_w"], p["fusion.proj_b"], p["fusion.label_reps"]);
  Var u_prime = gcn_propagate(att.u, adjacency, p["fusion.gcn_w1"], p["fusion.gcn_w2"]);
  const auto tf = token_fusion(h, att.q, u_prime, p["fusion.out_w"], p["fusion.out_b"]);
  return {att.q, att.alpha, att.u, u_prime, tf.beta, tf.h_prime};
}

Var tag_logits(Var h_or_h_prime, const BoundParams& p) {
  return ad::add_row(ad::matmul(h_or_h_prime, p["cls.w"]), p["cls.b"]);
}

Var classification_loss(Var logits, std::span<const std::size_t> gold) {
  for (std::size_t g : gold) {
    if (g >= logits.value().cols()) throw InputError("gold tag index outside the tag set");
  }
  return ad::softmax_cross_entropy(logits, gold);
}

Var auxiliary_loss(std::span<const Var> h_primes, Var aux_w, Var aux_b, const Matrix& presence) {
  if (h_primes.size() != presence.rows()) throw ShapeError("auxiliary loss: one presence row per sentence expected");
  std::vector<Var> pooled;
  pooled.reserve(h_primes.size());
  for (Var h : h_primes) pooled.push_back(ad::row_mean(h));
  Var logits = ad::add_row(ad::matmul(ad::concat_rows(pooled), aux_w), aux_b);
  return ad::sigmoid_bce(logits, presence);
}

Matrix label_presence(const Sentence& sentence, const std::vector<std::string>& labels) {
  Matrix m(1, labels.size());
  for (const auto& tag : sentence.tags) {
    const std::string type = entity_type(tag);
    for (std::size_t l = 0; l < labels.size(); ++l) {
      if (labels[l] == type) m(0, l) = 1.0;
    }
  }
  return m;
}

SentenceForward forward_sentence(Tape& tape, const BoundParams& p, const TaggerModel& model,
                                 const Sentence& sentence, const EmbeddingStore* store) {
  SentenceForward out;
  out.h = encode(tape, p, model, sentence, store);
  if (model.fusion) {
    out.fusion = fuse(out.h, p, model.gcn_adjacency);
    out.logits = tag_logits(out.fusion->h_prime, p);
  } else {
    out.logits = tag_logits(out.h, p);
  }
  return out;
}

Matrix predict_logits(const TaggerModel& model, const Sentence& sentence, const EmbeddingStore* store) {
  Tape tape;
  BoundParams p(tape, model.params, false);
  return forward_sentence(tape, p, model, sentence, store).logits.value();
}

std::vector<std::string> predict_tags(const TaggerModel& model, const Sentence& sentence,
                                      const EmbeddingStore* store) {
  const Matrix logits = predict_logits(model, sentence, store);
  std::vector<std::string> tags;
  tags.reserve(sentence.size());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (logits(t, c) > logits(t, best)) best = c;
    }
    tags.push_back(model.tags.tags()[best]);
  }
  repair_bio(tags);
  return tags;
}

}  // namespace lst
