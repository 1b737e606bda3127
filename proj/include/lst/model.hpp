#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lst/autodiff.hpp"
#include "lst/corpus.hpp"
#include "lst/label_graph.hpp"
#include "lst/matrix.hpp"

namespace lst {

/// BIO tag inventory for an entity label set: "O", then B-X, I-X per label.
class TagSet {
 public:
  TagSet() = default;
  explicit TagSet(std::vector<std::string> labels);

  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& tags() const { return tags_; }
  std::size_t size() const { return tags_.size(); }

  /// Throws InputError for tags outside the set.
  std::size_t index(const std::string& tag) const;
  std::vector<std::size_t> indices(const std::vector<std::string>& tags) const;

  /// tags x (labels + 1) 0/1 matrix summing B-X and I-X into X; the last column collects O.
  Matrix type_pooling() const;

 private:
  std::vector<std::string> labels_;
  std::vector<std::string> tags_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Word ids for the toy encoder; id 0 is the reserved unknown word.
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr const char* kUnkToken = "<unk>";

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);

  std::size_t add(const std::string& word);
  std::size_t id(const std::string& word) const;
  std::vector<std::size_t> ids(const std::vector<std::string>& words) const;
  const std::vector<std::string>& words() const { return words_; }
  std::size_t size() const { return words_.size(); }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Frozen per-token vectors produced by an external encoder, keyed by sentence.
/// File format: JSON Lines, {"tokens": [...], "vectors": [[...], ...]} per line.
class EmbeddingStore {
 public:
  static EmbeddingStore parse_jsonl(std::string_view text);
  static EmbeddingStore load(const std::filesystem::path& path);

  void add(const std::vector<std::string>& tokens, Matrix vectors);
  /// Throws InputError when the sentence is missing.
  const Matrix& lookup(const std::vector<std::string>& tokens) const;
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return rows_.size(); }

 private:
  static std::string key(const std::vector<std::string>& tokens);

  std::unordered_map<std::string, Matrix> rows_;
  std::size_t dim_ = 0;
};

enum class EncoderMode { Toy, File };

std::string to_string(EncoderMode mode);
EncoderMode encoder_mode_from_string(const std::string& s);

/// Named trainable tensors. Names are grouped by prefix: "encoder.", "fusion.", "cls.", "aux.".
struct ModelParams {
  std::map<std::string, Matrix> tensors;

  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  bool all_finite() const;
};

/// Tape handles for every tensor of a ModelParams.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ModelParams& params, bool trainable);
  /// Wraps existing handles, e.g. leaves created by a gradient checker.
  explicit BoundParams(std::map<std::string, Var> vars) : vars_(std::move(vars)) {}
  Var operator[](const std::string& name) const;
  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

struct ModelDims {
  std::size_t d_h = 32;
  std::size_t d_p = 32;
};

/// Encoder, optional label-fusion block and tag classifier. The source model
/// has no fusion block; a fine-tuned model carries one plus the auxiliary head.
struct TaggerModel {
  EncoderMode encoder_mode = EncoderMode::Toy;
  Vocabulary vocab;
  TagSet tags;
  bool fusion = false;
  /// D^{-1/2}(A+I)D^{-1/2} of the frozen source graph; rows follow tags.labels().
  Matrix gcn_adjacency;
  ModelParams params;
};

// Initialisation ------------------------------------------------------------

void init_toy_encoder(ModelParams& params, std::size_t vocab_size, std::size_t d_h, std::mt19937_64& rng);
/// Adds rows for words appended to a vocabulary since the table was created.
void grow_embedding(ModelParams& params, std::size_t vocab_size, std::mt19937_64& rng);
void init_fusion(ModelParams& params, std::size_t n_labels, const ModelDims& dims, std::mt19937_64& rng);
void init_classifier(ModelParams& params, std::size_t d_h, std::size_t n_tags, std::mt19937_64& rng);
void init_auxiliary(ModelParams& params, std::size_t d_h, std::size_t n_labels, std::mt19937_64& rng);

/// Symmetric normalization of the binary edge set plus self-loops.
Matrix normalized_adjacency(const LabelGraph& graph);

// Forward pieces --------------------------------------------------------------

/// Toy encoder: embedding lookup, then h = x + tanh(x_{j-1} W_prev + x_j W_cur + x_{j+1} W_next + b).
Var encode_toy(const BoundParams& p, std::span<const std::size_t> ids);
/// n_s x d_h token representations in either encoder mode.
Var encode(Tape& tape, const BoundParams& p, const TaggerModel& model, const Sentence& sentence,
           const EmbeddingStore* store);

struct FusionTrace {
  Var q;        // n_s x d_p label-related embeddings
  Var alpha;    // |Y| x n_s label-guided attention
  Var u;        // |Y| x d_p label-specific components
  Var u_prime;  // |Y| x d_p after graph propagation
  Var beta;     // n_s x |Y| token-guided attention
  Var h_prime;  // n_s x d_h label-fused embeddings
};

struct LabelAttention {
  Var q;
  Var alpha;
  Var u;
};

/// q_j = h_j W_p + b_p; alpha_ij = softmax_j(q_j . c_i); u_i = sum_j alpha_ij q_j
LabelAttention label_attention(Var h, Var proj_w, Var proj_b, Var label_reps);

/// u' = A ReLU(A u W1) W2 with a constant normalized adjacency A.
Var gcn_propagate(Var u, const Matrix& adjacency, Var w1, Var w2);
/// Checked form: graph.labels() must equal u_labels.
Var gcn_propagate(Var u, const LabelGraph& graph, std::span<const std::string> u_labels, Var w1, Var w2);

struct TokenFusion {
  Var beta;
  Var h_prime;
};

/// beta_ji = softmax_i(q_j . u'_i); h'_j = h_j + (sum_i beta_ji u'_i) W'_p + b'_p
TokenFusion token_fusion(Var h, Var q, Var u_prime, Var out_w, Var out_b);

FusionTrace fuse(Var h, const BoundParams& p, const Matrix& adjacency);

/// Tag logits FC(h') (or FC(h) without fusion) for one sentence.
Var tag_logits(Var h_or_h_prime, const BoundParams& p);

/// Mean token cross-entropy of the tag logits against gold tag ids.
Var classification_loss(Var logits, std::span<const std::size_t> gold);

/// Mean over sentences and labels of BCE(FC_aux(mean_j h'_j), multi-hot presence).
Var auxiliary_loss(std::span<const Var> h_primes, Var aux_w, Var aux_b, const Matrix& presence);

/// Multi-hot presence of each label among a sentence's gold tags.
Matrix label_presence(const Sentence& sentence, const std::vector<std::string>& labels);

struct SentenceForward {
  Var h;
  std::optional<FusionTrace> fusion;
  Var logits;
};

SentenceForward forward_sentence(Tape& tape, const BoundParams& p, const TaggerModel& model,
                                 const Sentence& sentence, const EmbeddingStore* store);

/// Argmax tags (lowest index on ties), repaired to valid BIO.
std::vector<std::string> predict_tags(const TaggerModel& model, const Sentence& sentence,
                                      const EmbeddingStore* store);
/// Logits without a gradient.
Matrix predict_logits(const TaggerModel& model, const Sentence& sentence, const EmbeddingStore* store);

}  // namespace lst
