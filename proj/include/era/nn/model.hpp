#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "era/alignment.hpp"

// A small decoder-only autoregressive policy: token + learned positional
// embeddings, pre-norm blocks (causal multi-head self-attention followed by a
// two-layer GELU feed-forward), a final layer norm, and a linear output head.
// The output head is zero-initialized, so a freshly initialized model assigns
// the exact uniform distribution to every position.
//
// All differentiation is reverse-mode and hand-written for this fixed
// architecture; forward scoring on frozen parameters is safe concurrently,
// training steps mutate the store and must not run concurrently on one store.

namespace era::nn {

// ===== vocabulary ============================================================

// Ordered token strings with four reserved entries at fixed ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kStop = 2;
  static constexpr int kSep = 3;

  // Builds a vocabulary from the reserved tokens plus `items` in order.
  // Throws std::invalid_argument on duplicates or collisions with the
  // reserved names ("<pad>", "<start>", "<stop>", "<sep>").
  static Vocabulary with_reserved(const std::vector<std::string>& items);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;

  // Maps token strings to ids.  Throws std::invalid_argument for unknown
  // strings.
  int id(const std::string& token) const;
  TokenSeq encode(const std::vector<std::string>& pieces) const;

  // Concatenates the token strings for non-reserved ids; reserved ids
  // contribute their bracketed names, which never form valid molecules.
  std::string decode_to_string(const TokenSeq& ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  explicit Vocabulary(std::vector<std::string> tokens);
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

// ===== configuration and parameters ==========================================

struct ModelConfig {
  int layers = 2;
  int heads = 4;
  int width = 64;
  int max_len = 128;
  int ffn_mult = 4;
  int vocab = 0;  // set from the Vocabulary at initialization

  // Throws std::invalid_argument unless width % heads == 0, max_len >= 2,
  // all counts positive, and vocab >= 4.
  void validate() const;
};

// Row-major tensor of doubles; rank 1 or 2 in this architecture.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> d;

  static Tensor zeros(std::vector<int> shape);

  int rows() const { return shape.at(0); }
  int cols() const { return shape.size() > 1 ? shape[1] : 1; }
  std::size_t size() const { return d.size(); }
  double& at(int i, int j) { return d[static_cast<std::size_t>(i) * cols() + j]; }
  double at(int i, int j) const {
    return d[static_cast<std::size_t>(i) * cols() + j];
  }
};

// Named parameter tensors in a fixed deterministic order, plus Adam moment
// buffers (carried here so checkpoints resume training exactly).
struct ParamStore {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> params;
  std::vector<Tensor> adam_m;
  std::vector<Tensor> adam_v;
  std::int64_t adam_step = 0;

  // Embeddings and weights ~ Normal(0, 0.02), biases and gains at their
  // identity values, output head all-zero.
  static ParamStore init(const ModelConfig& config, std::uint64_t seed);

  Tensor& find(const std::string& name);
  const Tensor& find(const std::string& name) const;

  // Throws std::runtime_error if shapes disagree with config or any entry is
  // non-finite.
  void validate() const;
};

// Per-parameter gradients, parallel to ParamStore::params.
struct GradStore {
  std::vector<Tensor> g;

  static GradStore zeros_like(const ParamStore& store);
  void accumulate_scaled(const GradStore& other, double scale);
  bool all_finite() const;
};

// ===== batches ===============================================================

// Rows of token ids with a per-row completion boundary: log-probabilities are
// summed over predicted positions >= completion_start (so a row scores
// log p(row[completion_start..]) given row[0..completion_start)).
struct SequenceBatch {
  std::vector<TokenSeq> rows;
  std::vector<int> completion_start;  // one per row, in [1, row length - 1]

  static SequenceBatch single(TokenSeq row, int completion_start);

  // Throws std::invalid_argument for empty rows, ids outside [0, vocab),
  // rows longer than max_len, or an empty completion region.
  void validate(const ModelConfig& config) const;
};

// ===== forward scoring =======================================================

// Full [T, vocab] logit matrix for one sequence.  Exposed for tests
// (causality, normalization); scoring and sampling go through the helpers
// below.
Tensor forward_logits(const ParamStore& store, const TokenSeq& ids);

// Per-row sum of next-token log-probabilities over the completion region;
// each entry is <= 0.
std::vector<double> logprob_sequence(const ParamStore& store,
                                     const SequenceBatch& batch);

// Convenience: log p(completion | prompt) for one prompt/completion split.
double sequence_logprob(const ParamStore& store, const TokenSeq& prompt,
                        const TokenSeq& completion);

// Ancestral sampling. The prompt must begin with the start id; generation
// stops at the stop id or when the sequence reaches max_len.  Temperature 0
// is exact argmax (ties to the lowest id).  Returns the full sequence,
// prompt included.  Deterministic for a given seed.
TokenSeq sample_sequence(const ParamStore& store, const TokenSeq& prompt,
                         std::uint64_t seed, double temperature = 1.0);

// Policy adapter over a frozen parameter store.  sample() returns the
// completion only (generated tokens after the prompt, stop id included when
// reached).
class NeuralPolicy : public Policy {
 public:
  explicit NeuralPolicy(const ParamStore& store) : store_(&store) {}

  double sequence_logprob(const TokenSeq& prompt,
                          const TokenSeq& completion) const override;
  TokenSeq sample(const TokenSeq& prompt, std::uint64_t seed,
                  double temperature) const override;

 private:
  const ParamStore* store_;
};

}  // namespace era::nn
