#pragma once

// Shared forward/backward plumbing for the decoder.  Internal to the library:
// model.cpp implements these, train.cpp drives them with loss-specific logit
// gradients.  Tests exercise them only through the public entry points.

#include <string>
#include <utility>
#include <vector>

#include "era/nn/model.hpp"

namespace era::nn::detail {

// Everything backward() needs from one block's forward pass.
struct LayerCache {
  std::vector<double> x_in;      // [T,C] block input
  std::vector<double> ln1_xhat;  // [T,C] normalized pre-attention input
  std::vector<double> ln1_inv;   // [T]   1/sqrt(var + eps) per row
  std::vector<double> a;         // [T,C] first layer-norm output
  std::vector<double> q, k, v;   // [T,C] attention projections
  std::vector<double> att;       // [H,T,T] causal softmax probabilities
  std::vector<double> z;         // [T,C] concatenated head outputs
  std::vector<double> x_mid;     // [T,C] after the attention residual
  std::vector<double> ln2_xhat;  // [T,C]
  std::vector<double> ln2_inv;   // [T]
  std::vector<double> b;         // [T,C] second layer-norm output
  std::vector<double> h1;        // [T,F] feed-forward pre-activation
  std::vector<double> g;         // [T,F] feed-forward post-activation
};

struct ForwardCache {
  int T = 0;
  std::vector<LayerCache> layers;
  std::vector<double> x_out;     // [T,C] final block output
  std::vector<double> lnf_xhat;  // [T,C]
  std::vector<double> lnf_inv;   // [T]
  std::vector<double> xf;        // [T,C] final layer-norm output
  std::vector<double> logits;    // [T,V]
};

// Full forward pass retaining every intermediate backward() reads.
// Throws std::invalid_argument for empty/over-long sequences or ids outside
// the vocabulary.
ForwardCache forward(const ParamStore& store, const TokenSeq& ids);

// Accumulates d(loss)/d(params) into `grads` (parallel to store.params) given
// d(loss)/d(logits) as a [T,V] row-major vector.
void backward(const ParamStore& store, const TokenSeq& ids,
              const ForwardCache& cache, const std::vector<double>& dlogits,
              GradStore& grads);

// log(sum(exp(row))) over one logits row of length n, max-shifted.
double row_logsumexp(const double* row, int n);

// Index of a named tensor within store.params / GradStore::g.
int param_index(const ParamStore& store, const std::string& name);

// The canonical (name, shape) sequence for a configuration; ParamStore::init,
// ParamStore::validate, and checkpoint loading all derive from this one list.
std::vector<std::pair<std::string, std::vector<int>>> param_layout(
    const ModelConfig& config);

}  // namespace era::nn::detail
