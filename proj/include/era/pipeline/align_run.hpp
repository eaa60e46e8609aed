#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "era/alignment.hpp"
#include "era/nn/train.hpp"

// Epoch-level alignment driver over a preference dataset: shuffled
// mini-batches, one rank-alignment (or direct-preference baseline) step per
// batch, with rollback to the last successfully stepped parameters if a loss
// or gradient turns non-finite.

namespace era::pipeline {

struct AlignConfig {
  AlignmentParams params;          // beta / gamma of the alignment objective
  nn::OptimizerConfig optimizer;   // defaults to the alignment rate 1e-5
  int epochs = 3;
  int batch_size = 32;
  std::uint64_t shuffle_seed = 1;
  bool dpo_mode = false;           // run the direct-preference baseline
  double dpo_beta = 0.1;

  AlignConfig() { optimizer.learning_rate = 1e-5; }
};

struct AlignResult {
  std::vector<double> step_losses;   // pre-step loss of every completed batch
  std::vector<double> epoch_losses;  // record-weighted mean per epoch
  bool failed = false;               // a step produced non-finite values
  std::string failure_reason;
};

// Mutates `store` in place.  A zero-epoch run leaves it untouched.  On a
// training failure the store is rolled back to the last completed step and
// `failed` is set; completed losses are kept.  Throws std::invalid_argument
// for an empty dataset or invalid config.
AlignResult run_alignment(nn::ParamStore& store,
                          const std::vector<PreferenceRecord>& records,
                          const AlignConfig& config);

}  // namespace era::pipeline
