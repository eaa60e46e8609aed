#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "era/alignment.hpp"
#include "era/nn/model.hpp"

// Training: next-token pretraining (cross entropy), rank-alignment steps on
// preference records, and the direct-preference baseline.  Loss+gradient
// entry points are exposed separately from the stepping functions so tests
// can check analytic gradients against finite differences.

namespace era::nn {

// Thrown when a loss or gradient turns non-finite.  Callers that train in
// epochs should treat the parameter store as tainted and fall back to their
// last good checkpoint.
class TrainingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t shuffle_seed = 1;
};

struct TrainingReport {
  std::vector<double> epoch_losses;  // mean per-position or per-record loss
};

// One adaptive-moment update from accumulated gradients.  Mutates params and
// moment buffers; increments the step counter.
void adam_update(ParamStore& store, const GradStore& grads,
                 const OptimizerConfig& opt);

// ===== losses with gradients =================================================

// Mean next-token cross entropy over all predicted positions of `corpus`
// (each sequence predicts tokens 1..T-1 from its prefix).  Accumulates
// parameter gradients into `grads` (pre-zeroed by the caller) and returns the
// loss.  `position_count` (optional) receives the number of predicted
// positions.
double ce_loss_and_grad(const ParamStore& store,
                        const std::vector<TokenSeq>& corpus, GradStore& grads,
                        std::size_t* position_count = nullptr);

// Mean pairwise rank-alignment KL over records, scored with the current
// parameters; gradients accumulate into `grads`.
double era_loss_and_grad(const ParamStore& store,
                         const std::vector<PreferenceRecord>& records,
                         const AlignmentParams& params_align, GradStore& grads);

// Mean direct-preference baseline loss; the winner of each record is the
// completion with the lower energy (ties prefer a).
double dpo_loss_and_grad(const ParamStore& store,
                         const std::vector<PreferenceRecord>& records,
                         double dpo_beta, GradStore& grads);

// ===== steps and loops =======================================================

// Minimizes mean next-token cross entropy for config.epochs passes over the
// corpus (shuffled each epoch, gradients averaged over batches of
// config.batch_size).  Returns per-epoch mean losses, measured as each batch
// is visited before its step.  Throws TrainingFailure on non-finite loss or
// gradients.
TrainingReport pretrain_next_token(ParamStore& store,
                                   const std::vector<TokenSeq>& corpus,
                                   const TrainConfig& config);

// One optimizer step on the mean pairwise rank-alignment KL across `records`.
// Returns the pre-step loss.  Throws TrainingFailure on non-finite values.
double era_align_step(ParamStore& store,
                      const std::vector<PreferenceRecord>& records,
                      const AlignmentParams& params_align,
                      const OptimizerConfig& opt);

// One optimizer step on the direct-preference baseline loss.  Returns the
// pre-step loss.
double dpo_align_step(ParamStore& store,
                      const std::vector<PreferenceRecord>& records,
                      double dpo_beta, const OptimizerConfig& opt);

}  // namespace era::nn
