#pragma once

#include <string>
#include <vector>

#include "era/alignment.hpp"

// Exact finite-space laboratory.  Policies over a small outcome set are
// represented by an explicit logit table, so the Gibbs optimum, the
// clipped-surrogate optimum, the regularized objective, and total-variation
// distances can all be computed exactly and used as oracles for the
// gradient-based fitting routines.

namespace era::tabular {

// Row-major dense matrix of doubles; rows index prompts, columns outcomes.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, fill) {}

  double& at(int r, int c) { return d[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return d[static_cast<std::size_t>(r) * cols + c];
  }
};

// Explicit conditional distribution pi(y|x) stored as a logit table.
// Probabilities are recovered with a per-row softmax, so every policy has
// full support and each row sums to one.
struct TabularPolicy {
  std::vector<std::string> prompts;
  std::vector<std::string> outcomes;
  Mat logits;  // [prompts x outcomes]

  int n_prompts() const { return logits.rows; }
  int n_outcomes() const { return logits.cols; }

  // Normalized probabilities / log-probabilities of one row.
  std::vector<double> probs(int prompt) const;
  std::vector<double> log_probs(int prompt) const;

  void validate() const;  // shape and finiteness checks
};

// Energy table U(x, y); all entries finite.
struct EnergyTable {
  Mat values;  // [prompts x outcomes]
  void validate() const;
};

// Per-prompt additive offsets g(x), used to probe gauge invariance.
struct GaugeFunction {
  std::vector<double> offsets;
};

// ===== exact constructions ===================================================

// Mean total-variation distance between two policies over prompts:
// mean_x (1/2) sum_y |p(y|x) - q(y|x)|.
double tv_distance(const TabularPolicy& p, const TabularPolicy& q);

// Mean per-prompt Shannon entropy (nats).
double mean_entropy(const TabularPolicy& p);

// Gibbs optimum: pi*(y|x) ∝ exp(-beta' U + gamma' log pi_ref).
TabularPolicy exact_gibbs(const EnergyTable& energy, const TabularPolicy& ref,
                          const AlignmentParams& params);

// Minimizer of the clipped-surrogate objective:
// pi ∝ exp(-(beta/gamma) U + log pi_ref).  Throws at gamma = 0.
TabularPolicy exact_ppo_minimizer(const EnergyTable& energy,
                                  const TabularPolicy& ref,
                                  const AlignmentParams& params);

// Regularized objective value
//   J(pi) = mean_x sum_y pi(y|x) (U + (1/beta)((1+gamma) log pi
//                                             - gamma log pi_ref)).
double objective_value(const TabularPolicy& pi, const EnergyTable& energy,
                       const TabularPolicy& ref, const AlignmentParams& params);

// ===== expected pairwise loss and fitting ====================================

// Expected pairwise KL of a logit table against the energy-induced targets,
// with ordered pairs (y, y') weighted by pi_ref(y|x) pi_ref(y'|x) and prompts
// weighted uniformly.
double expected_era_loss(const Mat& logits, const EnergyTable& energy,
                         const TabularPolicy& ref,
                         const AlignmentParams& params);

// Analytic gradient of expected_era_loss with respect to the logits.
Mat expected_era_loss_grad(const Mat& logits, const EnergyTable& energy,
                           const TabularPolicy& ref,
                           const AlignmentParams& params);

enum class TabularOptimizer {
  kGradientDescent,  // fixed-step descent on logits
  kDiagNewton,       // descent preconditioned by the diagonal of the Hessian
};

struct FitOptions {
  TabularOptimizer optimizer = TabularOptimizer::kDiagNewton;
  double step = 0.5;          // step size (kGradientDescent) / damping (kDiagNewton)
  double max_coord_step = 1.0;  // per-logit trust region (kDiagNewton)
  long max_steps = 50000;
  double tv_tolerance = 1e-3; // convergence: TV against the exact optimum
  long check_every = 100;     // cadence of the TV convergence check
  int max_outcomes = 64;      // guard on |Y| for full pair enumeration
};

struct FitResult {
  TabularPolicy policy;
  double tv_distance = 0.0;  // final TV against the exact target (ERA fits)
  long steps = 0;
  bool converged = false;
  double final_loss = 0.0;
};

// Minimizes the expected pairwise loss by gradient descent on logits,
// starting from pi_ref (or `init` when given).  Convergence is declared when
// TV against exact_gibbs drops to opts.tv_tolerance; otherwise the result
// carries converged = false and the final TV.
FitResult fit_era_tabular(const EnergyTable& energy, const TabularPolicy& ref,
                          const AlignmentParams& params,
                          const FitOptions& opts = {},
                          const Mat* init = nullptr);

// One observed preference: winner and loser outcome for a prompt.
struct PairObservation {
  int prompt = 0;
  int winner = 0;
  int loser = 0;
};

// Minimizes the mean direct-preference baseline loss over the observed
// pairs, starting from pi_ref.  Runs opts.max_steps steps; converged means
// the loss stayed finite.  tv_distance reports drift from the reference.
FitResult fit_dpo_tabular(const std::vector<PairObservation>& pairs,
                          const TabularPolicy& ref, double dpo_beta = 0.1,
                          const FitOptions& opts = {});

// ===== verification instances ================================================

// A self-contained problem instance for the verification harness.
struct Instance {
  TabularPolicy ref;
  EnergyTable energy;
  AlignmentParams params;
};

// Seeded random instance within the documented desk-scale envelope.
Instance random_instance(std::uint64_t seed, int max_prompts = 4,
                         int max_outcomes = 32);

// JSON (de)serialization of instances and fit summaries, used by the
// command-line verification harness.
std::string instance_to_json(const Instance& inst);
Instance instance_from_json(const std::string& text);
std::string fit_summary_json(const FitResult& result);

// Adapter so a tabular row can stand in as a core Policy (outcome index is
// encoded as a single-token completion).
class RowPolicy : public Policy {
public:
  explicit RowPolicy(const TabularPolicy& policy, int prompt = 0)
      : policy_(policy), prompt_(prompt) {}

  double sequence_logprob(const TokenSeq& prompt,
                          const TokenSeq& completion) const override;
  TokenSeq sample(const TokenSeq& prompt, std::uint64_t seed,
                  double temperature) const override;

private:
  const TabularPolicy& policy_;
  int prompt_;
};

}  // namespace era::tabular
