#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

// Core energy-rank alignment math.
//
// The regularized objective that everything in this library serves is
//
//   J(pi) = E_x [ sum_y pi(y|x) * ( U(x,y)
//                 + (1/beta) * ((1+gamma) log pi(y|x) - gamma log pi_ref(y|x)) ) ]
//
// whose minimizer is the Gibbs policy
//
//   pi*(y|x) ∝ exp( -beta' U(x,y) + gamma' log pi_ref(y|x) ),
//
// with beta' = beta/(1+gamma) and gamma' = gamma/(1+gamma).  Alignment is
// driven by a pairwise Bernoulli KL between the ideal preference probability
// p_gamma (induced by the energies and the reference policy) and the model
// preference probability p_theta (induced by sequence log-probabilities).
// All probability arithmetic in this header is done in log space via
// log-sigmoid; probabilities are exponentiated only at API boundaries.

namespace era {

using TokenSeq = std::vector<int>;

// ===== numerics ==============================================================

// Numerically stable log(sigmoid(x)).
double log_sigmoid(double x);

// Numerically stable sigmoid via log_sigmoid.
double sigmoid(double x);

// ===== parameters ============================================================

// Inverse temperature beta > 0 and regularization strength gamma >= 0,
// together with the derived coefficients used by every downstream formula.
struct AlignmentParams {
  double beta = 1.0;
  double gamma = 0.0;

  AlignmentParams() = default;
  AlignmentParams(double beta_, double gamma_);

  double beta_prime() const { return beta / (1.0 + gamma); }
  double gamma_prime() const { return gamma / (1.0 + gamma); }
};

// ===== records and scores ====================================================

// One observed completion pair for a prompt: energies and reference
// log-probabilities for both completions.  Energies must be finite;
// reference log-probs must be finite and <= 0.
struct PreferenceRecord {
  TokenSeq prompt;
  TokenSeq completion_a;
  TokenSeq completion_b;
  double energy_a = 0.0;
  double energy_b = 0.0;
  double ref_logp_a = 0.0;
  double ref_logp_b = 0.0;

  void validate() const;  // throws std::invalid_argument on violation
};

// Model log-probabilities of the two completions of a record.
struct PolicyScores {
  double logp_a = 0.0;
  double logp_b = 0.0;

  void validate() const;
};

// A pairwise preference probability in the open interval (0, 1), stored in
// log space.  Construct from a logit (log-odds) or from a plain value.
class PreferenceProb {
public:
  static PreferenceProb from_logit(double logit);
  static PreferenceProb from_value(double value);  // requires 0 < value < 1

  double value() const;      // exp(log_p), may round to 0 or 1 for huge logits
  double log_p() const { return log_p_; }
  double log_1mp() const { return log_1mp_; }

private:
  PreferenceProb(double lp, double l1mp) : log_p_(lp), log_1mp_(l1mp) {}
  double log_p_;
  double log_1mp_;
};

// ===== abstract policy and energy ===========================================

// A conditional distribution over completions given a prompt.
class Policy {
public:
  virtual ~Policy() = default;

  // log pi(completion | prompt); completions are scored exactly as given.
  virtual double sequence_logprob(const TokenSeq& prompt,
                                  const TokenSeq& completion) const = 0;

  // Draws one completion.  temperature 0 means greedy.
  virtual TokenSeq sample(const TokenSeq& prompt, std::uint64_t seed,
                          double temperature) const = 0;

  PolicyScores score(const PreferenceRecord& rec) const {
    return PolicyScores{sequence_logprob(rec.prompt, rec.completion_a),
                        sequence_logprob(rec.prompt, rec.completion_b)};
  }
};

// Maps (prompt, completion) to a finite energy; lower is better.
class EnergyModel {
public:
  virtual ~EnergyModel() = default;
  virtual double energy(const TokenSeq& prompt,
                        const TokenSeq& completion) const = 0;
};

// ===== pairwise probabilities ================================================

// p_theta(a > b) = sigmoid(logp_a - logp_b).
PreferenceProb preference_prob_theta(const PolicyScores& scores);

// p_gamma(a > b) = sigmoid( beta' (U_b - U_a) + gamma' (ref_logp_a - ref_logp_b) ).
PreferenceProb preference_prob_target(const PreferenceRecord& rec,
                                      const AlignmentParams& params);

// ===== losses ================================================================

// D_KL( p_gamma || p_theta ) over the two-outcome space, computed in log
// space.  Always >= 0 and zero exactly when the probabilities agree.
double era_pairwise_kl(const PreferenceRecord& rec, const PolicyScores& scores,
                       const AlignmentParams& params);

// Mean era_pairwise_kl over a non-empty batch, scoring each record with the
// policy.  Throws std::invalid_argument on an empty batch.
double era_loss_batch(const std::vector<PreferenceRecord>& records,
                      const Policy& policy, const AlignmentParams& params);

// Multiplicative scale of the gradient of era_pairwise_kl with respect to the
// model logit:  (1 - p_target)/(1 - p_theta) - p_target/p_theta.
// Positive when p_theta overshoots p_target, zero at the optimum.
// Throws std::invalid_argument if either probability is exactly 0 or 1.
double era_grad_scale(const PreferenceProb& p_target,
                      const PreferenceProb& p_theta);

// Off-policy correction: w * era_pairwise_kl with
// w = exp(logp_a + logp_b - ref_logp_a - ref_logp_b).
// Throws DegenerateImportanceWeight if the log-weight exceeds log_weight_cap.
class DegenerateImportanceWeight : public std::runtime_error {
public:
  DegenerateImportanceWeight(double log_weight, double cap);
  double log_weight;
  double cap;
};

double importance_weighted_kl(const PreferenceRecord& rec,
                              const PolicyScores& scores,
                              const AlignmentParams& params,
                              double log_weight_cap = 30.0);

// ===== direct-preference baseline ===========================================

enum class Winner { A, B };

// Baseline loss -log sigmoid( dpo_beta * [ (logp_w - ref_logp_w)
//                                        - (logp_l - ref_logp_l) ] ).
// dpo_beta is the single temperature knob of the baseline (default 0.1);
// in terms of the regularized objective it plays the role of gamma/beta.
double dpo_pairwise_loss(const PreferenceRecord& rec,
                         const PolicyScores& scores, Winner winner,
                         double dpo_beta = 0.1);

// ===== closed-form log-densities ============================================

// log of the unnormalized Gibbs optimum: -beta' * energy + gamma' * ref_logp.
double gibbs_unnormalized_logdensity(double energy, double ref_logp,
                                     const AlignmentParams& params);

// log of the unnormalized minimizer of the clipped-surrogate objective:
// -(beta/gamma) * energy + ref_logp.  Undefined at gamma = 0
// (throws std::invalid_argument).
double ppo_unnormalized_logdensity(double energy, double ref_logp,
                                   const AlignmentParams& params);

}  // namespace era
