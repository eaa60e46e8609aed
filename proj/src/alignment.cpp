#include "era/alignment.hpp"

#include <cmath>

namespace era {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool finite(double x) { return std::isfinite(x); }

}  // namespace

// ===== numerics ==============================================================

double log_sigmoid(double x) {
  // log(1/(1+e^-x)): split on the sign of x so the exp never overflows.
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double sigmoid(double x) { return std::exp(log_sigmoid(x)); }

// ===== parameters ============================================================

AlignmentParams::AlignmentParams(double beta_, double gamma_)
    : beta(beta_), gamma(gamma_) {
  require(finite(beta) && beta > 0.0, "AlignmentParams: beta must be > 0");
  require(finite(gamma) && gamma >= 0.0, "AlignmentParams: gamma must be >= 0");
}

// ===== records and scores ====================================================

void PreferenceRecord::validate() const {
  require(finite(energy_a) && finite(energy_b),
          "PreferenceRecord: energies must be finite");
  require(finite(ref_logp_a) && ref_logp_a <= 0.0,
          "PreferenceRecord: ref_logp_a must be finite and <= 0");
  require(finite(ref_logp_b) && ref_logp_b <= 0.0,
          "PreferenceRecord: ref_logp_b must be finite and <= 0");
}

void PolicyScores::validate() const {
  require(finite(logp_a) && logp_a <= 0.0,
          "PolicyScores: logp_a must be finite and <= 0");
  require(finite(logp_b) && logp_b <= 0.0,
          "PolicyScores: logp_b must be finite and <= 0");
}

PreferenceProb PreferenceProb::from_logit(double logit) {
  require(finite(logit), "PreferenceProb: logit must be finite");
  return PreferenceProb(log_sigmoid(logit), log_sigmoid(-logit));
}

PreferenceProb PreferenceProb::from_value(double value) {
  require(finite(value) && value > 0.0 && value < 1.0,
          "PreferenceProb: value must lie in (0, 1)");
  return PreferenceProb(std::log(value), std::log1p(-value));
}

double PreferenceProb::value() const { return std::exp(log_p_); }

// ===== pairwise probabilities ================================================

PreferenceProb preference_prob_theta(const PolicyScores& scores) {
  scores.validate();
  return PreferenceProb::from_logit(scores.logp_a - scores.logp_b);
}

PreferenceProb preference_prob_target(const PreferenceRecord& rec,
                                      const AlignmentParams& params) {
  rec.validate();
  const double logit =
      params.beta_prime() * (rec.energy_b - rec.energy_a) +
      params.gamma_prime() * (rec.ref_logp_a - rec.ref_logp_b);
  return PreferenceProb::from_logit(logit);
}

// ===== losses ================================================================

namespace {

// KL between two Bernoulli distributions given in log space.
double bernoulli_kl(const PreferenceProb& p, const PreferenceProb& q) {
  const double kl = std::exp(p.log_p()) * (p.log_p() - q.log_p()) +
                    std::exp(p.log_1mp()) * (p.log_1mp() - q.log_1mp());
  return kl > 0.0 ? kl : 0.0;  // clamp rounding residue at the optimum
}

}  // namespace

double era_pairwise_kl(const PreferenceRecord& rec, const PolicyScores& scores,
                       const AlignmentParams& params) {
  const PreferenceProb target = preference_prob_target(rec, params);
  const PreferenceProb theta = preference_prob_theta(scores);
  return bernoulli_kl(target, theta);
}

double era_loss_batch(const std::vector<PreferenceRecord>& records,
                      const Policy& policy, const AlignmentParams& params) {
  require(!records.empty(), "era_loss_batch: batch must be non-empty");
  double total = 0.0;
  for (const PreferenceRecord& rec : records) {
    total += era_pairwise_kl(rec, policy.score(rec), params);
  }
  return total / static_cast<double>(records.size());
}

double era_grad_scale(const PreferenceProb& p_target,
                      const PreferenceProb& p_theta) {
  require(p_target.value() > 0.0 && p_target.value() < 1.0,
          "era_grad_scale: p_target is at the boundary");
  require(p_theta.value() > 0.0 && p_theta.value() < 1.0,
          "era_grad_scale: p_theta is at the boundary");
  // (1-p*)/(1-pt) - p*/pt, evaluated as exp of log-ratios for stability.
  return std::exp(p_target.log_1mp() - p_theta.log_1mp()) -
         std::exp(p_target.log_p() - p_theta.log_p());
}

DegenerateImportanceWeight::DegenerateImportanceWeight(double lw, double c)
    : std::runtime_error("importance_weighted_kl: log-weight " +
                         std::to_string(lw) + " exceeds cap " +
                         std::to_string(c)),
      log_weight(lw),
      cap(c) {}

double importance_weighted_kl(const PreferenceRecord& rec,
                              const PolicyScores& scores,
                              const AlignmentParams& params,
                              double log_weight_cap) {
  rec.validate();
  scores.validate();
  const double log_w =
      scores.logp_a + scores.logp_b - rec.ref_logp_a - rec.ref_logp_b;
  if (log_w > log_weight_cap) {
    throw DegenerateImportanceWeight(log_w, log_weight_cap);
  }
  return std::exp(log_w) * era_pairwise_kl(rec, scores, params);
}

// ===== direct-preference baseline ===========================================

double dpo_pairwise_loss(const PreferenceRecord& rec,
                         const PolicyScores& scores, Winner winner,
                         double dpo_beta) {
  rec.validate();
  scores.validate();
  require(finite(dpo_beta) && dpo_beta > 0.0,
          "dpo_pairwise_loss: dpo_beta must be > 0");
  const double margin_a =
      (scores.logp_a - rec.ref_logp_a) - (scores.logp_b - rec.ref_logp_b);
  const double margin = winner == Winner::A ? margin_a : -margin_a;
  return -log_sigmoid(dpo_beta * margin);
}

// ===== closed-form log-densities ============================================

double gibbs_unnormalized_logdensity(double energy, double ref_logp,
                                     const AlignmentParams& params) {
  require(finite(energy), "gibbs_unnormalized_logdensity: non-finite energy");
  require(finite(ref_logp) && ref_logp <= 0.0,
          "gibbs_unnormalized_logdensity: ref_logp must be finite and <= 0");
  return -params.beta_prime() * energy + params.gamma_prime() * ref_logp;
}

double ppo_unnormalized_logdensity(double energy, double ref_logp,
                                   const AlignmentParams& params) {
  require(finite(energy), "ppo_unnormalized_logdensity: non-finite energy");
  require(finite(ref_logp) && ref_logp <= 0.0,
          "ppo_unnormalized_logdensity: ref_logp must be finite and <= 0");
  require(params.gamma > 0.0,
          "ppo_unnormalized_logdensity: undefined at gamma = 0");
  return -(params.beta / params.gamma) * energy + ref_logp;
}

}  // namespace era
