#include "era/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "era/random.hpp"
#include "internal.hpp"

namespace era::nn {

namespace {

// A sequence scored against the current parameters, with the forward cache
// retained so a logit gradient can be pushed back through it.
struct ScoredSeq {
  TokenSeq row;
  int cs = 0;
  detail::ForwardCache fc;
  double logp = 0.0;
};

ScoredSeq score_sequence(const ParamStore& store, const TokenSeq& prompt,
                         const TokenSeq& completion) {
  ScoredSeq s;
  s.row = prompt;
  s.row.insert(s.row.end(), completion.begin(), completion.end());
  s.cs = static_cast<int>(prompt.size());
  SequenceBatch::single(s.row, s.cs).validate(store.config);
  s.fc = detail::forward(store, s.row);
  const int V = store.config.vocab;
  for (int t = s.cs - 1; t + 1 < static_cast<int>(s.row.size()); ++t) {
    const double* row = &s.fc.logits[static_cast<std::size_t>(t) * V];
    s.logp += row[s.row[static_cast<std::size_t>(t) + 1]] -
              detail::row_logsumexp(row, V);
  }
  return s;
}

// Accumulates gradients for loss with d(loss)/d(logp of s) == w.
void backprop_logp(const ParamStore& store, const ScoredSeq& s, double w,
                   GradStore& grads) {
  if (w == 0.0) return;
  const int V = store.config.vocab;
  const int T = static_cast<int>(s.row.size());
  std::vector<double> dlogits(static_cast<std::size_t>(T) * V, 0.0);
  for (int t = s.cs - 1; t + 1 < T; ++t) {
    const double* row = &s.fc.logits[static_cast<std::size_t>(t) * V];
    const double lse = detail::row_logsumexp(row, V);
    double* drow = &dlogits[static_cast<std::size_t>(t) * V];
    // d logp / d logit_v = 1{v == target} - softmax_v
    for (int v = 0; v < V; ++v) drow[v] = -w * std::exp(row[v] - lse);
    drow[s.row[static_cast<std::size_t>(t) + 1]] += w;
  }
  detail::backward(store, s.row, s.fc, dlogits, grads);
}

}  // namespace

void adam_update(ParamStore& store, const GradStore& grads,
                 const OptimizerConfig& opt) {
  if (grads.g.size() != store.params.size())
    throw std::invalid_argument("optimizer: gradient/parameter count mismatch");
  store.adam_step += 1;
  const double t = static_cast<double>(store.adam_step);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < store.params.size(); ++i) {
    if (grads.g[i].d.size() != store.params[i].d.size())
      throw std::invalid_argument("optimizer: gradient shape mismatch");
    for (std::size_t j = 0; j < store.params[i].d.size(); ++j) {
      const double g = grads.g[i].d[j];
      double& m = store.adam_m[i].d[j];
      double& v = store.adam_v[i].d[j];
      m = opt.beta1 * m + (1.0 - opt.beta1) * g;
      v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
      const double mh = m / bc1;
      const double vh = v / bc2;
      store.params[i].d[j] -= opt.learning_rate * mh / (std::sqrt(vh) + opt.epsilon);
    }
  }
}

double ce_loss_and_grad(const ParamStore& store,
                        const std::vector<TokenSeq>& corpus, GradStore& grads,
                        std::size_t* position_count) {
  if (corpus.empty())
    throw std::invalid_argument("cross entropy: empty corpus");
  const ModelConfig& cfg = store.config;
  std::size_t total = 0;
  for (const TokenSeq& row : corpus) {
    if (row.size() < 2)
      throw std::invalid_argument(
          "cross entropy: sequences need at least two tokens");
    if (static_cast<int>(row.size()) > cfg.max_len)
      throw std::invalid_argument(
          "cross entropy: sequence longer than max_len");
    total += row.size() - 1;
  }
  const int V = cfg.vocab;
  const double inv_total = 1.0 / static_cast<double>(total);
  double loss = 0.0;
  for (const TokenSeq& row : corpus) {
    const detail::ForwardCache fc = detail::forward(store, row);
    const int T = fc.T;
    std::vector<double> dlogits(static_cast<std::size_t>(T) * V, 0.0);
    for (int t = 0; t + 1 < T; ++t) {
      const int target = row[static_cast<std::size_t>(t) + 1];
      const double* lrow = &fc.logits[static_cast<std::size_t>(t) * V];
      const double lse = detail::row_logsumexp(lrow, V);
      loss += (lse - lrow[target]) * inv_total;
      double* drow = &dlogits[static_cast<std::size_t>(t) * V];
      for (int v = 0; v < V; ++v)
        drow[v] = std::exp(lrow[v] - lse) * inv_total;
      drow[target] -= inv_total;
    }
    detail::backward(store, row, fc, dlogits, grads);
  }
  if (position_count) *position_count = total;
  return loss;
}

double era_loss_and_grad(const ParamStore& store,
                         const std::vector<PreferenceRecord>& records,
                         const AlignmentParams& params_align,
                         GradStore& grads) {
  if (records.empty())
    throw std::invalid_argument("rank alignment: empty record batch");
  const double inv_n = 1.0 / static_cast<double>(records.size());
  double loss = 0.0;
  for (const PreferenceRecord& rec : records) {
    rec.validate();
    const ScoredSeq sa = score_sequence(store, rec.prompt, rec.completion_a);
    const ScoredSeq sb = score_sequence(store, rec.prompt, rec.completion_b);
    if (!std::isfinite(sa.logp) || !std::isfinite(sb.logp))
      throw TrainingFailure("rank alignment: non-finite policy score");
    const PolicyScores scores{sa.logp, sb.logp};
    loss += era_pairwise_kl(rec, scores, params_align) * inv_n;
    // The per-record loss depends on the margin m = logp_a - logp_b only,
    // and d KL / d m = p_theta - p_gamma.
    const double p_theta = preference_prob_theta(scores).value();
    const double p_gamma = preference_prob_target(rec, params_align).value();
    const double w = (p_theta - p_gamma) * inv_n;
    backprop_logp(store, sa, w, grads);
    backprop_logp(store, sb, -w, grads);
  }
  return loss;
}

double dpo_loss_and_grad(const ParamStore& store,
                         const std::vector<PreferenceRecord>& records,
                         double dpo_beta, GradStore& grads) {
  if (records.empty())
    throw std::invalid_argument("preference baseline: empty record batch");
  if (!(dpo_beta > 0.0))
    throw std::invalid_argument("preference baseline: dpo_beta must be positive");
  const double inv_n = 1.0 / static_cast<double>(records.size());
  double loss = 0.0;
  for (const PreferenceRecord& rec : records) {
    rec.validate();
    const ScoredSeq sa = score_sequence(store, rec.prompt, rec.completion_a);
    const ScoredSeq sb = score_sequence(store, rec.prompt, rec.completion_b);
    if (!std::isfinite(sa.logp) || !std::isfinite(sb.logp))
      throw TrainingFailure("preference baseline: non-finite policy score");
    const PolicyScores scores{sa.logp, sb.logp};
    const Winner winner =
        rec.energy_a <= rec.energy_b ? Winner::A : Winner::B;
    loss += dpo_pairwise_loss(rec, scores, winner, dpo_beta) * inv_n;
    // loss_rec = -log sigmoid(dpo_beta * h_w) with
    // h_w = sign * ((logp_a - ref_a) - (logp_b - ref_b)), sign = +1 for A.
    const double sign = winner == Winner::A ? 1.0 : -1.0;
    const double h = sign * ((sa.logp - rec.ref_logp_a) -
                             (sb.logp - rec.ref_logp_b));
    const double dh = -dpo_beta * sigmoid(-dpo_beta * h) * inv_n;
    backprop_logp(store, sa, sign * dh, grads);
    backprop_logp(store, sb, -sign * dh, grads);
  }
  return loss;
}

TrainingReport pretrain_next_token(ParamStore& store,
                                   const std::vector<TokenSeq>& corpus,
                                   const TrainConfig& config) {
  if (corpus.empty()) throw std::invalid_argument("pretraining: empty corpus");
  if (config.epochs < 0)
    throw std::invalid_argument("pretraining: negative epoch count");
  if (config.batch_size <= 0)
    throw std::invalid_argument("pretraining: batch size must be positive");
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RandomSource rng(config.shuffle_seed);
  TrainingReport report;
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_positions = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      std::vector<TokenSeq> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i)
        batch.push_back(corpus[order[i]]);
      GradStore grads = GradStore::zeros_like(store);
      std::size_t positions = 0;
      const double loss = ce_loss_and_grad(store, batch, grads, &positions);
      if (!std::isfinite(loss) || !grads.all_finite())
        throw TrainingFailure("pretraining: non-finite loss or gradient");
      epoch_loss += loss * static_cast<double>(positions);
      epoch_positions += positions;
      adam_update(store, grads, config.optimizer);
    }
    report.epoch_losses.push_back(epoch_loss /
                                  static_cast<double>(epoch_positions));
  }
  return report;
}

double era_align_step(ParamStore& store,
                      const std::vector<PreferenceRecord>& records,
                      const AlignmentParams& params_align,
                      const OptimizerConfig& opt) {
  GradStore grads = GradStore::zeros_like(store);
  const double loss = era_loss_and_grad(store, records, params_align, grads);
  if (!std::isfinite(loss) || !grads.all_finite())
    throw TrainingFailure("alignment step: non-finite loss or gradient");
  adam_update(store, grads, opt);
  return loss;
}

double dpo_align_step(ParamStore& store,
                      const std::vector<PreferenceRecord>& records,
                      double dpo_beta, const OptimizerConfig& opt) {
  GradStore grads = GradStore::zeros_like(store);
  const double loss = dpo_loss_and_grad(store, records, dpo_beta, grads);
  if (!std::isfinite(loss) || !grads.all_finite())
    throw TrainingFailure("alignment step: non-finite loss or gradient");
  adam_update(store, grads, opt);
  return loss;
}

}  // namespace era::nn
