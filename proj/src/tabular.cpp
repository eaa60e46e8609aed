#include "era/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "era/random.hpp"

namespace era::tabular {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::vector<double> softmax(const Mat& m, int row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < m.cols; ++c) mx = std::max(mx, m.at(row, c));
  std::vector<double> p(m.cols);
  double z = 0.0;
  for (int c = 0; c < m.cols; ++c) {
    p[c] = std::exp(m.at(row, c) - mx);
    z += p[c];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> log_softmax(const Mat& m, int row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < m.cols; ++c) mx = std::max(mx, m.at(row, c));
  double z = 0.0;
  for (int c = 0; c < m.cols; ++c) z += std::exp(m.at(row, c) - mx);
  const double lse = mx + std::log(z);
  std::vector<double> lp(m.cols);
  for (int c = 0; c < m.cols; ++c) lp[c] = m.at(row, c) - lse;
  return lp;
}

void check_same_shape(const TabularPolicy& p, const TabularPolicy& q,
                      const char* who) {
  require(p.logits.rows == q.logits.rows && p.logits.cols == q.logits.cols,
          std::string(who) + ": policy shapes differ");
}

void check_energy_shape(const EnergyTable& e, const TabularPolicy& ref,
                        const char* who) {
  require(e.values.rows == ref.logits.rows && e.values.cols == ref.logits.cols,
          std::string(who) + ": energy table and policy shapes differ");
}

}  // namespace

// ===== basic types ===========================================================

std::vector<double> TabularPolicy::probs(int prompt) const {
  return softmax(logits, prompt);
}

std::vector<double> TabularPolicy::log_probs(int prompt) const {
  return log_softmax(logits, prompt);
}

void TabularPolicy::validate() const {
  require(logits.rows >= 1 && logits.cols >= 1,
          "TabularPolicy: empty logit table");
  require(static_cast<std::size_t>(logits.rows) * logits.cols ==
              logits.d.size(),
          "TabularPolicy: logit storage does not match shape");
  for (double v : logits.d) {
    require(std::isfinite(v), "TabularPolicy: non-finite logit");
  }
}

void EnergyTable::validate() const {
  for (double v : values.d) {
    require(std::isfinite(v), "EnergyTable: non-finite energy");
  }
}

// ===== exact constructions ===================================================

double tv_distance(const TabularPolicy& p, const TabularPolicy& q) {
  check_same_shape(p, q, "tv_distance");
  double total = 0.0;
  for (int r = 0; r < p.logits.rows; ++r) {
    const std::vector<double> pp = p.probs(r);
    const std::vector<double> qq = q.probs(r);
    double acc = 0.0;
    for (int c = 0; c < p.logits.cols; ++c) acc += std::fabs(pp[c] - qq[c]);
    total += 0.5 * acc;
  }
  return total / p.logits.rows;
}

double mean_entropy(const TabularPolicy& p) {
  double total = 0.0;
  for (int r = 0; r < p.logits.rows; ++r) {
    const std::vector<double> pp = p.probs(r);
    const std::vector<double> lp = p.log_probs(r);
    double h = 0.0;
    for (int c = 0; c < p.logits.cols; ++c) h -= pp[c] * lp[c];
    total += h;
  }
  return total / p.logits.rows;
}

TabularPolicy exact_gibbs(const EnergyTable& energy, const TabularPolicy& ref,
                          const AlignmentParams& params) {
  ref.validate();
  energy.validate();
  check_energy_shape(energy, ref, "exact_gibbs");
  TabularPolicy out;
  out.prompts = ref.prompts;
  out.outcomes = ref.outcomes;
  out.logits = Mat(ref.logits.rows, ref.logits.cols);
  const double bp = params.beta_prime();
  const double gp = params.gamma_prime();
  for (int r = 0; r < ref.logits.rows; ++r) {
    const std::vector<double> ref_lp = ref.log_probs(r);
    for (int c = 0; c < ref.logits.cols; ++c) {
      out.logits.at(r, c) = -bp * energy.values.at(r, c) + gp * ref_lp[c];
    }
  }
  return out;
}

TabularPolicy exact_ppo_minimizer(const EnergyTable& energy,
                                  const TabularPolicy& ref,
                                  const AlignmentParams& params) {
  ref.validate();
  energy.validate();
  check_energy_shape(energy, ref, "exact_ppo_minimizer");
  require(params.gamma > 0.0, "exact_ppo_minimizer: undefined at gamma = 0");
  TabularPolicy out;
  out.prompts = ref.prompts;
  out.outcomes = ref.outcomes;
  out.logits = Mat(ref.logits.rows, ref.logits.cols);
  const double scale = params.beta / params.gamma;
  for (int r = 0; r < ref.logits.rows; ++r) {
    const std::vector<double> ref_lp = ref.log_probs(r);
    for (int c = 0; c < ref.logits.cols; ++c) {
      out.logits.at(r, c) = -scale * energy.values.at(r, c) + ref_lp[c];
    }
  }
  return out;
}

double objective_value(const TabularPolicy& pi, const EnergyTable& energy,
                       const TabularPolicy& ref,
                       const AlignmentParams& params) {
  pi.validate();
  ref.validate();
  check_same_shape(pi, ref, "objective_value");
  check_energy_shape(energy, ref, "objective_value");
  const double inv_beta = 1.0 / params.beta;
  double total = 0.0;
  for (int r = 0; r < pi.logits.rows; ++r) {
    const std::vector<double> p = pi.probs(r);
    const std::vector<double> lp = pi.log_probs(r);
    const std::vector<double> ref_lp = ref.log_probs(r);
    double j = 0.0;
    for (int c = 0; c < pi.logits.cols; ++c) {
      j += p[c] * (energy.values.at(r, c) +
                   inv_beta * ((1.0 + params.gamma) * lp[c] -
                               params.gamma * ref_lp[c]));
    }
    total += j;
  }
  return total / pi.logits.rows;
}

// ===== expected pairwise loss and fitting ====================================

namespace {

// Precomputed per-prompt pair structure: target logits and reference weights
// for unordered pairs (y < y'); ordered enumeration is recovered by doubling.
struct PairTable {
  int n = 0;                      // outcomes
  std::vector<double> u_star;     // target logit of (y > y'), y < y'
  std::vector<double> ls_star;    // log sigmoid(u_star)
  std::vector<double> ls_star_c;  // log sigmoid(-u_star)
  std::vector<double> p_star;     // sigmoid(u_star)
  std::vector<double> w;          // pi_ref(y) pi_ref(y')

  static std::size_t idx(int n, int y, int yp) {
    // index of (y, y') with y < y' in row-major upper-triangular packing
    return static_cast<std::size_t>(y) * n - static_cast<std::size_t>(y) * (y + 1) / 2 +
           (yp - y - 1);
  }
};

PairTable build_pair_table(const EnergyTable& energy, const TabularPolicy& ref,
                           const AlignmentParams& params, int prompt) {
  PairTable t;
  t.n = ref.logits.cols;
  const std::size_t m = static_cast<std::size_t>(t.n) * (t.n - 1) / 2;
  t.u_star.resize(m);
  t.ls_star.resize(m);
  t.ls_star_c.resize(m);
  t.p_star.resize(m);
  t.w.resize(m);
  const std::vector<double> ref_lp = ref.log_probs(prompt);
  const std::vector<double> ref_p = ref.probs(prompt);
  const double bp = params.beta_prime();
  const double gp = params.gamma_prime();
  std::size_t k = 0;
  for (int y = 0; y < t.n; ++y) {
    for (int yp = y + 1; yp < t.n; ++yp, ++k) {
      const double u = bp * (energy.values.at(prompt, yp) -
                             energy.values.at(prompt, y)) +
                       gp * (ref_lp[y] - ref_lp[yp]);
      t.u_star[k] = u;
      t.ls_star[k] = log_sigmoid(u);
      t.ls_star_c[k] = log_sigmoid(-u);
      t.p_star[k] = std::exp(t.ls_star[k]);
      t.w[k] = ref_p[y] * ref_p[yp];
    }
  }
  return t;
}

}  // namespace

double expected_era_loss(const Mat& logits, const EnergyTable& energy,
                         const TabularPolicy& ref,
                         const AlignmentParams& params) {
  require(logits.rows == ref.logits.rows && logits.cols == ref.logits.cols,
          "expected_era_loss: logit shape mismatch");
  double total = 0.0;
  for (int r = 0; r < logits.rows; ++r) {
    const PairTable t = build_pair_table(energy, ref, params, r);
    std::size_t k = 0;
    double acc = 0.0;
    for (int y = 0; y < t.n; ++y) {
      for (int yp = y + 1; yp < t.n; ++yp, ++k) {
        const double d = logits.at(r, y) - logits.at(r, yp);
        const double ls = log_sigmoid(d);
        const double ls_c = log_sigmoid(-d);
        const double kl = t.p_star[k] * (t.ls_star[k] - ls) +
                          (1.0 - t.p_star[k]) * (t.ls_star_c[k] - ls_c);
        acc += t.w[k] * (kl > 0.0 ? kl : 0.0);
      }
    }
    total += 2.0 * acc;  // ordered pairs double the unordered enumeration
  }
  return total / logits.rows;
}

Mat expected_era_loss_grad(const Mat& logits, const EnergyTable& energy,
                           const TabularPolicy& ref,
                           const AlignmentParams& params) {
  require(logits.rows == ref.logits.rows && logits.cols == ref.logits.cols,
          "expected_era_loss_grad: logit shape mismatch");
  Mat grad(logits.rows, logits.cols);
  for (int r = 0; r < logits.rows; ++r) {
    const PairTable t = build_pair_table(energy, ref, params, r);
    std::size_t k = 0;
    for (int y = 0; y < t.n; ++y) {
      for (int yp = y + 1; yp < t.n; ++yp, ++k) {
        const double d = logits.at(r, y) - logits.at(r, yp);
        const double p = sigmoid(d);
        // d/dd of KL(p*||sigmoid(d)) is p - p*; ordered pairs double it.
        const double g = 2.0 * t.w[k] * (p - t.p_star[k]) / logits.rows;
        grad.at(r, y) += g;
        grad.at(r, yp) -= g;
      }
    }
  }
  return grad;
}

FitResult fit_era_tabular(const EnergyTable& energy, const TabularPolicy& ref,
                          const AlignmentParams& params, const FitOptions& opts,
                          const Mat* init) {
  ref.validate();
  energy.validate();
  check_energy_shape(energy, ref, "fit_era_tabular");
  require(ref.logits.cols <= opts.max_outcomes,
          "fit_era_tabular: outcome set too large for pair enumeration");

  const TabularPolicy target = exact_gibbs(energy, ref, params);
  const int P = ref.logits.rows;
  const int Y = ref.logits.cols;

  FitResult res;
  res.policy = ref;
  res.policy.logits = init != nullptr ? *init : ref.logits;
  require(res.policy.logits.rows == P && res.policy.logits.cols == Y,
          "fit_era_tabular: init logit shape mismatch");

  std::vector<PairTable> tables;
  tables.reserve(P);
  for (int r = 0; r < P; ++r) {
    tables.push_back(build_pair_table(energy, ref, params, r));
  }

  Mat& z = res.policy.logits;
  Mat grad(P, Y);
  Mat curv(P, Y);
  const bool diag = opts.optimizer == TabularOptimizer::kDiagNewton;

  res.tv_distance = tv_distance(res.policy, target);
  if (res.tv_distance <= opts.tv_tolerance) {
    res.converged = true;
    res.final_loss = expected_era_loss(z, energy, ref, params);
    return res;
  }

  for (long step = 1; step <= opts.max_steps; ++step) {
    std::fill(grad.d.begin(), grad.d.end(), 0.0);
    if (diag) std::fill(curv.d.begin(), curv.d.end(), 0.0);
    for (int r = 0; r < P; ++r) {
      const PairTable& t = tables[r];
      std::size_t k = 0;
      for (int y = 0; y < Y; ++y) {
        for (int yp = y + 1; yp < Y; ++yp, ++k) {
          const double d = z.at(r, y) - z.at(r, yp);
          const double p = sigmoid(d);
          const double g = 2.0 * t.w[k] * (p - t.p_star[k]);
          grad.at(r, y) += g;
          grad.at(r, yp) -= g;
          if (diag) {
            const double h = 2.0 * t.w[k] * p * (1.0 - p);
            curv.at(r, y) += h;
            curv.at(r, yp) += h;
          }
        }
      }
    }
    if (diag) {
      for (std::size_t i = 0; i < z.d.size(); ++i) {
        // Damped Jacobi-Newton step with a per-coordinate trust region: the
        // clamp keeps saturated pairs (vanishing curvature, finite gradient)
        // from producing runaway steps.
        const double delta = opts.step * grad.d[i] / (curv.d[i] + 1e-12);
        z.d[i] -= std::clamp(delta, -opts.max_coord_step, opts.max_coord_step);
      }
    } else {
      for (std::size_t i = 0; i < z.d.size(); ++i) {
        z.d[i] -= opts.step * grad.d[i];
      }
    }
    res.steps = step;
    if (step % opts.check_every == 0 || step == opts.max_steps) {
      res.tv_distance = tv_distance(res.policy, target);
      if (res.tv_distance <= opts.tv_tolerance) {
        res.converged = true;
        break;
      }
    }
  }
  res.tv_distance = tv_distance(res.policy, target);
  res.converged = res.tv_distance <= opts.tv_tolerance;
  res.final_loss = expected_era_loss(z, energy, ref, params);
  return res;
}

FitResult fit_dpo_tabular(const std::vector<PairObservation>& pairs,
                          const TabularPolicy& ref, double dpo_beta,
                          const FitOptions& opts) {
  ref.validate();
  require(dpo_beta > 0.0, "fit_dpo_tabular: dpo_beta must be > 0");
  const int P = ref.logits.rows;
  const int Y = ref.logits.cols;
  for (const PairObservation& p : pairs) {
    require(p.prompt >= 0 && p.prompt < P, "fit_dpo_tabular: bad prompt index");
    require(p.winner >= 0 && p.winner < Y && p.loser >= 0 && p.loser < Y &&
                p.winner != p.loser,
            "fit_dpo_tabular: bad outcome indices");
  }

  FitResult res;
  res.policy = ref;
  if (pairs.empty()) {
    res.converged = true;
    res.tv_distance = 0.0;
    return res;
  }

  // Reference log-prob margins are constant through training.
  std::vector<std::vector<double>> ref_lp(P);
  for (int r = 0; r < P; ++r) ref_lp[r] = ref.log_probs(r);

  Mat& z = res.policy.logits;
  Mat grad(P, Y);
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  bool finite_run = true;
  for (long step = 1; step <= opts.max_steps; ++step) {
    std::fill(grad.d.begin(), grad.d.end(), 0.0);
    for (const PairObservation& p : pairs) {
      const double h = (z.at(p.prompt, p.winner) - z.at(p.prompt, p.loser)) -
                       (ref_lp[p.prompt][p.winner] - ref_lp[p.prompt][p.loser]);
      const double s = sigmoid(-dpo_beta * h);  // -dL/dh scale
      grad.at(p.prompt, p.winner) -= dpo_beta * s * inv_n;
      grad.at(p.prompt, p.loser) += dpo_beta * s * inv_n;
    }
    for (std::size_t i = 0; i < z.d.size(); ++i) {
      z.d[i] -= opts.step * grad.d[i];
      if (!std::isfinite(z.d[i])) finite_run = false;
    }
    res.steps = step;
    if (!finite_run) break;
  }
  res.converged = finite_run;
  res.tv_distance = tv_distance(res.policy, ref);  // drift from the reference
  double loss = 0.0;
  for (const PairObservation& p : pairs) {
    const double h = (z.at(p.prompt, p.winner) - z.at(p.prompt, p.loser)) -
                     (ref_lp[p.prompt][p.winner] - ref_lp[p.prompt][p.loser]);
    loss += -log_sigmoid(dpo_beta * h) * inv_n;
  }
  res.final_loss = loss;
  return res;
}

// ===== verification instances ================================================

Instance random_instance(std::uint64_t seed, int max_prompts,
                         int max_outcomes) {
  RandomSource rng(seed);
  const int P = 1 + static_cast<int>(rng.uniform_index(max_prompts));
  const int Y = 4 + static_cast<int>(rng.uniform_index(max_outcomes - 3));
  static const double kBetas[] = {0.5, 1.0, 5.0};
  static const double kGammas[] = {0.0, 0.1, 1.0};

  Instance inst;
  inst.params = AlignmentParams(kBetas[rng.uniform_index(3)],
                                kGammas[rng.uniform_index(3)]);
  inst.ref.logits = Mat(P, Y);
  inst.energy.values = Mat(P, Y);
  for (int r = 0; r < P; ++r) {
    inst.ref.prompts.push_back("x" + std::to_string(r));
    for (int c = 0; c < Y; ++c) {
      inst.ref.logits.at(r, c) = rng.normal();
      inst.energy.values.at(r, c) = rng.uniform(0.0, 5.0);
    }
  }
  for (int c = 0; c < Y; ++c) inst.ref.outcomes.push_back("y" + std::to_string(c));
  return inst;
}

namespace {

nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
    rows.push_back(row);
  }
  return rows;
}

Mat mat_from_json(const nlohmann::json& j) {
  require(j.is_array() && !j.empty(), "instance: matrix must be a non-empty array");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    require(static_cast<int>(j[r].size()) == cols,
            "instance: ragged matrix rows");
    for (int c = 0; c < cols; ++c) m.at(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace

std::string instance_to_json(const Instance& inst) {
  nlohmann::json j;
  j["version"] = 1;
  j["prompts"] = inst.ref.prompts;
  j["outcomes"] = inst.ref.outcomes;
  j["beta"] = inst.params.beta;
  j["gamma"] = inst.params.gamma;
  j["ref_logits"] = mat_to_json(inst.ref.logits);
  j["energy"] = mat_to_json(inst.energy.values);
  return j.dump(2);
}

Instance instance_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("instance: bad JSON: ") + e.what());
  }
  require(j.value("version", 0) == 1, "instance: unsupported version");
  Instance inst;
  inst.params = AlignmentParams(j.at("beta").get<double>(),
                                j.at("gamma").get<double>());
  inst.ref.logits = mat_from_json(j.at("ref_logits"));
  inst.energy.values = mat_from_json(j.at("energy"));
  if (j.contains("prompts")) {
    inst.ref.prompts = j["prompts"].get<std::vector<std::string>>();
  }
  if (j.contains("outcomes")) {
    inst.ref.outcomes = j["outcomes"].get<std::vector<std::string>>();
  }
  require(inst.energy.values.rows == inst.ref.logits.rows &&
              inst.energy.values.cols == inst.ref.logits.cols,
          "instance: energy and ref_logits shapes differ");
  inst.ref.validate();
  inst.energy.validate();
  return inst;
}

std::string fit_summary_json(const FitResult& result) {
  nlohmann::json j;
  j["tv_distance"] = result.tv_distance;
  j["steps"] = result.steps;
  j["converged"] = result.converged;
  j["final_loss"] = result.final_loss;
  return j.dump();
}

// ===== RowPolicy =============================================================

double RowPolicy::sequence_logprob(const TokenSeq& /*prompt*/,
                                   const TokenSeq& completion) const {
  require(completion.size() == 1,
          "RowPolicy: completions are single outcome indices");
  const int y = completion[0];
  require(y >= 0 && y < policy_.n_outcomes(), "RowPolicy: outcome out of range");
  return policy_.log_probs(prompt_)[y];
}

TokenSeq RowPolicy::sample(const TokenSeq& /*prompt*/, std::uint64_t seed,
                           double temperature) const {
  const std::vector<double> lp = policy_.log_probs(prompt_);
  if (temperature <= 0.0) {
    int best = 0;
    for (int c = 1; c < policy_.n_outcomes(); ++c) {
      if (lp[c] > lp[best]) best = c;
    }
    return {best};
  }
  Mat scaled(1, policy_.n_outcomes());
  for (int c = 0; c < policy_.n_outcomes(); ++c) {
    scaled.at(0, c) = lp[c] / temperature;
  }
  RandomSource rng(seed);
  const std::vector<double> p = softmax(scaled, 0);
  return {static_cast<int>(rng.categorical(p))};
}

}  // namespace era::tabular
