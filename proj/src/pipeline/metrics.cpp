#include "era/pipeline/metrics.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "era/chem/smiles.hpp"
#include "era/random.hpp"

namespace era::pipeline {

void Histogram::add(double value) {
  if (counts.empty()) {
    throw std::logic_error("histogram: no bins");
  }
  const double clamped = std::min(std::max(value, lo), hi);
  const double span = hi - lo;
  auto bin = static_cast<std::int64_t>((clamped - lo) / span *
                                       static_cast<double>(counts.size()));
  if (bin < 0) bin = 0;
  if (bin >= static_cast<std::int64_t>(counts.size())) {
    bin = static_cast<std::int64_t>(counts.size()) - 1;
  }
  ++counts[static_cast<std::size_t>(bin)];
}

std::int64_t Histogram::total() const {
  std::int64_t sum = 0;
  for (std::int64_t c : counts) sum += c;
  return sum;
}

Histogram make_histogram(const std::string& property, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram: need at least 1 bin");
  Histogram h;
  if (property == "ring_count") {
    h.lo = 0.0;
    h.hi = 10.0;
  } else if (property == "logp") {
    h.lo = -10.0;
    h.hi = 20.0;
  } else if (property == "mr") {
    h.lo = 0.0;
    h.hi = 200.0;
  } else if (property == "qed" || property == "tanimoto") {
    h.lo = 0.0;
    h.hi = 1.0;
  } else {
    h.lo = 0.0;
    h.hi = 100.0;
  }
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  return h;
}

MetricsReport emit_metrics(const nn::ParamStore& store,
                           const nn::Vocabulary& vocab,
                           const PromptSet& prompts,
                           const MetricsConfig& config,
                           const chem::CrippenTable* crippen,
                           const chem::PropertyTable* external) {
  if (config.samples_per_prompt < 1) {
    throw std::invalid_argument("metrics: need at least one sample a prompt");
  }
  if (config.properties.empty()) {
    throw std::invalid_argument("metrics: need at least one property");
  }
  if (vocab.size() != store.config.vocab) {
    throw std::invalid_argument("metrics: vocabulary does not match policy");
  }
  prompts.validate(store.config);

  const chem::CrippenTable& table =
      crippen ? *crippen : chem::CrippenTable::builtin();
  const std::string& primary = config.properties.front();

  MetricsReport report;
  std::map<std::string, double> sums;
  std::map<std::string, double> sq_sums;
  for (const std::string& p : config.properties) {
    report.histograms.emplace(p, make_histogram(p));
    report.scored[p] = 0;
    sums[p] = 0.0;
    sq_sums[p] = 0.0;
  }

  // Pairwise diversity is quadratic; cap the fingerprint pool so metric runs
  // stay fast at large sample counts.
  constexpr std::size_t kDiversityCap = 400;
  std::vector<chem::Fingerprint> pool;
  std::set<std::string> unique_valid;
  int total = 0;
  int total_valid = 0;

  RandomSource seeder(config.seed);
  for (const TokenSeq& prompt : prompts.prompts) {
    PromptMetrics pm;
    pm.prompt = decode_molecule(vocab, prompt);
    double primary_sum = 0.0;
    std::int64_t primary_scored = 0;
    int identical = 0;

    for (int s = 0; s < config.samples_per_prompt; ++s) {
      const TokenSeq full = nn::sample_sequence(store, prompt,
                                                seeder.next_u64(),
                                                config.temperature);
      const TokenSeq completion(full.begin() + prompt.size(), full.end());
      const std::string text = decode_molecule(vocab, completion);
      ++total;
      ++pm.samples;
      if (text == pm.prompt) ++identical;

      const chem::ParseResult parsed = chem::parse_smiles(text);
      if (!parsed.valid) continue;
      ++total_valid;
      ++pm.valid;
      unique_valid.insert(text);
      if (pool.size() < kDiversityCap) {
        pool.push_back(chem::fingerprint(parsed.mol));
      }
      for (const std::string& p : config.properties) {
        double value = 0.0;
        try {
          value = chem::property_value(parsed.mol, text, p, table, external);
        } catch (const chem::PropertyError&) {
          continue;  // tracked through `scored`
        }
        report.histograms.at(p).add(value);
        sums[p] += value;
        sq_sums[p] += value * value;
        ++report.scored[p];
        if (p == primary) {
          primary_sum += value;
          ++primary_scored;
        }
      }
    }

    pm.mean_primary = primary_scored > 0
                          ? primary_sum / static_cast<double>(primary_scored)
                          : 0.0;
    pm.identical_fraction =
        static_cast<double>(identical) / static_cast<double>(pm.samples);
    report.per_prompt.push_back(std::move(pm));
  }

  report.n_samples = total;
  report.validity_fraction =
      total > 0 ? static_cast<double>(total_valid) / total : 0.0;
  report.uniqueness_fraction =
      total_valid > 0
          ? static_cast<double>(unique_valid.size()) / total_valid
          : 1.0;

  double tanimoto_sum = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      const double t = chem::tanimoto(pool[i], pool[j]);
      report.diversity.add(t);
      tanimoto_sum += t;
      ++pairs;
    }
  }
  report.mean_pairwise_tanimoto =
      pairs > 0 ? tanimoto_sum / static_cast<double>(pairs) : 0.0;

  for (const std::string& p : config.properties) {
    const std::int64_t n = report.scored.at(p);
    if (n == 0) {
      report.means[p] = 0.0;
      report.stddevs[p] = 0.0;
      continue;
    }
    const double mean = sums[p] / static_cast<double>(n);
    const double var =
        std::max(0.0, sq_sums[p] / static_cast<double>(n) - mean * mean);
    report.means[p] = mean;
    report.stddevs[p] = std::sqrt(var);
  }
  return report;
}

namespace {

nlohmann::json histogram_json(const Histogram& h) {
  return nlohmann::json{{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}};
}

}  // namespace

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["n_samples"] = report.n_samples;
  j["validity_fraction"] = report.validity_fraction;
  j["uniqueness_fraction"] = report.uniqueness_fraction;
  j["mean_pairwise_tanimoto"] = report.mean_pairwise_tanimoto;
  j["diversity"] = histogram_json(report.diversity);
  nlohmann::json hists = nlohmann::json::object();
  for (const auto& [name, h] : report.histograms) {
    hists[name] = histogram_json(h);
  }
  j["histograms"] = hists;
  j["means"] = report.means;
  j["stddevs"] = report.stddevs;
  j["scored"] = report.scored;
  nlohmann::json per = nlohmann::json::array();
  for (const PromptMetrics& pm : report.per_prompt) {
    per.push_back(nlohmann::json{{"prompt", pm.prompt},
                                 {"samples", pm.samples},
                                 {"valid", pm.valid},
                                 {"mean_primary", pm.mean_primary},
                                 {"identical_fraction", pm.identical_fraction}});
  }
  j["per_prompt"] = per;
  return j.dump();
}

void write_metrics(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("metrics: cannot open " + path + " for writing");
  }
  out << metrics_to_json(report) << "\n";
  if (!out) throw std::runtime_error("metrics: write to " + path + " failed");
}

}  // namespace era::pipeline
