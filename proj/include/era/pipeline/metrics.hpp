#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "era/chem/properties.hpp"
#include "era/nn/model.hpp"
#include "era/pipeline/dataset.hpp"

// Sampling-based evaluation of a policy: validity, uniqueness, per-property
// histograms and moments, pairwise-similarity diversity, and per-prompt
// summaries for prompted runs.  Deterministic for (parameters, config).

namespace era::pipeline {

// Fixed-range histogram; out-of-range values are clamped into the edge bins
// so the mass always equals the number of scored molecules.
struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::int64_t> counts;  // 30 uniform bins by default

  void add(double value);
  std::int64_t total() const;
};

// The documented fixed range for a named property (ring_count [0,10],
// logp [-10,20], mr [0,200], qed [0,1], tanimoto [0,1]); anything unknown
// falls back to [0,100].
Histogram make_histogram(const std::string& property, int bins = 30);

struct MetricsConfig {
  int samples_per_prompt = 100;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  // Scored per valid molecule; the first entry is the primary property used
  // in per-prompt summaries.
  std::vector<std::string> properties = {"ring_count", "logp"};
};

struct PromptMetrics {
  std::string prompt;          // decoded prompt molecule ("" when unprompted)
  int samples = 0;
  int valid = 0;
  // Mean of the primary property over this prompt's valid samples (0 when
  // none were valid; see `valid`).
  double mean_primary = 0.0;
  // Fraction of samples that decode to exactly the prompt molecule.
  double identical_fraction = 0.0;
};

struct MetricsReport {
  int n_samples = 0;  // total across prompts
  double validity_fraction = 0.0;
  // Unique decoded strings among valid samples / valid samples (1 when no
  // sample was valid).
  double uniqueness_fraction = 1.0;
  double mean_pairwise_tanimoto = 0.0;  // over valid samples (capped subset)
  std::map<std::string, Histogram> histograms;      // property -> histogram
  std::map<std::string, double> means;              // over scored molecules
  std::map<std::string, double> stddevs;            // population std
  std::map<std::string, std::int64_t> scored;       // molecules per property
  Histogram diversity = make_histogram("tanimoto");  // pairwise similarities
  std::vector<PromptMetrics> per_prompt;
};

// Samples config.samples_per_prompt completions per prompt and scores them.
// Property evaluation uses the builtin contribution table unless `crippen`
// is given; properties that are neither native nor resolvable through
// `external` are skipped per molecule (see `scored`).
MetricsReport emit_metrics(const nn::ParamStore& store,
                           const nn::Vocabulary& vocab,
                           const PromptSet& prompts,
                           const MetricsConfig& config,
                           const chem::CrippenTable* crippen = nullptr,
                           const chem::PropertyTable* external = nullptr);

// Stable JSON rendering (sorted keys, lossless doubles): equal reports render
// to equal bytes.
std::string metrics_to_json(const MetricsReport& report);
void write_metrics(const std::string& path, const MetricsReport& report);

}  // namespace era::pipeline
