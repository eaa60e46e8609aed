#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "era/alignment.hpp"
#include "era/chem/energy.hpp"
#include "era/nn/model.hpp"

// Offline preference-dataset generation: sample completions from a frozen
// reference policy, attach energies and reference log-probabilities, and emit
// every unordered pair.  Records are stored as JSON lines, one per record,
// with doubles serialized losslessly so regeneration is byte-identical.

namespace era::pipeline {

// Prompts as token rows, each beginning with the start id.  Unprompted
// generation uses the singleton start-token prompt; prompted generation
// frames a molecule as {start, molecule tokens..., sep}.
struct PromptSet {
  std::vector<TokenSeq> prompts;

  // Throws std::invalid_argument if empty, or if any prompt is empty, does
  // not begin with the start id, or holds an id outside the vocabulary.
  void validate(const nn::ModelConfig& config) const;
};

PromptSet start_prompt();
PromptSet prompts_from_smiles(const nn::Vocabulary& vocab,
                              const std::vector<std::string>& molecules);

// Decodes a sampled row for property evaluation: drops a leading start id,
// one trailing stop id, and a trailing sep id; every other reserved id
// decodes to its bracketed name (never a valid molecule).
std::string decode_molecule(const nn::Vocabulary& vocab, const TokenSeq& ids);

struct DatasetParams {
  int k = 4;                   // completions per prompt; k >= 2
  std::uint64_t seed = 0;      // drives every sampling draw
  double temperature = 1.0;
};

// Samples k completions per prompt from the frozen policy, scores each with
// the (total) energy function and its exact reference log-probability, and
// returns |prompts| * k(k-1)/2 records in deterministic order.
// Throws std::invalid_argument for k < 2 or a vocabulary/config mismatch.
std::vector<PreferenceRecord> generate_preference_dataset(
    const nn::ParamStore& ref, const nn::Vocabulary& vocab,
    const PromptSet& prompts, const chem::EnergySpec& spec,
    const DatasetParams& params, const chem::EnergyContext& ctx = {});

// JSON-lines persistence.  write throws std::runtime_error on I/O failure;
// read throws std::runtime_error on malformed lines and validates records.
void write_preference_dataset(const std::string& path,
                              const std::vector<PreferenceRecord>& records);
std::vector<PreferenceRecord> read_preference_dataset(const std::string& path);

}  // namespace era::pipeline
