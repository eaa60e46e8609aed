#include "era/pipeline/dataset.hpp"

#include <fstream>
#include <optional>
#include <stdexcept>

#include <json.hpp>

#include "era/random.hpp"

namespace era::pipeline {

void PromptSet::validate(const nn::ModelConfig& config) const {
  if (prompts.empty()) {
    throw std::invalid_argument("prompts: need at least one prompt");
  }
  for (const TokenSeq& p : prompts) {
    if (p.empty() || p.front() != nn::Vocabulary::kStart) {
      throw std::invalid_argument("prompts: must begin with the start token");
    }
    if (static_cast<int>(p.size()) >= config.max_len) {
      throw std::invalid_argument(
          "prompts: prompt leaves no room for a completion");
    }
    for (int id : p) {
      if (id < 0 || id >= config.vocab) {
        throw std::invalid_argument("prompts: token id outside vocabulary");
      }
    }
  }
}

PromptSet start_prompt() {
  return PromptSet{{TokenSeq{nn::Vocabulary::kStart}}};
}

PromptSet prompts_from_smiles(const nn::Vocabulary& vocab,
                              const std::vector<std::string>& molecules) {
  PromptSet set;
  for (const std::string& mol : molecules) {
    TokenSeq row;
    row.push_back(nn::Vocabulary::kStart);
    const TokenSeq ids = vocab.encode(chem::tokenize_smiles(mol));
    row.insert(row.end(), ids.begin(), ids.end());
    row.push_back(nn::Vocabulary::kSep);
    set.prompts.push_back(std::move(row));
  }
  return set;
}

std::string decode_molecule(const nn::Vocabulary& vocab, const TokenSeq& ids) {
  std::size_t begin = 0;
  std::size_t end = ids.size();
  bool framed = false;
  if (begin < end && ids[begin] == nn::Vocabulary::kStart) {
    ++begin;
    framed = true;
  }
  if (begin < end && ids[end - 1] == nn::Vocabulary::kStop) --end;
  // Only a framed row (a prompt) may shed a trailing separator; a bare
  // completion that ends in one stays malformed on purpose.
  if (framed && begin < end && ids[end - 1] == nn::Vocabulary::kSep) --end;
  return vocab.decode_to_string(TokenSeq(ids.begin() + begin,
                                         ids.begin() + end));
}

std::vector<PreferenceRecord> generate_preference_dataset(
    const nn::ParamStore& ref, const nn::Vocabulary& vocab,
    const PromptSet& prompts, const chem::EnergySpec& spec,
    const DatasetParams& params, const chem::EnergyContext& ctx) {
  if (params.k < 2) {
    throw std::invalid_argument("dataset: need at least two samples a prompt");
  }
  if (vocab.size() != ref.config.vocab) {
    throw std::invalid_argument("dataset: vocabulary does not match policy");
  }
  prompts.validate(ref.config);
  chem::validate_energy_spec(spec);

  struct Sample {
    TokenSeq completion;
    double logp = 0.0;
    double energy = 0.0;
  };

  RandomSource seeder(params.seed);
  std::vector<PreferenceRecord> records;
  for (const TokenSeq& prompt : prompts.prompts) {
    std::optional<std::string> prompt_str;
    if (spec.kind == chem::EnergyKind::kPrompted) {
      prompt_str = decode_molecule(vocab, prompt);
    }
    std::vector<Sample> samples;
    for (int i = 0; i < params.k; ++i) {
      Sample s;
      const TokenSeq full = nn::sample_sequence(ref, prompt, seeder.next_u64(),
                                                params.temperature);
      s.completion.assign(full.begin() + prompt.size(), full.end());
      s.logp = nn::sequence_logprob(ref, prompt, s.completion);
      s.energy = chem::evaluate_energy(
          spec, decode_molecule(vocab, s.completion), prompt_str, ctx);
      samples.push_back(std::move(s));
    }
    for (int i = 0; i < params.k; ++i) {
      for (int j = i + 1; j < params.k; ++j) {
        PreferenceRecord rec;
        rec.prompt = prompt;
        rec.completion_a = samples[i].completion;
        rec.completion_b = samples[j].completion;
        rec.energy_a = samples[i].energy;
        rec.energy_b = samples[j].energy;
        rec.ref_logp_a = samples[i].logp;
        rec.ref_logp_b = samples[j].logp;
        rec.validate();
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

void write_preference_dataset(const std::string& path,
                              const std::vector<PreferenceRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("dataset: cannot open " + path + " for writing");
  }
  for (const PreferenceRecord& rec : records) {
    nlohmann::json j{{"prompt", rec.prompt},
                     {"a", rec.completion_a},
                     {"b", rec.completion_b},
                     {"u_a", rec.energy_a},
                     {"u_b", rec.energy_b},
                     {"ref_logp_a", rec.ref_logp_a},
                     {"ref_logp_b", rec.ref_logp_b}};
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("dataset: write to " + path + " failed");
}

std::vector<PreferenceRecord> read_preference_dataset(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset: cannot open " + path);
  std::vector<PreferenceRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      PreferenceRecord rec;
      rec.prompt = j.at("prompt").get<TokenSeq>();
      rec.completion_a = j.at("a").get<TokenSeq>();
      rec.completion_b = j.at("b").get<TokenSeq>();
      rec.energy_a = j.at("u_a").get<double>();
      rec.energy_b = j.at("u_b").get<double>();
      rec.ref_logp_a = j.at("ref_logp_a").get<double>();
      rec.ref_logp_b = j.at("ref_logp_b").get<double>();
      rec.validate();
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("dataset: " + path + " line " +
                               std::to_string(lineno) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("dataset: " + path + " line " +
                               std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace era::pipeline
