#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "era/alignment.hpp"
#include "era/chem/energy.hpp"
#include "era/chem/properties.hpp"
#include "era/chem/smiles.hpp"
#include "era/nn/checkpoint.hpp"
#include "era/nn/model.hpp"
#include "era/nn/train.hpp"
#include "era/pipeline/align_run.hpp"
#include "era/pipeline/corpus.hpp"
#include "era/pipeline/dataset.hpp"
#include "era/pipeline/metrics.hpp"
#include "era/random.hpp"

using namespace era;
using namespace era::pipeline;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_params(const nn::ParamStore& x, const nn::ParamStore& y) {
  if (x.params.size() != y.params.size()) return false;
  for (std::size_t i = 0; i < x.params.size(); ++i)
    if (x.params[i].d != y.params[i].d) return false;
  return true;
}

// A one-token-alphabet policy over alkane strings, small enough that every
// pipeline stage runs in milliseconds.
struct Setup {
  nn::Vocabulary vocab;
  nn::ParamStore store;
};

Setup alkane_setup(std::uint64_t seed = 11) {
  const auto corpus = generate_corpus(CorpusFamily::kAlkanes, 4, 0);
  nn::Vocabulary vocab = build_vocabulary(corpus);
  nn::ModelConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.width = 8;
  cfg.max_len = 10;
  cfg.ffn_mult = 2;
  cfg.vocab = vocab.size();
  return Setup{vocab, nn::ParamStore::init(cfg, seed)};
}

std::string records_digest(const std::vector<PreferenceRecord>& records) {
  const std::string path = temp_path("era_records_digest.jsonl");
  write_preference_dataset(path, records);
  return slurp(path);
}

}  // namespace

// ===== corpus ================================================================

TEST_CASE("corpus family names round trip") {
  for (CorpusFamily f : {CorpusFamily::kAlkanes, CorpusFamily::kAlcohols,
                         CorpusFamily::kRings, CorpusFamily::kMixed}) {
    CHECK(corpus_family_from_name(corpus_family_name(f)) == f);
  }
  CHECK_THROWS_AS(corpus_family_from_name("peptides"), std::invalid_argument);
  CHECK_THROWS_AS(corpus_family_from_name(""), std::invalid_argument);
}

TEST_CASE("alkane corpus starts with the simplest members") {
  const auto c = generate_corpus(CorpusFamily::kAlkanes, 3, 42);
  REQUIRE(c.size() == 3);
  CHECK(c[0] == "C");
  CHECK(c[1] == "CC");
  CHECK(c[2] == "CCC");
  CHECK_THROWS_AS(generate_corpus(CorpusFamily::kAlkanes, 0, 42),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_corpus(CorpusFamily::kMixed, -3, 42),
                  std::invalid_argument);
}

TEST_CASE("every corpus family emits valid unique molecules") {
  for (CorpusFamily f : {CorpusFamily::kAlkanes, CorpusFamily::kAlcohols,
                         CorpusFamily::kRings, CorpusFamily::kMixed}) {
    const auto c = generate_corpus(f, 60, 7);
    REQUIRE(c.size() == 60);
    std::set<std::string> unique(c.begin(), c.end());
    CHECK(unique.size() == c.size());
    for (const std::string& s : c) {
      const auto parsed = chem::parse_smiles(s);
      REQUIRE_MESSAGE(parsed.valid, s << ": " << parsed.reason);
      if (f == CorpusFamily::kRings) {
        CHECK(chem::ring_count(parsed.mol) >= 1);
      }
      if (f == CorpusFamily::kAlcohols) {
        CHECK(s.find('O') != std::string::npos);
      }
    }
  }
}

TEST_CASE("mixed corpus interleaves all three families") {
  const auto c = generate_corpus(CorpusFamily::kMixed, 30, 5);
  int rings = 0;
  int alcohols = 0;
  int alkanes = 0;
  for (const std::string& s : c) {
    const auto parsed = chem::parse_smiles(s);
    REQUIRE(parsed.valid);
    if (chem::ring_count(parsed.mol) > 0) {
      ++rings;
    } else if (s.find('O') != std::string::npos) {
      ++alcohols;
    } else {
      ++alkanes;
    }
  }
  CHECK(rings == 10);
  CHECK(alcohols == 10);
  CHECK(alkanes == 10);
}

TEST_CASE("corpus generation is deterministic in the seed") {
  for (CorpusFamily f : {CorpusFamily::kAlkanes, CorpusFamily::kRings,
                         CorpusFamily::kMixed}) {
    CHECK(generate_corpus(f, 40, 9) == generate_corpus(f, 40, 9));
  }
  // Branched sampling kicks in past the linear prefix, so seeds matter.
  CHECK(generate_corpus(CorpusFamily::kAlkanes, 40, 1) !=
        generate_corpus(CorpusFamily::kAlkanes, 40, 2));
}

TEST_CASE("corpus token alphabet covers every generator") {
  const auto& alphabet = corpus_token_alphabet();
  CHECK(std::is_sorted(alphabet.begin(), alphabet.end()));
  const std::set<std::string> allowed(alphabet.begin(), alphabet.end());
  for (CorpusFamily f : {CorpusFamily::kAlkanes, CorpusFamily::kAlcohols,
                         CorpusFamily::kRings}) {
    for (const std::string& s : generate_corpus(f, 80, 13)) {
      for (const std::string& tok : chem::tokenize_smiles(s)) {
        CHECK_MESSAGE(allowed.count(tok) == 1, s << " token " << tok);
      }
    }
  }
}

TEST_CASE("build_vocabulary prepends reserved tokens and sorts the rest") {
  const nn::Vocabulary v = build_vocabulary({"CCO", "C1CC1", "CCO"});
  REQUIRE(v.size() == 7);
  CHECK(v.token(0) == "<pad>");
  CHECK(v.token(1) == "<start>");
  CHECK(v.token(2) == "<stop>");
  CHECK(v.token(3) == "<sep>");
  CHECK(v.token(4) == "1");
  CHECK(v.token(5) == "C");
  CHECK(v.token(6) == "O");
  CHECK_THROWS_AS(build_vocabulary({"C[C"}), chem::TokenizeError);
}

TEST_CASE("prompted rows frame molecule and valid variant") {
  const std::vector<std::string> mols = {"CCC", "CCO"};
  const nn::Vocabulary vocab = build_vocabulary(mols);
  const auto rows = prompted_rows(vocab, mols, 3, 21);
  REQUIRE(rows.size() == 6);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const TokenSeq& row = rows[r];
    const std::string mol = mols[r / 3];
    const TokenSeq mol_ids = vocab.encode(chem::tokenize_smiles(mol));
    REQUIRE(row.size() == 2 * mol_ids.size() + 3);
    CHECK(row.front() == nn::Vocabulary::kStart);
    CHECK(row.back() == nn::Vocabulary::kStop);
    CHECK(row[1 + mol_ids.size()] == nn::Vocabulary::kSep);
    CHECK(TokenSeq(row.begin() + 1, row.begin() + 1 + mol_ids.size()) ==
          mol_ids);
    const TokenSeq variant(row.begin() + 2 + mol_ids.size(), row.end() - 1);
    std::string text;
    for (int id : variant) text += vocab.token(id);
    CHECK_MESSAGE(chem::parse_smiles(text).valid, text);
  }
  CHECK(rows == prompted_rows(vocab, mols, 3, 21));
  CHECK(rows != prompted_rows(vocab, mols, 3, 22));
  CHECK_THROWS_AS(prompted_rows(vocab, mols, 0, 21), std::invalid_argument);
}

// ===== prompts and decoding ==================================================

TEST_CASE("prompt sets frame molecules and validate") {
  const Setup s = alkane_setup();
  const PromptSet unprompted = start_prompt();
  REQUIRE(unprompted.prompts.size() == 1);
  CHECK(unprompted.prompts[0] == TokenSeq{nn::Vocabulary::kStart});
  CHECK_NOTHROW(unprompted.validate(s.store.config));

  const PromptSet prompted = prompts_from_smiles(s.vocab, {"C", "CC"});
  REQUIRE(prompted.prompts.size() == 2);
  const int c_id = s.vocab.id("C");
  CHECK(prompted.prompts[0] ==
        TokenSeq{nn::Vocabulary::kStart, c_id, nn::Vocabulary::kSep});
  CHECK(prompted.prompts[1] == TokenSeq{nn::Vocabulary::kStart, c_id, c_id,
                                        nn::Vocabulary::kSep});
  CHECK_NOTHROW(prompted.validate(s.store.config));

  const PromptSet empty;
  CHECK_THROWS_AS(empty.validate(s.store.config), std::invalid_argument);
  PromptSet no_start;
  no_start.prompts = {TokenSeq{c_id}};
  CHECK_THROWS_AS(no_start.validate(s.store.config), std::invalid_argument);
  PromptSet bad_id;
  bad_id.prompts = {TokenSeq{nn::Vocabulary::kStart, 99}};
  CHECK_THROWS_AS(bad_id.validate(s.store.config), std::invalid_argument);
  // A prompt filling max_len leaves no room to generate.
  TokenSeq full(static_cast<std::size_t>(s.store.config.max_len),
                s.vocab.id("C"));
  full[0] = nn::Vocabulary::kStart;
  PromptSet too_long;
  too_long.prompts = {full};
  CHECK_THROWS_AS(too_long.validate(s.store.config), std::invalid_argument);
}

TEST_CASE("decode_molecule strips frame tokens only") {
  const nn::Vocabulary v = build_vocabulary({"CCO"});
  const int c = v.id("C");
  const int o = v.id("O");
  const int start = nn::Vocabulary::kStart;
  const int stop = nn::Vocabulary::kStop;
  const int sep = nn::Vocabulary::kSep;

  CHECK(decode_molecule(v, {start, c, c, stop}) == "CC");
  CHECK(decode_molecule(v, {start, c, o, sep}) == "CO");
  CHECK(decode_molecule(v, {c, o, stop}) == "CO");
  CHECK(decode_molecule(v, {c, c}) == "CC");
  CHECK(decode_molecule(v, {start}) == "");
  CHECK(decode_molecule(v, {}) == "");
  // A bare completion ending in a separator is NOT a prompt frame and must
  // stay visibly malformed.
  CHECK(decode_molecule(v, {c, sep}) == "C<sep>");
  CHECK_FALSE(chem::parse_smiles(decode_molecule(v, {c, sep})).valid);
  // Interior reserved ids decode to bracketed names, never molecules.
  CHECK(decode_molecule(v, {start, c, nn::Vocabulary::kPad, c, stop}) ==
        "C<pad>C");
}

// ===== preference datasets ===================================================

TEST_CASE("preference dataset shape, scoring, and determinism") {
  const Setup s = alkane_setup();
  const PromptSet prompts = start_prompt();
  const chem::EnergySpec spec = chem::harmonic_energy("logp", 1.0, 0.5);
  DatasetParams params;
  params.k = 4;
  params.seed = 31;

  const auto records =
      generate_preference_dataset(s.store, s.vocab, prompts, spec, params);
  REQUIRE(records.size() == 6);  // k(k-1)/2 for one prompt

  for (const PreferenceRecord& rec : records) {
    CHECK_NOTHROW(rec.validate());
    CHECK(rec.prompt == prompts.prompts[0]);
    // Reference log-probabilities are the policy's own, bit for bit.
    CHECK(rec.ref_logp_a ==
          nn::sequence_logprob(s.store, rec.prompt, rec.completion_a));
    CHECK(rec.ref_logp_b ==
          nn::sequence_logprob(s.store, rec.prompt, rec.completion_b));
    // Energies are the spec evaluated on the decoded completion.
    CHECK(rec.energy_a ==
          chem::evaluate_energy(spec, decode_molecule(s.vocab,
                                                      rec.completion_a)));
    CHECK(rec.energy_b ==
          chem::evaluate_energy(spec, decode_molecule(s.vocab,
                                                      rec.completion_b)));
  }

  // The six pairs cover four distinct samples: a-completions follow the
  // (0,1) (0,2) (0,3) (1,2) (1,3) (2,3) index order.
  CHECK(records[0].completion_a == records[1].completion_a);
  CHECK(records[0].completion_b == records[3].completion_a);
  CHECK(records[5].completion_b == records[2].completion_b);

  const auto again =
      generate_preference_dataset(s.store, s.vocab, prompts, spec, params);
  CHECK(records_digest(records) == records_digest(again));

  DatasetParams other = params;
  other.seed = 32;
  const auto different =
      generate_preference_dataset(s.store, s.vocab, prompts, spec, other);
  CHECK(records_digest(records) != records_digest(different));
}

TEST_CASE("preference dataset covers multiple prompts") {
  const Setup s = alkane_setup();
  const PromptSet prompts = prompts_from_smiles(s.vocab, {"C", "CC", "CCC"});
  const chem::EnergySpec spec = chem::harmonic_energy("ring_count", 2.0, 1.0);
  DatasetParams params;
  params.k = 2;
  params.seed = 5;
  const auto records =
      generate_preference_dataset(s.store, s.vocab, prompts, spec, params);
  REQUIRE(records.size() == 3);  // one pair per prompt
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(records[i].prompt == prompts.prompts[i]);
  }
}

TEST_CASE("preference dataset rejects bad parameters") {
  const Setup s = alkane_setup();
  const chem::EnergySpec spec = chem::harmonic_energy("logp", 0.0, 1.0);
  DatasetParams params;
  params.k = 1;
  CHECK_THROWS_AS(generate_preference_dataset(s.store, s.vocab, start_prompt(),
                                              spec, params),
                  std::invalid_argument);
  params.k = 2;
  const nn::Vocabulary other = build_vocabulary({"CCO"});  // wrong size
  CHECK_THROWS_AS(generate_preference_dataset(s.store, other, start_prompt(),
                                              spec, params),
                  std::invalid_argument);
  chem::EnergySpec bad = chem::harmonic_energy("logp", 0.0, 1.0);
  bad.sigma = -1.0;
  CHECK_THROWS_AS(generate_preference_dataset(s.store, s.vocab, start_prompt(),
                                              bad, params),
                  std::invalid_argument);
}

TEST_CASE("preference datasets round trip through JSON lines") {
  const Setup s = alkane_setup();
  const chem::EnergySpec spec = chem::harmonic_energy("logp", 1.0, 0.5);
  DatasetParams params;
  params.k = 3;
  params.seed = 17;
  const auto records = generate_preference_dataset(s.store, s.vocab,
                                                   start_prompt(), spec,
                                                   params);
  const std::string path = temp_path("era_dataset_roundtrip.jsonl");
  write_preference_dataset(path, records);

  const auto loaded = read_preference_dataset(path);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].prompt == records[i].prompt);
    CHECK(loaded[i].completion_a == records[i].completion_a);
    CHECK(loaded[i].completion_b == records[i].completion_b);
    CHECK(loaded[i].energy_a == records[i].energy_a);
    CHECK(loaded[i].energy_b == records[i].energy_b);
    CHECK(loaded[i].ref_logp_a == records[i].ref_logp_a);
    CHECK(loaded[i].ref_logp_b == records[i].ref_logp_b);
  }

  // Re-writing what was read reproduces the file byte for byte.
  const std::string path2 = temp_path("era_dataset_roundtrip2.jsonl");
  write_preference_dataset(path2, loaded);
  CHECK(slurp(path) == slurp(path2));

  // One record per line.
  std::istringstream lines(slurp(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) ++n;
  CHECK(n == records.size());
}

TEST_CASE("dataset reader rejects malformed input") {
  const std::string path = temp_path("era_dataset_bad.jsonl");
  {
    std::ofstream out(path, std::ios::trunc);
    out << "{ not json\n";
  }
  CHECK_THROWS_AS(read_preference_dataset(path), std::runtime_error);
  {
    std::ofstream out(path, std::ios::trunc);
    // Parses as JSON but violates record invariants (positive ref logp).
    out << R"({"prompt":[1],"a":[5,2],"b":[5,5,2],"u_a":0.0,"u_b":1.0,)"
        << R"("ref_logp_a":1.5,"ref_logp_b":-2.0})" << "\n";
  }
  CHECK_THROWS_AS(read_preference_dataset(path), std::runtime_error);
  {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"prompt":[1],"a":[5,2],"u_a":0.0})" << "\n";  // missing keys
  }
  CHECK_THROWS_AS(read_preference_dataset(path), std::runtime_error);
  CHECK_THROWS_AS(read_preference_dataset(temp_path("era_no_such.jsonl")),
                  std::runtime_error);
}

// ===== alignment runs ========================================================

namespace {

// Handmade records over the alkane vocabulary with energies favoring the
// shorter completion, so alignment has a consistent signal.
std::vector<PreferenceRecord> toy_records(const Setup& s) {
  const int c = s.vocab.id("C");
  const int stop = nn::Vocabulary::kStop;
  auto rec = [&](TokenSeq a, TokenSeq b, double ua, double ub) {
    PreferenceRecord r;
    r.prompt = {nn::Vocabulary::kStart};
    r.completion_a = std::move(a);
    r.completion_b = std::move(b);
    r.energy_a = ua;
    r.energy_b = ub;
    r.ref_logp_a = nn::sequence_logprob(s.store, r.prompt, r.completion_a);
    r.ref_logp_b = nn::sequence_logprob(s.store, r.prompt, r.completion_b);
    return r;
  };
  return {
      rec({c, stop}, {c, c, stop}, 0.0, 0.6),
      rec({c, c, stop}, {c, c, c, stop}, 0.6, 1.2),
      rec({c, stop}, {c, c, c, stop}, 0.0, 1.2),
      rec({c, c, c, stop}, {c, stop}, 1.2, 0.0),
      rec({c, c, stop}, {c, stop}, 0.6, 0.0),
  };
}

}  // namespace

TEST_CASE("zero-epoch alignment leaves the policy untouched") {
  Setup s = alkane_setup();
  const nn::ParamStore before = s.store;
  AlignConfig config;
  config.epochs = 0;
  const AlignResult result = run_alignment(s.store, toy_records(s), config);
  CHECK(same_params(s.store, before));
  CHECK(s.store.adam_step == before.adam_step);
  CHECK(result.step_losses.empty());
  CHECK(result.epoch_losses.empty());
  CHECK_FALSE(result.failed);
}

TEST_CASE("alignment runs are deterministic and account every batch") {
  Setup s1 = alkane_setup();
  Setup s2 = alkane_setup();
  const auto records = toy_records(s1);
  AlignConfig config;
  config.params = AlignmentParams{4.0, 0.5};
  config.epochs = 3;
  config.batch_size = 2;
  config.optimizer.learning_rate = 1e-4;

  const AlignResult r1 = run_alignment(s1.store, records, config);
  const AlignResult r2 = run_alignment(s2.store, records, config);
  CHECK(same_params(s1.store, s2.store));
  CHECK(r1.step_losses == r2.step_losses);
  CHECK(r1.epoch_losses == r2.epoch_losses);

  // 5 records in batches of 2 -> 3 steps per epoch.
  CHECK(r1.step_losses.size() == 9);
  CHECK(r1.epoch_losses.size() == 3);
  CHECK_FALSE(r1.failed);
  for (double loss : r1.step_losses) CHECK(std::isfinite(loss));

  // The record-weighted epoch mean of pre-step losses falls as training
  // progresses on this tiny, consistent dataset.
  CHECK(r1.epoch_losses.back() < r1.epoch_losses.front());

  // A different shuffle seed visits records in a different order.
  AlignConfig shuffled = config;
  shuffled.shuffle_seed = 99;
  Setup s3 = alkane_setup();
  const AlignResult r3 = run_alignment(s3.store, records, shuffled);
  CHECK(r3.step_losses != r1.step_losses);
}

TEST_CASE("direct-preference mode aligns with the same driver") {
  Setup s = alkane_setup();
  const auto records = toy_records(s);
  AlignConfig config;
  config.dpo_mode = true;
  config.dpo_beta = 0.5;
  config.epochs = 2;
  config.batch_size = 8;
  config.optimizer.learning_rate = 1e-3;
  const nn::ParamStore before = s.store;
  const AlignResult result = run_alignment(s.store, records, config);
  CHECK_FALSE(result.failed);
  CHECK(result.step_losses.size() == 2);
  CHECK_FALSE(same_params(s.store, before));
  CHECK(result.epoch_losses[1] < result.epoch_losses[0]);
}

TEST_CASE("alignment rolls back to the last good step on blow-up") {
  Setup s = alkane_setup();
  const auto records = toy_records(s);
  AlignConfig config;
  config.params = AlignmentParams{4.0, 0.5};
  config.epochs = 4;
  config.batch_size = 16;  // one batch per epoch
  config.optimizer.learning_rate = 1e307;  // guarantees overflow next step

  // Replay the sole surviving step by hand to know the rollback target: the
  // driver shuffles once per epoch before batching.
  nn::ParamStore expected = s.store;
  {
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RandomSource rng(config.shuffle_seed);
    rng.shuffle(order);
    std::vector<PreferenceRecord> batch;
    for (std::size_t i : order) batch.push_back(records[i]);
    nn::era_align_step(expected, batch, config.params, config.optimizer);
  }

  const AlignResult result = run_alignment(s.store, records, config);
  CHECK(result.failed);
  CHECK_FALSE(result.failure_reason.empty());
  CHECK(result.step_losses.size() == 1);
  CHECK(result.epoch_losses.size() == 1);
  CHECK(same_params(s.store, expected));
  CHECK(s.store.adam_step == 1);
}

TEST_CASE("alignment validates its inputs") {
  Setup s = alkane_setup();
  const auto records = toy_records(s);
  CHECK_THROWS_AS(run_alignment(s.store, {}, AlignConfig{}),
                  std::invalid_argument);
  AlignConfig bad;
  bad.epochs = -1;
  CHECK_THROWS_AS(run_alignment(s.store, records, bad), std::invalid_argument);
  bad = AlignConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(run_alignment(s.store, records, bad), std::invalid_argument);
  bad = AlignConfig{};
  bad.dpo_mode = true;
  bad.dpo_beta = 0.0;
  CHECK_THROWS_AS(run_alignment(s.store, records, bad), std::invalid_argument);
}

// ===== metrics ===============================================================

TEST_CASE("histogram ranges and clamping") {
  const Histogram ring = make_histogram("ring_count");
  CHECK(ring.lo == 0.0);
  CHECK(ring.hi == 10.0);
  CHECK(ring.counts.size() == 30);
  const Histogram logp = make_histogram("logp");
  CHECK(logp.lo == -10.0);
  CHECK(logp.hi == 20.0);
  const Histogram mr = make_histogram("mr");
  CHECK(mr.hi == 200.0);
  const Histogram qed = make_histogram("qed");
  CHECK(qed.hi == 1.0);
  const Histogram tan = make_histogram("tanimoto");
  CHECK(tan.hi == 1.0);
  const Histogram other = make_histogram("boiling_point");
  CHECK(other.hi == 100.0);

  Histogram h = make_histogram("qed", 10);
  h.add(-5.0);   // clamps into the first bin
  h.add(7.0);    // clamps into the last bin
  h.add(0.55);   // interior
  h.add(1.0);    // upper edge lands in the last bin
  CHECK(h.counts.front() == 1);
  CHECK(h.counts.back() == 2);
  CHECK(h.counts[5] == 1);
  CHECK(h.total() == 4);
  CHECK_THROWS_AS(make_histogram("qed", 0), std::invalid_argument);
}

TEST_CASE("metrics conserve sample mass and are deterministic") {
  const Setup s = alkane_setup();
  MetricsConfig config;
  config.samples_per_prompt = 40;
  config.seed = 3;
  config.properties = {"ring_count", "logp"};
  const PromptSet prompts = start_prompt();

  const MetricsReport report = emit_metrics(s.store, s.vocab, prompts, config);
  CHECK(report.n_samples == 40);

  std::int64_t valid = 0;
  int prompt_samples = 0;
  for (const PromptMetrics& pm : report.per_prompt) {
    valid += pm.valid;
    prompt_samples += pm.samples;
    CHECK(pm.valid <= pm.samples);
    CHECK(pm.identical_fraction >= 0.0);
    CHECK(pm.identical_fraction <= 1.0);
  }
  CHECK(prompt_samples == report.n_samples);
  CHECK(report.validity_fraction ==
        doctest::Approx(static_cast<double>(valid) / report.n_samples)
            .epsilon(1e-12));

  // Ring count and LogP are native properties: every valid molecule scores,
  // and each histogram holds exactly the scored mass.
  CHECK(report.scored.at("ring_count") == valid);
  CHECK(report.scored.at("logp") == valid);
  CHECK(report.histograms.at("ring_count").total() == valid);
  CHECK(report.histograms.at("logp").total() == valid);
  CHECK(report.uniqueness_fraction > 0.0);
  CHECK(report.uniqueness_fraction <= 1.0);
  CHECK(report.mean_pairwise_tanimoto >= 0.0);
  CHECK(report.mean_pairwise_tanimoto <= 1.0);

  // Alkanes only: every valid sample is acyclic, so the ring-count mass sits
  // in the first bin and the moments vanish.
  CHECK(report.histograms.at("ring_count").counts[0] == valid);
  CHECK(report.means.at("ring_count") == 0.0);
  CHECK(report.stddevs.at("ring_count") == 0.0);

  const MetricsReport again = emit_metrics(s.store, s.vocab, prompts, config);
  CHECK(metrics_to_json(report) == metrics_to_json(again));

  MetricsConfig reseeded = config;
  reseeded.seed = 4;
  const MetricsReport other =
      emit_metrics(s.store, s.vocab, prompts, reseeded);
  CHECK(metrics_to_json(report) != metrics_to_json(other));
}

TEST_CASE("metrics on a deterministic greedy policy") {
  Setup s = alkane_setup();
  // Bias the head so greedy decoding always emits the carbon token; sampling
  // at temperature zero then fills the context with one long alkane.
  s.store.find("head.b").d[static_cast<std::size_t>(s.vocab.id("C"))] = 5.0;
  MetricsConfig config;
  config.samples_per_prompt = 12;
  config.temperature = 0.0;
  config.properties = {"ring_count"};

  const MetricsReport report =
      emit_metrics(s.store, s.vocab, start_prompt(), config);
  CHECK(report.n_samples == 12);
  CHECK(report.validity_fraction == 1.0);
  // Every sample is the same molecule.
  CHECK(report.uniqueness_fraction ==
        doctest::Approx(1.0 / 12.0).epsilon(1e-12));
  CHECK(report.mean_pairwise_tanimoto == 1.0);
  CHECK(report.histograms.at("ring_count").counts[0] == 12);
  CHECK(report.per_prompt[0].identical_fraction == 0.0);
}

TEST_CASE("unknown properties are skipped per molecule") {
  const Setup s = alkane_setup();
  MetricsConfig config;
  config.samples_per_prompt = 10;
  config.properties = {"ring_count", "qed"};  // no external table wired
  const MetricsReport report =
      emit_metrics(s.store, s.vocab, start_prompt(), config);
  CHECK(report.scored.at("qed") == 0);
  CHECK(report.means.at("qed") == 0.0);
  CHECK(report.histograms.at("qed").total() == 0);
  CHECK(report.scored.at("ring_count") >= 0);
}

TEST_CASE("prompted metrics report per-prompt identity") {
  const Setup s = alkane_setup();
  MetricsConfig config;
  config.samples_per_prompt = 25;
  config.seed = 8;
  const PromptSet prompts = prompts_from_smiles(s.vocab, {"C", "CC"});
  const MetricsReport report = emit_metrics(s.store, s.vocab, prompts, config);
  REQUIRE(report.per_prompt.size() == 2);
  CHECK(report.per_prompt[0].prompt == "C");
  CHECK(report.per_prompt[1].prompt == "CC");
  CHECK(report.n_samples == 50);
  for (const PromptMetrics& pm : report.per_prompt) {
    CHECK(pm.samples == 25);
  }
}

TEST_CASE("metrics validate their inputs") {
  const Setup s = alkane_setup();
  MetricsConfig config;
  config.samples_per_prompt = 0;
  CHECK_THROWS_AS(emit_metrics(s.store, s.vocab, start_prompt(), config),
                  std::invalid_argument);
  config = MetricsConfig{};
  config.properties = {};
  CHECK_THROWS_AS(emit_metrics(s.store, s.vocab, start_prompt(), config),
                  std::invalid_argument);
  config = MetricsConfig{};
  const nn::Vocabulary other = build_vocabulary({"CCO"});
  CHECK_THROWS_AS(emit_metrics(s.store, other, start_prompt(), config),
                  std::invalid_argument);
}

TEST_CASE("metrics JSON is stable and complete") {
  const Setup s = alkane_setup();
  MetricsConfig config;
  config.samples_per_prompt = 6;
  const MetricsReport report =
      emit_metrics(s.store, s.vocab, start_prompt(), config);
  const std::string text = metrics_to_json(report);
  const nlohmann::json j = nlohmann::json::parse(text);
  CHECK(j.at("n_samples").get<int>() == 6);
  CHECK(j.at("histograms").contains("ring_count"));
  CHECK(j.at("histograms").at("logp").at("counts").size() == 30);
  CHECK(j.at("per_prompt").size() == 1);
  CHECK(j.at("diversity").at("hi").get<double>() == 1.0);
  CHECK(j.contains("means"));
  CHECK(j.contains("stddevs"));
  CHECK(j.contains("scored"));
  CHECK(j.contains("uniqueness_fraction"));
  CHECK(j.contains("validity_fraction"));
  CHECK(j.contains("mean_pairwise_tanimoto"));

  const std::string path = temp_path("era_metrics.json");
  write_metrics(path, report);
  CHECK(slurp(path) == text + "\n");
}

// ===== command-line interface ================================================

#include <cstdlib>
#include <sys/wait.h>

namespace {

std::string q(const std::string& s) { return "\"" + s + "\""; }

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(ERA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

// One tiny corpus + pretrained checkpoint shared by every CLI test.
struct CliFixture {
  std::string dir;
  std::string corpus;
  std::string ref;
};

const CliFixture& cli_fixture() {
  static const CliFixture f = [] {
    CliFixture x;
    x.dir = (std::filesystem::temp_directory_path() / "era_cli_tests")
                .string();
    std::filesystem::create_directories(x.dir);
    x.corpus = x.dir + "/corpus.txt";
    x.ref = x.dir + "/ref.json";
    if (run_cli("gen-corpus --family alkanes --size 12 --seed 5 --out " +
                q(x.corpus)) != 0) {
      throw std::runtime_error("fixture: gen-corpus failed");
    }
    if (run_cli("pretrain --corpus " + q(x.corpus) + " --out " + q(x.ref) +
                " --seed 9 --layers 1 --heads 2 --width 8 --max-len 14"
                " --ffn-mult 2 --epochs 2 --batch-size 8") != 0) {
      throw std::runtime_error("fixture: pretrain failed");
    }
    return x;
  }();
  return f;
}

}  // namespace

TEST_CASE("cli gen-corpus writes deterministic corpora") {
  const CliFixture& f = cli_fixture();
  const std::string out = f.dir + "/rings.txt";
  REQUIRE(run_cli("gen-corpus --family rings --size 5 --seed 3 --out " +
                  q(out)) == 0);
  const std::string first = slurp(out);
  CHECK(first.rfind("C1CC1\nC1CCC1\nC1CCCC1\n", 0) == 0);
  REQUIRE(run_cli("gen-corpus --family rings --size 5 --seed 3 --out " +
                  q(out)) == 0);
  CHECK(slurp(out) == first);

  // The shared fixture corpus enumerates linear alkanes first.
  CHECK(slurp(f.corpus).rfind("C\nCC\nCCC\n", 0) == 0);
}

TEST_CASE("cli rejects usage errors with exit code 2") {
  const CliFixture& f = cli_fixture();
  CHECK(run_cli("gen-corpus --family rings --size 3") == 2);  // no --seed
  CHECK(run_cli("gen-corpus --family peptides --size 3 --seed 1") == 2);
  CHECK(run_cli("gen-corpus --family rings --size 0 --seed 1") == 2);
  CHECK(run_cli("no-such-verb") == 2);
  CHECK(run_cli("") == 2);  // a verb is required
  CHECK(run_cli("sample --checkpoint " + q(f.dir + "/absent.json") +
                " --n 2 --seed 1") == 2);
  CHECK(run_cli("align --checkpoint " + q(f.ref) + " --dataset " +
                q(f.dir + "/absent.jsonl") + " --out " +
                q(f.dir + "/x.json") + " --seed 1") == 2);
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("cli pretrain emits a loadable checkpoint") {
  const CliFixture& f = cli_fixture();
  const nn::Checkpoint cp = nn::load_checkpoint(f.ref);
  CHECK(cp.store.config.layers == 1);
  CHECK(cp.store.config.width == 8);
  CHECK(cp.store.config.max_len == 14);
  CHECK(cp.vocab.size() == 5);  // reserved + "C"
  CHECK(cp.vocab.contains("C"));
  CHECK(cp.store.adam_step > 0);
}

TEST_CASE("cli gen-dataset pairs samples and reruns byte-identically") {
  const CliFixture& f = cli_fixture();
  const std::string ds = f.dir + "/ds.jsonl";
  const std::string base = "gen-dataset --checkpoint " + q(f.ref) +
                           " --out " + q(ds) +
                           " --seed 21 --property ring_count --mu 2"
                           " --sigma 1";
  REQUIRE(run_cli(base + " --k 2") == 0);
  CHECK(read_preference_dataset(ds).size() == 1);  // one pair per prompt

  REQUIRE(run_cli(base + " --k 4") == 0);
  const std::string first = slurp(ds);
  CHECK(read_preference_dataset(ds).size() == 6);
  REQUIRE(run_cli(base + " --k 4") == 0);
  CHECK(slurp(ds) == first);

  CHECK(run_cli(base + " --k 1") == 2);
}

TEST_CASE("cli align zero-epoch run reproduces the input checkpoint") {
  const CliFixture& f = cli_fixture();
  const std::string ds = f.dir + "/align_ds.jsonl";
  REQUIRE(run_cli("gen-dataset --checkpoint " + q(f.ref) + " --out " + q(ds) +
                  " --seed 4 --k 3") == 0);
  const std::string out = f.dir + "/aligned0.json";
  REQUIRE(run_cli("align --checkpoint " + q(f.ref) + " --dataset " + q(ds) +
                  " --out " + q(out) + " --seed 1 --epochs 0") == 0);
  CHECK(slurp(out) == slurp(f.ref));

  const nlohmann::json log =
      nlohmann::json::parse(slurp(f.dir + "/aligned0.log.json"));
  CHECK(log.at("failed").get<bool>() == false);
  CHECK(log.at("epoch_losses").empty());
  CHECK(log.at("step_losses").empty());
}

TEST_CASE("cli align trains, sweeps grids, and reports failures") {
  const CliFixture& f = cli_fixture();
  const std::string ds = f.dir + "/align_ds2.jsonl";
  REQUIRE(run_cli("gen-dataset --checkpoint " + q(f.ref) + " --out " + q(ds) +
                  " --seed 6 --k 3 --property logp --mu 1 --sigma 0.5") == 0);

  const std::string out = f.dir + "/aligned.json";
  REQUIRE(run_cli("align --checkpoint " + q(f.ref) + " --dataset " + q(ds) +
                  " --out " + q(out) +
                  " --seed 1 --epochs 2 --batch-size 2 --lr 1e-4") == 0);
  const nn::Checkpoint aligned = nn::load_checkpoint(out);
  const nn::Checkpoint ref = nn::load_checkpoint(f.ref);
  CHECK_FALSE(same_params(aligned.store, ref.store));
  const nlohmann::json log =
      nlohmann::json::parse(slurp(f.dir + "/aligned.log.json"));
  CHECK(log.at("step_losses").size() == 4);  // 3 records, batches of 2, x2

  // A beta x gamma grid writes one suffixed checkpoint per point.
  REQUIRE(run_cli("align --checkpoint " + q(f.ref) + " --dataset " + q(ds) +
                  " --out " + q(f.dir + "/grid.json") +
                  " --seed 1 --epochs 1 --beta 0.5,2 --gamma 0,0.1") == 0);
  for (const std::string& name :
       {std::string("grid_b0p5_g0.json"), std::string("grid_b0p5_g0p1.json"),
        std::string("grid_b2_g0.json"), std::string("grid_b2_g0p1.json")}) {
    CHECK_NOTHROW(nn::load_checkpoint(f.dir + "/" + name));
  }

  // A divergent learning rate fails with exit 3 but retains a loadable
  // last-good checkpoint and an honest log.
  const std::string blown = f.dir + "/blown.json";
  CHECK(run_cli("align --checkpoint " + q(f.ref) + " --dataset " + q(ds) +
                " --out " + q(blown) +
                " --seed 1 --epochs 2 --batch-size 8 --lr 1e307") == 3);
  CHECK_NOTHROW(nn::load_checkpoint(blown));
  const nlohmann::json blog =
      nlohmann::json::parse(slurp(f.dir + "/blown.log.json"));
  CHECK(blog.at("failed").get<bool>() == true);
  CHECK_FALSE(blog.at("failure_reason").get<std::string>().empty());
}

TEST_CASE("cli sample writes n deterministic rows") {
  const CliFixture& f = cli_fixture();
  const std::string out = f.dir + "/samples.txt";
  REQUIRE(run_cli("sample --checkpoint " + q(f.ref) + " --n 7 --seed 13"
                  " --out " + q(out)) == 0);
  const auto count_lines = [](const std::string& text) {
    return std::count(text.begin(), text.end(), '\n');
  };
  const std::string first = slurp(out);
  CHECK(count_lines(first) == 7);
  REQUIRE(run_cli("sample --checkpoint " + q(f.ref) + " --n 7 --seed 13"
                  " --out " + q(out)) == 0);
  CHECK(slurp(out) == first);

  // Greedy decoding collapses every sample to one string.
  REQUIRE(run_cli("sample --checkpoint " + q(f.ref) + " --n 4 --seed 1"
                  " --temperature 0 --out " + q(out)) == 0);
  std::istringstream lines(slurp(out));
  std::string line;
  std::set<std::string> unique;
  while (std::getline(lines, line)) unique.insert(line);
  CHECK(unique.size() == 1);
}

TEST_CASE("cli metrics emits a parsable deterministic report") {
  const CliFixture& f = cli_fixture();
  const std::string out = f.dir + "/metrics.json";
  const std::string cmd = "metrics --checkpoint " + q(f.ref) + " --out " +
                          q(out) +
                          " --seed 17 --samples-per-prompt 15"
                          " --properties ring_count,logp";
  REQUIRE(run_cli(cmd) == 0);
  const std::string first = slurp(out);
  const nlohmann::json j = nlohmann::json::parse(first);
  CHECK(j.at("n_samples").get<int>() == 15);
  CHECK(j.at("histograms").contains("ring_count"));
  CHECK(j.at("validity_fraction").get<double>() >= 0.0);
  CHECK(j.at("validity_fraction").get<double>() <= 1.0);
  REQUIRE(run_cli(cmd) == 0);
  CHECK(slurp(out) == first);
}

TEST_CASE("cli reads verb options from a config file") {
  const CliFixture& f = cli_fixture();
  const std::string ini = f.dir + "/run.ini";
  const std::string out = f.dir + "/cfg_corpus.txt";
  {
    std::ofstream cfg(ini, std::ios::trunc);
    cfg << "schema-version=1\n[gen-corpus]\nfamily=alcohols\nsize=4\n"
        << "seed=2\nout=" << out << "\n";
  }
  REQUIRE(run_cli("--config " + q(ini) + " gen-corpus") == 0);
  CHECK(slurp(out) == "CO\nCCO\nCCCO\nCCCCO\n");

  // Flags override the file; an unsupported schema version is refused.
  REQUIRE(run_cli("--config " + q(ini) + " gen-corpus --size 2 --out " +
                  q(out)) == 0);
  CHECK(slurp(out) == "CO\nCCO\n");
  {
    std::ofstream cfg(ini, std::ios::trunc);
    cfg << "schema-version=7\n[gen-corpus]\nfamily=alcohols\nsize=4\n"
        << "seed=2\nout=" << out << "\n";
  }
  CHECK(run_cli("--config " + q(ini) + " gen-corpus") == 2);
}

TEST_CASE("cli tabular-verify converges on the random battery") {
  CHECK(run_cli("tabular-verify --instances 2 --seed 4") == 0);
}
