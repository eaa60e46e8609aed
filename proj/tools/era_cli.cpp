// era: command-line pipeline for energy-rank alignment experiments.
//
//   tabular-verify  exact-oracle convergence battery on random instances
//   gen-corpus      deterministic molecule corpora
//   pretrain        next-token pretraining of the toy policy
//   gen-dataset     offline preference datasets from a frozen policy
//   align           rank-alignment (or direct-preference) runs over a
//                   beta/gamma grid
//   sample          draw molecules from a checkpoint
//   metrics         sampling-based evaluation report
//
// Exit codes: 0 success, 2 configuration or usage error, 3 training or
// convergence failure.  Status goes to stderr; data goes to files (or stdout
// where "-" is accepted).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
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
#include "era/tabular.hpp"

namespace {

using era::TokenSeq;

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::string& path,
                 const std::vector<std::string>& lines) {
  if (path == "-") {
    for (const std::string& l : lines) std::cout << l << "\n";
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::invalid_argument("cannot open " + path + " for writing");
  }
  for (const std::string& l : lines) out << l << "\n";
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

era::chem::EnergySpec load_spec(const std::string& spec_file,
                                const std::string& property, double mu,
                                double sigma) {
  era::chem::EnergySpec spec;
  if (!spec_file.empty()) {
    std::ifstream in(spec_file);
    if (!in) throw std::invalid_argument("cannot open " + spec_file);
    try {
      nlohmann::json j;
      in >> j;
      spec = j.get<era::chem::EnergySpec>();
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("energy spec " + spec_file + ": " +
                                  e.what());
    }
  } else {
    spec = era::chem::harmonic_energy(property, mu, sigma);
  }
  era::chem::validate_energy_spec(spec);
  return spec;
}

era::pipeline::PromptSet load_prompts(const std::string& prompts_file,
                                      const era::nn::Vocabulary& vocab) {
  if (prompts_file.empty()) return era::pipeline::start_prompt();
  return era::pipeline::prompts_from_smiles(vocab, read_lines(prompts_file));
}

// "0.5" -> "0p5", "-2" -> "m2", "1e+06" -> "1e06": filesystem-friendly.
std::string fmt_grid_value(double v) {
  std::ostringstream ss;
  ss << v;
  std::string s = ss.str();
  std::string out;
  for (char c : s) {
    if (c == '.') {
      out += 'p';
    } else if (c == '-') {
      out += 'm';
    } else if (c != '+') {
      out += c;
    }
  }
  return out;
}

std::string grid_path(const std::string& base, double beta, double gamma) {
  const std::filesystem::path p(base);
  const std::string name = p.stem().string() + "_b" + fmt_grid_value(beta) +
                           "_g" + fmt_grid_value(gamma) +
                           p.extension().string();
  return (p.parent_path() / name).string();
}

std::string log_path_for(const std::string& checkpoint_path) {
  const std::filesystem::path p(checkpoint_path);
  return (p.parent_path() / (p.stem().string() + ".log.json")).string();
}

// ===== verbs =================================================================

int run_tabular_verify(int instances, std::uint64_t seed, double tol,
                       long max_steps) {
  double worst = 0.0;
  int failures = 0;
  for (int i = 0; i < instances; ++i) {
    const era::tabular::Instance inst = era::tabular::random_instance(seed + i);
    era::tabular::FitOptions opts;
    opts.tv_tolerance = tol;
    opts.max_steps = max_steps;
    const era::tabular::FitResult fit =
        era::tabular::fit_era_tabular(inst.energy, inst.ref, inst.params, opts);
    worst = std::max(worst, fit.tv_distance);
    if (!fit.converged) {
      ++failures;
      std::cerr << "instance " << i << ": no convergence, TV "
                << fit.tv_distance << "\n";
    }
  }
  std::cerr << "tabular-verify: " << instances - failures << "/" << instances
            << " instances converged, worst TV " << worst << "\n";
  return failures == 0 ? 0 : 3;
}

int run_gen_corpus(const std::string& family, int size, std::uint64_t seed,
                   const std::string& out) {
  const auto corpus = era::pipeline::generate_corpus(
      era::pipeline::corpus_family_from_name(family), size, seed);
  write_lines(out, corpus);
  std::cerr << "gen-corpus: " << corpus.size() << " molecules (" << family
            << ")\n";
  return 0;
}

struct PretrainArgs {
  std::string corpus;
  std::string out;
  std::uint64_t seed = 0;
  int layers = 2;
  int heads = 4;
  int width = 64;
  int max_len = 32;
  int ffn_mult = 4;
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 1e-4;
  bool prompted = false;
  int variants = 2;
};

int run_pretrain(const PretrainArgs& args) {
  const auto corpus = read_lines(args.corpus);
  const era::nn::Vocabulary vocab = era::pipeline::build_vocabulary(corpus);
  era::nn::ModelConfig cfg;
  cfg.layers = args.layers;
  cfg.heads = args.heads;
  cfg.width = args.width;
  cfg.max_len = args.max_len;
  cfg.ffn_mult = args.ffn_mult;
  cfg.vocab = vocab.size();
  cfg.validate();

  std::vector<TokenSeq> rows;
  std::size_t skipped = 0;
  for (const std::string& s : corpus) {
    TokenSeq row;
    row.push_back(era::nn::Vocabulary::kStart);
    const TokenSeq ids = vocab.encode(era::chem::tokenize_smiles(s));
    row.insert(row.end(), ids.begin(), ids.end());
    row.push_back(era::nn::Vocabulary::kStop);
    if (static_cast<int>(row.size()) > cfg.max_len) {
      ++skipped;
      continue;
    }
    rows.push_back(std::move(row));
  }
  if (args.prompted) {
    for (TokenSeq& row : era::pipeline::prompted_rows(
             vocab, corpus, args.variants, args.seed + 0x9e3779b9ULL)) {
      if (static_cast<int>(row.size()) > cfg.max_len) {
        ++skipped;
        continue;
      }
      rows.push_back(std::move(row));
    }
  }
  if (rows.empty()) {
    throw std::invalid_argument("pretrain: no training row fits max-len " +
                                std::to_string(cfg.max_len));
  }
  if (skipped > 0) {
    std::cerr << "pretrain: skipped " << skipped << " rows over max-len\n";
  }

  era::nn::ParamStore store = era::nn::ParamStore::init(cfg, args.seed);
  era::nn::TrainConfig tc;
  tc.epochs = args.epochs;
  tc.batch_size = args.batch_size;
  tc.optimizer.learning_rate = args.learning_rate;
  tc.shuffle_seed = args.seed + 1;
  const era::nn::TrainingReport report =
      era::nn::pretrain_next_token(store, rows, tc);
  for (std::size_t e = 0; e < report.epoch_losses.size(); ++e) {
    std::cerr << "epoch " << e + 1 << "/" << report.epoch_losses.size()
              << ": loss " << report.epoch_losses[e] << "\n";
  }
  era::nn::save_checkpoint(args.out, store, vocab);
  std::cerr << "pretrain: " << rows.size() << " rows, checkpoint " << args.out
            << "\n";
  return 0;
}

struct GenDatasetArgs {
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  int k = 4;
  double temperature = 1.0;
  std::string prompts_file;
  std::string spec_file;
  std::string property = "ring_count";
  double mu = 2.0;
  double sigma = 1.0;
  std::string table_file;
};

int run_gen_dataset(const GenDatasetArgs& args) {
  const era::nn::Checkpoint cp = era::nn::load_checkpoint(args.checkpoint);
  const era::chem::EnergySpec spec =
      load_spec(args.spec_file, args.property, args.mu, args.sigma);
  const era::pipeline::PromptSet prompts =
      load_prompts(args.prompts_file, cp.vocab);

  era::chem::PropertyTable table;
  era::chem::EnergyContext ctx;
  if (!args.table_file.empty()) {
    table = era::chem::PropertyTable::load(args.table_file);
    ctx.external = &table;
  }

  era::pipeline::DatasetParams params;
  params.k = args.k;
  params.seed = args.seed;
  params.temperature = args.temperature;
  const auto records = era::pipeline::generate_preference_dataset(
      cp.store, cp.vocab, prompts, spec, params, ctx);
  era::pipeline::write_preference_dataset(args.out, records);
  std::cerr << "gen-dataset: " << records.size() << " records ("
            << prompts.prompts.size() << " prompts, k=" << args.k << ")\n";
  return 0;
}

struct AlignArgs {
  std::string checkpoint;
  std::string dataset;
  std::string out;
  std::uint64_t seed = 1;
  std::vector<double> betas = {1.0};
  std::vector<double> gammas = {0.0};
  int epochs = 3;
  int batch_size = 32;
  double learning_rate = 1e-5;
  bool dpo = false;
  double dpo_beta = 0.1;
};

int run_align(const AlignArgs& args) {
  const era::nn::Checkpoint cp = era::nn::load_checkpoint(args.checkpoint);
  const auto records = era::pipeline::read_preference_dataset(args.dataset);
  const bool grid = args.betas.size() * args.gammas.size() > 1;
  int exit_code = 0;

  for (double beta : args.betas) {
    for (double gamma : args.gammas) {
      era::pipeline::AlignConfig config;
      config.params = era::AlignmentParams{beta, gamma};
      config.epochs = args.epochs;
      config.batch_size = args.batch_size;
      config.optimizer.learning_rate = args.learning_rate;
      config.shuffle_seed = args.seed;
      config.dpo_mode = args.dpo;
      config.dpo_beta = args.dpo_beta;

      era::nn::ParamStore store = cp.store;  // start from the reference
      const era::pipeline::AlignResult result =
          era::pipeline::run_alignment(store, records, config);

      const std::string path =
          grid ? grid_path(args.out, beta, gamma) : args.out;
      era::nn::save_checkpoint(path, store, cp.vocab);

      nlohmann::json log;
      log["beta"] = beta;
      log["gamma"] = gamma;
      log["dpo"] = args.dpo;
      log["step_losses"] = result.step_losses;
      log["epoch_losses"] = result.epoch_losses;
      log["failed"] = result.failed;
      log["failure_reason"] = result.failure_reason;
      {
        const std::string lp = log_path_for(path);
        std::ofstream out(lp, std::ios::trunc);
        if (!out) {
          throw std::runtime_error("cannot open " + lp + " for writing");
        }
        out << log.dump() << "\n";
      }

      if (result.failed) {
        std::cerr << "align: beta=" << beta << " gamma=" << gamma
                  << " FAILED (" << result.failure_reason
                  << "); last good checkpoint written to " << path << "\n";
        exit_code = 3;
      } else {
        std::cerr << "align: beta=" << beta << " gamma=" << gamma
                  << " final epoch loss "
                  << (result.epoch_losses.empty()
                          ? 0.0
                          : result.epoch_losses.back())
                  << " -> " << path << "\n";
      }
    }
  }
  return exit_code;
}

int run_sample(const std::string& checkpoint, int n, std::uint64_t seed,
               double temperature, const std::string& prompts_file,
               const std::string& out) {
  const era::nn::Checkpoint cp = era::nn::load_checkpoint(checkpoint);
  const era::pipeline::PromptSet prompts =
      load_prompts(prompts_file, cp.vocab);
  prompts.validate(cp.store.config);

  era::RandomSource seeder(seed);
  std::vector<std::string> lines;
  for (const TokenSeq& prompt : prompts.prompts) {
    const std::string prompt_str =
        era::pipeline::decode_molecule(cp.vocab, prompt);
    for (int i = 0; i < n; ++i) {
      const TokenSeq full = era::nn::sample_sequence(
          cp.store, prompt, seeder.next_u64(), temperature);
      const TokenSeq completion(full.begin() + prompt.size(), full.end());
      const std::string mol =
          era::pipeline::decode_molecule(cp.vocab, completion);
      lines.push_back(prompt_str.empty() ? mol : prompt_str + "\t" + mol);
    }
  }
  write_lines(out, lines);
  std::cerr << "sample: " << lines.size() << " rows\n";
  return 0;
}

struct MetricsArgs {
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  int samples_per_prompt = 100;
  double temperature = 1.0;
  std::string prompts_file;
  std::vector<std::string> properties = {"ring_count", "logp"};
  std::string table_file;
};

int run_metrics(const MetricsArgs& args) {
  const era::nn::Checkpoint cp = era::nn::load_checkpoint(args.checkpoint);
  const era::pipeline::PromptSet prompts =
      load_prompts(args.prompts_file, cp.vocab);

  era::chem::PropertyTable table;
  const era::chem::PropertyTable* table_ptr = nullptr;
  if (!args.table_file.empty()) {
    table = era::chem::PropertyTable::load(args.table_file);
    table_ptr = &table;
  }

  era::pipeline::MetricsConfig config;
  config.samples_per_prompt = args.samples_per_prompt;
  config.seed = args.seed;
  config.temperature = args.temperature;
  config.properties = args.properties;
  const era::pipeline::MetricsReport report = era::pipeline::emit_metrics(
      cp.store, cp.vocab, prompts, config, nullptr, table_ptr);
  era::pipeline::write_metrics(args.out, report);
  std::cerr << "metrics: " << report.n_samples << " samples, validity "
            << report.validity_fraction << ", uniqueness "
            << report.uniqueness_fraction << " -> " << args.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"energy-rank alignment experiment pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "key-value run configuration (INI; verb options live in "
                 "[verb] sections)");
  int schema_version = 1;
  app.add_option("--schema-version", schema_version,
                 "config schema version (must be 1)")
      ->capture_default_str();

  // tabular-verify
  auto* tv = app.add_subcommand(
      "tabular-verify", "fit random tabular instances against the exact "
                        "optimum and report convergence");
  int tv_instances = 10;
  std::uint64_t tv_seed = 0;
  double tv_tol = 1e-3;
  long tv_steps = 50000;
  tv->add_option("--instances", tv_instances, "number of random instances")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tv->add_option("--seed", tv_seed, "instance stream seed")
      ->capture_default_str();
  tv->add_option("--tol", tv_tol, "total-variation tolerance")
      ->capture_default_str();
  tv->add_option("--max-steps", tv_steps, "fit step budget")
      ->capture_default_str();

  // gen-corpus
  auto* gc = app.add_subcommand("gen-corpus",
                                "write a deterministic molecule corpus");
  std::string gc_family = "alkanes";
  int gc_size = 0;
  std::uint64_t gc_seed = 0;
  std::string gc_out = "-";
  gc->add_option("--family", gc_family,
                 "alkanes | alcohols | rings | mixed")
      ->capture_default_str();
  gc->add_option("--size", gc_size, "number of molecules")->required();
  gc->add_option("--seed", gc_seed, "sampling seed")->required();
  gc->add_option("--out", gc_out, "output file (- for stdout)")
      ->capture_default_str();

  // pretrain
  auto* pt = app.add_subcommand(
      "pretrain", "train the toy policy on next-token prediction");
  PretrainArgs pt_args;
  pt->add_option("--corpus", pt_args.corpus, "molecule file, one per line")
      ->required();
  pt->add_option("--out", pt_args.out, "checkpoint path")->required();
  pt->add_option("--seed", pt_args.seed, "init + shuffle seed")->required();
  pt->add_option("--layers", pt_args.layers)->capture_default_str();
  pt->add_option("--heads", pt_args.heads)->capture_default_str();
  pt->add_option("--width", pt_args.width)->capture_default_str();
  pt->add_option("--max-len", pt_args.max_len)->capture_default_str();
  pt->add_option("--ffn-mult", pt_args.ffn_mult)->capture_default_str();
  pt->add_option("--epochs", pt_args.epochs)->capture_default_str();
  pt->add_option("--batch-size", pt_args.batch_size)->capture_default_str();
  pt->add_option("--lr", pt_args.learning_rate)->capture_default_str();
  pt->add_flag("--prompted", pt_args.prompted,
               "add single-token-perturbation rows for prompted generation");
  pt->add_option("--variants", pt_args.variants,
                 "perturbation rows per molecule (with --prompted)")
      ->capture_default_str();

  // gen-dataset
  auto* gd = app.add_subcommand(
      "gen-dataset", "sample completions and emit preference pairs");
  GenDatasetArgs gd_args;
  gd->add_option("--checkpoint", gd_args.checkpoint,
                 "frozen reference checkpoint")
      ->required();
  gd->add_option("--out", gd_args.out, "dataset path (JSON lines)")
      ->required();
  gd->add_option("--seed", gd_args.seed, "sampling seed")->required();
  gd->add_option("--k", gd_args.k, "completions per prompt")
      ->capture_default_str();
  gd->add_option("--temperature", gd_args.temperature)->capture_default_str();
  gd->add_option("--prompts-file", gd_args.prompts_file,
                 "prompt molecules, one per line (default: unprompted)");
  gd->add_option("--spec-file", gd_args.spec_file,
                 "energy spec as JSON (overrides --property/--mu/--sigma)");
  gd->add_option("--property", gd_args.property,
                 "harmonic energy property")
      ->capture_default_str();
  gd->add_option("--mu", gd_args.mu, "harmonic target")->capture_default_str();
  gd->add_option("--sigma", gd_args.sigma, "harmonic width")
      ->capture_default_str();
  gd->add_option("--table-file", gd_args.table_file,
                 "external property CSV (smiles,property,value)");

  // align
  auto* al = app.add_subcommand(
      "align", "run rank alignment over a beta/gamma grid");
  AlignArgs al_args;
  al->add_option("--checkpoint", al_args.checkpoint, "reference checkpoint")
      ->required();
  al->add_option("--dataset", al_args.dataset, "preference dataset")
      ->required();
  al->add_option("--out", al_args.out,
                 "aligned checkpoint path (grids add _b<beta>_g<gamma>)")
      ->required();
  al->add_option("--seed", al_args.seed, "shuffle seed")->required();
  al->add_option("--beta", al_args.betas, "beta grid (comma separated)")
      ->delimiter(',')
      ->capture_default_str();
  al->add_option("--gamma", al_args.gammas, "gamma grid (comma separated)")
      ->delimiter(',')
      ->capture_default_str();
  al->add_option("--epochs", al_args.epochs)->capture_default_str();
  al->add_option("--batch-size", al_args.batch_size)->capture_default_str();
  al->add_option("--lr", al_args.learning_rate)->capture_default_str();
  al->add_flag("--dpo", al_args.dpo, "run the direct-preference baseline");
  al->add_option("--dpo-beta", al_args.dpo_beta)->capture_default_str();

  // sample
  auto* sm = app.add_subcommand("sample", "draw molecules from a checkpoint");
  std::string sm_checkpoint;
  int sm_n = 10;
  std::uint64_t sm_seed = 0;
  double sm_temperature = 1.0;
  std::string sm_prompts_file;
  std::string sm_out = "-";
  sm->add_option("--checkpoint", sm_checkpoint)->required();
  sm->add_option("--n", sm_n, "samples per prompt")->capture_default_str();
  sm->add_option("--seed", sm_seed, "sampling seed")->required();
  sm->add_option("--temperature", sm_temperature)->capture_default_str();
  sm->add_option("--prompts-file", sm_prompts_file,
                 "prompt molecules, one per line (default: unprompted)");
  sm->add_option("--out", sm_out, "output file (- for stdout)")
      ->capture_default_str();

  // metrics
  auto* mt = app.add_subcommand("metrics",
                                "sample a checkpoint and write a report");
  MetricsArgs mt_args;
  mt->add_option("--checkpoint", mt_args.checkpoint)->required();
  mt->add_option("--out", mt_args.out, "report path (JSON)")->required();
  mt->add_option("--seed", mt_args.seed, "sampling seed")->required();
  mt->add_option("--samples-per-prompt", mt_args.samples_per_prompt)
      ->capture_default_str();
  mt->add_option("--temperature", mt_args.temperature)->capture_default_str();
  mt->add_option("--prompts-file", mt_args.prompts_file,
                 "prompt molecules, one per line (default: unprompted)");
  mt->add_option("--properties", mt_args.properties,
                 "properties to score (comma separated; first is primary)")
      ->delimiter(',')
      ->capture_default_str();
  mt->add_option("--table-file", mt_args.table_file,
                 "external property CSV (smiles,property,value)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (schema_version != 1) {
    std::cerr << "error: unsupported config schema version "
              << schema_version << " (expected 1)\n";
    return 2;
  }

  try {
    if (app.got_subcommand(tv)) {
      return run_tabular_verify(tv_instances, tv_seed, tv_tol, tv_steps);
    }
    if (app.got_subcommand(gc)) {
      return run_gen_corpus(gc_family, gc_size, gc_seed, gc_out);
    }
    if (app.got_subcommand(pt)) return run_pretrain(pt_args);
    if (app.got_subcommand(gd)) return run_gen_dataset(gd_args);
    if (app.got_subcommand(al)) return run_align(al_args);
    if (app.got_subcommand(sm)) {
      return run_sample(sm_checkpoint, sm_n, sm_seed, sm_temperature,
                        sm_prompts_file, sm_out);
    }
    if (app.got_subcommand(mt)) return run_metrics(mt_args);
  } catch (const era::nn::TrainingFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
