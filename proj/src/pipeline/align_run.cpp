#include "era/pipeline/align_run.hpp"

#include <numeric>
#include <stdexcept>

#include "era/random.hpp"

namespace era::pipeline {

AlignResult run_alignment(nn::ParamStore& store,
                          const std::vector<PreferenceRecord>& records,
                          const AlignConfig& config) {
  if (records.empty()) {
    throw std::invalid_argument("alignment: empty preference dataset");
  }
  if (config.epochs < 0) {
    throw std::invalid_argument("alignment: negative epoch count");
  }
  if (config.batch_size < 1) {
    throw std::invalid_argument("alignment: batch size must be positive");
  }
  if (config.dpo_mode && !(config.dpo_beta > 0.0)) {
    throw std::invalid_argument("alignment: dpo_beta must be positive");
  }

  AlignResult result;
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomSource rng(config.shuffle_seed);
  nn::ParamStore last_good = store;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double weighted_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), at + static_cast<std::size_t>(config.batch_size));
      std::vector<PreferenceRecord> batch;
      batch.reserve(stop - at);
      for (std::size_t i = at; i < stop; ++i) batch.push_back(records[order[i]]);

      double loss = 0.0;
      try {
        if (config.dpo_mode) {
          loss = nn::dpo_align_step(store, batch, config.dpo_beta,
                                    config.optimizer);
        } else {
          loss = nn::era_align_step(store, batch, config.params,
                                    config.optimizer);
        }
      } catch (const nn::TrainingFailure& e) {
        store = last_good;
        result.failed = true;
        result.failure_reason = e.what();
        return result;
      }
      last_good = store;
      result.step_losses.push_back(loss);
      weighted_loss += loss * static_cast<double>(batch.size());
      seen += batch.size();
    }
    result.epoch_losses.push_back(weighted_loss / static_cast<double>(seen));
  }
  return result;
}

}  // namespace era::pipeline
