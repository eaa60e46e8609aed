#pragma once

#include <string>

#include "era/nn/model.hpp"

// Versioned JSON checkpoints holding the model configuration, the
// vocabulary, every named parameter tensor, and the optimizer state.  A
// load/save round trip reproduces the file byte-for-byte (doubles survive
// JSON serialization exactly), which the pipeline relies on for zero-epoch
// identity checks.

namespace era::nn {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ParamStore store;
  Vocabulary vocab = Vocabulary::with_reserved({});
};

// Writes atomically-ish (temp file then rename).  Throws std::runtime_error
// on I/O failure.
void save_checkpoint(const std::string& path, const ParamStore& store,
                     const Vocabulary& vocab);

// Validates version, config invariants, tensor shapes, and vocabulary size
// against the config; throws std::runtime_error on any mismatch.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace era::nn
