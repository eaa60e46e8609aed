#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "era/nn/model.hpp"

// Desk-scale molecule corpora: deterministic generators over parameterized
// structural families, every emitted string guaranteed to pass the validity
// parser.  These stand in for a large external training set.

namespace era::pipeline {

enum class CorpusFamily { kAlkanes, kAlcohols, kRings, kMixed };

// "alkanes" | "alcohols" | "rings" | "mixed"; throws std::invalid_argument
// for anything else.
CorpusFamily corpus_family_from_name(const std::string& name);
const std::string& corpus_family_name(CorpusFamily family);

// Deterministic for (family, size, seed).  Enumeration starts with the
// simplest members (alkanes: "C", "CC", "CCC", ...), then samples branched /
// substituted variants without duplicates.  Every output parses as valid;
// the rings family emits only molecules with at least one ring.
// Throws std::invalid_argument for size < 1.
std::vector<std::string> generate_corpus(CorpusFamily family, int size,
                                         std::uint64_t seed);

// Every token any generator can emit (sorted, unique).
const std::vector<std::string>& corpus_token_alphabet();

// Vocabulary over the reserved tokens plus the sorted unique tokens of the
// given strings.  Throws chem::TokenizeError if a string does not tokenize.
nn::Vocabulary build_vocabulary(const std::vector<std::string>& smiles);

// Prompted-generation rows: {start, molecule, sep, variant, stop} where the
// variant replaces one random token of the molecule and must itself parse as
// valid (up to 100 retries per variant; molecules whose perturbations never
// validate are skipped).  The variant may coincide with the molecule.
// Deterministic for (molecules, variants_per_molecule, seed).
std::vector<TokenSeq> prompted_rows(const nn::Vocabulary& vocab,
                                    const std::vector<std::string>& molecules,
                                    int variants_per_molecule,
                                    std::uint64_t seed);

}  // namespace era::pipeline
