#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "era/chem/smiles.hpp"

// Molecular property calculators: Wildman-Crippen LogP / molar refractivity
// by atomic contributions, hashed circular fingerprints, and Tanimoto
// similarity.  All calculators are pure functions over MolGraph; the
// contribution table is immutable after load.

namespace era::chem {

// Raised when a property cannot be computed for a structurally valid molecule
// (element missing from the contribution table, or a value missing from an
// external property table).  Energy evaluation maps this to the
// property-specific invalid-molecule fallback.
class PropertyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ===== Wildman-Crippen atomic contributions ==================================

// Versioned value table loaded from CSV (columns: atom_type, pattern,
// logp_contrib, mr_contrib; '#' lines are comments).  The `pattern` column
// documents each class; classification itself is implemented in
// `crippen_atom_type`.
class CrippenTable {
 public:
  struct Contribution {
    double logp = 0.0;
    double mr = 0.0;
  };

  // Throws std::runtime_error on malformed files or duplicate atom types.
  static CrippenTable load(const std::string& csv_path);
  // Loads the table shipped with this repository.
  static const CrippenTable& builtin();

  // Throws PropertyError for unknown atom types.
  const Contribution& at(const std::string& atom_type) const;

  int version() const { return version_; }
  std::size_t size() const { return rows_.size(); }

 private:
  std::map<std::string, Contribution> rows_;
  int version_ = 0;
};

// Classifies one atom of a valid molecule into a Wildman-Crippen atom type
// (e.g. "C18" for aromatic CH, "O2" for hydroxyl oxygen).  Falls back to the
// element's wildcard class ("CS", "NS", "OS") when no specific class fits.
// Throws PropertyError for elements outside the scheme.
std::string crippen_atom_type(const MolGraph& mol, int atom);

// Hydrogen contribution class for hydrogens attached to `atom` ("H1".."H4",
// wildcard "HS").
std::string crippen_hydrogen_type(const MolGraph& mol, int atom);

// Sum of atomic contributions, hydrogens included.  Throws PropertyError if
// any atom cannot be classified (exotic element).
double crippen_logp(const MolGraph& mol, const CrippenTable& table);
double crippen_mr(const MolGraph& mol, const CrippenTable& table);

// ===== circular fingerprints =================================================

// Fixed-length bit set from hashed circular atom environments.
class Fingerprint {
 public:
  explicit Fingerprint(std::size_t nbits = 2048);

  void set(std::size_t bit);
  bool test(std::size_t bit) const;
  std::size_t nbits() const { return nbits_; }
  std::size_t count() const;  // number of set bits

  const std::vector<std::uint64_t>& words() const { return words_; }

 private:
  friend double tanimoto(const Fingerprint& a, const Fingerprint& b);
  std::size_t nbits_;
  std::vector<std::uint64_t> words_;
};

// Hashes circular environments of radius 0..radius around every atom into an
// `nbits`-wide fingerprint.  Atom invariants are (element, heavy degree,
// total hydrogen count, charge, aromatic flag); neighbor lists are sorted
// before hashing, so the result is independent of atom input order.
Fingerprint fingerprint(const MolGraph& mol, std::size_t nbits = 2048,
                        int radius = 2);

// |a AND b| / |a OR b|; defined as 1 when both fingerprints are empty.
// Throws std::invalid_argument on length mismatch.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

// ===== external property tables ==============================================

// Precomputed per-molecule property values loaded from CSV with header
// "smiles,property_name,value".  Lookup is by literal SMILES string (no
// canonicalization).  Used for properties this library does not compute
// natively (e.g. drug-likeness scores).
class PropertyTable {
 public:
  PropertyTable() = default;

  // Throws std::runtime_error on malformed files or duplicate keys.
  static PropertyTable load(const std::string& csv_path);

  std::optional<double> lookup(const std::string& smiles,
                               const std::string& property_name) const;
  std::size_t size() const { return values_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, double> values_;
};

// ===== dispatch ==============================================================

// Evaluates a named property on a valid molecule.  Natively computed:
// "logp", "mr", "ring_count".  Any other name is looked up in `external`
// keyed by `smiles`.  Throws PropertyError when the value cannot be produced
// (unclassifiable atom, missing table, missing row).
double property_value(const MolGraph& mol, const std::string& smiles,
                      const std::string& property_name,
                      const CrippenTable& crippen,
                      const PropertyTable* external = nullptr);

}  // namespace era::chem
