#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "era/chem/properties.hpp"
#include "era/chem/smiles.hpp"

// Energy functions over generated SMILES strings.  Evaluation is total:
// every string, including garbage that does not tokenize, maps to a finite
// energy, with chemically invalid strings receiving property-specific
// fallback values (Tanimoto 10, QED 4.5, LogP 300, MR 400, ring count 70).
// Totality keeps exp(-U) bounded, which the alignment objective requires.

namespace era::chem {

enum class EnergyKind { kHarmonic, kNegLog, kComposite, kPrompted };

// A recursive energy description.
//
//   harmonic:  U = (f - mu)^2 / (2 sigma^2)          for property value f
//   neglog:    U = min(-log f, clamp), clamp if f<=0
//   composite: U = sum_i beta_i * U_i                 (beta_i > 0)
//   prompted:  U = U_similarity + U_property, where the similarity branch is
//              evaluated on the Tanimoto similarity between the generated and
//              prompt molecules, with an exact match (similarity 1.0) scored
//              as identity_penalty instead of its formula value.
//
// Prompted specs are only valid at the top level; the similarity branch may
// only reference the "tanimoto" property (leaves or composites of leaves),
// and "tanimoto" may not appear anywhere else.
struct EnergySpec {
  EnergyKind kind = EnergyKind::kHarmonic;

  // harmonic / neglog leaves
  std::string property;  // "logp", "mr", "ring_count", "tanimoto", or external
  double mu = 0.0;
  double sigma = 1.0;
  double clamp = 0.0;
  // Returned for strings that do not parse as valid molecules (and for valid
  // molecules whose property cannot be computed).
  double invalid_energy = std::numeric_limits<double>::quiet_NaN();

  // composite
  std::vector<std::pair<double, std::shared_ptr<EnergySpec>>> components;

  // prompted
  std::shared_ptr<EnergySpec> similarity;
  std::shared_ptr<EnergySpec> property_term;
  double identity_penalty = 3.5;
};

// Fallback energy for invalid molecules, by property name.  Throws
// std::invalid_argument for properties without a published fallback; specs
// over such properties must set invalid_energy explicitly.
double default_invalid_energy(const std::string& property);

// Default neglog ceiling by property name (QED 4.5, Tanimoto 10); throws
// std::invalid_argument for other properties.
double default_neglog_clamp(const std::string& property);

// Factory helpers.  NaN invalid_energy / clamp means "use the property's
// published default".
EnergySpec harmonic_energy(
    const std::string& property, double mu, double sigma,
    double invalid_energy = std::numeric_limits<double>::quiet_NaN());
EnergySpec neglog_energy(
    const std::string& property,
    double clamp = std::numeric_limits<double>::quiet_NaN(),
    double invalid_energy = std::numeric_limits<double>::quiet_NaN());
EnergySpec composite_energy(
    std::vector<std::pair<double, EnergySpec>> components);
EnergySpec prompted_energy(EnergySpec similarity, EnergySpec property_term,
                           double identity_penalty = 3.5);

// Throws std::invalid_argument if the spec violates its invariants
// (sigma <= 0, clamp <= 0, non-positive composite weight, empty composite,
// nested prompted spec, misplaced "tanimoto" property, non-finite fallback).
void validate_energy_spec(const EnergySpec& spec);

// Property-table handles used during evaluation.  A null crippen table means
// the built-in one; a null external table simply makes external properties
// unavailable (their energies fall back to invalid_energy).
struct EnergyContext {
  const CrippenTable* crippen = nullptr;
  const PropertyTable* external = nullptr;
};

// Evaluates `spec` on a generated string.  Never throws for any `generated`
// value; throws std::invalid_argument for malformed specs and for prompted
// specs without a prompt (or with an unparseable prompt).  Non-prompted specs
// ignore the prompt argument.
double evaluate_energy(const EnergySpec& spec, const std::string& generated,
                       const std::optional<std::string>& prompt = std::nullopt,
                       const EnergyContext& ctx = {});

// JSON round-trip for run configurations.
void to_json(nlohmann::json& j, const EnergySpec& spec);
void from_json(const nlohmann::json& j, EnergySpec& spec);

}  // namespace era::chem
