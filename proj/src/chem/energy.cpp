#include "era/chem/energy.hpp"

#include <cmath>
#include <stdexcept>

namespace era::chem {

namespace {

bool is_leaf(const EnergySpec& spec) {
  return spec.kind == EnergyKind::kHarmonic || spec.kind == EnergyKind::kNegLog;
}

void validate_branch(const EnergySpec& spec, bool top_level, bool similarity) {
  switch (spec.kind) {
    case EnergyKind::kHarmonic:
    case EnergyKind::kNegLog:
      if (spec.property.empty()) {
        throw std::invalid_argument("energy spec needs a property name");
      }
      if ((spec.property == "tanimoto") != similarity) {
        throw std::invalid_argument(
            similarity
                ? "prompted similarity branch must use property 'tanimoto'"
                : "property 'tanimoto' is only valid in a prompted similarity "
                  "branch");
      }
      if (spec.kind == EnergyKind::kHarmonic && !(spec.sigma > 0.0)) {
        throw std::invalid_argument("harmonic energy needs sigma > 0");
      }
      if (spec.kind == EnergyKind::kNegLog && !(spec.clamp > 0.0)) {
        throw std::invalid_argument("neglog energy needs clamp > 0");
      }
      if (!std::isfinite(spec.invalid_energy)) {
        throw std::invalid_argument("energy spec needs a finite invalid_energy");
      }
      return;
    case EnergyKind::kComposite: {
      if (spec.components.empty()) {
        throw std::invalid_argument("composite energy needs components");
      }
      for (const auto& [beta, child] : spec.components) {
        if (!(beta > 0.0)) {
          throw std::invalid_argument("composite weights must be positive");
        }
        if (!child) {
          throw std::invalid_argument("composite component is null");
        }
        validate_branch(*child, /*top_level=*/false, similarity);
      }
      return;
    }
    case EnergyKind::kPrompted: {
      if (!top_level) {
        throw std::invalid_argument(
            "prompted energy is only valid at the top level");
      }
      if (!spec.similarity || !spec.property_term) {
        throw std::invalid_argument(
            "prompted energy needs similarity and property terms");
      }
      if (!std::isfinite(spec.identity_penalty)) {
        throw std::invalid_argument("identity_penalty must be finite");
      }
      validate_branch(*spec.similarity, /*top_level=*/false,
                      /*similarity=*/true);
      validate_branch(*spec.property_term, /*top_level=*/false,
                      /*similarity=*/false);
      return;
    }
  }
  throw std::invalid_argument("unknown energy kind");
}

double apply_leaf(const EnergySpec& spec, double f) {
  if (spec.kind == EnergyKind::kHarmonic) {
    const double d = f - spec.mu;
    return d * d / (2.0 * spec.sigma * spec.sigma);
  }
  if (f <= 0.0) return spec.clamp;
  return std::min(-std::log(f), spec.clamp);
}

// Evaluates a non-similarity branch on an already-parsed molecule.
double eval_branch(const EnergySpec& spec, const ParseResult& parsed,
                   const std::string& smiles, const EnergyContext& ctx) {
  if (is_leaf(spec)) {
    if (!parsed.valid) return spec.invalid_energy;
    const CrippenTable& crippen =
        ctx.crippen ? *ctx.crippen : CrippenTable::builtin();
    double f = 0.0;
    try {
      f = property_value(parsed.mol, smiles, spec.property, crippen,
                         ctx.external);
    } catch (const PropertyError&) {
      return spec.invalid_energy;
    }
    return apply_leaf(spec, f);
  }
  double total = 0.0;
  for (const auto& [beta, child] : spec.components) {
    total += beta * eval_branch(*child, parsed, smiles, ctx);
  }
  return total;
}

// Evaluates the similarity branch of a prompted spec.  `f_sim` is empty when
// the generated string is invalid.
double eval_similarity(const EnergySpec& spec, const std::optional<double>& f_sim,
                       double identity_penalty) {
  if (is_leaf(spec)) {
    if (!f_sim) return spec.invalid_energy;
    if (*f_sim == 1.0) return identity_penalty;
    return apply_leaf(spec, *f_sim);
  }
  double total = 0.0;
  for (const auto& [beta, child] : spec.components) {
    total += beta * eval_similarity(*child, f_sim, identity_penalty);
  }
  return total;
}

}  // namespace

double default_invalid_energy(const std::string& property) {
  if (property == "tanimoto") return 10.0;
  if (property == "qed") return 4.5;
  if (property == "logp") return 300.0;
  if (property == "mr") return 400.0;
  if (property == "ring_count") return 70.0;
  throw std::invalid_argument("no published invalid-molecule energy for '" +
                              property + "'; set invalid_energy explicitly");
}

double default_neglog_clamp(const std::string& property) {
  if (property == "qed") return 4.5;
  if (property == "tanimoto") return 10.0;
  throw std::invalid_argument("no published neglog clamp for '" + property +
                              "'; set clamp explicitly");
}

EnergySpec harmonic_energy(const std::string& property, double mu, double sigma,
                           double invalid_energy) {
  EnergySpec spec;
  spec.kind = EnergyKind::kHarmonic;
  spec.property = property;
  spec.mu = mu;
  spec.sigma = sigma;
  spec.invalid_energy =
      std::isnan(invalid_energy) ? default_invalid_energy(property)
                                 : invalid_energy;
  return spec;
}

EnergySpec neglog_energy(const std::string& property, double clamp,
                         double invalid_energy) {
  EnergySpec spec;
  spec.kind = EnergyKind::kNegLog;
  spec.property = property;
  spec.clamp = std::isnan(clamp) ? default_neglog_clamp(property) : clamp;
  spec.invalid_energy =
      std::isnan(invalid_energy) ? default_invalid_energy(property)
                                 : invalid_energy;
  return spec;
}

EnergySpec composite_energy(
    std::vector<std::pair<double, EnergySpec>> components) {
  EnergySpec spec;
  spec.kind = EnergyKind::kComposite;
  spec.components.reserve(components.size());
  for (auto& [beta, child] : components) {
    spec.components.emplace_back(
        beta, std::make_shared<EnergySpec>(std::move(child)));
  }
  return spec;
}

EnergySpec prompted_energy(EnergySpec similarity, EnergySpec property_term,
                           double identity_penalty) {
  EnergySpec spec;
  spec.kind = EnergyKind::kPrompted;
  spec.similarity = std::make_shared<EnergySpec>(std::move(similarity));
  spec.property_term = std::make_shared<EnergySpec>(std::move(property_term));
  spec.identity_penalty = identity_penalty;
  return spec;
}

void validate_energy_spec(const EnergySpec& spec) {
  validate_branch(spec, /*top_level=*/true, /*similarity=*/false);
}

double evaluate_energy(const EnergySpec& spec, const std::string& generated,
                       const std::optional<std::string>& prompt,
                       const EnergyContext& ctx) {
  validate_energy_spec(spec);

  const ParseResult parsed = parse_smiles(generated);

  if (spec.kind != EnergyKind::kPrompted) {
    return eval_branch(spec, parsed, generated, ctx);
  }

  if (!prompt) {
    throw std::invalid_argument("prompted energy needs a prompt molecule");
  }
  const ParseResult prompt_parsed = parse_smiles(*prompt);
  if (!prompt_parsed.valid) {
    throw std::invalid_argument("prompt is not a valid molecule: " +
                                prompt_parsed.reason);
  }

  std::optional<double> f_sim;
  if (parsed.valid) {
    f_sim = tanimoto(fingerprint(parsed.mol), fingerprint(prompt_parsed.mol));
  }
  return eval_similarity(*spec.similarity, f_sim, spec.identity_penalty) +
         eval_branch(*spec.property_term, parsed, generated, ctx);
}

// ===== JSON ==================================================================

namespace {

std::string kind_name(EnergyKind kind) {
  switch (kind) {
    case EnergyKind::kHarmonic: return "harmonic";
    case EnergyKind::kNegLog: return "neglog";
    case EnergyKind::kComposite: return "composite";
    case EnergyKind::kPrompted: return "prompted";
  }
  return "unknown";
}

EnergyKind kind_from_name(const std::string& name) {
  if (name == "harmonic") return EnergyKind::kHarmonic;
  if (name == "neglog") return EnergyKind::kNegLog;
  if (name == "composite") return EnergyKind::kComposite;
  if (name == "prompted") return EnergyKind::kPrompted;
  throw std::invalid_argument("unknown energy kind '" + name + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const EnergySpec& spec) {
  j = nlohmann::json{{"kind", kind_name(spec.kind)}};
  switch (spec.kind) {
    case EnergyKind::kHarmonic:
      j["property"] = spec.property;
      j["mu"] = spec.mu;
      j["sigma"] = spec.sigma;
      j["invalid_energy"] = spec.invalid_energy;
      break;
    case EnergyKind::kNegLog:
      j["property"] = spec.property;
      j["clamp"] = spec.clamp;
      j["invalid_energy"] = spec.invalid_energy;
      break;
    case EnergyKind::kComposite: {
      nlohmann::json components = nlohmann::json::array();
      for (const auto& [beta, child] : spec.components) {
        components.push_back({{"beta", beta}, {"spec", *child}});
      }
      j["components"] = std::move(components);
      break;
    }
    case EnergyKind::kPrompted:
      j["similarity"] = *spec.similarity;
      j["property_term"] = *spec.property_term;
      j["identity_penalty"] = spec.identity_penalty;
      break;
  }
}

void from_json(const nlohmann::json& j, EnergySpec& spec) {
  spec = EnergySpec{};
  spec.kind = kind_from_name(j.at("kind").get<std::string>());
  switch (spec.kind) {
    case EnergyKind::kHarmonic:
      spec.property = j.at("property").get<std::string>();
      spec.mu = j.at("mu").get<double>();
      spec.sigma = j.at("sigma").get<double>();
      spec.invalid_energy = j.contains("invalid_energy")
                                ? j.at("invalid_energy").get<double>()
                                : default_invalid_energy(spec.property);
      break;
    case EnergyKind::kNegLog:
      spec.property = j.at("property").get<std::string>();
      spec.clamp = j.contains("clamp") ? j.at("clamp").get<double>()
                                       : default_neglog_clamp(spec.property);
      spec.invalid_energy = j.contains("invalid_energy")
                                ? j.at("invalid_energy").get<double>()
                                : default_invalid_energy(spec.property);
      break;
    case EnergyKind::kComposite:
      for (const nlohmann::json& item : j.at("components")) {
        spec.components.emplace_back(
            item.at("beta").get<double>(),
            std::make_shared<EnergySpec>(item.at("spec").get<EnergySpec>()));
      }
      break;
    case EnergyKind::kPrompted:
      spec.similarity = std::make_shared<EnergySpec>(
          j.at("similarity").get<EnergySpec>());
      spec.property_term = std::make_shared<EnergySpec>(
          j.at("property_term").get<EnergySpec>());
      spec.identity_penalty = j.contains("identity_penalty")
                                  ? j.at("identity_penalty").get<double>()
                                  : 3.5;
      break;
  }
}

}  // namespace era::chem
