#include "era/chem/properties.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace era::chem {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(current);
  return fields;
}

bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

double parse_double_field(const std::string& text, const std::string& path) {
  std::size_t used = 0;
  const double v = std::stod(text, &used);
  if (used != text.size()) {
    throw std::runtime_error(path + ": malformed numeric field '" + text + "'");
  }
  return v;
}

}  // namespace

// ===== CrippenTable ==========================================================

CrippenTable CrippenTable::load(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open contribution table " + csv_path);

  CrippenTable table;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) continue;
    if (line[0] == '#') {
      const std::string version_tag = "# version:";
      if (line.compare(0, version_tag.size(), version_tag) == 0) {
        table.version_ = std::stoi(line.substr(version_tag.size()));
      }
      continue;
    }
    if (!header_seen) {
      if (line != "atom_type,pattern,logp_contrib,mr_contrib") {
        throw std::runtime_error(csv_path + ": unexpected header '" + line + "'");
      }
      header_seen = true;
      continue;
    }
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != 4) {
      throw std::runtime_error(csv_path + ": expected 4 fields, got line '" +
                               line + "'");
    }
    Contribution c;
    c.logp = parse_double_field(fields[2], csv_path);
    c.mr = parse_double_field(fields[3], csv_path);
    if (!table.rows_.emplace(fields[0], c).second) {
      throw std::runtime_error(csv_path + ": duplicate atom type " + fields[0]);
    }
  }
  if (!header_seen) throw std::runtime_error(csv_path + ": missing header");
  if (table.version_ <= 0) {
    throw std::runtime_error(csv_path + ": missing '# version: N' line");
  }
  return table;
}

const CrippenTable& CrippenTable::builtin() {
  static const CrippenTable table = load(std::string(ERA_DATA_DIR) + "/crippen.csv");
  return table;
}

const CrippenTable::Contribution& CrippenTable::at(
    const std::string& atom_type) const {
  const auto it = rows_.find(atom_type);
  if (it == rows_.end()) {
    throw PropertyError("unknown contribution atom type " + atom_type);
  }
  return it->second;
}

// ===== atom classification ===================================================

namespace {

bool is_heavy(const Atom& a) { return a.element != "H"; }

struct NeighborScan {
  int heavy = 0;
  int double_to_c = 0;
  int double_to_het = 0;
  int triples = 0;
  bool aromatic_neighbor = false;
  bool het_neighbor = false;  // any non-C, non-H neighbor (aromatic included)
};

NeighborScan scan_neighbors(const MolGraph& mol, int atom) {
  NeighborScan s;
  for (int bi : mol.atom_bonds[atom]) {
    const int nb = mol.other_end(bi, atom);
    const Atom& n = mol.atoms[nb];
    if (is_heavy(n)) ++s.heavy;
    if (n.aromatic) s.aromatic_neighbor = true;
    if (n.element != "C" && n.element != "H") s.het_neighbor = true;
    const BondOrder order = mol.bonds[bi].order;
    if (order == BondOrder::kDouble) {
      if (n.element == "C") {
        ++s.double_to_c;
      } else {
        ++s.double_to_het;
      }
    } else if (order == BondOrder::kTriple) {
      ++s.triples;
    }
  }
  return s;
}

bool has_double_bond(const MolGraph& mol, int atom) {
  for (int bi : mol.atom_bonds[atom]) {
    if (mol.bonds[bi].order == BondOrder::kDouble) return true;
  }
  return false;
}

std::string classify_aromatic_carbon(const MolGraph& mol, int atom) {
  if (mol.atoms[atom].total_h() > 0) return "C18";
  int aromatic_bonds = 0;
  for (int bi : mol.atom_bonds[atom]) {
    if (mol.bonds[bi].order == BondOrder::kAromatic) ++aromatic_bonds;
  }
  if (aromatic_bonds >= 3) return "C19";
  for (int bi : mol.atom_bonds[atom]) {
    const Bond& bond = mol.bonds[bi];
    if (bond.order == BondOrder::kAromatic) continue;
    if (bond.order == BondOrder::kDouble) return "C25";
    const Atom& sub = mol.atoms[mol.other_end(bi, atom)];
    if (sub.aromatic) return "C20";
    if (sub.element == "C") return "C21";
    if (sub.element == "N") return "C22";
    if (sub.element == "O") return "C23";
    if (sub.element == "S") return "C24";
    if (sub.element == "F") return "C14";
    if (sub.element == "Cl") return "C15";
    if (sub.element == "Br") return "C16";
    if (sub.element == "I") return "C17";
    if (sub.element == "H") continue;
    return "C13";
  }
  return "CS";
}

std::string classify_carbon(const MolGraph& mol, int atom) {
  if (mol.atoms[atom].aromatic) return classify_aromatic_carbon(mol, atom);
  const NeighborScan s = scan_neighbors(mol, atom);
  if (s.double_to_het > 0) return "C5";
  if (s.triples > 0) return "C7";
  if (s.double_to_c > 0) return s.aromatic_neighbor ? "C26" : "C6";
  if (s.het_neighbor) return s.heavy <= 2 ? "C3" : "C4";
  if (s.aromatic_neighbor) {
    switch (s.heavy) {
      case 1: return "C8";
      case 2: return "C10";
      case 3: return "C11";
      default: return "C12";
    }
  }
  return s.heavy <= 2 ? "C1" : "C2";
}

std::string classify_nitrogen(const MolGraph& mol, int atom) {
  const Atom& a = mol.atoms[atom];
  if (a.aromatic) return a.charge == 0 ? "N11" : "N12";
  if (a.charge > 0) return a.total_h() == 0 ? "N13" : "N10";
  if (a.charge < 0) return "N14";
  const NeighborScan s = scan_neighbors(mol, atom);
  if (s.triples > 0) return "N9";
  if (s.double_to_c + s.double_to_het > 0) {
    return a.total_h() > 0 ? "N5" : "N6";
  }
  const int h = a.total_h();
  if (s.aromatic_neighbor) {
    return h >= 2 ? "N3" : h == 1 ? "N4" : "N8";
  }
  return h >= 2 ? "N1" : h == 1 ? "N2" : "N7";
}

std::string classify_oxygen(const MolGraph& mol, int atom) {
  const Atom& a = mol.atoms[atom];
  if (a.aromatic) return "O1";

  for (int bi : mol.atom_bonds[atom]) {
    if (mol.bonds[bi].order != BondOrder::kDouble) continue;
    const int nb = mol.other_end(bi, atom);
    const Atom& n = mol.atoms[nb];
    if (n.element == "N" || n.element == "O") return "O5";
    if (n.element == "S") return "O6";
    if (n.element != "C") return "OS";
    if (n.aromatic) return "O8";
    // Carbonyl oxygen: subclass by the carbonyl carbon's other substituents.
    int het_subs = 0;
    bool aromatic_sub = false;
    for (int cbi : mol.atom_bonds[nb]) {
      const int sub = mol.other_end(cbi, nb);
      if (sub == atom) continue;
      const Atom& subatom = mol.atoms[sub];
      if (subatom.aromatic) aromatic_sub = true;
      if (subatom.element != "C" && subatom.element != "H") ++het_subs;
    }
    if (aromatic_sub) return "O10";
    if (het_subs >= 2) return "O11";
    return "O9";
  }

  if (a.charge < 0) {
    for (int bi : mol.atom_bonds[atom]) {
      const int nb = mol.other_end(bi, atom);
      const Atom& n = mol.atoms[nb];
      if (n.element == "N") return "O5";
      if (n.element == "S") return "O6";
      if (n.element == "C" && has_double_bond(mol, nb)) return "O12";
    }
    return "O7";
  }

  if (a.total_h() > 0) return "O2";
  const NeighborScan s = scan_neighbors(mol, atom);
  return s.aromatic_neighbor ? "O4" : "O3";
}

}  // namespace

std::string crippen_hydrogen_type(const MolGraph& mol, int atom) {
  const std::string& el = mol.atoms[atom].element;
  if (el == "C" || el == "H") return "H1";
  if (el == "N") return "H3";
  if (el == "O") {
    for (int bi : mol.atom_bonds[atom]) {
      const int nb = mol.other_end(bi, atom);
      if (mol.atoms[nb].element == "N") return "H3";
    }
    for (int bi : mol.atom_bonds[atom]) {
      const int nb = mol.other_end(bi, atom);
      const Atom& n = mol.atoms[nb];
      if (n.element == "O" || n.element == "S") return "H4";
      if (n.element == "C" && !n.aromatic && has_double_bond(mol, nb)) {
        return "H4";  // acid / enol hydroxyl
      }
    }
    return "H2";
  }
  return "H2";  // hydrogens on S, P, and exotic elements
}

std::string crippen_atom_type(const MolGraph& mol, int atom) {
  const Atom& a = mol.atoms[atom];
  const std::string& el = a.element;
  if (el == "C") return classify_carbon(mol, atom);
  if (el == "N") return classify_nitrogen(mol, atom);
  if (el == "O") return classify_oxygen(mol, atom);
  if (el == "F" || el == "Cl" || el == "Br" || el == "I") return el;
  if (el == "S") {
    if (a.aromatic) return "S3";
    if (a.charge != 0) return "S2";
    return "S1";
  }
  if (el == "P") return "P";
  if (el == "H") {
    if (mol.atom_bonds[atom].empty()) return "HS";
    const int nb = mol.other_end(mol.atom_bonds[atom][0], atom);
    if (mol.atoms[nb].element == "H") return "H1";
    return crippen_hydrogen_type(mol, nb);
  }
  throw PropertyError("element outside the contribution scheme: " + el);
}

namespace {

double crippen_sum(const MolGraph& mol, const CrippenTable& table, bool logp) {
  double total = 0.0;
  for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
    const int atom = static_cast<int>(i);
    const CrippenTable::Contribution& c = table.at(crippen_atom_type(mol, atom));
    total += logp ? c.logp : c.mr;
    const int h = mol.atoms[i].total_h();
    if (h > 0) {
      const CrippenTable::Contribution& hc =
          table.at(crippen_hydrogen_type(mol, atom));
      total += h * (logp ? hc.logp : hc.mr);
    }
  }
  return total;
}

}  // namespace

double crippen_logp(const MolGraph& mol, const CrippenTable& table) {
  return crippen_sum(mol, table, /*logp=*/true);
}

double crippen_mr(const MolGraph& mol, const CrippenTable& table) {
  return crippen_sum(mol, table, /*logp=*/false);
}

// ===== fingerprints ==========================================================

Fingerprint::Fingerprint(std::size_t nbits)
    : nbits_(nbits), words_((nbits + 63) / 64, 0) {
  if (nbits == 0) throw std::invalid_argument("fingerprint needs nbits > 0");
}

void Fingerprint::set(std::size_t bit) { words_[bit / 64] |= 1ULL << (bit % 64); }

bool Fingerprint::test(std::size_t bit) const {
  return (words_[bit / 64] >> (bit % 64)) & 1ULL;
}

std::size_t Fingerprint::count() const {
  std::size_t total = 0;
  for (std::uint64_t w : words_) total += std::popcount(w);
  return total;
}

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t fnv_u64(std::uint64_t h, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  return fnv_bytes(h, bytes, 8);
}

std::uint64_t atom_invariant(const MolGraph& mol, int atom) {
  const Atom& a = mol.atoms[atom];
  std::uint64_t h = fnv_bytes(kFnvOffset, a.element.data(), a.element.size());
  h = fnv_u64(h, static_cast<std::uint64_t>(mol.degree(atom)));
  h = fnv_u64(h, static_cast<std::uint64_t>(a.total_h()));
  h = fnv_u64(h, static_cast<std::uint64_t>(a.charge + 128));
  h = fnv_u64(h, a.aromatic ? 1 : 0);
  return h;
}

}  // namespace

Fingerprint fingerprint(const MolGraph& mol, std::size_t nbits, int radius) {
  Fingerprint fp(nbits);
  std::vector<std::uint64_t> current(mol.atoms.size());
  for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
    current[i] = atom_invariant(mol, static_cast<int>(i));
    fp.set(current[i] % nbits);
  }
  std::vector<std::uint64_t> next(mol.atoms.size());
  for (int r = 1; r <= radius; ++r) {
    for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
      const int atom = static_cast<int>(i);
      // Sorted (bond order, neighbor hash) pairs make the environment hash
      // independent of atom and bond input order.
      std::vector<std::pair<std::uint64_t, std::uint64_t>> env;
      env.reserve(mol.atom_bonds[i].size());
      for (int bi : mol.atom_bonds[i]) {
        env.emplace_back(static_cast<std::uint64_t>(mol.bonds[bi].order),
                         current[mol.other_end(bi, atom)]);
      }
      std::sort(env.begin(), env.end());
      std::uint64_t h = fnv_u64(kFnvOffset, static_cast<std::uint64_t>(r));
      h = fnv_u64(h, current[i]);
      for (const auto& [order, nb_hash] : env) {
        h = fnv_u64(h, order);
        h = fnv_u64(h, nb_hash);
      }
      next[i] = h;
      fp.set(h % nbits);
    }
    current = next;
  }
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.nbits() != b.nbits()) {
    throw std::invalid_argument("fingerprint length mismatch");
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t w = 0; w < a.words_.size(); ++w) {
    inter += std::popcount(a.words_[w] & b.words_[w]);
    uni += std::popcount(a.words_[w] | b.words_[w]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ===== external property tables ==============================================

PropertyTable PropertyTable::load(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open property table " + csv_path);

  PropertyTable table;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) continue;
    if (line[0] == '#') continue;
    if (!header_seen) {
      if (line != "smiles,property_name,value") {
        throw std::runtime_error(csv_path + ": unexpected header '" + line + "'");
      }
      header_seen = true;
      continue;
    }
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != 3) {
      throw std::runtime_error(csv_path + ": expected 3 fields, got line '" +
                               line + "'");
    }
    const double value = parse_double_field(fields[2], csv_path);
    if (!table.values_.emplace(std::make_pair(fields[0], fields[1]), value)
             .second) {
      throw std::runtime_error(csv_path + ": duplicate entry for (" + fields[0] +
                               ", " + fields[1] + ")");
    }
  }
  if (!header_seen) throw std::runtime_error(csv_path + ": missing header");
  return table;
}

std::optional<double> PropertyTable::lookup(
    const std::string& smiles, const std::string& property_name) const {
  const auto it = values_.find(std::make_pair(smiles, property_name));
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

// ===== dispatch ==============================================================

double property_value(const MolGraph& mol, const std::string& smiles,
                      const std::string& property_name,
                      const CrippenTable& crippen,
                      const PropertyTable* external) {
  if (property_name == "logp") return crippen_logp(mol, crippen);
  if (property_name == "mr") return crippen_mr(mol, crippen);
  if (property_name == "ring_count") return ring_count(mol);
  if (external == nullptr) {
    throw PropertyError("property '" + property_name +
                        "' needs an external property table");
  }
  const std::optional<double> v = external->lookup(smiles, property_name);
  if (!v) {
    throw PropertyError("property '" + property_name + "' has no entry for '" +
                        smiles + "'");
  }
  return *v;
}

}  // namespace era::chem
