#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

// SMILES handling: atom-wise tokenization and a validity-checking parser that
// builds a molecular graph.
//
// Supported dialect: the organic subset (B, C, N, O, S, P, F, Cl, Br, I),
// aromatic lowercase atoms (b, c, n, o, s, p), bracket atoms with isotope /
// chirality / hydrogen count / charge / atom-class annotations, branches,
// ring-closure digits (including %NN), explicit bonds (- = # :), dots for
// disconnected components, and stereo bond markers (/ \) which are tokenized
// but treated as single bonds structurally.
//
// Validity is approximate by design: valence is checked with relaxed aromatic
// accounting (an aromatic bond contributes 1.5 to valence; sums are rounded
// half-down), aromatic atoms must carry at least two aromatic bonds, and
// Kekule feasibility is never verified.  Consequences worth knowing: benzene,
// pyridine, naphthalene and thiophene parse as valid, while five-membered
// heteroaromatics whose heteroatom donates a lone pair (furan, pyrrole) are
// rejected.  Validity counts produced with this parser are therefore
// comparable across runs of this code base but not against full
// cheminformatics toolkits.

namespace era::chem {

// ===== tokenizer =============================================================

// Raised for strings that cannot be split into atom-wise tokens at all
// (unterminated bracket atom, bad %NN ring closure, characters outside the
// token alphabet).  `position` is the byte offset of the offending character.
class TokenizeError : public std::runtime_error {
 public:
  TokenizeError(const std::string& what, std::size_t position)
      : std::runtime_error(what), position(position) {}

  std::size_t position;
};

// Splits a SMILES string into atom-wise tokens: bracket atoms ("[C@@H]"),
// two-letter halogens ("Cl", "Br"), single-letter atoms, digits, "%NN" ring
// closures, and one token per structural character.  Concatenating the tokens
// reproduces the input exactly.
std::vector<std::string> tokenize_smiles(const std::string& text);

// ===== molecular graph =======================================================

enum class BondOrder { kSingle = 1, kDouble = 2, kTriple = 3, kAromatic = 4 };

// Valence contribution of one bond (aromatic counts 1.5).
double bond_valence(BondOrder order);

struct Atom {
  std::string element;  // element symbol, normalized to uppercase-first form
  bool aromatic = false;
  int charge = 0;
  // Hydrogen count written inside a bracket atom; -1 for organic-subset atoms
  // (whose hydrogens are implicit).
  int explicit_h = -1;
  // Hydrogens added to fill the default valence (organic-subset atoms only).
  int implicit_h = 0;

  int total_h() const { return (explicit_h < 0 ? 0 : explicit_h) + implicit_h; }
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::kSingle;
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  // Indices into `bonds`, one list per atom, in parse order.
  std::vector<std::vector<int>> atom_bonds;
  int components = 0;

  int degree(int atom) const { return static_cast<int>(atom_bonds[atom].size()); }
  int other_end(int bond, int atom) const {
    return bonds[bond].a == atom ? bonds[bond].b : bonds[bond].a;
  }
};

// Result of parsing: either a graph or a human-readable invalidity reason.
// Parsing never throws; garbage input is reported, not raised, because
// downstream energy evaluation must be total over arbitrary strings.
struct ParseResult {
  bool valid = false;
  MolGraph mol;
  std::string reason;  // empty when valid

  static ParseResult failure(std::string why) {
    ParseResult r;
    r.valid = false;
    r.reason = std::move(why);
    return r;
  }
};

// Parses a SMILES string into a molecular graph, checking ring-closure
// pairing, parenthesis balance, and valence limits (C<=4, N<=3 or 4 when +1,
// O<=2 adjusted by charge, halogens 1, S in {2,4,6}, P in {3,5}, B<=3)
// with implicit hydrogens counted.  Elements outside that list parse with an
// effectively unchecked valence; property calculators reject them later.
ParseResult parse_smiles(const std::string& text);

// Cyclomatic number: bonds - atoms + connected components.  Equals the number
// of independent rings for every molecule this dialect can express.
int ring_count(const MolGraph& mol);

}  // namespace era::chem
