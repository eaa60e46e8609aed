#include "era/chem/smiles.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <utility>

namespace era::chem {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_organic_single(char c) {
  switch (c) {
    case 'B': case 'C': case 'N': case 'O': case 'S': case 'P':
    case 'F': case 'I':
      return true;
    default:
      return false;
  }
}

bool is_aromatic_single(char c) {
  switch (c) {
    case 'b': case 'c': case 'n': case 'o': case 's': case 'p':
      return true;
    default:
      return false;
  }
}

bool is_structural(char c) {
  switch (c) {
    case '(': case ')': case '.': case '=': case '#': case '-': case '+':
    case '/': case '\\': case ':': case '~': case '@': case '*': case '$':
    case '>': case '?':
      return true;
    default:
      return false;
  }
}

}  // namespace

// ===== tokenizer =============================================================

std::vector<std::string> tokenize_smiles(const std::string& text) {
  std::vector<std::string> tokens;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const char c = text[i];
    if (c == '[') {
      const std::size_t close = text.find(']', i);
      if (close == std::string::npos) {
        throw TokenizeError("unterminated bracket atom", i);
      }
      tokens.push_back(text.substr(i, close - i + 1));
      i = close + 1;
    } else if (c == '%') {
      if (i + 2 >= n || !is_digit(text[i + 1]) || !is_digit(text[i + 2])) {
        throw TokenizeError("ring closure '%' must be followed by two digits", i);
      }
      tokens.push_back(text.substr(i, 3));
      i += 3;
    } else if (c == 'B' && i + 1 < n && text[i + 1] == 'r') {
      tokens.emplace_back("Br");
      i += 2;
    } else if (c == 'C' && i + 1 < n && text[i + 1] == 'l') {
      tokens.emplace_back("Cl");
      i += 2;
    } else if (is_organic_single(c) || is_aromatic_single(c) || is_digit(c) ||
               is_structural(c)) {
      tokens.emplace_back(1, c);
      ++i;
    } else {
      throw TokenizeError("character outside the token alphabet", i);
    }
  }
  return tokens;
}

// ===== graph construction ====================================================

double bond_valence(BondOrder order) {
  switch (order) {
    case BondOrder::kSingle: return 1.0;
    case BondOrder::kDouble: return 2.0;
    case BondOrder::kTriple: return 3.0;
    case BondOrder::kAromatic: return 1.5;
  }
  return 1.0;
}

namespace {

// Parsed content of a bracket atom, e.g. "[13C@H2+:5]".
struct BracketAtom {
  std::string element;
  bool aromatic = false;
  int explicit_h = 0;
  int charge = 0;
};

std::optional<BracketAtom> parse_bracket(const std::string& token) {
  // token includes the surrounding '[' and ']'.
  std::size_t i = 1;
  const std::size_t end = token.size() - 1;
  BracketAtom out;

  while (i < end && is_digit(token[i])) ++i;  // isotope label, ignored

  if (i >= end) return std::nullopt;
  if (std::isupper(static_cast<unsigned char>(token[i]))) {
    out.element.push_back(token[i++]);
    // Inside brackets an uppercase-lowercase pair is one two-letter element.
    if (i < end && std::islower(static_cast<unsigned char>(token[i]))) {
      out.element.push_back(token[i++]);
    }
  } else if (i + 1 < end && (token.compare(i, 2, "se") == 0 ||
                             token.compare(i, 2, "as") == 0)) {
    out.aromatic = true;
    out.element.push_back(static_cast<char>(
        std::toupper(static_cast<unsigned char>(token[i]))));
    out.element.push_back(token[i + 1]);
    i += 2;
  } else if (is_aromatic_single(token[i])) {
    out.aromatic = true;
    out.element.push_back(static_cast<char>(
        std::toupper(static_cast<unsigned char>(token[i]))));
    ++i;
  } else {
    return std::nullopt;
  }

  while (i < end && token[i] == '@') ++i;  // chirality, ignored structurally

  if (i < end && token[i] == 'H') {
    ++i;
    if (i < end && is_digit(token[i])) {
      out.explicit_h = 0;
      while (i < end && is_digit(token[i])) {
        out.explicit_h = out.explicit_h * 10 + (token[i] - '0');
        ++i;
      }
    } else {
      out.explicit_h = 1;
    }
  }

  if (i < end && (token[i] == '+' || token[i] == '-')) {
    const int sign = token[i] == '+' ? 1 : -1;
    const char symbol = token[i];
    ++i;
    if (i < end && is_digit(token[i])) {
      int magnitude = 0;
      while (i < end && is_digit(token[i])) {
        magnitude = magnitude * 10 + (token[i] - '0');
        ++i;
      }
      out.charge = sign * magnitude;
    } else {
      out.charge = sign;
      while (i < end && token[i] == symbol) {
        out.charge += sign;
        ++i;
      }
    }
  }

  if (i < end && token[i] == ':') {
    ++i;
    if (i >= end || !is_digit(token[i])) return std::nullopt;
    while (i < end && is_digit(token[i])) ++i;  // atom class, ignored
  }

  if (i != end) return std::nullopt;
  return out;
}

// Allowed total valences per element (ascending).  Empty means unchecked:
// the element parses, but property calculators will reject it.
std::vector<int> allowed_valences(const std::string& element, int charge) {
  if (element == "C") return {4};
  if (element == "N") return {charge == 1 ? 4 : 3};
  if (element == "O") return {std::max(0, 2 + charge)};
  if (element == "B") return {3};
  if (element == "S") return {2, 4, 6};
  if (element == "P") return {3, 5};
  if (element == "F" || element == "Cl" || element == "Br" || element == "I") {
    return {std::max(0, 1 + charge)};
  }
  return {};
}

// Round half-down, so two aromatic bonds count 3 and three count 4.
int rounded_valence(double bond_sum) {
  return static_cast<int>(std::ceil(bond_sum - 0.5));
}

ParseResult finalize(MolGraph mol) {
  // Fill implicit hydrogens and check valences.
  for (std::size_t ai = 0; ai < mol.atoms.size(); ++ai) {
    Atom& atom = mol.atoms[ai];
    double bond_sum = 0.0;
    int aromatic_bonds = 0;
    for (int bi : mol.atom_bonds[ai]) {
      bond_sum += bond_valence(mol.bonds[bi].order);
      if (mol.bonds[bi].order == BondOrder::kAromatic) ++aromatic_bonds;
    }
    if (atom.aromatic && aromatic_bonds < 2) {
      return ParseResult::failure("aromatic atom outside an aromatic ring");
    }

    const std::vector<int> allowed = allowed_valences(atom.element, atom.charge);
    const int rounded = rounded_valence(bond_sum);
    if (allowed.empty()) {
      atom.implicit_h = std::max(atom.implicit_h, 0);
      continue;  // exotic element: valence unchecked
    }
    const int max_allowed = allowed.back();

    if (atom.explicit_h >= 0) {
      // Bracket atom: hydrogens are exactly as written.
      const int total = rounded + atom.explicit_h;
      const bool ok = atom.aromatic || allowed.size() == 1
                          ? total <= max_allowed
                          : std::find(allowed.begin(), allowed.end(), total) !=
                                allowed.end();
      if (!ok) return ParseResult::failure("valence exceeded");
      atom.implicit_h = 0;
    } else if (atom.aromatic) {
      if (rounded > max_allowed) return ParseResult::failure("valence exceeded");
      atom.implicit_h =
          atom.element == "C" ? std::max(0, max_allowed - rounded) : 0;
    } else {
      int fill = -1;
      for (int v : allowed) {
        if (v >= rounded) {
          fill = v;
          break;
        }
      }
      if (fill < 0) return ParseResult::failure("valence exceeded");
      atom.implicit_h = fill - rounded;
    }
  }

  // Connected components by depth-first search.
  std::vector<char> seen(mol.atoms.size(), 0);
  int components = 0;
  std::vector<int> stack;
  for (std::size_t root = 0; root < mol.atoms.size(); ++root) {
    if (seen[root]) continue;
    ++components;
    stack.push_back(static_cast<int>(root));
    seen[root] = 1;
    while (!stack.empty()) {
      const int at = stack.back();
      stack.pop_back();
      for (int bi : mol.atom_bonds[at]) {
        const int nb = mol.other_end(bi, at);
        if (!seen[nb]) {
          seen[nb] = 1;
          stack.push_back(nb);
        }
      }
    }
  }
  mol.components = components;

  ParseResult r;
  r.valid = true;
  r.mol = std::move(mol);
  return r;
}

}  // namespace

ParseResult parse_smiles(const std::string& text) {
  std::vector<std::string> tokens;
  try {
    tokens = tokenize_smiles(text);
  } catch (const TokenizeError& err) {
    return ParseResult::failure(std::string("tokenization failed: ") + err.what());
  }

  MolGraph mol;
  int prev = -1;
  std::vector<int> branch_stack;
  std::optional<BondOrder> pending;
  // Ring-closure number -> (atom index, bond annotation written at opening).
  std::map<int, std::pair<int, std::optional<BondOrder>>> ring_open;

  auto add_atom = [&mol](std::string element, bool aromatic, int charge,
                         int explicit_h) {
    Atom atom;
    atom.element = std::move(element);
    atom.aromatic = aromatic;
    atom.charge = charge;
    atom.explicit_h = explicit_h;
    mol.atoms.push_back(std::move(atom));
    mol.atom_bonds.emplace_back();
    return static_cast<int>(mol.atoms.size()) - 1;
  };
  auto add_bond = [&mol](int a, int b, BondOrder order) -> bool {
    for (int bi : mol.atom_bonds[a]) {
      if (mol.other_end(bi, a) == b) return false;  // parallel bond
    }
    Bond bond;
    bond.a = a;
    bond.b = b;
    bond.order = order;
    mol.bonds.push_back(bond);
    const int idx = static_cast<int>(mol.bonds.size()) - 1;
    mol.atom_bonds[a].push_back(idx);
    mol.atom_bonds[b].push_back(idx);
    return true;
  };
  auto default_order = [&mol](int a, int b) {
    return mol.atoms[a].aromatic && mol.atoms[b].aromatic
               ? BondOrder::kAromatic
               : BondOrder::kSingle;
  };
  auto bond_endpoints_ok = [&mol](int a, int b, BondOrder order) {
    return order != BondOrder::kAromatic ||
           (mol.atoms[a].aromatic && mol.atoms[b].aromatic);
  };

  auto attach = [&](int idx) -> const char* {
    if (prev >= 0) {
      const BondOrder order = pending.value_or(default_order(prev, idx));
      if (!bond_endpoints_ok(prev, idx, order)) {
        return "aromatic bond between non-aromatic atoms";
      }
      add_bond(prev, idx, order);
    } else if (pending) {
      return "bond with no preceding atom";
    }
    pending.reset();
    prev = idx;
    return nullptr;
  };

  for (const std::string& tok : tokens) {
    const char c0 = tok[0];
    if (c0 == '[') {
      const std::optional<BracketAtom> bracket = parse_bracket(tok);
      if (!bracket) return ParseResult::failure("malformed bracket atom " + tok);
      const int idx = add_atom(bracket->element, bracket->aromatic,
                               bracket->charge, bracket->explicit_h);
      if (const char* err = attach(idx)) return ParseResult::failure(err);
    } else if (tok == "Cl" || tok == "Br" ||
               (tok.size() == 1 && is_organic_single(c0))) {
      const int idx = add_atom(tok, /*aromatic=*/false, 0, -1);
      if (const char* err = attach(idx)) return ParseResult::failure(err);
    } else if (tok.size() == 1 && is_aromatic_single(c0)) {
      const std::string element(
          1, static_cast<char>(std::toupper(static_cast<unsigned char>(c0))));
      const int idx = add_atom(element, /*aromatic=*/true, 0, -1);
      if (const char* err = attach(idx)) return ParseResult::failure(err);
    } else if (is_digit(c0) || c0 == '%') {
      if (prev < 0) return ParseResult::failure("ring closure before any atom");
      const int number = c0 == '%' ? std::stoi(tok.substr(1)) : (c0 - '0');
      const auto open = ring_open.find(number);
      if (open == ring_open.end()) {
        ring_open.emplace(number, std::make_pair(prev, pending));
        pending.reset();
      } else {
        const int other = open->second.first;
        const std::optional<BondOrder> other_bond = open->second.second;
        ring_open.erase(open);
        if (other == prev) return ParseResult::failure("ring closure to itself");
        if (pending && other_bond && *pending != *other_bond) {
          return ParseResult::failure("conflicting ring-closure bond orders");
        }
        const BondOrder order = pending ? *pending
                                : other_bond ? *other_bond
                                             : default_order(other, prev);
        if (!bond_endpoints_ok(other, prev, order)) {
          return ParseResult::failure("aromatic bond between non-aromatic atoms");
        }
        if (!add_bond(other, prev, order)) {
          return ParseResult::failure("duplicate bond between one atom pair");
        }
        pending.reset();
      }
    } else if (tok == "(") {
      if (prev < 0) return ParseResult::failure("branch with no root atom");
      if (pending) return ParseResult::failure("bond before branch opening");
      branch_stack.push_back(prev);
    } else if (tok == ")") {
      if (branch_stack.empty()) return ParseResult::failure("unbalanced ')'");
      if (pending) return ParseResult::failure("dangling bond before ')'");
      prev = branch_stack.back();
      branch_stack.pop_back();
    } else if (tok == "-" || tok == "=" || tok == "#" || tok == ":" ||
               tok == "/" || tok == "\\") {
      if (pending) return ParseResult::failure("two bond symbols in a row");
      if (prev < 0) return ParseResult::failure("bond with no preceding atom");
      if (tok == "=") {
        pending = BondOrder::kDouble;
      } else if (tok == "#") {
        pending = BondOrder::kTriple;
      } else if (tok == ":") {
        pending = BondOrder::kAromatic;
      } else {
        pending = BondOrder::kSingle;  // '-', and stereo markers '/' '\'
      }
    } else if (tok == ".") {
      if (pending) return ParseResult::failure("dangling bond before '.'");
      prev = -1;
    } else {
      return ParseResult::failure("unexpected token '" + tok + "'");
    }
  }

  if (!branch_stack.empty()) return ParseResult::failure("unclosed branch");
  if (pending) return ParseResult::failure("dangling bond at end of input");
  if (!ring_open.empty()) return ParseResult::failure("unpaired ring closure");
  if (mol.atoms.empty()) return ParseResult::failure("no atoms");

  return finalize(std::move(mol));
}

int ring_count(const MolGraph& mol) {
  return static_cast<int>(mol.bonds.size()) -
         static_cast<int>(mol.atoms.size()) + mol.components;
}

}  // namespace era::chem
