#include "era/pipeline/corpus.hpp"

#include <set>
#include <stdexcept>

#include "era/chem/smiles.hpp"
#include "era/random.hpp"

namespace era::pipeline {

namespace {

// ===== random carbon trees ===================================================

// A connected acyclic carbon skeleton: children[i] lists the subtrees of node
// i, node 0 is the DFS root.  Total degree (parent + children) stays <= 4.
struct CarbonTree {
  std::vector<std::vector<int>> children;

  int size() const { return static_cast<int>(children.size()); }

  // Nodes that can still accept one more child.
  std::vector<int> open_nodes() const {
    std::vector<int> open;
    for (int i = 0; i < size(); ++i) {
      const int cap = (i == 0) ? 4 : 3;  // non-roots already spend one bond up
      if (static_cast<int>(children[i].size()) < cap) open.push_back(i);
    }
    return open;
  }
};

CarbonTree random_tree(RandomSource& rng, int nodes) {
  CarbonTree tree;
  tree.children.resize(nodes);
  for (int i = 1; i < nodes; ++i) {
    std::vector<int> open;
    for (int p = 0; p < i; ++p) {
      const int cap = (p == 0) ? 4 : 3;
      if (static_cast<int>(tree.children[p].size()) < cap) open.push_back(p);
    }
    const int parent = open[rng.uniform_index(open.size())];
    tree.children[parent].push_back(i);
  }
  return tree;
}

// DFS serialization: every child but the last is parenthesized.
std::string serialize_tree(const CarbonTree& tree,
                           const std::vector<std::string>& label, int node) {
  std::string out = label[node];
  const auto& kids = tree.children[node];
  for (std::size_t c = 0; c < kids.size(); ++c) {
    const std::string sub = serialize_tree(tree, label, kids[c]);
    if (c + 1 < kids.size()) {
      out += "(" + sub + ")";
    } else {
      out += sub;
    }
  }
  return out;
}

std::string random_alkane(RandomSource& rng, int carbons) {
  const CarbonTree tree = random_tree(rng, carbons);
  const std::vector<std::string> label(carbons, "C");
  return serialize_tree(tree, label, 0);
}

// An alkane skeleton with one hydroxyl oxygen grafted onto a random node
// that still has a free bond.
std::string random_alcohol(RandomSource& rng, int carbons) {
  CarbonTree tree = random_tree(rng, carbons);
  const std::vector<int> open = tree.open_nodes();
  const int host = open[rng.uniform_index(open.size())];
  tree.children.push_back({});
  tree.children[host].push_back(tree.size() - 1);
  std::vector<std::string> label(carbons, "C");
  label.push_back("O");
  return serialize_tree(tree, label, 0);
}

// Saturated ring of 5..8 carbons with one or two methyl substituents placed
// on interior positions (the opening and closing atoms stay bare).
std::string random_substituted_ring(RandomSource& rng) {
  const int n = 5 + static_cast<int>(rng.uniform_index(4));
  const int subs = 1 + static_cast<int>(rng.uniform_index(2));
  std::vector<std::string> atoms(n, "C");
  for (int s = 0; s < subs; ++s) {
    const int pos = 1 + static_cast<int>(rng.uniform_index(n - 2));
    atoms[pos] += "(C)";
  }
  std::string out = "C1";
  for (int i = 1; i + 1 < n; ++i) out += atoms[i];
  out += "C1";
  return out;
}

// Two rings sharing the final atom: the closing carbon carries both ring-bond
// digits, giving cycles of sizes a+b+3 and b+2.
std::string random_fused_bicyclic(RandomSource& rng) {
  const int a = 1 + static_cast<int>(rng.uniform_index(3));
  const int b = 2 + static_cast<int>(rng.uniform_index(4));
  return "C1" + std::string(a, 'C') + "C2" + std::string(b, 'C') + "C12";
}

// Hand-checked seeds for the rings family, simplest first: plain
// cycloalkanes and substituted aromatics, then a deliberately broad slate of
// fused, bridged, and spiro polycyclics so small corpora cover ring counts
// 1 through 3 instead of clustering on monocycles.
const std::vector<std::string>& ring_templates() {
  static const std::vector<std::string> kTemplates = {
      // one ring
      "C1CC1",
      "C1CCC1",
      "C1CCCC1",
      "C1CCCCC1",
      "c1ccccc1",
      "C1CCCCCC1",
      "Cc1ccccc1",
      "C1CC(C)CC1",
      "Oc1ccccc1",
      "Cc1ccc(C)cc1",
      // two rings
      "C1CCC2CCCCC2C1",
      "C1CC2CCC1C2",
      "c1ccc2ccccc2c1",
      "C1CC2CCCC2C1",
      "C1CCC2CCCC2C1",
      "C1CC2CCCCC2C1",
      "C1CCC2(CC1)CCCC2",
      "C1CC2(CC1)CCC2",
      "C1CC2(C1)CC2",
      "Cc1ccc2ccccc2c1",
      "CC1CCC2CCCCC2C1",
      "OC1CCC2CCCCC2C1",
      "C1CCc2ccccc2C1",
      // three rings
      "C1CCC2CC3CCCCC3CC2C1",
      "c1ccc2cc3ccccc3cc2c1",
      "C1CC2CC3CCCC3C2C1",
      "C1CCC2C(C1)CCC1CCCCC12",
      "C1CCC2(CC1)CCC1(CCCC1)CC2",
      "C1CC2CCC3CCCC3C2C1",
      "c1ccc2c(c1)ccc1ccccc12",
  };
  return kTemplates;
}

}  // namespace

CorpusFamily corpus_family_from_name(const std::string& name) {
  if (name == "alkanes") return CorpusFamily::kAlkanes;
  if (name == "alcohols") return CorpusFamily::kAlcohols;
  if (name == "rings") return CorpusFamily::kRings;
  if (name == "mixed") return CorpusFamily::kMixed;
  throw std::invalid_argument("corpus: unknown family \"" + name + "\"");
}

const std::string& corpus_family_name(CorpusFamily family) {
  static const std::string kNames[] = {"alkanes", "alcohols", "rings",
                                       "mixed"};
  return kNames[static_cast<int>(family)];
}

std::vector<std::string> generate_corpus(CorpusFamily family, int size,
                                         std::uint64_t seed) {
  if (size < 1) {
    throw std::invalid_argument("corpus: size must be at least 1");
  }
  const std::size_t want = static_cast<std::size_t>(size);

  if (family == CorpusFamily::kMixed) {
    // Round-robin over the three base families, each on its own derived
    // stream so members match the standalone corpora.
    const CorpusFamily parts[] = {CorpusFamily::kAlkanes,
                                  CorpusFamily::kAlcohols,
                                  CorpusFamily::kRings};
    const int per = (size + 2) / 3;
    std::vector<std::vector<std::string>> columns;
    for (int f = 0; f < 3; ++f) {
      columns.push_back(
          generate_corpus(parts[f], per, seed + 1000003ULL * (f + 1)));
    }
    std::vector<std::string> out;
    for (int i = 0; i < per && out.size() < want; ++i) {
      for (int f = 0; f < 3 && out.size() < want; ++f) {
        out.push_back(columns[f][i]);
      }
    }
    return out;
  }

  std::vector<std::string> out;
  std::set<std::string> seen;
  RandomSource rng(seed);
  auto push = [&](const std::string& s) {
    if (out.size() >= want) return false;
    if (!chem::parse_smiles(s).valid) return false;
    if (!seen.insert(s).second) return false;
    out.push_back(s);
    return true;
  };

  switch (family) {
    case CorpusFamily::kAlkanes: {
      for (int n = 1; n <= 12; ++n) push(std::string(n, 'C'));
      int misses = 0;
      while (out.size() < want && misses < 20000) {
        const int carbons = 4 + static_cast<int>(rng.uniform_index(9));
        if (!push(random_alkane(rng, carbons))) ++misses;
      }
      for (int n = 13; out.size() < want; ++n) push(std::string(n, 'C'));
      break;
    }
    case CorpusFamily::kAlcohols: {
      for (int n = 1; n <= 12; ++n) push(std::string(n, 'C') + "O");
      int misses = 0;
      while (out.size() < want && misses < 20000) {
        const int carbons = 3 + static_cast<int>(rng.uniform_index(8));
        if (!push(random_alcohol(rng, carbons))) ++misses;
      }
      for (int n = 13; out.size() < want; ++n) push(std::string(n, 'C') + "O");
      break;
    }
    case CorpusFamily::kRings: {
      for (const std::string& s : ring_templates()) push(s);
      int misses = 0;
      while (out.size() < want && misses < 20000) {
        const std::string s = rng.uniform() < 0.5
                                  ? random_substituted_ring(rng)
                                  : random_fused_bicyclic(rng);
        if (!push(s)) ++misses;
      }
      for (int n = 9; out.size() < want; ++n) {
        push("C1" + std::string(n - 2, 'C') + "C1");
      }
      break;
    }
    case CorpusFamily::kMixed:
      break;  // handled above
  }
  return out;
}

const std::vector<std::string>& corpus_token_alphabet() {
  static const std::vector<std::string> kAlphabet = {"(", ")", "1", "2",
                                                     "3", "C", "O", "c"};
  return kAlphabet;
}

nn::Vocabulary build_vocabulary(const std::vector<std::string>& smiles) {
  std::set<std::string> tokens;
  for (const std::string& s : smiles) {
    for (const std::string& tok : chem::tokenize_smiles(s)) tokens.insert(tok);
  }
  return nn::Vocabulary::with_reserved(
      std::vector<std::string>(tokens.begin(), tokens.end()));
}

std::vector<TokenSeq> prompted_rows(const nn::Vocabulary& vocab,
                                    const std::vector<std::string>& molecules,
                                    int variants_per_molecule,
                                    std::uint64_t seed) {
  if (variants_per_molecule < 1) {
    throw std::invalid_argument("prompted_rows: need at least one variant");
  }
  std::vector<int> alphabet;
  for (int id = nn::Vocabulary::kSep + 1; id < vocab.size(); ++id) {
    alphabet.push_back(id);
  }
  if (alphabet.empty()) {
    throw std::invalid_argument("prompted_rows: vocabulary has no tokens");
  }

  RandomSource rng(seed);
  std::vector<TokenSeq> rows;
  for (const std::string& mol : molecules) {
    const TokenSeq mol_ids = vocab.encode(chem::tokenize_smiles(mol));
    for (int v = 0; v < variants_per_molecule; ++v) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        TokenSeq variant = mol_ids;
        const std::size_t pos = rng.uniform_index(variant.size());
        variant[pos] = alphabet[rng.uniform_index(alphabet.size())];
        std::string text;
        for (int id : variant) text += vocab.token(id);
        if (!chem::parse_smiles(text).valid) continue;
        TokenSeq row;
        row.push_back(nn::Vocabulary::kStart);
        row.insert(row.end(), mol_ids.begin(), mol_ids.end());
        row.push_back(nn::Vocabulary::kSep);
        row.insert(row.end(), variant.begin(), variant.end());
        row.push_back(nn::Vocabulary::kStop);
        rows.push_back(std::move(row));
        break;
      }
    }
  }
  return rows;
}

}  // namespace era::pipeline
