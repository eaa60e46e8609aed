#include "era/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "era/random.hpp"
#include "internal.hpp"

namespace era::nn {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kPi = 3.14159265358979323846;

const std::vector<std::string>& reserved_names() {
  static const std::vector<std::string> names = {"<pad>", "<start>", "<stop>",
                                                 "<sep>"};
  return names;
}

}  // namespace

// ===== Vocabulary ============================================================

Vocabulary::Vocabulary(std::vector<std::string> tokens)
    : tokens_(std::move(tokens)) {
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
    if (tokens_[i].empty())
      throw std::invalid_argument("vocabulary: empty token string");
    if (!ids_.emplace(tokens_[i], i).second)
      throw std::invalid_argument("vocabulary: duplicate token '" + tokens_[i] +
                                  "'");
  }
}

Vocabulary Vocabulary::with_reserved(const std::vector<std::string>& items) {
  std::vector<std::string> all = reserved_names();
  all.insert(all.end(), items.begin(), items.end());
  return Vocabulary(std::move(all));  // the constructor rejects collisions
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw std::invalid_argument("vocabulary: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return ids_.count(token) != 0;
}

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end())
    throw std::invalid_argument("vocabulary: unknown token '" + token + "'");
  return it->second;
}

TokenSeq Vocabulary::encode(const std::vector<std::string>& pieces) const {
  TokenSeq out;
  out.reserve(pieces.size());
  for (const std::string& p : pieces) out.push_back(id(p));
  return out;
}

std::string Vocabulary::decode_to_string(const TokenSeq& ids) const {
  std::string out;
  for (int id : ids) out += token(id);
  return out;
}

// ===== ModelConfig / Tensor ==================================================

void ModelConfig::validate() const {
  if (layers <= 0 || heads <= 0 || width <= 0 || ffn_mult <= 0)
    throw std::invalid_argument("model config: counts must be positive");
  if (width % heads != 0)
    throw std::invalid_argument(
        "model config: width must be divisible by heads");
  if (max_len < 2)
    throw std::invalid_argument("model config: max_len must be at least 2");
  if (vocab < 4)
    throw std::invalid_argument(
        "model config: vocabulary must include the reserved tokens");
}

Tensor Tensor::zeros(std::vector<int> shape) {
  std::size_t n = 1;
  for (int s : shape) {
    if (s <= 0) throw std::invalid_argument("tensor: non-positive dimension");
    n *= static_cast<std::size_t>(s);
  }
  Tensor t;
  t.shape = std::move(shape);
  t.d.assign(n, 0.0);
  return t;
}

// ===== parameter layout ======================================================

namespace detail {

std::vector<std::pair<std::string, std::vector<int>>> param_layout(
    const ModelConfig& config) {
  const int C = config.width;
  const int F = config.width * config.ffn_mult;
  const int V = config.vocab;
  std::vector<std::pair<std::string, std::vector<int>>> out;
  out.emplace_back("tok_emb", std::vector<int>{V, C});
  out.emplace_back("pos_emb", std::vector<int>{config.max_len, C});
  for (int i = 0; i < config.layers; ++i) {
    const std::string p = "l" + std::to_string(i) + ".";
    out.emplace_back(p + "ln1.g", std::vector<int>{C});
    out.emplace_back(p + "ln1.b", std::vector<int>{C});
    out.emplace_back(p + "attn.wq", std::vector<int>{C, C});
    out.emplace_back(p + "attn.bq", std::vector<int>{C});
    out.emplace_back(p + "attn.wk", std::vector<int>{C, C});
    out.emplace_back(p + "attn.bk", std::vector<int>{C});
    out.emplace_back(p + "attn.wv", std::vector<int>{C, C});
    out.emplace_back(p + "attn.bv", std::vector<int>{C});
    out.emplace_back(p + "attn.wo", std::vector<int>{C, C});
    out.emplace_back(p + "attn.bo", std::vector<int>{C});
    out.emplace_back(p + "ln2.g", std::vector<int>{C});
    out.emplace_back(p + "ln2.b", std::vector<int>{C});
    out.emplace_back(p + "ffn.w1", std::vector<int>{C, F});
    out.emplace_back(p + "ffn.b1", std::vector<int>{F});
    out.emplace_back(p + "ffn.w2", std::vector<int>{F, C});
    out.emplace_back(p + "ffn.b2", std::vector<int>{C});
  }
  out.emplace_back("lnf.g", std::vector<int>{C});
  out.emplace_back("lnf.b", std::vector<int>{C});
  out.emplace_back("head.w", std::vector<int>{C, V});
  out.emplace_back("head.b", std::vector<int>{V});
  return out;
}

int param_index(const ParamStore& store, const std::string& name) {
  for (std::size_t i = 0; i < store.names.size(); ++i)
    if (store.names[i] == name) return static_cast<int>(i);
  throw std::invalid_argument("unknown parameter: " + name);
}

}  // namespace detail

// ===== ParamStore / GradStore ================================================

ParamStore ParamStore::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParamStore s;
  s.config = config;
  for (auto& [name, shape] : detail::param_layout(config)) {
    s.names.push_back(name);
    s.params.push_back(Tensor::zeros(shape));
  }
  RandomSource rng(seed);
  for (std::size_t i = 0; i < s.names.size(); ++i) {
    const std::string& name = s.names[i];
    Tensor& t = s.params[i];
    const auto dot = name.rfind('.');
    const std::string leaf =
        dot == std::string::npos ? name : name.substr(dot + 1);
    if (name == "head.w" || name == "head.b") continue;  // zero output head
    if (leaf == "g") {
      std::fill(t.d.begin(), t.d.end(), 1.0);  // identity gains
      continue;
    }
    if (!leaf.empty() && leaf[0] == 'b') continue;  // biases stay zero
    for (double& x : t.d) x = rng.normal(0.0, 0.02);
  }
  s.adam_m.reserve(s.params.size());
  s.adam_v.reserve(s.params.size());
  for (const Tensor& t : s.params) {
    s.adam_m.push_back(Tensor::zeros(t.shape));
    s.adam_v.push_back(Tensor::zeros(t.shape));
  }
  return s;
}

Tensor& ParamStore::find(const std::string& name) {
  return params[static_cast<std::size_t>(detail::param_index(*this, name))];
}

const Tensor& ParamStore::find(const std::string& name) const {
  return params[static_cast<std::size_t>(detail::param_index(*this, name))];
}

void ParamStore::validate() const {
  const auto expect = detail::param_layout(config);
  if (names.size() != expect.size() || params.size() != expect.size() ||
      adam_m.size() != expect.size() || adam_v.size() != expect.size())
    throw std::runtime_error("parameter store: wrong tensor count");
  if (adam_step < 0)
    throw std::runtime_error("parameter store: negative optimizer step");
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const auto& [name, shape] = expect[i];
    if (names[i] != name)
      throw std::runtime_error("parameter store: unexpected tensor '" +
                               names[i] + "'");
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    for (const Tensor* t : {&params[i], &adam_m[i], &adam_v[i]}) {
      if (t->shape != shape || t->d.size() != n)
        throw std::runtime_error("parameter store: shape mismatch for " + name);
      for (double x : t->d)
        if (!std::isfinite(x))
          throw std::runtime_error("parameter store: non-finite value in " +
                                   name);
    }
  }
}

GradStore GradStore::zeros_like(const ParamStore& store) {
  GradStore g;
  g.g.reserve(store.params.size());
  for (const Tensor& t : store.params) g.g.push_back(Tensor::zeros(t.shape));
  return g;
}

void GradStore::accumulate_scaled(const GradStore& other, double scale) {
  if (g.size() != other.g.size())
    throw std::invalid_argument("gradient store: tensor count mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i].d.size() != other.g[i].d.size())
      throw std::invalid_argument("gradient store: shape mismatch");
    for (std::size_t j = 0; j < g[i].d.size(); ++j)
      g[i].d[j] += scale * other.g[i].d[j];
  }
}

bool GradStore::all_finite() const {
  for (const Tensor& t : g)
    for (double x : t.d)
      if (!std::isfinite(x)) return false;
  return true;
}

// ===== SequenceBatch =========================================================

SequenceBatch SequenceBatch::single(TokenSeq row, int completion_start) {
  SequenceBatch b;
  b.rows.push_back(std::move(row));
  b.completion_start.push_back(completion_start);
  return b;
}

void SequenceBatch::validate(const ModelConfig& config) const {
  if (rows.size() != completion_start.size())
    throw std::invalid_argument(
        "sequence batch: row/boundary count mismatch");
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const TokenSeq& row = rows[r];
    if (row.empty()) throw std::invalid_argument("sequence batch: empty row");
    if (static_cast<int>(row.size()) > config.max_len)
      throw std::invalid_argument("sequence batch: row longer than max_len");
    const int cs = completion_start[r];
    if (cs < 1 || cs >= static_cast<int>(row.size()))
      throw std::invalid_argument(
          "sequence batch: completion region must be non-empty and leave a "
          "non-empty prefix");
    for (int id : row)
      if (id < 0 || id >= config.vocab)
        throw std::invalid_argument("sequence batch: token id out of range");
  }
}

// ===== forward ===============================================================

namespace detail {

namespace {

// y[n,m] = x[n,k] @ w[k,m] + b[m]
void affine(const std::vector<double>& x, int n, int k, const Tensor& w,
            const Tensor& b, std::vector<double>& y) {
  const int m = w.shape[1];
  y.assign(static_cast<std::size_t>(n) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* xi = &x[static_cast<std::size_t>(i) * k];
    double* yi = &y[static_cast<std::size_t>(i) * m];
    for (int kk = 0; kk < k; ++kk) {
      const double a = xi[kk];
      const double* wrow = &w.d[static_cast<std::size_t>(kk) * m];
      for (int j = 0; j < m; ++j) yi[j] += a * wrow[j];
    }
    for (int j = 0; j < m; ++j) yi[j] += b.d[j];
  }
}

void layer_norm(const std::vector<double>& x, int n, int c, const Tensor& g,
                const Tensor& b, std::vector<double>& xhat,
                std::vector<double>& inv, std::vector<double>& y) {
  xhat.assign(static_cast<std::size_t>(n) * c, 0.0);
  inv.assign(static_cast<std::size_t>(n), 0.0);
  y.assign(static_cast<std::size_t>(n) * c, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* xi = &x[static_cast<std::size_t>(i) * c];
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += xi[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = xi[j] - mu;
      var += d * d;
    }
    var /= c;
    const double iv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv[i] = iv;
    double* xh = &xhat[static_cast<std::size_t>(i) * c];
    double* yi = &y[static_cast<std::size_t>(i) * c];
    for (int j = 0; j < c; ++j) {
      xh[j] = (xi[j] - mu) * iv;
      yi[j] = g.d[j] * xh[j] + b.d[j];
    }
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_deriv(double x) {
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
         x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

// Gradient accumulation counterparts of affine():
//   dW += x^T dy,  db += column-sums of dy,  dx = dy W^T.
void acc_dw(const std::vector<double>& x, int n, int k,
            const std::vector<double>& dy, int m, Tensor& dw) {
  for (int i = 0; i < n; ++i) {
    const double* xi = &x[static_cast<std::size_t>(i) * k];
    const double* dyi = &dy[static_cast<std::size_t>(i) * m];
    for (int kk = 0; kk < k; ++kk) {
      const double a = xi[kk];
      double* w = &dw.d[static_cast<std::size_t>(kk) * m];
      for (int j = 0; j < m; ++j) w[j] += a * dyi[j];
    }
  }
}

void acc_db(const std::vector<double>& dy, int n, int m, Tensor& db) {
  for (int i = 0; i < n; ++i) {
    const double* dyi = &dy[static_cast<std::size_t>(i) * m];
    for (int j = 0; j < m; ++j) db.d[j] += dyi[j];
  }
}

void dx_from(const std::vector<double>& dy, int n, int m, const Tensor& w,
             int k, std::vector<double>& dx) {
  dx.assign(static_cast<std::size_t>(n) * k, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* dyi = &dy[static_cast<std::size_t>(i) * m];
    double* dxi = &dx[static_cast<std::size_t>(i) * k];
    for (int kk = 0; kk < k; ++kk) {
      const double* wrow = &w.d[static_cast<std::size_t>(kk) * m];
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += dyi[j] * wrow[j];
      dxi[kk] = s;
    }
  }
}

void layer_norm_backward(const std::vector<double>& dy,
                         const std::vector<double>& xhat,
                         const std::vector<double>& inv, int n, int c,
                         const Tensor& g, Tensor& dg, Tensor& db,
                         std::vector<double>& dx) {
  dx.assign(static_cast<std::size_t>(n) * c, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* dyi = &dy[static_cast<std::size_t>(i) * c];
    const double* xh = &xhat[static_cast<std::size_t>(i) * c];
    double m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < c; ++j) {
      dg.d[j] += dyi[j] * xh[j];
      db.d[j] += dyi[j];
      const double dxh = dyi[j] * g.d[j];
      m1 += dxh;
      m2 += dxh * xh[j];
    }
    m1 /= c;
    m2 /= c;
    double* dxi = &dx[static_cast<std::size_t>(i) * c];
    for (int j = 0; j < c; ++j) {
      const double dxh = dyi[j] * g.d[j];
      dxi[j] = inv[i] * (dxh - m1 - xh[j] * m2);
    }
  }
}

}  // namespace

double row_logsumexp(const double* row, int n) {
  double m = row[0];
  for (int i = 1; i < n; ++i) m = std::max(m, row[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(row[i] - m);
  return m + std::log(s);
}

ForwardCache forward(const ParamStore& store, const TokenSeq& ids) {
  const ModelConfig& cfg = store.config;
  const int T = static_cast<int>(ids.size());
  if (T == 0) throw std::invalid_argument("forward: empty sequence");
  if (T > cfg.max_len)
    throw std::invalid_argument("forward: sequence longer than max_len");
  const int C = cfg.width;
  const int H = cfg.heads;
  const int dh = C / H;
  const int F = C * cfg.ffn_mult;
  const int V = cfg.vocab;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardCache fc;
  fc.T = T;
  fc.layers.resize(static_cast<std::size_t>(cfg.layers));

  const Tensor& tok = store.params[0];
  const Tensor& pos = store.params[1];
  std::vector<double> x(static_cast<std::size_t>(T) * C);
  for (int t = 0; t < T; ++t) {
    const int id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= V)
      throw std::invalid_argument("forward: token id out of range");
    const double* te = &tok.d[static_cast<std::size_t>(id) * C];
    const double* pe = &pos.d[static_cast<std::size_t>(t) * C];
    double* xt = &x[static_cast<std::size_t>(t) * C];
    for (int j = 0; j < C; ++j) xt[j] = te[j] + pe[j];
  }

  std::vector<double> attn_out, ffn_out;
  for (int li = 0; li < cfg.layers; ++li) {
    LayerCache& L = fc.layers[static_cast<std::size_t>(li)];
    const std::string p = "l" + std::to_string(li) + ".";
    L.x_in = x;
    layer_norm(L.x_in, T, C, store.find(p + "ln1.g"), store.find(p + "ln1.b"),
               L.ln1_xhat, L.ln1_inv, L.a);
    affine(L.a, T, C, store.find(p + "attn.wq"), store.find(p + "attn.bq"),
           L.q);
    affine(L.a, T, C, store.find(p + "attn.wk"), store.find(p + "attn.bk"),
           L.k);
    affine(L.a, T, C, store.find(p + "attn.wv"), store.find(p + "attn.bv"),
           L.v);
    L.att.assign(static_cast<std::size_t>(H) * T * T, 0.0);
    L.z.assign(static_cast<std::size_t>(T) * C, 0.0);
    for (int h = 0; h < H; ++h) {
      const int off = h * dh;
      for (int i = 0; i < T; ++i) {
        double* arow = &L.att[(static_cast<std::size_t>(h) * T + i) * T];
        const double* qi = &L.q[static_cast<std::size_t>(i) * C + off];
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j <= i; ++j) {
          const double* kj = &L.k[static_cast<std::size_t>(j) * C + off];
          double s = 0.0;
          for (int d = 0; d < dh; ++d) s += qi[d] * kj[d];
          s *= scale;
          arow[j] = s;
          mx = std::max(mx, s);
        }
        double denom = 0.0;
        for (int j = 0; j <= i; ++j) {
          arow[j] = std::exp(arow[j] - mx);
          denom += arow[j];
        }
        for (int j = 0; j <= i; ++j) arow[j] /= denom;
        double* zi = &L.z[static_cast<std::size_t>(i) * C + off];
        for (int j = 0; j <= i; ++j) {
          const double aij = arow[j];
          const double* vj = &L.v[static_cast<std::size_t>(j) * C + off];
          for (int d = 0; d < dh; ++d) zi[d] += aij * vj[d];
        }
      }
    }
    affine(L.z, T, C, store.find(p + "attn.wo"), store.find(p + "attn.bo"),
           attn_out);
    L.x_mid.resize(static_cast<std::size_t>(T) * C);
    for (std::size_t n = 0; n < L.x_mid.size(); ++n)
      L.x_mid[n] = L.x_in[n] + attn_out[n];
    layer_norm(L.x_mid, T, C, store.find(p + "ln2.g"), store.find(p + "ln2.b"),
               L.ln2_xhat, L.ln2_inv, L.b);
    affine(L.b, T, C, store.find(p + "ffn.w1"), store.find(p + "ffn.b1"),
           L.h1);
    L.g.resize(static_cast<std::size_t>(T) * F);
    for (std::size_t n = 0; n < L.g.size(); ++n) L.g[n] = gelu(L.h1[n]);
    affine(L.g, T, F, store.find(p + "ffn.w2"), store.find(p + "ffn.b2"),
           ffn_out);
    for (std::size_t n = 0; n < x.size(); ++n) x[n] = L.x_mid[n] + ffn_out[n];
  }
  fc.x_out = x;
  layer_norm(fc.x_out, T, C, store.find("lnf.g"), store.find("lnf.b"),
             fc.lnf_xhat, fc.lnf_inv, fc.xf);
  affine(fc.xf, T, C, store.find("head.w"), store.find("head.b"), fc.logits);
  return fc;
}

void backward(const ParamStore& store, const TokenSeq& ids,
              const ForwardCache& fc, const std::vector<double>& dlogits,
              GradStore& grads) {
  const ModelConfig& cfg = store.config;
  const int T = fc.T;
  const int C = cfg.width;
  const int H = cfg.heads;
  const int dh = C / H;
  const int F = C * cfg.ffn_mult;
  const int V = cfg.vocab;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (dlogits.size() != static_cast<std::size_t>(T) * V)
    throw std::invalid_argument("backward: logit gradient shape mismatch");

  const auto gi = [&](const std::string& name) -> Tensor& {
    return grads.g[static_cast<std::size_t>(param_index(store, name))];
  };

  // output head and final layer norm
  acc_dw(fc.xf, T, C, dlogits, V, gi("head.w"));
  acc_db(dlogits, T, V, gi("head.b"));
  std::vector<double> dxf;
  dx_from(dlogits, T, V, store.find("head.w"), C, dxf);
  std::vector<double> dx;
  layer_norm_backward(dxf, fc.lnf_xhat, fc.lnf_inv, T, C, store.find("lnf.g"),
                      gi("lnf.g"), gi("lnf.b"), dx);

  std::vector<double> tmp;
  for (int li = cfg.layers - 1; li >= 0; --li) {
    const LayerCache& L = fc.layers[static_cast<std::size_t>(li)];
    const std::string p = "l" + std::to_string(li) + ".";

    // feed-forward branch: x = x_mid + w2(gelu(w1 b + b1)) + b2
    std::vector<double> dg_act;
    dx_from(dx, T, C, store.find(p + "ffn.w2"), F, dg_act);
    acc_dw(L.g, T, F, dx, C, gi(p + "ffn.w2"));
    acc_db(dx, T, C, gi(p + "ffn.b2"));
    std::vector<double> dh1(static_cast<std::size_t>(T) * F);
    for (std::size_t n = 0; n < dh1.size(); ++n)
      dh1[n] = dg_act[n] * gelu_deriv(L.h1[n]);
    std::vector<double> db_branch;
    dx_from(dh1, T, F, store.find(p + "ffn.w1"), C, db_branch);
    acc_dw(L.b, T, C, dh1, F, gi(p + "ffn.w1"));
    acc_db(dh1, T, F, gi(p + "ffn.b1"));
    std::vector<double> dx_mid;
    layer_norm_backward(db_branch, L.ln2_xhat, L.ln2_inv, T, C,
                        store.find(p + "ln2.g"), gi(p + "ln2.g"),
                        gi(p + "ln2.b"), dx_mid);
    for (std::size_t n = 0; n < dx_mid.size(); ++n) dx_mid[n] += dx[n];

    // attention branch: x_mid = x_in + wo z + bo
    std::vector<double> dz;
    dx_from(dx_mid, T, C, store.find(p + "attn.wo"), C, dz);
    acc_dw(L.z, T, C, dx_mid, C, gi(p + "attn.wo"));
    acc_db(dx_mid, T, C, gi(p + "attn.bo"));

    std::vector<double> dq(static_cast<std::size_t>(T) * C, 0.0);
    std::vector<double> dk(static_cast<std::size_t>(T) * C, 0.0);
    std::vector<double> dv(static_cast<std::size_t>(T) * C, 0.0);
    std::vector<double> datt(static_cast<std::size_t>(T));
    for (int h = 0; h < H; ++h) {
      const int off = h * dh;
      for (int i = 0; i < T; ++i) {
        const double* arow = &L.att[(static_cast<std::size_t>(h) * T + i) * T];
        const double* dzi = &dz[static_cast<std::size_t>(i) * C + off];
        double srow = 0.0;
        for (int j = 0; j <= i; ++j) {
          const double* vj = &L.v[static_cast<std::size_t>(j) * C + off];
          double s = 0.0;
          for (int d = 0; d < dh; ++d) s += dzi[d] * vj[d];
          datt[static_cast<std::size_t>(j)] = s;
          srow += s * arow[j];
          double* dvj = &dv[static_cast<std::size_t>(j) * C + off];
          for (int d = 0; d < dh; ++d) dvj[d] += arow[j] * dzi[d];
        }
        const double* qi = &L.q[static_cast<std::size_t>(i) * C + off];
        double* dqi = &dq[static_cast<std::size_t>(i) * C + off];
        for (int j = 0; j <= i; ++j) {
          const double ds =
              arow[j] * (datt[static_cast<std::size_t>(j)] - srow);
          const double f = scale * ds;
          const double* kj = &L.k[static_cast<std::size_t>(j) * C + off];
          double* dkj = &dk[static_cast<std::size_t>(j) * C + off];
          for (int d = 0; d < dh; ++d) {
            dqi[d] += f * kj[d];
            dkj[d] += f * qi[d];
          }
        }
      }
    }

    std::vector<double> da(static_cast<std::size_t>(T) * C, 0.0);
    dx_from(dq, T, C, store.find(p + "attn.wq"), C, tmp);
    for (std::size_t n = 0; n < da.size(); ++n) da[n] += tmp[n];
    acc_dw(L.a, T, C, dq, C, gi(p + "attn.wq"));
    acc_db(dq, T, C, gi(p + "attn.bq"));
    dx_from(dk, T, C, store.find(p + "attn.wk"), C, tmp);
    for (std::size_t n = 0; n < da.size(); ++n) da[n] += tmp[n];
    acc_dw(L.a, T, C, dk, C, gi(p + "attn.wk"));
    acc_db(dk, T, C, gi(p + "attn.bk"));
    dx_from(dv, T, C, store.find(p + "attn.wv"), C, tmp);
    for (std::size_t n = 0; n < da.size(); ++n) da[n] += tmp[n];
    acc_dw(L.a, T, C, dv, C, gi(p + "attn.wv"));
    acc_db(dv, T, C, gi(p + "attn.bv"));

    std::vector<double> dx_in;
    layer_norm_backward(da, L.ln1_xhat, L.ln1_inv, T, C,
                        store.find(p + "ln1.g"), gi(p + "ln1.g"),
                        gi(p + "ln1.b"), dx_in);
    for (std::size_t n = 0; n < dx_in.size(); ++n) dx_in[n] += dx_mid[n];
    dx.swap(dx_in);
  }

  Tensor& dtok = grads.g[0];
  Tensor& dpos = grads.g[1];
  for (int t = 0; t < T; ++t) {
    const double* dxt = &dx[static_cast<std::size_t>(t) * C];
    double* dte =
        &dtok.d[static_cast<std::size_t>(ids[static_cast<std::size_t>(t)]) * C];
    double* dpe = &dpos.d[static_cast<std::size_t>(t) * C];
    for (int j = 0; j < C; ++j) {
      dte[j] += dxt[j];
      dpe[j] += dxt[j];
    }
  }
}

}  // namespace detail

// ===== public scoring and sampling ===========================================

Tensor forward_logits(const ParamStore& store, const TokenSeq& ids) {
  detail::ForwardCache fc = detail::forward(store, ids);
  Tensor out = Tensor::zeros({fc.T, store.config.vocab});
  out.d = std::move(fc.logits);
  return out;
}

std::vector<double> logprob_sequence(const ParamStore& store,
                                     const SequenceBatch& batch) {
  batch.validate(store.config);
  const int V = store.config.vocab;
  std::vector<double> out;
  out.reserve(batch.rows.size());
  for (std::size_t r = 0; r < batch.rows.size(); ++r) {
    const TokenSeq& row = batch.rows[r];
    const int cs = batch.completion_start[r];
    const detail::ForwardCache fc = detail::forward(store, row);
    double lp = 0.0;
    for (int t = cs - 1; t + 1 < static_cast<int>(row.size()); ++t) {
      const double* lrow = &fc.logits[static_cast<std::size_t>(t) * V];
      lp += lrow[row[static_cast<std::size_t>(t) + 1]] -
            detail::row_logsumexp(lrow, V);
    }
    out.push_back(lp);
  }
  return out;
}

double sequence_logprob(const ParamStore& store, const TokenSeq& prompt,
                        const TokenSeq& completion) {
  TokenSeq row = prompt;
  row.insert(row.end(), completion.begin(), completion.end());
  return logprob_sequence(
      store,
      SequenceBatch::single(std::move(row), static_cast<int>(prompt.size())))
      .front();
}

TokenSeq sample_sequence(const ParamStore& store, const TokenSeq& prompt,
                         std::uint64_t seed, double temperature) {
  const ModelConfig& cfg = store.config;
  if (prompt.empty()) throw std::invalid_argument("sample: empty prompt");
  if (prompt.front() != Vocabulary::kStart)
    throw std::invalid_argument("sample: prompt must begin with the start id");
  if (static_cast<int>(prompt.size()) > cfg.max_len)
    throw std::invalid_argument("sample: prompt longer than max_len");
  if (temperature < 0.0)
    throw std::invalid_argument("sample: negative temperature");
  const int V = cfg.vocab;
  TokenSeq seq = prompt;
  RandomSource rng(seed);
  std::vector<double> probs(static_cast<std::size_t>(V));
  while (static_cast<int>(seq.size()) < cfg.max_len) {
    const detail::ForwardCache fc = detail::forward(store, seq);
    const double* row = &fc.logits[static_cast<std::size_t>(fc.T - 1) * V];
    int next = 0;
    if (temperature == 0.0) {
      for (int v = 1; v < V; ++v)
        if (row[v] > row[next]) next = v;  // ties go to the lowest id
    } else {
      double mx = -std::numeric_limits<double>::infinity();
      for (int v = 0; v < V; ++v)
        mx = std::max(mx, row[v] / temperature);
      double s = 0.0;
      for (int v = 0; v < V; ++v) {
        probs[static_cast<std::size_t>(v)] =
            std::exp(row[v] / temperature - mx);
        s += probs[static_cast<std::size_t>(v)];
      }
      for (double& p : probs) p /= s;
      next = static_cast<int>(rng.categorical(probs));
    }
    seq.push_back(next);
    if (next == Vocabulary::kStop) break;
  }
  return seq;
}

double NeuralPolicy::sequence_logprob(const TokenSeq& prompt,
                                      const TokenSeq& completion) const {
  return era::nn::sequence_logprob(*store_, prompt, completion);
}

TokenSeq NeuralPolicy::sample(const TokenSeq& prompt, std::uint64_t seed,
                              double temperature) const {
  TokenSeq full = sample_sequence(*store_, prompt, seed, temperature);
  return TokenSeq(full.begin() + static_cast<std::ptrdiff_t>(prompt.size()),
                  full.end());
}

}  // namespace era::nn
