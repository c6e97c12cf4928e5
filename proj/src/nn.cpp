#include "pifield/nn.hpp"

#include <cmath>

namespace pifield {

Var ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ValueError("parameter registered twice: " + name);
  Var v = leaf(std::move(init), true);
  index_[name] = items_.size();
  items_.emplace_back(name, v);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter: " + name);
  return items_[it->second].second;
}

long ParamStore::total_scalars() const {
  long n = 0;
  for (const auto& [name, v] : items_) n += v->value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : items_) {
    v->has_grad = false;
    v->ran_backward = false;
  }
}

std::map<std::string, Tensor> ParamStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : items_) out.emplace(name, v->value);
  return out;
}

void ParamStore::load(const std::map<std::string, Tensor>& state) {
  for (auto& [name, v] : items_) {
    auto it = state.find(name);
    if (it == state.end()) throw ValueError("checkpoint missing parameter: " + name);
    if (!(it->second.shape == v->value.shape))
      throw ShapeError("checkpoint shape mismatch for " + name + ": " +
                       Tensor::shape_str(it->second.shape) + " vs " +
                       Tensor::shape_str(v->value.shape));
    v->value = it->second;
    v->has_grad = false;
  }
}

Dense::Dense(ParamStore& ps, const std::string& prefix, int cin, int cout, Rng& rng) {
  W = ps.add(prefix + ".W", kaiming_uniform({cin, cout}, cin, rng));
  b = ps.add(prefix + ".b", Tensor::zeros({cout}));
}

Conv2dLayer::Conv2dLayer(ParamStore& ps, const std::string& prefix, int cin, int cout,
                         int ksize, Rng& rng, int stride_, int dilation_, bool bias)
    : stride(stride_), dilation(dilation_) {
  K = ps.add(prefix + ".K",
             kaiming_uniform({cout, cin, ksize, ksize},
                             static_cast<long>(cin) * ksize * ksize, rng));
  if (bias) b = ps.add(prefix + ".b", Tensor::zeros({cout}));
}

MhaParams make_mha(ParamStore& ps, const std::string& prefix, int dim, int heads, Rng& rng) {
  if (heads < 1 || dim % heads != 0)
    throw ValueError("attention dim " + std::to_string(dim) + " not divisible by heads " +
                     std::to_string(heads));
  MhaParams p;
  p.heads = heads;
  p.q = Dense(ps, prefix + ".q", dim, dim, rng);
  p.k = Dense(ps, prefix + ".k", dim, dim, rng);
  p.v = Dense(ps, prefix + ".v", dim, dim, rng);
  p.o = Dense(ps, prefix + ".o", dim, dim, rng);
  return p;
}

Var multihead_attention(const MhaParams& p, const Var& x) {
  const int C = x->value.dim(1);
  const int dk = C / p.heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dk));
  Var Q = p.q(x), K = p.k(x), V = p.v(x);
  std::vector<Var> head_outs;
  for (int h = 0; h < p.heads; ++h) {
    Var Qh = slice_cols(Q, h * dk, (h + 1) * dk);
    Var Kh = slice_cols(K, h * dk, (h + 1) * dk);
    Var Vh = slice_cols(V, h * dk, (h + 1) * dk);
    Var scores = mul_scalar(matmul(Qh, transpose2d(Kh)), scale);
    head_outs.push_back(matmul(softmax_rows(scores), Vh));
  }
  return p.o(concat_cols(head_outs));
}

std::vector<Var> multihead_attention_batched(const MhaParams& p, const std::vector<Var>& xs) {
  const int V = static_cast<int>(xs.size());
  if (V == 0) throw ValueError("attention over empty view set");
  const int C = xs[0]->value.dim(1);
  const int dk = C / p.heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dk));
  std::vector<Var> Q(V), K(V), Vv(V);
  for (int a = 0; a < V; ++a) {
    Q[a] = p.q(xs[a]);
    K[a] = p.k(xs[a]);
    Vv[a] = p.v(xs[a]);
  }
  std::vector<Var> outs(V);
  for (int a = 0; a < V; ++a) {
    std::vector<Var> heads;
    for (int h = 0; h < p.heads; ++h) {
      Var Qh = slice_cols(Q[a], h * dk, (h + 1) * dk);
      std::vector<Var> score_cols(V);
      for (int b = 0; b < V; ++b)
        score_cols[b] =
            mul_scalar(row_dot(Qh, slice_cols(K[b], h * dk, (h + 1) * dk)), scale);
      Var attn = softmax_rows(concat_cols(score_cols));  // [M,V]
      Var acc;
      for (int b = 0; b < V; ++b) {
        Var term = mul_col_bcast(slice_cols(attn, b, b + 1),
                                 slice_cols(Vv[b], h * dk, (h + 1) * dk));
        acc = acc ? add(acc, term) : term;
      }
      heads.push_back(acc);
    }
    outs[a] = p.o(concat_cols(heads));
  }
  return outs;
}

TransformerParams make_transformer(ParamStore& ps, const std::string& prefix, int dim,
                                   int heads, int layers, int ffn_mult, Rng& rng) {
  TransformerParams p;
  p.dim = dim;
  p.heads = heads;
  for (int l = 0; l < layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    TransformerLayer tl;
    tl.mha = make_mha(ps, lp + ".mha", dim, heads, rng);
    tl.ffn1 = Dense(ps, lp + ".ffn1", dim, dim * ffn_mult, rng);
    tl.ffn2 = Dense(ps, lp + ".ffn2", dim * ffn_mult, dim, rng);
    tl.ln1_g = ps.add(lp + ".ln1.g", Tensor::ones({dim}));
    tl.ln1_b = ps.add(lp + ".ln1.b", Tensor::zeros({dim}));
    tl.ln2_g = ps.add(lp + ".ln2.g", Tensor::ones({dim}));
    tl.ln2_b = ps.add(lp + ".ln2.b", Tensor::zeros({dim}));
    p.layers.push_back(std::move(tl));
  }
  return p;
}

namespace {
constexpr float kLnEps = 1e-5f;
constexpr float kFfnSlope = 0.01f;
}  // namespace

Var transformer_encode(const TransformerParams& p, Var x) {
  for (const auto& l : p.layers) {
    x = layer_norm_rows(add(x, multihead_attention(l.mha, x)), l.ln1_g, l.ln1_b, kLnEps);
    Var f = l.ffn2(leaky_relu(l.ffn1(x), kFfnSlope));
    x = layer_norm_rows(add(x, f), l.ln2_g, l.ln2_b, kLnEps);
  }
  return x;
}

std::vector<Var> transformer_encode_batched(const TransformerParams& p, std::vector<Var> xs) {
  for (const auto& l : p.layers) {
    std::vector<Var> att = multihead_attention_batched(l.mha, xs);
    for (size_t v = 0; v < xs.size(); ++v)
      xs[v] = layer_norm_rows(add(xs[v], att[v]), l.ln1_g, l.ln1_b, kLnEps);
    for (size_t v = 0; v < xs.size(); ++v) {
      Var f = l.ffn2(leaky_relu(l.ffn1(xs[v]), kFfnSlope));
      xs[v] = layer_norm_rows(add(xs[v], f), l.ln2_g, l.ln2_b, kLnEps);
    }
  }
  return xs;
}

Var mean_of(const std::vector<Var>& xs) {
  if (xs.empty()) throw ValueError("mean over empty view set");
  Var acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return mul_scalar(acc, 1.0f / static_cast<float>(xs.size()));
}

}  // namespace pifield
