#pragma once

#include <map>
#include <string>
#include <unordered_map>

#include "pifield/autodiff.hpp"

namespace pifield {

// Named trainable leaves in registration order. Registration order is the
// iteration order everywhere (optimizer state, checkpoints), which keeps
// runs reproducible.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init);
  Var get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  long total_scalars() const;
  void zero_grad();
  std::map<std::string, Tensor> snapshot() const;
  // Shape-checked; throws on missing or mismatched entries.
  void load(const std::map<std::string, Tensor>& state);

 private:
  std::vector<std::pair<std::string, Var>> items_;
  std::unordered_map<std::string, size_t> index_;
};

// y = xW + b on [N,Cin] -> [N,Cout].
struct Dense {
  Var W, b;
  Dense() = default;
  Dense(ParamStore& ps, const std::string& prefix, int cin, int cout, Rng& rng);
  Var operator()(const Var& x) const { return add_bias_rows(matmul(x, W), b); }
};

// Same-padded conv with odd kernels.
struct Conv2dLayer {
  Var K, b;
  int stride = 1, dilation = 1;
  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& ps, const std::string& prefix, int cin, int cout, int ksize,
              Rng& rng, int stride = 1, int dilation = 1, bool bias = true);
  Var operator()(const Var& x) const { return conv2d(x, K, b, stride, dilation); }
};

struct MhaParams {
  Dense q, k, v, o;
  int heads = 1;
};
MhaParams make_mha(ParamStore& ps, const std::string& prefix, int dim, int heads, Rng& rng);

// Tokens are rows of x [V,C]. Permutation-equivariant; no positional encoding.
Var multihead_attention(const MhaParams& p, const Var& x);

// Same computation run for M independent token sets at once: xs[v] holds row
// m of token set m for view v, so every op is a per-row op across views.
std::vector<Var> multihead_attention_batched(const MhaParams& p, const std::vector<Var>& xs);

// Post-norm encoder layer: x <- LN(x + MHA(x)); x <- LN(x + FFN(x)).
struct TransformerLayer {
  MhaParams mha;
  Dense ffn1, ffn2;
  Var ln1_g, ln1_b, ln2_g, ln2_b;
};
struct TransformerParams {
  std::vector<TransformerLayer> layers;
  int dim = 0, heads = 0;
};
TransformerParams make_transformer(ParamStore& ps, const std::string& prefix, int dim,
                                   int heads, int layers, int ffn_mult, Rng& rng);
Var transformer_encode(const TransformerParams& p, Var x);
std::vector<Var> transformer_encode_batched(const TransformerParams& p, std::vector<Var> xs);

// Mean over the view set; with the encoder above this is the aggregation
// module output.
Var mean_of(const std::vector<Var>& xs);

}  // namespace pifield
