#include "pifield/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace pifield {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<long> g_next_id{1};

// Parents are dropped when grads are off or no parent needs them, so
// inference builds no tape.
Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bwd) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  bool need = false;
  if (g_grad_enabled)
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        need = true;
        break;
      }
  if (need) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(bwd);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw ShapeError(std::string(op) + ": shape mismatch " + Tensor::shape_str(a->value.shape) +
                     " vs " + Tensor::shape_str(b->value.shape));
}

void check_rank(const Var& a, int rank, const char* op) {
  if (a->value.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     Tensor::shape_str(a->value.shape));
}

// Elementwise unary helper: fwd(v) and dfd(v, y) giving dy/dx from input and
// output values.
template <typename F, typename G>
Var unary(const Var& a, F fwd, G dfd, const char* /*op*/) {
  Tensor out(a->value.shape);
  const long n = a->value.numel();
  for (long i = 0; i < n; ++i) out[i] = fwd(a->value[i]);
  return make(std::move(out), {a}, [n, dfd](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (long i = 0; i < n; ++i) gp[i] += nd.grad[i] * dfd(p->value[i], nd.value[i]);
  });
}

}  // namespace

Tensor& Node::grad_buf() {
  if (!has_grad) {
    if (!grad.same_shape(value)) grad = Tensor(value.shape);
    else std::fill(grad.data.begin(), grad.data.end(), 0.0f);
    has_grad = true;
  }
  return grad;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

Var constant(Tensor v) { return make(std::move(v), {}, nullptr); }

Var leaf(Tensor v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n->requires_grad = requires_grad;
  return n;
}

void backward(const Var& root) {
  if (!root) throw ValueError("backward: null root");
  if (root->ran_backward)
    throw ValueError("backward: graph already consumed; rebuild the forward pass");

  // Gather the sub-tape that can influence a parameter.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (n->ran_backward && n->backward_fn)
      throw ValueError("backward: graph already consumed; rebuild the forward pass");
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

  Tensor& g0 = root->grad_buf();
  std::fill(g0.data.begin(), g0.data.end(), 1.0f);
  for (Node* n : order) {
    if (!n->backward_fn || !n->has_grad) continue;
    n->backward_fn(*n);
    n->ran_backward = true;
  }
  root->ran_backward = true;
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a->value.shape);
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  return make(std::move(out), {a, b}, [n](Node& nd) {
    for (int s = 0; s < 2; ++s) {
      const Var& p = nd.parents[s];
      if (!p->requires_grad) continue;
      Tensor& gp = p->grad_buf();
      for (long i = 0; i < n; ++i) gp[i] += nd.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a->value.shape);
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  return make(std::move(out), {a, b}, [n](Node& nd) {
    if (nd.parents[0]->requires_grad) {
      Tensor& gp = nd.parents[0]->grad_buf();
      for (long i = 0; i < n; ++i) gp[i] += nd.grad[i];
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& gp = nd.parents[1]->grad_buf();
      for (long i = 0; i < n; ++i) gp[i] -= nd.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->value.shape);
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return make(std::move(out), {a, b}, [n](Node& nd) {
    const Var& a = nd.parents[0];
    const Var& b = nd.parents[1];
    if (a->requires_grad) {
      Tensor& gp = a->grad_buf();
      for (long i = 0; i < n; ++i) gp[i] += nd.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor& gp = b->grad_buf();
      for (long i = 0; i < n; ++i) gp[i] += nd.grad[i] * a->value[i];
    }
  });
}

Var neg(const Var& a) {
  return unary(
      a, [](float v) { return -v; }, [](float, float) { return -1.0f; }, "neg");
}

Var add_scalar(const Var& a, float s) {
  return unary(
      a, [s](float v) { return v + s; }, [](float, float) { return 1.0f; }, "add_scalar");
}

Var mul_scalar(const Var& a, float s) {
  return unary(
      a, [s](float v) { return v * s; }, [s](float, float) { return s; }, "mul_scalar");
}

Var rsub_scalar(float s, const Var& a) {
  return unary(
      a, [s](float v) { return s - v; }, [](float, float) { return -1.0f; }, "rsub_scalar");
}

Var mul_const(const Var& a, const Tensor& c) {
  if (!a->value.same_shape(c))
    throw ShapeError("mul_const: shape mismatch " + Tensor::shape_str(a->value.shape) + " vs " +
                     Tensor::shape_str(c.shape));
  Tensor out(a->value.shape);
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = a->value[i] * c[i];
  return make(std::move(out), {a}, [n, c](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (long i = 0; i < n; ++i) gp[i] += nd.grad[i] * c[i];
  });
}

Var square(const Var& a) {
  return unary(
      a, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; }, "square");
}

Var sqrt_v(const Var& a) {
  return unary(
      a, [](float v) { return std::sqrt(v); },
      [](float, float y) { return y > 0.0f ? 0.5f / y : 0.0f; }, "sqrt");
}

Var rsqrt(const Var& a, float eps) {
  return unary(
      a, [eps](float v) { return 1.0f / std::sqrt(v + eps); },
      [](float, float y) { return -0.5f * y * y * y; }, "rsqrt");
}

Var log_v(const Var& a) {
  return unary(
      a, [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; }, "log");
}

Var exp_v(const Var& a) {
  return unary(
      a, [](float v) { return std::exp(v); }, [](float, float y) { return y; }, "exp");
}

Var clamp(const Var& a, float lo, float hi) {
  if (!(lo <= hi)) throw ValueError("clamp: lo > hi");
  return unary(
      a, [lo, hi](float v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](float v, float) { return (v >= lo && v <= hi) ? 1.0f : 0.0f; }, "clamp");
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](float v) {
        // Split by sign to avoid overflow in exp.
        if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
        const float e = std::exp(v);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); }, "sigmoid");
}

Var relu(const Var& a) {
  return unary(
      a, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v >= 0.0f ? 1.0f : 0.0f; }, "relu");
}

Var leaky_relu(const Var& a, float slope) {
  return unary(
      a, [slope](float v) { return v >= 0.0f ? v : slope * v; },
      [slope](float v, float) { return v >= 0.0f ? 1.0f : slope; }, "leaky_relu");
}

// ---- matrix ops ----

Var matmul(const Var& a, const Var& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const int N = a->value.dim(0), K = a->value.dim(1), M = b->value.dim(1);
  if (b->value.dim(0) != K)
    throw ShapeError("matmul: inner dims " + Tensor::shape_str(a->value.shape) + " x " +
                     Tensor::shape_str(b->value.shape));
  Tensor out({N, M});
  std::vector<double> row(static_cast<size_t>(M));
  for (int n = 0; n < N; ++n) {
    std::fill(row.begin(), row.end(), 0.0);
    for (int k = 0; k < K; ++k) {
      const double av = a->value.at2(n, k);
      const float* brow = &b->value.data[static_cast<size_t>(k) * M];
      for (int m = 0; m < M; ++m) row[m] += av * brow[m];
    }
    for (int m = 0; m < M; ++m) out.at2(n, m) = static_cast<float>(row[m]);
  }
  return make(std::move(out), {a, b}, [N, K, M](Node& nd) {
    const Var& a = nd.parents[0];
    const Var& b = nd.parents[1];
    if (a->requires_grad) {
      Tensor& ga = a->grad_buf();
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
          double s = 0.0;
          const float* grow = &nd.grad.data[static_cast<size_t>(n) * M];
          const float* brow = &b->value.data[static_cast<size_t>(k) * M];
          for (int m = 0; m < M; ++m) s += static_cast<double>(grow[m]) * brow[m];
          ga.at2(n, k) += static_cast<float>(s);
        }
    }
    if (b->requires_grad) {
      Tensor& gb = b->grad_buf();
      for (int k = 0; k < K; ++k)
        for (int n = 0; n < N; ++n) {
          const float av = a->value.at2(n, k);
          if (av == 0.0f) continue;
          const float* grow = &nd.grad.data[static_cast<size_t>(n) * M];
          float* gbrow = &gb.data[static_cast<size_t>(k) * M];
          for (int m = 0; m < M; ++m) gbrow[m] += av * grow[m];
        }
    }
  });
}

Var transpose2d(const Var& a) {
  check_rank(a, 2, "transpose2d");
  const int N = a->value.dim(0), M = a->value.dim(1);
  Tensor out({M, N});
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < M; ++m) out.at2(m, n) = a->value.at2(n, m);
  return make(std::move(out), {a}, [N, M](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < M; ++m) gp.at2(n, m) += nd.grad.at2(m, n);
  });
}

Var add_bias_rows(const Var& x, const Var& b) {
  check_rank(x, 2, "add_bias_rows");
  if (b->value.rank() != 1 || b->value.dim(0) != x->value.dim(1))
    throw ShapeError("add_bias_rows: bias " + Tensor::shape_str(b->value.shape) + " vs x " +
                     Tensor::shape_str(x->value.shape));
  const int N = x->value.dim(0), C = x->value.dim(1);
  Tensor out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) out.at2(n, c) = x->value.at2(n, c) + b->value[c];
  return make(std::move(out), {x, b}, [N, C](Node& nd) {
    if (nd.parents[0]->requires_grad) {
      Tensor& gx = nd.parents[0]->grad_buf();
      const long n = static_cast<long>(N) * C;
      for (long i = 0; i < n; ++i) gx[i] += nd.grad[i];
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& gb = nd.parents[1]->grad_buf();
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int n = 0; n < N; ++n) s += nd.grad.at2(n, c);
        gb[c] += static_cast<float>(s);
      }
    }
  });
}

Var softmax_rows(const Var& x) {
  check_rank(x, 2, "softmax_rows");
  if (!x->value.all_finite()) throw ValueError("softmax_rows: non-finite input");
  const int N = x->value.dim(0), M = x->value.dim(1);
  Tensor out({N, M});
  for (int n = 0; n < N; ++n) {
    float mx = x->value.at2(n, 0);
    for (int m = 1; m < M; ++m) mx = std::max(mx, x->value.at2(n, m));
    double den = 0.0;
    for (int m = 0; m < M; ++m) {
      const float e = std::exp(x->value.at2(n, m) - mx);
      out.at2(n, m) = e;
      den += e;
    }
    const float inv = static_cast<float>(1.0 / den);
    for (int m = 0; m < M; ++m) out.at2(n, m) *= inv;
  }
  return make(std::move(out), {x}, [N, M](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (int n = 0; n < N; ++n) {
      double dot = 0.0;
      for (int m = 0; m < M; ++m)
        dot += static_cast<double>(nd.grad.at2(n, m)) * nd.value.at2(n, m);
      for (int m = 0; m < M; ++m)
        gp.at2(n, m) +=
            nd.value.at2(n, m) * (nd.grad.at2(n, m) - static_cast<float>(dot));
    }
  });
}

Var row_sum(const Var& x) {
  check_rank(x, 2, "row_sum");
  const int N = x->value.dim(0), M = x->value.dim(1);
  Tensor out({N, 1});
  for (int n = 0; n < N; ++n) {
    double s = 0.0;
    for (int m = 0; m < M; ++m) s += x->value.at2(n, m);
    out[n] = static_cast<float>(s);
  }
  return make(std::move(out), {x}, [N, M](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < M; ++m) gp.at2(n, m) += nd.grad[n];
  });
}

Var row_dot(const Var& a, const Var& b) {
  check_same_shape(a, b, "row_dot");
  check_rank(a, 2, "row_dot");
  const int N = a->value.dim(0), M = a->value.dim(1);
  Tensor out({N, 1});
  for (int n = 0; n < N; ++n) {
    double s = 0.0;
    for (int m = 0; m < M; ++m)
      s += static_cast<double>(a->value.at2(n, m)) * b->value.at2(n, m);
    out[n] = static_cast<float>(s);
  }
  return make(std::move(out), {a, b}, [N, M](Node& nd) {
    const Var& a = nd.parents[0];
    const Var& b = nd.parents[1];
    if (a->requires_grad) {
      Tensor& ga = a->grad_buf();
      for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) ga.at2(n, m) += nd.grad[n] * b->value.at2(n, m);
    }
    if (b->requires_grad) {
      Tensor& gb = b->grad_buf();
      for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) gb.at2(n, m) += nd.grad[n] * a->value.at2(n, m);
    }
  });
}

Var mul_col_bcast(const Var& col, const Var& x) {
  check_rank(col, 2, "mul_col_bcast");
  check_rank(x, 2, "mul_col_bcast");
  if (col->value.dim(0) != x->value.dim(0) || col->value.dim(1) != 1)
    throw ShapeError("mul_col_bcast: col " + Tensor::shape_str(col->value.shape) + " vs x " +
                     Tensor::shape_str(x->value.shape));
  const int N = x->value.dim(0), M = x->value.dim(1);
  Tensor out({N, M});
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < M; ++m) out.at2(n, m) = col->value[n] * x->value.at2(n, m);
  return make(std::move(out), {col, x}, [N, M](Node& nd) {
    const Var& col = nd.parents[0];
    const Var& x = nd.parents[1];
    if (col->requires_grad) {
      Tensor& gc = col->grad_buf();
      for (int n = 0; n < N; ++n) {
        double s = 0.0;
        for (int m = 0; m < M; ++m)
          s += static_cast<double>(nd.grad.at2(n, m)) * x->value.at2(n, m);
        gc[n] += static_cast<float>(s);
      }
    }
    if (x->requires_grad) {
      Tensor& gx = x->grad_buf();
      for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) gx.at2(n, m) += nd.grad.at2(n, m) * col->value[n];
    }
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw ValueError("concat_cols: empty input");
  const int N = xs[0]->value.dim(0);
  int total = 0;
  for (const auto& x : xs) {
    check_rank(x, 2, "concat_cols");
    if (x->value.dim(0) != N) throw ShapeError("concat_cols: row count mismatch");
    total += x->value.dim(1);
  }
  Tensor out({N, total});
  std::vector<int> offs;
  int off = 0;
  for (const auto& x : xs) {
    offs.push_back(off);
    const int C = x->value.dim(1);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) out.at2(n, off + c) = x->value.at2(n, c);
    off += C;
  }
  return make(std::move(out), xs, [N, offs](Node& nd) {
    for (size_t s = 0; s < nd.parents.size(); ++s) {
      const Var& p = nd.parents[s];
      if (!p->requires_grad) continue;
      Tensor& gp = p->grad_buf();
      const int C = p->value.dim(1);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) gp.at2(n, c) += nd.grad.at2(n, offs[s] + c);
    }
  });
}

Var slice_cols(const Var& x, int c0, int c1) {
  check_rank(x, 2, "slice_cols");
  const int N = x->value.dim(0), M = x->value.dim(1);
  if (c0 < 0 || c1 > M || c0 >= c1) throw ShapeError("slice_cols: bad range");
  Tensor out({N, c1 - c0});
  for (int n = 0; n < N; ++n)
    for (int c = c0; c < c1; ++c) out.at2(n, c - c0) = x->value.at2(n, c);
  return make(std::move(out), {x}, [N, c0, c1](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (int n = 0; n < N; ++n)
      for (int c = c0; c < c1; ++c) gp.at2(n, c) += nd.grad.at2(n, c - c0);
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, float eps) {
  check_rank(x, 2, "layer_norm_rows");
  const int N = x->value.dim(0), M = x->value.dim(1);
  if (gamma->value.rank() != 1 || gamma->value.dim(0) != M || beta->value.rank() != 1 ||
      beta->value.dim(0) != M)
    throw ShapeError("layer_norm_rows: gamma/beta must be [M]");
  Tensor out({N, M});
  for (int n = 0; n < N; ++n) {
    double mu = 0.0;
    for (int m = 0; m < M; ++m) mu += x->value.at2(n, m);
    mu /= M;
    double var = 0.0;
    for (int m = 0; m < M; ++m) {
      const double d = x->value.at2(n, m) - mu;
      var += d * d;
    }
    var /= M;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int m = 0; m < M; ++m) {
      const double xh = (x->value.at2(n, m) - mu) * inv;
      out.at2(n, m) = static_cast<float>(xh * gamma->value[m] + beta->value[m]);
    }
  }
  return make(std::move(out), {x, gamma, beta}, [N, M, eps](Node& nd) {
    const Var& x = nd.parents[0];
    const Var& gamma = nd.parents[1];
    const Var& beta = nd.parents[2];
    std::vector<double> xh(static_cast<size_t>(M));
    for (int n = 0; n < N; ++n) {
      double mu = 0.0;
      for (int m = 0; m < M; ++m) mu += x->value.at2(n, m);
      mu /= M;
      double var = 0.0;
      for (int m = 0; m < M; ++m) {
        const double d = x->value.at2(n, m) - mu;
        var += d * d;
      }
      var /= M;
      const double inv = 1.0 / std::sqrt(var + eps);
      for (int m = 0; m < M; ++m) xh[m] = (x->value.at2(n, m) - mu) * inv;

      if (gamma->requires_grad) {
        Tensor& gg = gamma->grad_buf();
        for (int m = 0; m < M; ++m)
          gg[m] += static_cast<float>(nd.grad.at2(n, m) * xh[m]);
      }
      if (beta->requires_grad) {
        Tensor& gb = beta->grad_buf();
        for (int m = 0; m < M; ++m) gb[m] += nd.grad.at2(n, m);
      }
      if (x->requires_grad) {
        Tensor& gx = x->grad_buf();
        double mean_gy = 0.0, mean_gyxh = 0.0;
        for (int m = 0; m < M; ++m) {
          const double gy = static_cast<double>(nd.grad.at2(n, m)) * gamma->value[m];
          mean_gy += gy;
          mean_gyxh += gy * xh[m];
        }
        mean_gy /= M;
        mean_gyxh /= M;
        for (int m = 0; m < M; ++m) {
          const double gy = static_cast<double>(nd.grad.at2(n, m)) * gamma->value[m];
          gx.at2(n, m) += static_cast<float>((gy - mean_gy - xh[m] * mean_gyxh) * inv);
        }
      }
    }
  });
}

// ---- reductions ----

Var sum_all(const Var& x) {
  const long n = x->value.numel();
  double s = 0.0;
  for (long i = 0; i < n; ++i) s += x->value[i];
  return make(Tensor::scalar(static_cast<float>(s)), {x}, [n](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    const float g = nd.grad[0];
    for (long i = 0; i < n; ++i) gp[i] += g;
  });
}

Var mean_all(const Var& x) {
  const long n = x->value.numel();
  double s = 0.0;
  for (long i = 0; i < n; ++i) s += x->value[i];
  return make(Tensor::scalar(static_cast<float>(s / n)), {x}, [n](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    const float g = nd.grad[0] / static_cast<float>(n);
    for (long i = 0; i < n; ++i) gp[i] += g;
  });
}

// ---- image ops ----

Var conv2d(const Var& x, const Var& k, const Var& bias, int stride, int dilation) {
  check_rank(x, 3, "conv2d");
  if (k->value.rank() != 4) throw ShapeError("conv2d: kernel must be [Co,Ci,kh,kw]");
  const int Ci = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int Co = k->value.dim(0), kh = k->value.dim(2), kw = k->value.dim(3);
  if (k->value.dim(1) != Ci) throw ShapeError("conv2d: channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: even kernel size unsupported");
  if (stride < 1 || dilation < 1) throw ValueError("conv2d: stride/dilation must be >= 1");
  if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != Co))
    throw ShapeError("conv2d: bias must be [Co]");
  const int py = dilation * (kh - 1) / 2, px = dilation * (kw - 1) / 2;
  const int Ho = (H + 2 * py - dilation * (kh - 1) - 1) / stride + 1;
  const int Wo = (W + 2 * px - dilation * (kw - 1) - 1) / stride + 1;

  Tensor out({Co, Ho, Wo});
  for (int co = 0; co < Co; ++co) {
    const float* kc = &k->value.data[static_cast<size_t>(co) * Ci * kh * kw];
    const float b = bias ? bias->value[co] : 0.0f;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double s = b;
        for (int ci = 0; ci < Ci; ++ci) {
          const float* xc = &x->value.data[static_cast<size_t>(ci) * H * W];
          const float* kk = kc + static_cast<size_t>(ci) * kh * kw;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - py + ky * dilation;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - px + kx * dilation;
              if (ix < 0 || ix >= W) continue;
              s += static_cast<double>(xc[static_cast<size_t>(iy) * W + ix]) * kk[ky * kw + kx];
            }
          }
        }
        out.data[(static_cast<size_t>(co) * Ho + oy) * Wo + ox] = static_cast<float>(s);
      }
  }

  std::vector<Var> parents{x, k};
  if (bias) parents.push_back(bias);
  return make(std::move(out), std::move(parents),
              [Ci, H, W, Co, kh, kw, Ho, Wo, py, px, stride, dilation](Node& nd) {
                const Var& x = nd.parents[0];
                const Var& k = nd.parents[1];
                const Var bias = nd.parents.size() > 2 ? nd.parents[2] : nullptr;
                Tensor* gx = x->requires_grad ? &x->grad_buf() : nullptr;
                Tensor* gk = k->requires_grad ? &k->grad_buf() : nullptr;
                Tensor* gb = (bias && bias->requires_grad) ? &bias->grad_buf() : nullptr;
                for (int co = 0; co < Co; ++co) {
                  const float* gc = &nd.grad.data[static_cast<size_t>(co) * Ho * Wo];
                  if (gb) {
                    double s = 0.0;
                    for (long i = 0; i < static_cast<long>(Ho) * Wo; ++i) s += gc[i];
                    (*gb)[co] += static_cast<float>(s);
                  }
                  if (!gx && !gk) continue;
                  for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) {
                      const float g = gc[static_cast<size_t>(oy) * Wo + ox];
                      if (g == 0.0f) continue;
                      for (int ci = 0; ci < Ci; ++ci)
                        for (int ky = 0; ky < kh; ++ky) {
                          const int iy = oy * stride - py + ky * dilation;
                          if (iy < 0 || iy >= H) continue;
                          for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride - px + kx * dilation;
                            if (ix < 0 || ix >= W) continue;
                            const size_t xi = (static_cast<size_t>(ci) * H + iy) * W + ix;
                            const size_t ki =
                                ((static_cast<size_t>(co) * Ci + ci) * kh + ky) * kw + kx;
                            if (gx) gx->data[xi] += g * k->value.data[ki];
                            if (gk) gk->data[ki] += g * x->value.data[xi];
                          }
                        }
                    }
                }
              });
}

Var conv2d_nobias(const Var& x, const Var& k, int stride, int dilation) {
  return conv2d(x, k, nullptr, stride, dilation);
}

Var global_avg_pool(const Var& x) {
  check_rank(x, 3, "global_avg_pool");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const long hw = static_cast<long>(H) * W;
  Tensor out({C, 1, 1});
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    const float* xc = &x->value.data[static_cast<size_t>(c) * hw];
    for (long i = 0; i < hw; ++i) s += xc[i];
    out[c] = static_cast<float>(s / hw);
  }
  return make(std::move(out), {x}, [C, hw](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (int c = 0; c < C; ++c) {
      const float g = nd.grad[c] / static_cast<float>(hw);
      float* gc = &gp.data[static_cast<size_t>(c) * hw];
      for (long i = 0; i < hw; ++i) gc[i] += g;
    }
  });
}

Var broadcast_spatial(const Var& x, int h, int w) {
  check_rank(x, 3, "broadcast_spatial");
  if (x->value.dim(1) != 1 || x->value.dim(2) != 1)
    throw ShapeError("broadcast_spatial: input must be [C,1,1]");
  const int C = x->value.dim(0);
  const long hw = static_cast<long>(h) * w;
  Tensor out({C, h, w});
  for (int c = 0; c < C; ++c)
    std::fill_n(&out.data[static_cast<size_t>(c) * hw], hw, x->value[c]);
  return make(std::move(out), {x}, [C, hw](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      const float* gc = &nd.grad.data[static_cast<size_t>(c) * hw];
      for (long i = 0; i < hw; ++i) s += gc[i];
      gp[c] += static_cast<float>(s);
    }
  });
}

Var channel_mean(const Var& x) {
  check_rank(x, 3, "channel_mean");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const long hw = static_cast<long>(H) * W;
  Tensor out({1, H, W});
  for (long i = 0; i < hw; ++i) {
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += x->value.data[static_cast<size_t>(c) * hw + i];
    out[i] = static_cast<float>(s / C);
  }
  return make(std::move(out), {x}, [C, hw](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (long i = 0; i < hw; ++i) {
      const float g = nd.grad[i] / static_cast<float>(C);
      for (int c = 0; c < C; ++c) gp.data[static_cast<size_t>(c) * hw + i] += g;
    }
  });
}

Var channel_max(const Var& x) {
  check_rank(x, 3, "channel_max");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const long hw = static_cast<long>(H) * W;
  Tensor out({1, H, W});
  // First channel achieving the max receives the whole cotangent.
  auto arg = std::make_shared<std::vector<int>>(static_cast<size_t>(hw));
  for (long i = 0; i < hw; ++i) {
    float mx = x->value[i];
    int am = 0;
    for (int c = 1; c < C; ++c) {
      const float v = x->value.data[static_cast<size_t>(c) * hw + i];
      if (v > mx) {
        mx = v;
        am = c;
      }
    }
    out[i] = mx;
    (*arg)[static_cast<size_t>(i)] = am;
  }
  return make(std::move(out), {x}, [hw, arg](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (long i = 0; i < hw; ++i)
      gp.data[static_cast<size_t>((*arg)[static_cast<size_t>(i)]) * hw + i] += nd.grad[i];
  });
}

Var mul_channel_bcast(const Var& gate, const Var& x) {
  check_rank(gate, 3, "mul_channel_bcast");
  check_rank(x, 3, "mul_channel_bcast");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (gate->value.dim(0) != C || gate->value.dim(1) != 1 || gate->value.dim(2) != 1)
    throw ShapeError("mul_channel_bcast: gate must be [C,1,1]");
  const long hw = static_cast<long>(H) * W;
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c) {
    const float g = gate->value[c];
    const float* xc = &x->value.data[static_cast<size_t>(c) * hw];
    float* oc = &out.data[static_cast<size_t>(c) * hw];
    for (long i = 0; i < hw; ++i) oc[i] = g * xc[i];
  }
  return make(std::move(out), {gate, x}, [C, hw](Node& nd) {
    const Var& gate = nd.parents[0];
    const Var& x = nd.parents[1];
    if (gate->requires_grad) {
      Tensor& gg = gate->grad_buf();
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        const float* gc = &nd.grad.data[static_cast<size_t>(c) * hw];
        const float* xc = &x->value.data[static_cast<size_t>(c) * hw];
        for (long i = 0; i < hw; ++i) s += static_cast<double>(gc[i]) * xc[i];
        gg[c] += static_cast<float>(s);
      }
    }
    if (x->requires_grad) {
      Tensor& gx = x->grad_buf();
      for (int c = 0; c < C; ++c) {
        const float g = gate->value[c];
        const float* gc = &nd.grad.data[static_cast<size_t>(c) * hw];
        float* xc = &gx.data[static_cast<size_t>(c) * hw];
        for (long i = 0; i < hw; ++i) xc[i] += g * gc[i];
      }
    }
  });
}

Var mul_plane_bcast(const Var& gate, const Var& x) {
  check_rank(gate, 3, "mul_plane_bcast");
  check_rank(x, 3, "mul_plane_bcast");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (gate->value.dim(0) != 1 || gate->value.dim(1) != H || gate->value.dim(2) != W)
    throw ShapeError("mul_plane_bcast: gate must be [1,H,W]");
  const long hw = static_cast<long>(H) * W;
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (long i = 0; i < hw; ++i)
      out.data[static_cast<size_t>(c) * hw + i] =
          gate->value[i] * x->value.data[static_cast<size_t>(c) * hw + i];
  return make(std::move(out), {gate, x}, [C, hw](Node& nd) {
    const Var& gate = nd.parents[0];
    const Var& x = nd.parents[1];
    if (gate->requires_grad) {
      Tensor& gg = gate->grad_buf();
      for (long i = 0; i < hw; ++i) {
        double s = 0.0;
        for (int c = 0; c < C; ++c)
          s += static_cast<double>(nd.grad.data[static_cast<size_t>(c) * hw + i]) *
               x->value.data[static_cast<size_t>(c) * hw + i];
        gg[i] += static_cast<float>(s);
      }
    }
    if (x->requires_grad) {
      Tensor& gx = x->grad_buf();
      for (int c = 0; c < C; ++c)
        for (long i = 0; i < hw; ++i)
          gx.data[static_cast<size_t>(c) * hw + i] +=
              gate->value[i] * nd.grad.data[static_cast<size_t>(c) * hw + i];
    }
  });
}

namespace {
// Shared corner/weight computation for 2x upsampling, half-pixel centers.
inline void up2_src(int o, int n_in, int& i0, int& i1, float& f) {
  const float s = (static_cast<float>(o) + 0.5f) * 0.5f - 0.5f;
  const float fl = std::floor(s);
  i0 = std::max(0, std::min(n_in - 1, static_cast<int>(fl)));
  i1 = std::max(0, std::min(n_in - 1, static_cast<int>(fl) + 1));
  f = s - fl;
}
}  // namespace

Var upsample2x_bilinear(const Var& x) {
  check_rank(x, 3, "upsample2x_bilinear");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int Ho = 2 * H, Wo = 2 * W;
  Tensor out({C, Ho, Wo});
  for (int oy = 0; oy < Ho; ++oy) {
    int y0, y1;
    float fy;
    up2_src(oy, H, y0, y1, fy);
    for (int ox = 0; ox < Wo; ++ox) {
      int x0, x1;
      float fx;
      up2_src(ox, W, x0, x1, fx);
      for (int c = 0; c < C; ++c) {
        const float* xc = &x->value.data[static_cast<size_t>(c) * H * W];
        const float v = (1 - fy) * ((1 - fx) * xc[y0 * W + x0] + fx * xc[y0 * W + x1]) +
                        fy * ((1 - fx) * xc[y1 * W + x0] + fx * xc[y1 * W + x1]);
        out.data[(static_cast<size_t>(c) * Ho + oy) * Wo + ox] = v;
      }
    }
  }
  return make(std::move(out), {x}, [C, H, W, Ho, Wo](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (int oy = 0; oy < Ho; ++oy) {
      int y0, y1;
      float fy;
      up2_src(oy, H, y0, y1, fy);
      for (int ox = 0; ox < Wo; ++ox) {
        int x0, x1;
        float fx;
        up2_src(ox, W, x0, x1, fx);
        for (int c = 0; c < C; ++c) {
          const float g = nd.grad.data[(static_cast<size_t>(c) * Ho + oy) * Wo + ox];
          float* gc = &gp.data[static_cast<size_t>(c) * H * W];
          gc[y0 * W + x0] += g * (1 - fy) * (1 - fx);
          gc[y0 * W + x1] += g * (1 - fy) * fx;
          gc[y1 * W + x0] += g * fy * (1 - fx);
          gc[y1 * W + x1] += g * fy * fx;
        }
      }
    }
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw ValueError("concat_channels: empty input");
  check_rank(xs[0], 3, "concat_channels");
  const int H = xs[0]->value.dim(1), W = xs[0]->value.dim(2);
  int total = 0;
  for (const auto& x : xs) {
    check_rank(x, 3, "concat_channels");
    if (x->value.dim(1) != H || x->value.dim(2) != W)
      throw ShapeError("concat_channels: spatial mismatch");
    total += x->value.dim(0);
  }
  const long hw = static_cast<long>(H) * W;
  Tensor out({total, H, W});
  std::vector<long> offs;
  long off = 0;
  for (const auto& x : xs) {
    offs.push_back(off);
    std::copy(x->value.data.begin(), x->value.data.end(), out.data.begin() + off * hw);
    off += x->value.dim(0);
  }
  return make(std::move(out), xs, [hw, offs](Node& nd) {
    for (size_t s = 0; s < nd.parents.size(); ++s) {
      const Var& p = nd.parents[s];
      if (!p->requires_grad) continue;
      Tensor& gp = p->grad_buf();
      const long n = p->value.numel();
      const float* g = &nd.grad.data[static_cast<size_t>(offs[s] * hw)];
      for (long i = 0; i < n; ++i) gp[i] += g[i];
    }
  });
}

Var slice_channels(const Var& x, int c0, int c1) {
  check_rank(x, 3, "slice_channels");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  if (c0 < 0 || c1 > C || c0 >= c1) throw ShapeError("slice_channels: bad range");
  const long hw = static_cast<long>(H) * W;
  Tensor out({c1 - c0, H, W});
  std::copy(x->value.data.begin() + static_cast<size_t>(c0) * hw,
            x->value.data.begin() + static_cast<size_t>(c1) * hw, out.data.begin());
  return make(std::move(out), {x}, [c0, hw](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    const long n = nd.value.numel();
    float* g = &gp.data[static_cast<size_t>(c0) * hw];
    for (long i = 0; i < n; ++i) g[i] += nd.grad[i];
  });
}

Var shift_image(const Var& x, int dx, int dy) {
  check_rank(x, 3, "shift_image");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        const int sy = y - dy, sx = xx - dx;
        out.data[(static_cast<size_t>(c) * H + y) * W + xx] =
            (sy >= 0 && sy < H && sx >= 0 && sx < W)
                ? x->value.data[(static_cast<size_t>(c) * H + sy) * W + sx]
                : 0.0f;
      }
  return make(std::move(out), {x}, [C, H, W, dx, dy](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          const int sy = y - dy, sx = xx - dx;
          if (sy >= 0 && sy < H && sx >= 0 && sx < W)
            gp.data[(static_cast<size_t>(c) * H + sy) * W + sx] +=
                nd.grad.data[(static_cast<size_t>(c) * H + y) * W + xx];
        }
  });
}

namespace {
struct Corner {
  int x, y;
  float w;
};
// Four clamped corners with bilinear weights for a pixel-center coordinate.
inline void corners_of(const Vec2& p, int W, int H, Corner c[4]) {
  const float u = static_cast<float>(p.x), v = static_cast<float>(p.y);
  const float fx0 = std::floor(u), fy0 = std::floor(v);
  const float ax = u - fx0, ay = v - fy0;
  const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
  auto cl = [](int i, int n) { return std::max(0, std::min(n - 1, i)); };
  c[0] = {cl(x0, W), cl(y0, H), (1 - ax) * (1 - ay)};
  c[1] = {cl(x0 + 1, W), cl(y0, H), ax * (1 - ay)};
  c[2] = {cl(x0, W), cl(y0 + 1, H), (1 - ax) * ay};
  c[3] = {cl(x0 + 1, W), cl(y0 + 1, H), ax * ay};
}
}  // namespace

Var sample_bilinear(const Var& feat, const std::vector<Vec2>& points) {
  check_rank(feat, 3, "sample_bilinear");
  const int C = feat->value.dim(0), H = feat->value.dim(1), W = feat->value.dim(2);
  const int N = static_cast<int>(points.size());
  if (N == 0) throw ValueError("sample_bilinear: no points");
  const long hw = static_cast<long>(H) * W;
  Tensor out({N, C});
  for (int n = 0; n < N; ++n) {
    Corner cs[4];
    corners_of(points[static_cast<size_t>(n)], W, H, cs);
    for (int c = 0; c < C; ++c) {
      const float* fc = &feat->value.data[static_cast<size_t>(c) * hw];
      double s = 0.0;
      for (const auto& co : cs) s += static_cast<double>(co.w) * fc[co.y * W + co.x];
      out.at2(n, c) = static_cast<float>(s);
    }
  }
  auto pts = std::make_shared<std::vector<Vec2>>(points);
  return make(std::move(out), {feat}, [C, H, W, N, hw, pts](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (int n = 0; n < N; ++n) {
      Corner cs[4];
      corners_of((*pts)[static_cast<size_t>(n)], W, H, cs);
      for (int c = 0; c < C; ++c) {
        const float g = nd.grad.at2(n, c);
        float* fc = &gp.data[static_cast<size_t>(c) * hw];
        for (const auto& co : cs) fc[co.y * W + co.x] += g * co.w;
      }
    }
  });
}

Var sample_bilinear_masked(const Var& feat, const Tensor& mask,
                           const std::vector<Vec2>& points, std::vector<char>* holes) {
  check_rank(feat, 3, "sample_bilinear_masked");
  const int C = feat->value.dim(0), H = feat->value.dim(1), W = feat->value.dim(2);
  if (mask.numel() != static_cast<long>(H) * W)
    throw ShapeError("sample_bilinear_masked: mask size mismatch");
  const int N = static_cast<int>(points.size());
  if (N == 0) throw ValueError("sample_bilinear_masked: no points");
  const long hw = static_cast<long>(H) * W;
  if (holes) holes->assign(static_cast<size_t>(N), 0);
  Tensor out({N, C});
  for (int n = 0; n < N; ++n) {
    Corner cs[4];
    corners_of(points[static_cast<size_t>(n)], W, H, cs);
    double wsum = 0.0;
    for (const auto& co : cs)
      if (mask[co.y * W + co.x] > 0.5f) wsum += co.w;
    if (wsum <= 1e-12) {
      if (holes) (*holes)[static_cast<size_t>(n)] = 1;
      continue;  // row stays zero
    }
    for (int c = 0; c < C; ++c) {
      const float* fc = &feat->value.data[static_cast<size_t>(c) * hw];
      double s = 0.0;
      for (const auto& co : cs)
        if (mask[co.y * W + co.x] > 0.5f) s += static_cast<double>(co.w) * fc[co.y * W + co.x];
      out.at2(n, c) = static_cast<float>(s / wsum);
    }
  }
  auto pts = std::make_shared<std::vector<Vec2>>(points);
  auto msk = std::make_shared<Tensor>(mask);
  return make(std::move(out), {feat}, [C, H, W, N, hw, pts, msk](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    for (int n = 0; n < N; ++n) {
      Corner cs[4];
      corners_of((*pts)[static_cast<size_t>(n)], W, H, cs);
      double wsum = 0.0;
      for (const auto& co : cs)
        if ((*msk)[co.y * W + co.x] > 0.5f) wsum += co.w;
      if (wsum <= 1e-12) continue;
      for (int c = 0; c < C; ++c) {
        const float g = nd.grad.at2(n, c);
        float* fc = &gp.data[static_cast<size_t>(c) * hw];
        for (const auto& co : cs)
          if ((*msk)[co.y * W + co.x] > 0.5f)
            fc[co.y * W + co.x] += static_cast<float>(g * co.w / wsum);
      }
    }
  });
}

Var smooth_l1_masked(const Var& pred, const Tensor& target, const Tensor& mask, float delta) {
  if (pred->value.numel() != target.numel() || pred->value.numel() != mask.numel())
    throw ShapeError("smooth_l1_masked: size mismatch");
  if (delta <= 0.0f) throw ValueError("smooth_l1_masked: delta must be positive");
  const long n = pred->value.numel();
  double cnt = 0.0, acc = 0.0;
  for (long i = 0; i < n; ++i) {
    if (mask[i] <= 0.5f) continue;
    cnt += 1.0;
    const float d = pred->value[i] - target[i];
    const float ad = std::fabs(d);
    acc += ad < delta ? 0.5 * d * d / delta : ad - 0.5 * delta;
  }
  const float val = cnt > 0.0 ? static_cast<float>(acc / cnt) : 0.0f;
  auto tg = std::make_shared<Tensor>(target);
  auto mk = std::make_shared<Tensor>(mask);
  return make(Tensor::scalar(val), {pred}, [n, cnt, delta, tg, mk](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad || cnt <= 0.0) return;
    Tensor& gp = p->grad_buf();
    const float g = nd.grad[0] / static_cast<float>(cnt);
    for (long i = 0; i < n; ++i) {
      if ((*mk)[i] <= 0.5f) continue;
      const float d = p->value[i] - (*tg)[i];
      gp[i] += g * std::max(-1.0f, std::min(1.0f, d / delta));
    }
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make(std::move(out), {x}, [](Node& nd) {
    const Var& p = nd.parents[0];
    if (!p->requires_grad) return;
    Tensor& gp = p->grad_buf();
    const long n = gp.numel();
    for (long i = 0; i < n; ++i) gp[i] += nd.grad[i];
  });
}

}  // namespace pifield
