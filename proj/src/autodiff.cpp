#include "agra/core/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>

#include "agra/core/eigen.hpp"
#include "agra/core/error.hpp"

namespace agra::ad {

namespace {

Var fresh(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

// Wires value + parents + closure into a node, or returns a detached
// constant when nothing upstream needs gradients.
Var wire(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bp) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto n = fresh(std::move(value));
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
  }
  return n;
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo, double* col) {
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        double* dst = col + (static_cast<int64_t>((c * kh + i) * kw + j)) * Ho * Wo;
        for (int ho = 0; ho < Ho; ++ho) {
          int h = ho * stride + i - pad;
          if (h < 0 || h >= H) {
            std::fill(dst, dst + Wo, 0.0);
            dst += Wo;
            continue;
          }
          const double* src = x + (static_cast<int64_t>(c) * H + h) * W;
          for (int wo = 0; wo < Wo; ++wo) {
            int w = wo * stride + j - pad;
            *dst++ = (w >= 0 && w < W) ? src[w] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo,
                double* gx) {
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const double* src = col + (static_cast<int64_t>((c * kh + i) * kw + j)) * Ho * Wo;
        for (int ho = 0; ho < Ho; ++ho) {
          int h = ho * stride + i - pad;
          if (h < 0 || h >= H) {
            src += Wo;
            continue;
          }
          double* dst = gx + (static_cast<int64_t>(c) * H + h) * W;
          for (int wo = 0; wo < Wo; ++wo) {
            int w = wo * stride + j - pad;
            double v = *src++;
            if (w >= 0 && w < W) dst[w] += v;
          }
        }
      }
    }
  }
}

}  // namespace

Var constant(Tensor value) { return fresh(std::move(value)); }

Var leaf(Tensor value) {
  auto n = fresh(std::move(value));
  n->requires_grad = true;
  return n;
}

void backward(const Var& root) {
  if (root->value.size() != 1) throw ValidationError("backward: root must be scalar, got " + root->value.shape_str());
  if (!root->requires_grad) throw StateError("backward: root does not require grad");

  std::vector<Node*> order;
  std::vector<std::pair<Node*, size_t>> dfs;
  std::unordered_set<Node*> visited;
  dfs.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!dfs.empty()) {
    auto& [n, next] = dfs.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        dfs.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      dfs.pop_back();
    }
  }

  ensure_grad(root);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

Var Tape::operator()(Param& p) {
  auto it = index_.find(&p);
  if (it != index_.end()) return bound_[it->second].second;
  Var v = (grad_enabled_ && p.trainable) ? leaf(p.value) : constant(p.value);
  index_.emplace(&p, bound_.size());
  bound_.emplace_back(&p, v);
  return v;
}

void Tape::backward_collect(const Var& loss) {
  if (!grad_enabled_) throw StateError("tape: backward on a grad-disabled tape");
  backward(loss);
  for (auto& [p, v] : bound_) {
    if (!v->grad.empty()) {
      p->ensure_grad();
      p->grad.add_(v->grad);
    }
  }
}

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw ValidationError("add: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
  Tensor out = a->value;
  out.add_(b->value);
  return wire(std::move(out), {a, b}, [a, b](Node& self) {
    accumulate(a, self.grad);
    accumulate(b, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw ValidationError("sub: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
  Tensor out = a->value;
  out.sub_(b->value);
  return wire(std::move(out), {a, b}, [a, b](Node& self) {
    accumulate(a, self.grad);
    if (b->requires_grad) ensure_grad(b).axpy_(-1.0, self.grad);
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  out.scale_(s);
  return wire(std::move(out), {a}, [a, s](Node& self) {
    if (a->requires_grad) ensure_grad(a).axpy_(s, self.grad);
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
    throw ValidationError("matmul: incompatible shapes " + a->value.shape_str() + " x " + b->value.shape_str());
  int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
  Tensor out({m, n});
  as_matrix(out, m, n).noalias() = as_matrix(a->value, m, k) * as_matrix(b->value, k, n);
  return wire(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
    auto g = as_matrix(self.grad, m, n);
    if (a->requires_grad)
      as_matrix(ensure_grad(a), m, k).noalias() += g * as_matrix(b->value, k, n).transpose();
    if (b->requires_grad)
      as_matrix(ensure_grad(b), k, n).noalias() += as_matrix(a->value, m, k).transpose() * g;
  });
}

Var add_rowvec(const Var& m, const Var& v) {
  if (m->value.rank() != 2 || v->value.rank() != 1 || m->value.dim(1) != v->value.dim(0))
    throw ValidationError("add_rowvec: incompatible shapes " + m->value.shape_str() + " + " + v->value.shape_str());
  int r = m->value.dim(0), c = m->value.dim(1);
  Tensor out = m->value;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<int64_t>(i) * c + j] += v->value[j];
  return wire(std::move(out), {m, v}, [m, v, r, c](Node& self) {
    accumulate(m, self.grad);
    if (v->requires_grad) {
      Tensor& gv = ensure_grad(v);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gv[j] += self.grad[static_cast<int64_t>(i) * c + j];
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.size(); ++i)
    if (out[i] < 0.0) out[i] = 0.0;
  return wire(std::move(out), {x}, [x](Node& self) {
    if (!x->requires_grad) return;
    Tensor& gx = ensure_grad(x);
    for (int64_t i = 0; i < gx.size(); ++i)
      if (x->value[i] > 0.0) gx[i] += self.grad[i];
  });
}

Var clamp(const Var& x, double lo, double hi) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, out[i]));
  return wire(std::move(out), {x}, [x, lo, hi](Node& self) {
    if (!x->requires_grad) return;
    Tensor& gx = ensure_grad(x);
    for (int64_t i = 0; i < gx.size(); ++i) {
      double v = x->value[i];
      if (v > lo && v < hi) gx[i] += self.grad[i];
    }
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  if (Tensor::count(shape) != x->value.size())
    throw ValidationError("reshape: element count mismatch for " + x->value.shape_str());
  Tensor out = Tensor::from(std::move(shape), std::vector<double>(x->value.data(), x->value.data() + x->value.size()));
  return wire(std::move(out), {x}, [x](Node& self) {
    if (!x->requires_grad) return;
    Tensor& gx = ensure_grad(x);
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Var row(const Var& m, int i) {
  if (m->value.rank() != 2) throw ValidationError("row: expects rank-2, got " + m->value.shape_str());
  int r = m->value.dim(0), c = m->value.dim(1);
  if (i < 0 || i >= r) throw ValidationError("row: index out of range");
  Tensor out({c});
  std::memcpy(out.data(), m->value.data() + static_cast<int64_t>(i) * c, sizeof(double) * static_cast<size_t>(c));
  return wire(std::move(out), {m}, [m, i, c](Node& self) {
    if (!m->requires_grad) return;
    Tensor& gm = ensure_grad(m);
    double* dst = gm.data() + static_cast<int64_t>(i) * c;
    for (int j = 0; j < c; ++j) dst[j] += self.grad[j];
  });
}

Var stack(const std::vector<Var>& items) {
  if (items.empty()) throw ValidationError("stack: no items");
  const auto& s0 = items[0]->value.shape();
  for (const auto& it : items)
    if (it->value.shape() != s0) throw ValidationError("stack: heterogenous item shapes");
  std::vector<int> shape;
  shape.push_back(static_cast<int>(items.size()));
  shape.insert(shape.end(), s0.begin(), s0.end());
  int64_t chunk = items[0]->value.size();
  Tensor out(shape);
  for (size_t k = 0; k < items.size(); ++k)
    std::memcpy(out.data() + static_cast<int64_t>(k) * chunk, items[k]->value.data(),
                sizeof(double) * static_cast<size_t>(chunk));
  return wire(std::move(out), items, [items, chunk](Node& self) {
    for (size_t k = 0; k < items.size(); ++k) {
      const Var& p = items[k];
      if (!p->requires_grad) continue;
      Tensor& gp = ensure_grad(p);
      const double* src = self.grad.data() + static_cast<int64_t>(k) * chunk;
      for (int64_t j = 0; j < chunk; ++j) gp[j] += src[j];
    }
  });
}

Var concat(const std::vector<Var>& items) {
  if (items.empty()) throw ValidationError("concat: no items");
  int total = 0;
  for (const auto& it : items) {
    if (it->value.rank() != 1) throw ValidationError("concat: expects rank-1 items");
    total += it->value.dim(0);
  }
  Tensor out({total});
  int64_t off = 0;
  for (const auto& it : items) {
    std::memcpy(out.data() + off, it->value.data(), sizeof(double) * static_cast<size_t>(it->value.size()));
    off += it->value.size();
  }
  return wire(std::move(out), items, [items](Node& self) {
    int64_t off = 0;
    for (const auto& p : items) {
      int64_t n = p->value.size();
      if (p->requires_grad) {
        Tensor& gp = ensure_grad(p);
        const double* src = self.grad.data() + off;
        for (int64_t j = 0; j < n; ++j) gp[j] += src[j];
      }
      off += n;
    }
  });
}

Var detach(const Var& x) { return constant(x->value); }

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1))
    throw ValidationError("conv2d: incompatible shapes " + xv.shape_str() + " * " + wv.shape_str());
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int O = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (b->value.rank() != 1 || b->value.dim(0) != O) throw ValidationError("conv2d: bias shape mismatch");
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ValidationError("conv2d: empty output");

  int ckk = C * kh * kw;
  int64_t osp = static_cast<int64_t>(Ho) * Wo;
  bool rg = x->requires_grad || w->requires_grad || b->requires_grad;

  Tensor out({N, O, Ho, Wo});
  // Columns are cached for the backward GEMMs; in no-grad mode one scratch
  // buffer is reused across samples.
  auto cols = std::make_shared<std::vector<Tensor>>();
  Tensor scratch;
  if (rg)
    cols->reserve(static_cast<size_t>(N));
  else
    scratch = Tensor({ckk, static_cast<int>(osp)});

  auto wmat = as_matrix(wv, O, ckk);
  for (int n = 0; n < N; ++n) {
    Tensor* colt;
    if (rg) {
      cols->emplace_back(std::vector<int>{ckk, static_cast<int>(osp)});
      colt = &cols->back();
    } else {
      colt = &scratch;
    }
    im2col(xv.data() + static_cast<int64_t>(n) * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, colt->data());
    EMap(out.data() + static_cast<int64_t>(n) * O * osp, O, osp).noalias() = wmat * as_matrix(*colt, ckk, static_cast<int>(osp));
  }
  for (int n = 0; n < N; ++n) {
    double* po = out.data() + static_cast<int64_t>(n) * O * osp;
    for (int o = 0; o < O; ++o) {
      double bv = b->value[o];
      for (int64_t i = 0; i < osp; ++i) po[o * osp + i] += bv;
    }
  }

  return wire(std::move(out), {x, w, b}, [x, w, b, cols, N, C, H, W, O, kh, kw, stride, pad, Ho, Wo, ckk,
                                          osp](Node& self) {
    if (b->requires_grad) {
      Tensor& gb = ensure_grad(b);
      for (int n = 0; n < N; ++n) {
        const double* pg = self.grad.data() + static_cast<int64_t>(n) * O * osp;
        for (int o = 0; o < O; ++o) {
          double acc = 0.0;
          for (int64_t i = 0; i < osp; ++i) acc += pg[o * osp + i];
          gb[o] += acc;
        }
      }
    }
    EMatrix wt;
    if (x->requires_grad) wt = as_matrix(w->value, O, ckk).transpose();
    Tensor gcol;
    if (x->requires_grad) gcol = Tensor({ckk, static_cast<int>(osp)});
    for (int n = 0; n < N; ++n) {
      ECMap g(self.grad.data() + static_cast<int64_t>(n) * O * osp, O, osp);
      if (w->requires_grad)
        as_matrix(ensure_grad(w), O, ckk).noalias() += g * as_matrix((*cols)[static_cast<size_t>(n)], ckk, static_cast<int>(osp)).transpose();
      if (x->requires_grad) {
        as_matrix(gcol, ckk, static_cast<int>(osp)).noalias() = wt * g;
        col2im_add(gcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                   ensure_grad(x).data() + static_cast<int64_t>(n) * C * H * W);
      }
    }
  });
}

Var avg_pool_full(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4) throw ValidationError("avg_pool_full: expects rank-4, got " + xv.shape_str());
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int64_t sp = static_cast<int64_t>(H) * W;
  Tensor out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* p = xv.data() + (static_cast<int64_t>(n) * C + c) * sp;
      double acc = 0.0;
      for (int64_t i = 0; i < sp; ++i) acc += p[i];
      out[static_cast<int64_t>(n) * C + c] = acc / static_cast<double>(sp);
    }
  return wire(std::move(out), {x}, [x, N, C, sp](Node& self) {
    if (!x->requires_grad) return;
    Tensor& gx = ensure_grad(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double gv = self.grad[static_cast<int64_t>(n) * C + c] / static_cast<double>(sp);
        double* p = gx.data() + (static_cast<int64_t>(n) * C + c) * sp;
        for (int64_t i = 0; i < sp; ++i) p[i] += gv;
      }
  });
}

Var layer_norm_rows(const Var& x, double eps) {
  const Tensor& xv = x->value;
  if (xv.rank() != 2) throw ValidationError("layer_norm_rows: expects rank-2, got " + xv.shape_str());
  if (eps <= 0.0) throw ValidationError("layer_norm_rows: eps must be positive");
  int N = xv.dim(0), D = xv.dim(1);
  Tensor out({N, D});
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    const double* p = xv.data() + static_cast<int64_t>(n) * D;
    double mean = 0.0;
    for (int j = 0; j < D; ++j) mean += p[j];
    mean /= D;
    double var = 0.0;
    for (int j = 0; j < D; ++j) var += (p[j] - mean) * (p[j] - mean);
    var /= D;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(n)] = is;
    double* o = out.data() + static_cast<int64_t>(n) * D;
    for (int j = 0; j < D; ++j) o[j] = (p[j] - mean) * is;
  }
  return wire(std::move(out), {x}, [x, inv_std, N, D](Node& self) {
    if (!x->requires_grad) return;
    Tensor& gx = ensure_grad(x);
    for (int n = 0; n < N; ++n) {
      const double* g = self.grad.data() + static_cast<int64_t>(n) * D;
      const double* y = self.value.data() + static_cast<int64_t>(n) * D;
      double gm = 0.0, gym = 0.0;
      for (int j = 0; j < D; ++j) {
        gm += g[j];
        gym += g[j] * y[j];
      }
      gm /= D;
      gym /= D;
      double is = (*inv_std)[static_cast<size_t>(n)];
      double* out = gx.data() + static_cast<int64_t>(n) * D;
      for (int j = 0; j < D; ++j) out[j] += is * (g[j] - gm - y[j] * gym);
    }
  });
}

Var crop(const Var& x, int sample, int r0, int c0, int hs, int ws) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4) throw ValidationError("crop: expects rank-4, got " + xv.shape_str());
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (sample < 0 || sample >= N) throw ValidationError("crop: sample index out of range");
  if (r0 < 0 || c0 < 0 || r0 + hs > H || c0 + ws > W) throw ValidationError("crop: window outside map");
  Tensor out({C, hs, ws});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < hs; ++i)
      std::memcpy(out.data() + (static_cast<int64_t>(c) * hs + i) * ws,
                  xv.data() + ((static_cast<int64_t>(sample) * C + c) * H + r0 + i) * W + c0,
                  sizeof(double) * static_cast<size_t>(ws));
  return wire(std::move(out), {x}, [x, sample, r0, c0, hs, ws](Node& self) {
    if (!x->requires_grad) return;
    const Tensor& xv = x->value;
    int C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor& gx = ensure_grad(x);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < hs; ++i) {
        double* dst = gx.data() + ((static_cast<int64_t>(sample) * C + c) * H + r0 + i) * W + c0;
        const double* src = self.grad.data() + (static_cast<int64_t>(c) * hs + i) * ws;
        for (int j = 0; j < ws; ++j) dst[j] += src[j];
      }
  });
}

Var grad_reverse(const Var& x, double lambda) {
  Tensor out = x->value;
  return wire(std::move(out), {x}, [x, lambda](Node& self) {
    if (x->requires_grad) ensure_grad(x).axpy_(-lambda, self.grad);
  });
}

Var cross_entropy_mean(const Var& logits, const std::vector<int>& labels) {
  const Tensor& lv = logits->value;
  if (lv.rank() != 2 || static_cast<size_t>(lv.dim(0)) != labels.size())
    throw ValidationError("cross_entropy_mean: logits " + lv.shape_str() + " vs " + std::to_string(labels.size()) +
                          " labels");
  int N = lv.dim(0), C = lv.dim(1);
  for (int y : labels)
    if (y < 0 || y >= C) throw ValidationError("cross_entropy_mean: label out of range");
  double total = 0.0;
  std::vector<double> lse(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    const double* l = lv.data() + static_cast<int64_t>(n) * C;
    double m = l[0];
    for (int j = 1; j < C; ++j) m = std::max(m, l[j]);
    double s = 0.0;
    for (int j = 0; j < C; ++j) s += std::exp(l[j] - m);
    lse[static_cast<size_t>(n)] = m + std::log(s);
    total += lse[static_cast<size_t>(n)] - l[labels[static_cast<size_t>(n)]];
  }
  Tensor out = Tensor::scalar(total / N);
  return wire(std::move(out), {logits}, [logits, labels, lse, N, C](Node& self) {
    if (!logits->requires_grad) return;
    double g = self.grad[0] / N;
    Tensor& gl = ensure_grad(logits);
    for (int n = 0; n < N; ++n) {
      const double* l = logits->value.data() + static_cast<int64_t>(n) * C;
      double* gp = gl.data() + static_cast<int64_t>(n) * C;
      for (int j = 0; j < C; ++j) {
        double p = std::exp(l[j] - lse[static_cast<size_t>(n)]);
        gp[j] += g * (p - (j == labels[static_cast<size_t>(n)] ? 1.0 : 0.0));
      }
    }
  });
}

Var mean_softplus(const Var& x, double sign, double weight) {
  int64_t n = x->value.size();
  if (n == 0) throw ValidationError("mean_softplus: empty input");
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) total += softplus(sign * x->value[i]);
  Tensor out = Tensor::scalar(weight * total / static_cast<double>(n));
  return wire(std::move(out), {x}, [x, sign, weight, n](Node& self) {
    if (!x->requires_grad) return;
    double g = self.grad[0] * weight / static_cast<double>(n);
    Tensor& gx = ensure_grad(x);
    for (int64_t i = 0; i < n; ++i) gx[i] += g * sign * sigmoid(sign * x->value[i]);
  });
}

Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& coeffs) {
  if (scalars.empty() || scalars.size() != coeffs.size()) throw ValidationError("weighted_sum: size mismatch");
  double total = 0.0;
  for (size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i]->value.size() != 1) throw ValidationError("weighted_sum: non-scalar term");
    total += coeffs[i] * scalars[i]->value[0];
  }
  Tensor out = Tensor::scalar(total);
  return wire(std::move(out), scalars, [scalars, coeffs](Node& self) {
    for (size_t i = 0; i < scalars.size(); ++i)
      if (scalars[i]->requires_grad) ensure_grad(scalars[i])[0] += coeffs[i] * self.grad[0];
  });
}

}  // namespace agra::ad
