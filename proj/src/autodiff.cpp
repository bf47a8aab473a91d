#include "owattr/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "owattr/kernels.hpp"

namespace owattr::ad {

const Tensor& Var::value() const { return tape->value(*this); }

Tensor Gradients::of(Var v) const {
  if (v.id < grads_.size() && touched_[v.id]) return grads_[v.id];
  return Tensor(tape_->value(v).shape());
}

bool Gradients::touched(Var v) const { return v.id < touched_.size() && touched_[v.id]; }

Var Tape::leaf(Tensor value, std::string name) {
  nodes_.push_back(Node{std::move(name), std::move(value), {}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(std::string op, Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  bool needs = false;
  for (auto p : parents) needs = needs || nodes_.at(p).requires_grad;
  nodes_.push_back(Node{std::move(op), std::move(value), std::move(parents),
                        needs ? std::move(fn) : nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this) throw std::invalid_argument("loss was recorded on a different tape");
  if (value(loss).size() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_string(value(loss).shape()));
  Gradients g;
  g.tape_ = this;
  g.grads_.resize(nodes_.size());
  g.touched_.assign(nodes_.size(), false);
  g.grads_[loss.id] = Tensor(value(loss).shape(), 1.0);
  g.touched_[loss.id] = true;

  std::vector<Tensor*> parent_ptrs;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!g.touched_[i] || !node.backward) continue;
    parent_ptrs.clear();
    for (auto p : node.parents) {
      if (!nodes_[p].requires_grad) {
        parent_ptrs.push_back(nullptr);
        continue;
      }
      if (!g.touched_[p]) {
        g.grads_[p] = Tensor(nodes_[p].value.shape());
        g.touched_[p] = true;
      }
      parent_ptrs.push_back(&g.grads_[p]);
    }
    g.visit_order_.push_back(i);
    node.backward(g.grads_[i], parent_ptrs);
  }
  return g;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

template <typename F>
Var unary(Var x, const char* op, F&& f, std::function<double(double x, double y)> dfdx) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  Tensor xcopy = xv;
  Tensor ycopy = y;
  return x.tape->record(op, std::move(y), {x.id},
                        [xcopy = std::move(xcopy), ycopy = std::move(ycopy), dfdx](
                            const Tensor& go, std::span<Tensor* const> pg) {
                          if (!pg[0]) return;
                          for (std::size_t i = 0; i < go.size(); ++i)
                            (*pg[0])[i] += go[i] * dfdx(xcopy[i], ycopy[i]);
                        });
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return a.tape->record("add", std::move(y), {a.id, b.id},
                        [](const Tensor& go, std::span<Tensor* const> pg) {
                          accumulate(pg[0], go);
                          accumulate(pg[1], go);
                        });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return a.tape->record("sub", std::move(y), {a.id, b.id},
                        [](const Tensor& go, std::span<Tensor* const> pg) {
                          accumulate(pg[0], go);
                          if (pg[1])
                            for (std::size_t i = 0; i < go.size(); ++i) (*pg[1])[i] -= go[i];
                        });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor av = a.value(), bv = b.value();
  Tensor y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.tape->record("mul", std::move(y), {a.id, b.id},
                        [av = std::move(av), bv = std::move(bv)](const Tensor& go,
                                                                  std::span<Tensor* const> pg) {
                          if (pg[0])
                            for (std::size_t i = 0; i < go.size(); ++i) (*pg[0])[i] += go[i] * bv[i];
                          if (pg[1])
                            for (std::size_t i = 0; i < go.size(); ++i) (*pg[1])[i] += go[i] * av[i];
                        });
}

Var scale(Var a, double c) {
  Tensor y = a.value();
  for (auto& v : y.raw()) v *= c;
  return a.tape->record("scale", std::move(y), {a.id},
                        [c](const Tensor& go, std::span<Tensor* const> pg) {
                          if (pg[0])
                            for (std::size_t i = 0; i < go.size(); ++i) (*pg[0])[i] += c * go[i];
                        });
}

Var add_scalar(Var a, double c) {
  Tensor y = a.value();
  for (auto& v : y.raw()) v += c;
  return a.tape->record("add_scalar", std::move(y), {a.id},
                        [](const Tensor& go, std::span<Tensor* const> pg) { accumulate(pg[0], go); });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) throw ShapeError("matmul: inner dimension mismatch");
  Tensor y({m, n});
  kernels::gemm(false, false, m, n, k, av.data(), bv.data(), y.data());
  return a.tape->record("matmul", std::move(y), {a.id, b.id},
                        [av, bv, m, n, k](const Tensor& go, std::span<Tensor* const> pg) {
                          if (pg[0]) {
                            Tensor ga({m, k});
                            kernels::gemm(false, true, m, k, n, go.data(), bv.data(), ga.data());
                            accumulate(pg[0], ga);
                          }
                          if (pg[1]) {
                            Tensor gb({k, n});
                            kernels::gemm(true, false, k, n, m, av.data(), go.data(), gb.data());
                            accumulate(pg[1], gb);
                          }
                        });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  if (bv.dim(1) != k) throw ShapeError("matmul_nt: inner dimension mismatch");
  Tensor y({m, n});
  kernels::gemm(false, true, m, n, k, av.data(), bv.data(), y.data());
  return a.tape->record("matmul_nt", std::move(y), {a.id, b.id},
                        [av, bv, m, n, k](const Tensor& go, std::span<Tensor* const> pg) {
                          if (pg[0]) {
                            Tensor ga({m, k});
                            kernels::gemm(false, false, m, k, n, go.data(), bv.data(), ga.data());
                            accumulate(pg[0], ga);
                          }
                          if (pg[1]) {
                            Tensor gb({n, k});
                            kernels::gemm(true, false, n, k, m, go.data(), av.data(), gb.data());
                            accumulate(pg[1], gb);
                          }
                        });
}

Var add_row(Var x, Var bias) {
  const Tensor& xv = x.value();
  require_matrix(xv, "add_row");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (bias.value().size() != n) throw ShapeError("add_row: bias length mismatch");
  Tensor y = xv;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] += bias.value()[c];
  return x.tape->record("add_row", std::move(y), {x.id, bias.id},
                        [m, n](const Tensor& go, std::span<Tensor* const> pg) {
                          accumulate(pg[0], go);
                          if (pg[1])
                            for (std::size_t r = 0; r < m; ++r)
                              for (std::size_t c = 0; c < n; ++c) (*pg[1])[c] += go[r * n + c];
                        });
}

Var mul_row(Var x, Var gain) {
  const Tensor& xv = x.value();
  require_matrix(xv, "mul_row");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (gain.value().size() != n) throw ShapeError("mul_row: gain length mismatch");
  Tensor gv = gain.value();
  Tensor y = xv;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] *= gv[c];
  return x.tape->record("mul_row", std::move(y), {x.id, gain.id},
                        [xv, gv = std::move(gv), m, n](const Tensor& go, std::span<Tensor* const> pg) {
                          if (pg[0])
                            for (std::size_t r = 0; r < m; ++r)
                              for (std::size_t c = 0; c < n; ++c) (*pg[0])[r * n + c] += go[r * n + c] * gv[c];
                          if (pg[1])
                            for (std::size_t r = 0; r < m; ++r)
                              for (std::size_t c = 0; c < n; ++c) (*pg[1])[c] += go[r * n + c] * xv[r * n + c];
                        });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
  const Tensor& xv = x.value();
  require_matrix(xv, "gather_rows");
  const std::size_t n = xv.dim(1);
  Tensor y({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.dim(0)) throw ShapeError("gather_rows: index out of range");
    std::copy_n(xv.row(rows[r]).begin(), n, y.row(r).begin());
  }
  return x.tape->record("gather_rows", std::move(y), {x.id},
                        [rows = std::move(rows), n](const Tensor& go, std::span<Tensor* const> pg) {
                          if (!pg[0]) return;
                          for (std::size_t r = 0; r < rows.size(); ++r)
                            for (std::size_t c = 0; c < n; ++c) (*pg[0])[rows[r] * n + c] += go[r * n + c];
                        });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  require_matrix(xv, "slice_rows");
  if (begin > end || end > xv.dim(0)) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t n = xv.dim(1);
  Tensor y({end - begin, n},
           std::vector<double>(xv.raw().begin() + static_cast<std::ptrdiff_t>(begin * n),
                               xv.raw().begin() + static_cast<std::ptrdiff_t>(end * n)));
  return x.tape->record("slice_rows", std::move(y), {x.id},
                        [begin, n](const Tensor& go, std::span<Tensor* const> pg) {
                          if (!pg[0]) return;
                          for (std::size_t i = 0; i < go.size(); ++i) (*pg[0])[begin * n + i] += go[i];
                        });
}

Var tanh(Var x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary(x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var log_eps(Var x) {
  return unary(x, "log", [](double v) { return std::log(v + kLogEps); },
               [](double xv, double) { return 1.0 / (xv + kLogEps); });
}

Var normalize_rows(Var x) {
  const Tensor& xv = x.value();
  require_matrix(xv, "normalize_rows");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor y = xv;
  std::vector<double> norms(m);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v * v;
    norms[r] = std::sqrt(s) + kLogEps;
    for (auto& v : y.row(r)) v /= norms[r];
  }
  Tensor ycopy = y;
  return x.tape->record("normalize_rows", std::move(y), {x.id},
                        [ycopy = std::move(ycopy), norms = std::move(norms), m, n](
                            const Tensor& go, std::span<Tensor* const> pg) {
                          if (!pg[0]) return;
                          for (std::size_t r = 0; r < m; ++r) {
                            double dot = 0.0;
                            for (std::size_t c = 0; c < n; ++c) dot += ycopy[r * n + c] * go[r * n + c];
                            for (std::size_t c = 0; c < n; ++c)
                              (*pg[0])[r * n + c] += (go[r * n + c] - ycopy[r * n + c] * dot) / norms[r];
                          }
                        });
}

Var softmax_rows(Var x, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax temperature must be positive");
  Tensor xv = x.value();
  if (xv.rank() == 1) xv = xv.reshaped({1, xv.size()});
  require_matrix(xv, "softmax_rows");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor y(x.value().shape());
  kernels::softmax_rows(xv.data(), y.data(), m, n, 1.0 / temperature);
  Tensor ycopy = y;
  return x.tape->record("softmax_rows", std::move(y), {x.id},
                        [ycopy = std::move(ycopy), m, n, temperature](const Tensor& go,
                                                                      std::span<Tensor* const> pg) {
                          if (!pg[0]) return;
                          for (std::size_t r = 0; r < m; ++r) {
                            double dot = 0.0;
                            for (std::size_t c = 0; c < n; ++c) dot += go[r * n + c] * ycopy[r * n + c];
                            for (std::size_t c = 0; c < n; ++c)
                              (*pg[0])[r * n + c] += ycopy[r * n + c] * (go[r * n + c] - dot) / temperature;
                          }
                        });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record("sum", Tensor::scalar(s), {x.id},
                        [](const Tensor& go, std::span<Tensor* const> pg) {
                          if (!pg[0]) return;
                          for (auto& v : pg[0]->raw()) v += go[0];
                        });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record("mean", Tensor::scalar(s / n), {x.id},
                        [n](const Tensor& go, std::span<Tensor* const> pg) {
                          if (!pg[0]) return;
                          for (auto& v : pg[0]->raw()) v += go[0] / n;
                        });
}

Var col_mean(Var x) {
  const Tensor& xv = x.value();
  require_matrix(xv, "col_mean");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (m == 0) throw ShapeError("col_mean of an empty matrix");
  Tensor y({n});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) y[c] += xv[r * n + c];
  for (auto& v : y.raw()) v /= static_cast<double>(m);
  return x.tape->record("col_mean", std::move(y), {x.id},
                        [m, n](const Tensor& go, std::span<Tensor* const> pg) {
                          if (!pg[0]) return;
                          for (std::size_t r = 0; r < m; ++r)
                            for (std::size_t c = 0; c < n; ++c)
                              (*pg[0])[r * n + c] += go[c] / static_cast<double>(m);
                        });
}

Var cross_entropy_rows(Var target, Var pred) {
  const Tensor& tv = target.value();
  const Tensor& pv = pred.value();
  require_same_shape(tv, pv, "cross_entropy_rows");
  const std::size_t m = pv.rows(), n = pv.cols();
  Tensor y({m});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s -= tv[r * n + c] * std::log(pv[r * n + c] + kLogEps);
    y[r] = s;
  }
  return target.tape->record(
      "cross_entropy_rows", std::move(y), {target.id, pred.id},
      [tv, pv, m, n](const Tensor& go, std::span<Tensor* const> pg) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) {
            const std::size_t i = r * n + c;
            if (pg[0]) (*pg[0])[i] -= go[r] * std::log(pv[i] + kLogEps);
            if (pg[1]) (*pg[1])[i] -= go[r] * tv[i] / (pv[i] + kLogEps);
          }
      });
}

namespace {

Var dct_rows_op(Var x, std::size_t h, std::size_t w, bool inverse) {
  const Tensor& xv = x.value();
  require_matrix(xv, inverse ? "idct2_rows" : "dct2_rows");
  if (xv.dim(1) != h * w) throw ShapeError("dct rows: row length is not h*w");
  const std::size_t m = xv.dim(0);
  Tensor y(xv.shape());
  kernels::dct_rows(xv.data(), y.data(), m, h, w, inverse);
  // The transform is orthogonal, so its adjoint is the opposite direction.
  return x.tape->record(inverse ? "idct2_rows" : "dct2_rows", std::move(y), {x.id},
                        [m, h, w, inverse](const Tensor& go, std::span<Tensor* const> pg) {
                          if (!pg[0]) return;
                          Tensor gx(go.shape());
                          kernels::dct_rows(go.data(), gx.data(), m, h, w, !inverse);
                          accumulate(pg[0], gx);
                        });
}

}  // namespace

Var dct2_rows(Var x, std::size_t h, std::size_t w) { return dct_rows_op(x, h, w, false); }
Var idct2_rows(Var x, std::size_t h, std::size_t w) { return dct_rows_op(x, h, w, true); }

Var detach(Var x) { return x.tape->constant(x.value()); }

}  // namespace owattr::ad
