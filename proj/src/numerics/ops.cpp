#include "nuner/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nuner::num {

namespace {

template <typename Real>
void require_rank2(const char* op, const Tensor<Real>& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " +
                     shape_str(t.shape()));
  }
}

// C[n x m] += A[n x k] * B[k x m]
template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t n,
             std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    Real* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a[i * k + p];
      if (av == Real(0)) continue;
      const Real* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[n x k] += A[n x m] * B[k x m]^T
template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t n,
             std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    const Real* arow = a + i * m;
    for (std::size_t j = 0; j < k; ++j) {
      const Real* brow = b + j * m;
      Real acc = Real(0);
      for (std::size_t p = 0; p < m; ++p) acc += arow[p] * brow[p];
      c[i * k + j] += acc;
    }
  }
}

// C[k x m] += A[n x k]^T * B[n x m]
template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t n,
             std::size_t k, std::size_t m) {
  for (std::size_t p = 0; p < n; ++p) {
    const Real* brow = b + p * m;
    for (std::size_t i = 0; i < k; ++i) {
      const Real av = a[p * k + i];
      if (av == Real(0)) continue;
      Real* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename Real>
void accumulate(Tensor<Real>& dst, const Tensor<Real>& src) {
  Real* d = dst.data();
  const Real* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  Tape<Real>& tape = *a.tape;
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  require_rank2("matmul", av);
  require_rank2("matmul", bv);
  if (av.cols() != bv.rows()) throw ShapeError("matmul", av.shape(), bv.shape());
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor<Real> out({n, m});
  gemm_nn(av.data(), bv.data(), out.data(), n, k, m);
  const std::size_t ia = a.id, ib = b.id;
  return tape.record("matmul", std::move(out), {ia, ib},
                     [ia, ib, n, k, m](Tape<Real>& t, std::size_t self) {
                       const Tensor<Real>& g = t.grad(self);
                       if (t.requires_grad(ia)) {
                         gemm_nt(g.data(), t.value(ib).data(),
                                 t.grad(ia).data(), n, m, k);
                       }
                       if (t.requires_grad(ib)) {
                         gemm_tn(t.value(ia).data(), g.data(),
                                 t.grad(ib).data(), n, k, m);
                       }
                     });
}

template <typename Real>
Var<Real> transpose(Var<Real> a) {
  const Tensor<Real>& av = a.value();
  require_rank2("transpose", av);
  const std::size_t r = av.rows(), c = av.cols();
  Tensor<Real> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  const std::size_t ia = a.id;
  return a.tape->record("transpose", std::move(out), {ia},
                        [ia, r, c](Tape<Real>& t, std::size_t self) {
                          const Tensor<Real>& g = t.grad(self);
                          Tensor<Real>& ga = t.grad(ia);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j)
                              ga.at(i, j) += g.at(j, i);
                        });
}

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  const std::size_t ia = a.id, ib = b.id;
  if (av.shape() == bv.shape()) {
    Tensor<Real> out = av;
    accumulate(out, bv);
    return a.tape->record("add", std::move(out), {ia, ib},
                          [ia, ib](Tape<Real>& t, std::size_t self) {
                            const Tensor<Real>& g = t.grad(self);
                            if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
                            if (t.requires_grad(ib)) accumulate(t.grad(ib), g);
                          });
  }
  const bool row_broadcast = av.rank() == 2 && bv.size() == av.cols() &&
                             (bv.rank() == 1 || (bv.rank() == 2 && bv.rows() == 1));
  if (!row_broadcast) throw ShapeError("add", av.shape(), bv.shape());
  const std::size_t r = av.rows(), c = av.cols();
  Tensor<Real> out = av;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) += bv[j];
  return a.tape->record("add", std::move(out), {ia, ib},
                        [ia, ib, r, c](Tape<Real>& t, std::size_t self) {
                          const Tensor<Real>& g = t.grad(self);
                          if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
                          if (t.requires_grad(ib)) {
                            Tensor<Real>& gb = t.grad(ib);
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j)
                                gb[j] += g.at(i, j);
                          }
                        });
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  if (av.shape() != bv.shape()) throw ShapeError("mul", av.shape(), bv.shape());
  Tensor<Real> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record("mul", std::move(out), {ia, ib},
                        [ia, ib](Tape<Real>& t, std::size_t self) {
                          const Tensor<Real>& g = t.grad(self);
                          if (t.requires_grad(ia)) {
                            Tensor<Real>& ga = t.grad(ia);
                            const Tensor<Real>& bv = t.value(ib);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] += g[i] * bv[i];
                          }
                          if (t.requires_grad(ib)) {
                            Tensor<Real>& gb = t.grad(ib);
                            const Tensor<Real>& av = t.value(ia);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gb[i] += g[i] * av[i];
                          }
                        });
}

template <typename Real>
Var<Real> scale(Var<Real> a, Real factor) {
  Tensor<Real> out = a.value();
  for (Real& v : out.values()) v *= factor;
  const std::size_t ia = a.id;
  return a.tape->record("scale", std::move(out), {ia},
                        [ia, factor](Tape<Real>& t, std::size_t self) {
                          const Tensor<Real>& g = t.grad(self);
                          Tensor<Real>& ga = t.grad(ia);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga[i] += g[i] * factor;
                        });
}

template <typename Real>
Var<Real> sum(Var<Real> a) {
  double acc = 0.0;
  for (Real v : a.value().values()) acc += v;
  const std::size_t ia = a.id;
  return a.tape->record("sum", Tensor<Real>({1}, static_cast<Real>(acc)), {ia},
                        [ia](Tape<Real>& t, std::size_t self) {
                          const Real g = t.grad(self)[0];
                          for (Real& v : t.grad(ia).values()) v += g;
                        });
}

template <typename Real>
Var<Real> mean(Var<Real> a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty input");
  return scale(sum(a), Real(1) / static_cast<Real>(n));
}

template <typename Real>
Var<Real> embedding_lookup(Var<Real> table, std::span<const int> ids) {
  const Tensor<Real>& tv = table.value();
  require_rank2("embedding_lookup", tv);
  const std::size_t vocab = tv.rows(), dim = tv.cols();
  Tensor<Real> out({ids.size(), dim});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[r]) +
                              " outside table of " + std::to_string(vocab) +
                              " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * dim, dim,
                out.data() + r * dim);
  }
  const std::size_t it = table.id;
  std::vector<int> id_copy(ids.begin(), ids.end());
  return table.tape->record(
      "embedding_lookup", std::move(out), {it},
      [it, dim, id_copy = std::move(id_copy)](Tape<Real>& t, std::size_t self) {
        const Tensor<Real>& g = t.grad(self);
        Tensor<Real>& gt = t.grad(it);
        for (std::size_t r = 0; r < id_copy.size(); ++r) {
          Real* dst = gt.data() + static_cast<std::size_t>(id_copy[r]) * dim;
          const Real* src = g.data() + r * dim;
          for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
        }
      });
}

template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Real eps) {
  const Tensor<Real>& xv = x.value();
  require_rank2("layer_norm", xv);
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gamma.value().size() != c) {
    throw ShapeError("layer_norm", xv.shape(), gamma.value().shape());
  }
  if (beta.value().size() != c) {
    throw ShapeError("layer_norm", xv.shape(), beta.value().shape());
  }
  const Tensor<Real>& gv = gamma.value();
  const Tensor<Real>& bv = beta.value();
  Tensor<Real> normalized({r, c});
  std::vector<Real> rstd(r);
  Tensor<Real> out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv.at(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[i] = static_cast<Real>(rs);
    for (std::size_t j = 0; j < c; ++j) {
      const Real xhat = static_cast<Real>((xv.at(i, j) - mu) * rs);
      normalized.at(i, j) = xhat;
      out.at(i, j) = xhat * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(
      "layer_norm", std::move(out), {ix, ig, ib},
      [ix, ig, ib, r, c, normalized = std::move(normalized),
       rstd = std::move(rstd)](Tape<Real>& t, std::size_t self) {
        const Tensor<Real>& g = t.grad(self);
        if (t.requires_grad(ig)) {
          Tensor<Real>& gg = t.grad(ig);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              gg[j] += g.at(i, j) * normalized.at(i, j);
        }
        if (t.requires_grad(ib)) {
          Tensor<Real>& gb = t.grad(ib);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g.at(i, j);
        }
        if (t.requires_grad(ix)) {
          const Tensor<Real>& gv = t.value(ig);
          Tensor<Real>& gx = t.grad(ix);
          std::vector<double> dxhat(c);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              dxhat[j] = static_cast<double>(g.at(i, j)) * gv[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * normalized.at(i, j);
            }
            mean_d /= static_cast<double>(c);
            mean_dx /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) {
              gx.at(i, j) += static_cast<Real>(
                  rstd[i] * (dxhat[j] - mean_d - normalized.at(i, j) * mean_dx));
            }
          }
        }
      });
}

template <typename Real>
Var<Real> relu(Var<Real> x) {
  Tensor<Real> out = x.value();
  for (Real& v : out.values()) v = v > Real(0) ? v : Real(0);
  const std::size_t ix = x.id;
  return x.tape->record("relu", std::move(out), {ix},
                        [ix](Tape<Real>& t, std::size_t self) {
                          const Tensor<Real>& g = t.grad(self);
                          const Tensor<Real>& xv = t.value(ix);
                          Tensor<Real>& gx = t.grad(ix);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (xv[i] > Real(0)) gx[i] += g[i];
                        });
}

template <typename Real>
Var<Real> softmax(Var<Real> x) {
  const Tensor<Real>& xv = x.value();
  require_rank2("softmax", xv);
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor<Real> out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    Real mx = xv.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xv.at(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const Real e = std::exp(xv.at(i, j) - mx);
      out.at(i, j) = e;
      total += e;
    }
    for (std::size_t j = 0; j < c; ++j)
      out.at(i, j) = static_cast<Real>(out.at(i, j) / total);
  }
  const std::size_t ix = x.id;
  return x.tape->record(
      "softmax", std::move(out), {ix},
      [ix, r, c](Tape<Real>& t, std::size_t self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& yv = t.value(self);
        Tensor<Real>& gx = t.grad(ix);
        for (std::size_t i = 0; i < r; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += g.at(i, j) * yv.at(i, j);
          for (std::size_t j = 0; j < c; ++j)
            gx.at(i, j) += static_cast<Real>(yv.at(i, j) * (g.at(i, j) - dot));
        }
      });
}

template <typename Real>
Var<Real> dropout(Var<Real> x, double p, std::mt19937_64& rng, bool training) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("dropout: p must be in [0, 1), got " +
                                std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  Tensor<Real> mask = Tensor<Real>::zeros_like(x.value());
  for (Real& m : mask.values()) m = uniform01(rng) >= p ? keep_scale : Real(0);
  Tensor<Real> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ix = x.id;
  return x.tape->record("dropout", std::move(out), {ix},
                        [ix, mask = std::move(mask)](Tape<Real>& t,
                                                     std::size_t self) {
                          const Tensor<Real>& g = t.grad(self);
                          Tensor<Real>& gx = t.grad(ix);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gx[i] += g[i] * mask[i];
                        });
}

template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis != 0 && axis != 1) {
    throw std::invalid_argument("concat: axis must be 0 or 1");
  }
  Tape<Real>& tape = *parts.front().tape;
  const Tensor<Real>& first = parts.front().value();
  require_rank2("concat", first);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Var<Real>& p : parts) {
    const Tensor<Real>& v = p.value();
    require_rank2("concat", v);
    const bool ok = axis == 0 ? v.cols() == first.cols() : v.rows() == first.rows();
    if (!ok) throw ShapeError("concat", first.shape(), v.shape());
    ids.push_back(p.id);
    offsets.push_back(total);
    total += axis == 0 ? v.rows() : v.cols();
  }
  const std::size_t rows = axis == 0 ? total : first.rows();
  const std::size_t cols = axis == 0 ? first.cols() : total;
  Tensor<Real> out({rows, cols});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<Real>& v = parts[k].value();
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) {
        if (axis == 0) out.at(offsets[k] + i, j) = v.at(i, j);
        else out.at(i, offsets[k] + j) = v.at(i, j);
      }
  }
  return tape.record(
      "concat", std::move(out), ids,
      [ids, offsets, axis](Tape<Real>& t, std::size_t self) {
        const Tensor<Real>& g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor<Real>& gk = t.grad(ids[k]);
          for (std::size_t i = 0; i < gk.rows(); ++i)
            for (std::size_t j = 0; j < gk.cols(); ++j) {
              gk.at(i, j) += axis == 0 ? g.at(offsets[k] + i, j)
                                       : g.at(i, offsets[k] + j);
            }
        }
      });
}

template <typename Real>
Var<Real> mean_pool(Var<Real> x) {
  const Tensor<Real>& xv = x.value();
  require_rank2("mean_pool", xv);
  const std::size_t r = xv.rows(), c = xv.cols();
  if (r == 0) throw ShapeError("mean_pool: no rows to pool");
  Tensor<Real> out({1, c});
  for (std::size_t j = 0; j < c; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < r; ++i) acc += xv.at(i, j);
    out[j] = static_cast<Real>(acc / static_cast<double>(r));
  }
  const std::size_t ix = x.id;
  return x.tape->record("mean_pool", std::move(out), {ix},
                        [ix, r, c](Tape<Real>& t, std::size_t self) {
                          const Tensor<Real>& g = t.grad(self);
                          Tensor<Real>& gx = t.grad(ix);
                          const Real inv = Real(1) / static_cast<Real>(r);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j)
                              gx.at(i, j) += g[j] * inv;
                        });
}

template <typename Real>
Var<Real> slice_cols(Var<Real> x, std::size_t start, std::size_t count) {
  const Tensor<Real>& xv = x.value();
  require_rank2("slice_cols", xv);
  if (start + count > xv.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") outside " +
                     shape_str(xv.shape()));
  }
  const std::size_t r = xv.rows();
  Tensor<Real> out({r, count});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = xv.at(i, start + j);
  const std::size_t ix = x.id;
  return x.tape->record("slice_cols", std::move(out), {ix},
                        [ix, r, start, count](Tape<Real>& t, std::size_t self) {
                          const Tensor<Real>& g = t.grad(self);
                          Tensor<Real>& gx = t.grad(ix);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < count; ++j)
                              gx.at(i, start + j) += g.at(i, j);
                        });
}

template <typename Real>
Var<Real> temp_sigmoid(Var<Real> logits, Real tau) {
  if (!(tau > Real(0))) {
    throw std::invalid_argument("temp_sigmoid: tau must be positive");
  }
  Tensor<Real> out = logits.value();
  for (Real& v : out.values()) v = sigmoid_value(v, tau);
  const std::size_t ix = logits.id;
  return logits.tape->record(
      "temp_sigmoid", std::move(out), {ix},
      [ix, tau](Tape<Real>& t, std::size_t self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& yv = t.value(self);
        Tensor<Real>& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] += g[i] * yv[i] * (Real(1) - yv[i]) / tau;
      });
}

template <typename Real>
Var<Real> bce_loss(Var<Real> probs, const Tensor<Real>& targets,
                   std::span<const std::uint8_t> row_mask) {
  const Tensor<Real>& pv = probs.value();
  if (pv.shape() != targets.shape()) {
    throw ShapeError("bce_loss", pv.shape(), targets.shape());
  }
  const std::size_t r = pv.rows(), c = pv.cols();
  if (!row_mask.empty() && row_mask.size() != r) {
    throw ShapeError("bce_loss: mask has " + std::to_string(row_mask.size()) +
                     " entries for " + std::to_string(r) + " rows");
  }
  std::vector<std::uint8_t> mask(row_mask.begin(), row_mask.end());
  if (mask.empty()) mask.assign(r, 1);
  std::size_t counted = 0;
  for (std::uint8_t m : mask) counted += m ? c : 0;
  const Real lo = static_cast<Real>(kBceEpsilon);
  const Real hi = Real(1) - lo;
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::clamp(pv.at(i, j), lo, hi);
      const double t = targets.at(i, j);
      total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
  }
  const double loss = counted ? total / static_cast<double>(counted) : 0.0;
  const std::size_t ip = probs.id;
  return probs.tape->record(
      "bce_loss", Tensor<Real>({1}, static_cast<Real>(loss)), {ip},
      [ip, r, c, counted, lo, hi, targets, mask = std::move(mask)](
          Tape<Real>& t, std::size_t self) {
        if (!counted) return;
        const Real g = t.grad(self)[0] / static_cast<Real>(counted);
        const Tensor<Real>& pv = t.value(ip);
        Tensor<Real>& gp = t.grad(ip);
        for (std::size_t i = 0; i < r; ++i) {
          if (!mask[i]) continue;
          for (std::size_t j = 0; j < c; ++j) {
            const Real p = pv.at(i, j);
            if (p < lo || p > hi) continue;
            const Real tv = targets.at(i, j);
            gp.at(i, j) += g * (-tv / p + (Real(1) - tv) / (Real(1) - p));
          }
        }
      });
}

template <typename Real>
Var<Real> softmax_cross_entropy(Var<Real> logits, std::span<const int> labels) {
  const Tensor<Real>& lv = logits.value();
  require_rank2("softmax_cross_entropy", lv);
  const std::size_t r = lv.rows(), c = lv.cols();
  if (labels.size() != r) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(r) + " rows");
  }
  Tensor<Real> probs({r, c});
  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    Real mx = lv.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(lv.at(i, j) - mx));
    for (std::size_t j = 0; j < c; ++j)
      probs.at(i, j) = static_cast<Real>(std::exp(static_cast<double>(lv.at(i, j) - mx)) / z);
    if (labels[i] < 0) continue;
    if (static_cast<std::size_t>(labels[i]) >= c) {
      throw std::out_of_range("softmax_cross_entropy: label " +
                              std::to_string(labels[i]) + " outside " +
                              std::to_string(c) + " classes");
    }
    total -= static_cast<double>(lv.at(i, labels[i]) - mx) - std::log(z);
    ++counted;
  }
  const double loss = counted ? total / static_cast<double>(counted) : 0.0;
  const std::size_t il = logits.id;
  std::vector<int> label_copy(labels.begin(), labels.end());
  return logits.tape->record(
      "softmax_cross_entropy", Tensor<Real>({1}, static_cast<Real>(loss)), {il},
      [il, r, c, counted, probs = std::move(probs),
       label_copy = std::move(label_copy)](Tape<Real>& t, std::size_t self) {
        if (!counted) return;
        const Real g = t.grad(self)[0] / static_cast<Real>(counted);
        Tensor<Real>& gl = t.grad(il);
        for (std::size_t i = 0; i < r; ++i) {
          if (label_copy[i] < 0) continue;
          for (std::size_t j = 0; j < c; ++j) {
            const Real target = static_cast<int>(j) == label_copy[i] ? Real(1) : Real(0);
            gl.at(i, j) += g * (probs.at(i, j) - target);
          }
        }
      });
}

#define NUNER_INSTANTIATE_OPS(Real)                                            \
  template Var<Real> matmul(Var<Real>, Var<Real>);                             \
  template Var<Real> transpose(Var<Real>);                                     \
  template Var<Real> add(Var<Real>, Var<Real>);                                \
  template Var<Real> mul(Var<Real>, Var<Real>);                                \
  template Var<Real> scale(Var<Real>, Real);                                   \
  template Var<Real> sum(Var<Real>);                                           \
  template Var<Real> mean(Var<Real>);                                          \
  template Var<Real> embedding_lookup(Var<Real>, std::span<const int>);        \
  template Var<Real> layer_norm(Var<Real>, Var<Real>, Var<Real>, Real);        \
  template Var<Real> relu(Var<Real>);                                          \
  template Var<Real> softmax(Var<Real>);                                       \
  template Var<Real> dropout(Var<Real>, double, std::mt19937_64&, bool);       \
  template Var<Real> concat(const std::vector<Var<Real>>&, int);               \
  template Var<Real> mean_pool(Var<Real>);                                     \
  template Var<Real> slice_cols(Var<Real>, std::size_t, std::size_t);          \
  template Var<Real> temp_sigmoid(Var<Real>, Real);                            \
  template Var<Real> bce_loss(Var<Real>, const Tensor<Real>&,                  \
                              std::span<const std::uint8_t>);                  \
  template Var<Real> softmax_cross_entropy(Var<Real>, std::span<const int>);

NUNER_INSTANTIATE_OPS(float)
NUNER_INSTANTIATE_OPS(double)

#undef NUNER_INSTANTIATE_OPS

}  // namespace nuner::num
