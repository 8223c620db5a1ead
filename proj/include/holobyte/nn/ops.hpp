#pragma once

// Differentiable ops over the tape. Shapes follow the row-major convention
// "[*, D]": every axis but the last is flattened into rows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "holobyte/errors.hpp"
#include "holobyte/nn/graph.hpp"
#include "holobyte/parallel.hpp"
#include "holobyte/tensor.hpp"

namespace holobyte::nn {

namespace detail {

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline std::string mismatch(std::string_view op, const Shape& a, const Shape& b) {
  return std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b);
}

// Rows per worker below which threading is not worth the spawn.
inline constexpr std::size_t kRowGrain = 16;

}  // namespace detail

/// a + b, where b's shape is a trailing suffix of a's (broadcast over leading axes).
template <class Real>
Var add(Graph<Real>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require(detail::is_suffix(bv.shape(), av.shape()), ErrorKind::Shape, detail::mismatch("add", av.shape(), bv.shape()));
  Tensor<Real> out = av;
  const std::size_t period = bv.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i % period];
  return g.push(std::move(out), {a, b}, [a, b, period](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    if (g.requires_grad(a)) {
      auto& da = g.grad(a);
      for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad(b);
      for (std::size_t i = 0; i < dy.numel(); ++i) db[i % period] += dy[i];
    }
  });
}

template <class Real>
Var scale(Graph<Real>& g, Var a, Real c) {
  Tensor<Real> out = g.value(a);
  for (auto& v : out.vec()) v *= c;
  return g.push(std::move(out), {a}, [a, c](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    auto& da = g.grad(a);
    for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += c * dy[i];
  });
}

/// a + lambda * b over scalars. The value is computed exactly as `a + lambda * b`.
template <class Real>
Var add_weighted(Graph<Real>& g, Var a, Var b, Real lambda) {
  require(g.value(a).numel() == 1 && g.value(b).numel() == 1, ErrorKind::Shape, "add_weighted: scalars only");
  Tensor<Real> out({}, g.value(a)[0] + lambda * g.value(b)[0]);
  return g.push(std::move(out), {a, b}, [a, b, lambda](Graph<Real>& g, Var self) {
    const Real dy = g.grad(self)[0];
    if (g.requires_grad(a)) g.grad(a)[0] += dy;
    if (g.requires_grad(b)) g.grad(b)[0] += lambda * dy;
  });
}

/// Same data, new shape.
template <class Real>
Var reshape(Graph<Real>& g, Var a, Shape shape) {
  Tensor<Real> out = g.value(a);
  out.reshape(std::move(shape));
  return g.push(std::move(out), {a}, [a](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    auto& da = g.grad(a);
    for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
  });
}

/// First `count` rows of a 2-D tensor.
template <class Real>
Var slice_rows(Graph<Real>& g, Var a, std::size_t count) {
  const auto& av = g.value(a);
  require(av.rank() == 2 && count <= av.dim(0), ErrorKind::Shape,
          "slice_rows: cannot take " + std::to_string(count) + " rows of " + shape_str(av.shape()));
  const std::size_t d = av.dim(1);
  Tensor<Real> out({count, d}, std::vector<Real>(av.vec().begin(), av.vec().begin() + count * d));
  return g.push(std::move(out), {a}, [a](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    auto& da = g.grad(a);
    for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
  });
}

/// x [*, in] @ weight [in, out] + bias [out]. `bias` may be an invalid Var.
template <class Real>
Var linear(Graph<Real>& g, Var x, Var weight, Var bias = {}) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(weight);
  require(wv.rank() == 2 && xv.cols() == wv.dim(0), ErrorKind::Shape,
          detail::mismatch("linear", xv.shape(), wv.shape()));
  const std::size_t n = xv.rows(), in = wv.dim(0), out_dim = wv.dim(1);
  if (bias.valid())
    require(g.value(bias).numel() == out_dim, ErrorKind::Shape,
            detail::mismatch("linear bias", g.value(bias).shape(), {out_dim}));

  Shape out_shape = xv.shape();
  out_shape.back() = out_dim;
  Tensor<Real> out(out_shape);
  const Real* bp = bias.valid() ? g.value(bias).data() : nullptr;
  parallel_for(n, detail::kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      auto yr = out.row(r);
      if (bp) std::copy(bp, bp + out_dim, yr.begin());
      auto xr = xv.row(r);
      for (std::size_t k = 0; k < in; ++k) axpy<Real>(xr[k], wv.row(k), yr);
    }
  });

  return g.push(std::move(out), {x, weight, bias}, [x, weight, bias, n, in, out_dim](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    const auto& xv = g.value(x);
    const auto& wv = g.value(weight);
    if (g.requires_grad(x)) {
      auto& dx = g.grad(x);
      parallel_for(n, detail::kRowGrain, [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
          auto dyr = dy.row(r);
          auto dxr = dx.row(r);
          for (std::size_t k = 0; k < in; ++k) dxr[k] += dot<Real>(dyr, wv.row(k));
        }
      });
    }
    if (g.requires_grad(weight)) {
      auto& dw = g.grad(weight);
      parallel_for(in, 8, [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = 0; r < n; ++r) {
          auto xr = xv.row(r);
          auto dyr = dy.row(r);
          for (std::size_t k = begin; k < end; ++k) axpy<Real>(xr[k], dyr, dw.row(k));
        }
      });
    }
    if (bias.valid() && g.requires_grad(bias)) {
      auto& db = g.grad(bias);
      for (std::size_t r = 0; r < n; ++r) axpy<Real>(Real{1}, dy.row(r), db.span());
    }
  });
}

/// Row-wise layer normalization with learnable gain and bias.
template <class Real>
Var layer_norm(Graph<Real>& g, Var x, Var gain, Var bias, Real eps = Real(1e-5)) {
  const auto& xv = g.value(x);
  const std::size_t d = xv.cols(), n = xv.rows();
  require(g.value(gain).numel() == d && g.value(bias).numel() == d, ErrorKind::Shape,
          "layer_norm: gain/bias must have " + std::to_string(d) + " elements");
  Tensor<Real> out(xv.shape());
  Tensor<Real> xhat(xv.shape());
  std::vector<Real> rstd(n);
  const auto& gv = g.value(gain);
  const auto& bv = g.value(bias);
  for (std::size_t r = 0; r < n; ++r) {
    auto xr = xv.row(r);
    Real mean{0};
    for (Real v : xr) mean += v;
    mean /= static_cast<Real>(d);
    Real var{0};
    for (Real v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<Real>(d);
    const Real rs = Real{1} / std::sqrt(var + eps);
    rstd[r] = rs;
    auto hr = xhat.row(r);
    auto yr = out.row(r);
    for (std::size_t k = 0; k < d; ++k) {
      hr[k] = (xr[k] - mean) * rs;
      yr[k] = hr[k] * gv[k] + bv[k];
    }
  }
  return g.push(std::move(out), {x, gain, bias},
                [x, gain, bias, n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<Real>& g, Var self) {
                  const auto& dy = g.grad(self);
                  const auto& gv = g.value(gain);
                  if (g.requires_grad(gain)) {
                    auto& dg = g.grad(gain);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t k = 0; k < d; ++k) dg[k] += dy.row(r)[k] * xhat.row(r)[k];
                  }
                  if (g.requires_grad(bias)) {
                    auto& db = g.grad(bias);
                    for (std::size_t r = 0; r < n; ++r) axpy<Real>(Real{1}, dy.row(r), db.span());
                  }
                  if (g.requires_grad(x)) {
                    auto& dx = g.grad(x);
                    std::vector<Real> dh(d);
                    for (std::size_t r = 0; r < n; ++r) {
                      auto dyr = dy.row(r);
                      auto hr = xhat.row(r);
                      Real mean_dh{0}, mean_dh_h{0};
                      for (std::size_t k = 0; k < d; ++k) {
                        dh[k] = dyr[k] * gv[k];
                        mean_dh += dh[k];
                        mean_dh_h += dh[k] * hr[k];
                      }
                      mean_dh /= static_cast<Real>(d);
                      mean_dh_h /= static_cast<Real>(d);
                      auto dxr = dx.row(r);
                      for (std::size_t k = 0; k < d; ++k) dxr[k] += rstd[r] * (dh[k] - mean_dh - hr[k] * mean_dh_h);
                    }
                  }
                });
}

/// GELU, tanh approximation.
template <class Real>
Var gelu(Graph<Real>& g, Var x) {
  constexpr Real c = static_cast<Real>(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real a = static_cast<Real>(0.044715);
  Tensor<Real> out = g.value(x);
  for (auto& v : out.vec()) v = Real(0.5) * v * (Real{1} + std::tanh(c * (v + a * v * v * v)));
  return g.push(std::move(out), {x}, [x](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    const auto& xv = g.value(x);
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const Real v = xv[i];
      const Real t = std::tanh(c * (v + a * v * v * v));
      const Real dt = c * (Real{1} + Real{3} * a * v * v) * (Real{1} - t * t);
      dx[i] += dy[i] * (Real(0.5) * (Real{1} + t) + Real(0.5) * v * dt);
    }
  });
}

/// Multi-head causally masked attention on pre-projected q, k, v [B, L, D].
/// Head h reads feature slice [h*D/H, (h+1)*D/H). Position i attends to j <= i;
/// masked scores never enter the softmax. Every call instantiates B*H maps of
/// L x L and reports them to the graph's probe under `site`.
template <class Real>
Var causal_attention(Graph<Real>& g, Var q, Var k, Var v, std::size_t heads, std::string_view site = "attention") {
  const auto& qv = g.value(q);
  const auto& kv = g.value(k);
  const auto& vv = g.value(v);
  require(qv.rank() == 3 && qv.shape() == kv.shape() && qv.shape() == vv.shape(), ErrorKind::Shape,
          "causal_attention: q, k, v must share a [B, L, D] shape");
  const std::size_t B = qv.dim(0), L = qv.dim(1), D = qv.dim(2);
  require(heads >= 1 && D % heads == 0, ErrorKind::InvalidArgument,
          "causal_attention: dim " + std::to_string(D) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t hd = D / heads;
  const Real inv_sqrt = Real{1} / std::sqrt(static_cast<Real>(hd));

  if (auto* probe = g.probe()) probe->records.push_back({std::string(site), B, L, heads});

  Tensor<Real> probs({B, heads, L, L});
  Tensor<Real> out({B, L, D});
  parallel_for(B * heads, 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t bh = begin; bh < end; ++bh) {
      const std::size_t b = bh / heads, h = bh % heads;
      Real* P = probs.data() + bh * L * L;
      for (std::size_t i = 0; i < L; ++i) {
        std::span<const Real> qi(qv.data() + (b * L + i) * D + h * hd, hd);
        Real* pr = P + i * L;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          std::span<const Real> kj(kv.data() + (b * L + j) * D + h * hd, hd);
          pr[j] = dot<Real>(qi, kj) * inv_sqrt;
          mx = std::max(mx, pr[j]);
        }
        Real sum{0};
        for (std::size_t j = 0; j <= i; ++j) {
          pr[j] = std::exp(pr[j] - mx);
          sum += pr[j];
        }
        for (std::size_t j = 0; j <= i; ++j) pr[j] /= sum;
        std::span<Real> oi(out.data() + (b * L + i) * D + h * hd, hd);
        for (std::size_t j = 0; j <= i; ++j)
          axpy<Real>(pr[j], std::span<const Real>(vv.data() + (b * L + j) * D + h * hd, hd), oi);
      }
    }
  });

  return g.push(std::move(out), {q, k, v},
                [q, k, v, B, L, D, heads, hd, inv_sqrt, probs = std::move(probs)](Graph<Real>& g, Var self) {
                  const auto& dy = g.grad(self);
                  const auto& qv = g.value(q);
                  const auto& kv = g.value(k);
                  const auto& vv = g.value(v);
                  // Gradient buffers are touched unconditionally here; every input of
                  // this op requires grad in practice and zeros are harmless otherwise.
                  auto& dq = g.grad(q);
                  auto& dk = g.grad(k);
                  auto& dv = g.grad(v);
                  parallel_for(B * heads, 1, [&](std::size_t begin, std::size_t end) {
                    std::vector<Real> dp(L), ds(L);
                    for (std::size_t bh = begin; bh < end; ++bh) {
                      const std::size_t b = bh / heads, h = bh % heads;
                      const Real* P = probs.data() + bh * L * L;
                      auto at = [&](const Tensor<Real>& t, std::size_t pos) {
                        return std::span<const Real>(t.data() + (b * L + pos) * D + h * hd, hd);
                      };
                      auto at_mut = [&](Tensor<Real>& t, std::size_t pos) {
                        return std::span<Real>(t.data() + (b * L + pos) * D + h * hd, hd);
                      };
                      for (std::size_t i = 0; i < L; ++i) {
                        const Real* pr = P + i * L;
                        auto dyi = at(dy, i);
                        Real weighted{0};
                        for (std::size_t j = 0; j <= i; ++j) {
                          dp[j] = dot<Real>(dyi, at(vv, j));
                          weighted += pr[j] * dp[j];
                          axpy<Real>(pr[j], dyi, at_mut(dv, j));
                        }
                        for (std::size_t j = 0; j <= i; ++j) ds[j] = pr[j] * (dp[j] - weighted) * inv_sqrt;
                        auto dqi = at_mut(dq, i);
                        auto qi = at(qv, i);
                        for (std::size_t j = 0; j <= i; ++j) {
                          axpy<Real>(ds[j], at(kv, j), dqi);
                          axpy<Real>(ds[j], qi, at_mut(dk, j));
                        }
                      }
                    }
                  });
                });
}

/// Row-wise x / |x|. A zero row raises ZeroVector, a non-finite norm NumericalFault.
template <class Real>
Var normalize_rows(Graph<Real>& g, Var x, std::string_view what = "normalize_rows") {
  Tensor<Real> out = g.value(x);
  std::vector<Real> norms(out.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const Real n = l2_norm<Real>(row);
    if (!std::isfinite(n))
      throw NumericalFault(std::string(what), std::string(what) + ": row " + std::to_string(r) + " has a non-finite norm");
    require(n > Real{0}, ErrorKind::ZeroVector, std::string(what) + ": row " + std::to_string(r) + " has zero norm");
    norms[r] = n;
    for (auto& v : row) v /= n;
  }
  return g.push(std::move(out), {x}, [x, norms = std::move(norms)](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    const auto& y = g.value(self);
    auto& dx = g.grad(x);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto dyr = dy.row(r);
      const Real proj = dot<Real>(yr, dyr);
      auto dxr = dx.row(r);
      for (std::size_t k = 0; k < yr.size(); ++k) dxr[k] += (dyr[k] - yr[k] * proj) / norms[r];
    }
  });
}

/// a [N, D] @ b[K, D]^T -> [N, K].
template <class Real>
Var matmul_nt(Graph<Real>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require(av.cols() == bv.cols() && bv.rank() == 2, ErrorKind::Shape, detail::mismatch("matmul_nt", av.shape(), bv.shape()));
  const std::size_t n = av.rows(), kk = bv.dim(0);
  Shape shape = av.shape();
  shape.back() = kk;
  Tensor<Real> out(shape);
  parallel_for(n, detail::kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      auto ar = av.row(r);
      auto o = out.row(r);
      for (std::size_t c = 0; c < kk; ++c) o[c] = dot<Real>(ar, bv.row(c));
    }
  });
  return g.push(std::move(out), {a, b}, [a, b, n, kk](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (g.requires_grad(a)) {
      auto& da = g.grad(a);
      parallel_for(n, detail::kRowGrain, [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
          auto dyr = dy.row(r);
          auto dar = da.row(r);
          for (std::size_t c = 0; c < kk; ++c) axpy<Real>(dyr[c], bv.row(c), dar);
        }
      });
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad(b);
      parallel_for(kk, 8, [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = 0; r < n; ++r) {
          auto dyr = dy.row(r);
          auto ar = av.row(r);
          for (std::size_t c = begin; c < end; ++c) axpy<Real>(dyr[c], ar, db.row(c));
        }
      });
    }
  });
}

/// x * exp(s) for a scalar s.
template <class Real>
Var scale_by_exp(Graph<Real>& g, Var x, Var s) {
  require(g.value(s).numel() == 1, ErrorKind::Shape, "scale_by_exp: scale must be a scalar");
  const Real factor = std::exp(g.value(s)[0]);
  Tensor<Real> out = g.value(x);
  for (auto& v : out.vec()) v *= factor;
  return g.push(std::move(out), {x, s}, [x, s, factor](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    if (g.requires_grad(x)) {
      auto& dx = g.grad(x);
      for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i] * factor;
    }
    if (g.requires_grad(s)) {
      const auto& y = g.value(self);
      Real acc{0};
      for (std::size_t i = 0; i < dy.numel(); ++i) acc += dy[i] * y[i];
      g.grad(s)[0] += acc;
    }
  });
}

/// Mean over rows of -log softmax(logits)[target].
template <class Real>
Var cross_entropy(Graph<Real>& g, Var logits, std::span<const std::uint8_t> targets) {
  const auto& lv = g.value(logits);
  const std::size_t n = lv.rows(), kk = lv.cols();
  require(targets.size() == n, ErrorKind::Shape,
          "cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  Tensor<Real> soft(lv.shape());
  std::vector<std::uint8_t> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    require(tgt[r] < kk, ErrorKind::Index, "cross_entropy: target out of range");
    auto lr = lv.row(r);
    const Real mx = *std::max_element(lr.begin(), lr.end());
    Real sum{0};
    auto sr = soft.row(r);
    for (std::size_t c = 0; c < kk; ++c) {
      sr[c] = std::exp(lr[c] - mx);
      sum += sr[c];
    }
    for (auto& v : sr) v /= sum;
    total += static_cast<double>(std::log(sum) + mx - lr[tgt[r]]);
  }
  Tensor<Real> out({}, static_cast<Real>(total / static_cast<double>(n)));
  return g.push(std::move(out), {logits},
                [logits, n, soft = std::move(soft), tgt = std::move(tgt)](Graph<Real>& g, Var self) {
                  const Real scale = g.grad(self)[0] / static_cast<Real>(n);
                  auto& dl = g.grad(logits);
                  for (std::size_t r = 0; r < n; ++r) {
                    auto sr = soft.row(r);
                    auto dr = dl.row(r);
                    for (std::size_t c = 0; c < sr.size(); ++c) dr[c] += scale * sr[c];
                    dr[tgt[r]] -= scale;
                  }
                });
}

/// Mean over every element of (a - b)^2.
template <class Real>
Var mse(Graph<Real>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require(av.shape() == bv.shape(), ErrorKind::Shape, detail::mismatch("mse", av.shape(), bv.shape()));
  double total = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    total += d * d;
  }
  const std::size_t n = av.numel();
  Tensor<Real> out({}, static_cast<Real>(total / static_cast<double>(n)));
  return g.push(std::move(out), {a, b}, [a, b, n](Graph<Real>& g, Var self) {
    const Real c = Real{2} * g.grad(self)[0] / static_cast<Real>(n);
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (g.requires_grad(a)) {
      auto& da = g.grad(a);
      for (std::size_t i = 0; i < n; ++i) da[i] += c * (av[i] - bv[i]);
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad(b);
      for (std::size_t i = 0; i < n; ++i) db[i] -= c * (av[i] - bv[i]);
    }
  });
}

}  // namespace holobyte::nn
