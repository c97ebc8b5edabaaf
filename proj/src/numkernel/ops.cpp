#include "basrec/numkernel/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace basrec::ops {
namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapC = Eigen::Map<const RowMat<Real>>;
template <typename Real>
using Map = Eigen::Map<RowMat<Real>>;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) shape_fail(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank(const char* op, const Shape& a, std::size_t r) {
  if (a.size() != r) {
    shape_fail(op, "expected rank " + std::to_string(r) + ", got " + shape_str(a));
  }
}

template <typename Real>
Real softplus(Real x) {
  return std::max(x, Real{0}) + std::log1p(std::exp(-std::abs(x)));
}

template <typename Real>
Real logistic(Real x) {
  if (x >= 0) return Real{1} / (Real{1} + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real{1} + e);
}

// Elementwise unary op where dy/dx is a function of (x, y).
template <typename Real, typename F, typename DF>
Var<Real> unary(Var<Real> x, const char* name, F f, DF df) {
  const auto& xv = x.value();
  Tensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(out), {x},
      [xi, df](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        const auto& xv = t.value(xi);
        const auto& yv = t.value(self);
        auto& gx = t.accumulate(xi);
        for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
      },
      name);
}

}  // namespace

template <typename Real>
Var<Real> gather_rows(Var<Real> table, std::span<const std::int32_t> ids, const Shape& prefix) {
  const auto& tv = table.value();
  require_rank("gather_rows", tv.shape(), 2);
  if (shape_numel(prefix) != ids.size()) {
    shape_fail("gather_rows", "prefix " + shape_str(prefix) + " does not hold " +
                                  std::to_string(ids.size()) + " ids");
  }
  const std::size_t rows = tv.dim(0);
  const std::size_t d = tv.dim(1);
  Shape shape = prefix;
  shape.push_back(d);
  Tensor<Real> out(shape);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw IndexError("gather_rows: id " + std::to_string(id) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(id) * d, d, out.data() + i * d);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  const std::size_t ti = table.id;
  return table.tape->push(
      std::move(out), {table},
      [ti, d, saved = std::move(saved)](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        auto& gt = t.accumulate(ti);
        for (std::size_t i = 0; i < saved.size(); ++i) {
          Real* dst = gt.data() + static_cast<std::size_t>(saved[i]) * d;
          const Real* src = gy.data() + i * d;
          for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
        }
      },
      "gather_rows");
}

template <typename Real>
Var<Real> matmul(Var<Real> x, Var<Real> w) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  require_rank("matmul(weight)", wv.shape(), 2);
  if (xv.rank() < 1 || xv.shape().back() != wv.dim(0)) {
    shape_fail("matmul", "inner dims differ: " + shape_str(xv.shape()) + " x " +
                             shape_str(wv.shape()));
  }
  const std::size_t k = wv.dim(0);
  const std::size_t m = wv.dim(1);
  const std::size_t rows = xv.numel() / k;
  Shape shape = xv.shape();
  shape.back() = m;
  Tensor<Real> out(shape);
  Map<Real>(out.data(), rows, m).noalias() =
      MapC<Real>(xv.data(), rows, k) * MapC<Real>(wv.data(), k, m);
  const std::size_t xi = x.id, wi = w.id;
  return x.tape->push(
      std::move(out), {x, w},
      [xi, wi, rows, k, m](Tape<Real>& t, std::size_t self) {
        MapC<Real> gy(t.grad(self).data(), rows, m);
        if (t.requires_grad(xi)) {
          Map<Real>(t.accumulate(xi).data(), rows, k).noalias() +=
              gy * MapC<Real>(t.value(wi).data(), k, m).transpose();
        }
        if (t.requires_grad(wi)) {
          Map<Real>(t.accumulate(wi).data(), k, m).noalias() +=
              MapC<Real>(t.value(xi).data(), rows, k).transpose() * gy;
        }
      },
      "matmul");
}

template <typename Real>
Var<Real> add_bias(Var<Real> x, Var<Real> b) {
  const auto& xv = x.value();
  const auto& bv = b.value();
  require_rank("add_bias(bias)", bv.shape(), 1);
  if (xv.rank() < 1 || xv.shape().back() != bv.dim(0)) {
    shape_fail("add_bias", shape_str(xv.shape()) + " + " + shape_str(bv.shape()));
  }
  const std::size_t m = bv.dim(0);
  const std::size_t rows = xv.numel() / m;
  Tensor<Real> out = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] += bv[j];
  }
  const std::size_t xi = x.id, bi = b.id;
  return x.tape->push(
      std::move(out), {x, b},
      [xi, bi, rows, m](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        if (t.requires_grad(xi)) {
          auto& gx = t.accumulate(xi);
          for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
        }
        if (t.requires_grad(bi)) {
          auto& gb = t.accumulate(bi);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < m; ++j) gb[j] += gy[r * m + j];
          }
        }
      },
      "add_bias");
}

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  require_same("add", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<Real> out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push(
      std::move(out), {a, b},
      [ai, bi](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        for (std::size_t in : {ai, bi}) {
          if (!t.requires_grad(in)) continue;
          auto& g = t.accumulate(in);
          for (std::size_t i = 0; i < gy.numel(); ++i) g[i] += gy[i];
        }
      },
      "add");
}

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  require_same("sub", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<Real> out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push(
      std::move(out), {a, b},
      [ai, bi](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        if (t.requires_grad(ai)) {
          auto& g = t.accumulate(ai);
          for (std::size_t i = 0; i < gy.numel(); ++i) g[i] += gy[i];
        }
        if (t.requires_grad(bi)) {
          auto& g = t.accumulate(bi);
          for (std::size_t i = 0; i < gy.numel(); ++i) g[i] -= gy[i];
        }
      },
      "sub");
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  require_same("mul", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<Real> out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push(
      std::move(out), {a, b},
      [ai, bi](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        if (t.requires_grad(ai)) {
          const auto& bv = t.value(bi);
          auto& g = t.accumulate(ai);
          for (std::size_t i = 0; i < gy.numel(); ++i) g[i] += gy[i] * bv[i];
        }
        if (t.requires_grad(bi)) {
          const auto& av = t.value(ai);
          auto& g = t.accumulate(bi);
          for (std::size_t i = 0; i < gy.numel(); ++i) g[i] += gy[i] * av[i];
        }
      },
      "mul");
}

template <typename Real>
Var<Real> scale(Var<Real> a, double s) {
  const Real k = static_cast<Real>(s);
  return unary<Real>(
      a, "scale", [k](Real x) { return x * k; }, [k](Real, Real) { return k; });
}

template <typename Real>
Var<Real> sigmoid(Var<Real> x) {
  return unary<Real>(
      x, "sigmoid", [](Real v) { return logistic(v); },
      [](Real, Real y) { return y * (Real{1} - y); });
}

template <typename Real>
Var<Real> tanh(Var<Real> x) {
  return unary<Real>(
      x, "tanh", [](Real v) { return std::tanh(v); },
      [](Real, Real y) { return Real{1} - y * y; });
}

template <typename Real>
Var<Real> relu(Var<Real> x) {
  if (x.tape->tracks_kinks()) {
    const auto& xv = x.value();
    for (std::size_t i = 0; i < xv.numel(); ++i) x.tape->note_branch(xv[i] > 0);
  }
  return unary<Real>(
      x, "relu", [](Real v) { return v > 0 ? v : Real{0}; },
      [](Real v, Real) { return v > 0 ? Real{1} : Real{0}; });
}

template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> bias, double eps) {
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  require_rank("layer_norm(gain)", gv.shape(), 1);
  require_same("layer_norm(gain/bias)", gv.shape(), bv.shape());
  if (xv.rank() < 1 || xv.shape().back() != gv.dim(0)) {
    shape_fail("layer_norm", shape_str(xv.shape()) + " with gain " + shape_str(gv.shape()));
  }
  const std::size_t d = gv.dim(0);
  const std::size_t rows = xv.numel() / d;
  Tensor<Real> out(xv.shape());
  std::vector<Real> xhat(xv.numel());
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = xv.data() + r * d;
    Real mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<Real>(d);
    const Real is = Real{1} / std::sqrt(var + static_cast<Real>(eps));
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const Real h = (row[j] - mean) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t xi = x.id, gi = gain.id, bi = bias.id;
  return x.tape->push(
      std::move(out), {x, gain, bias},
      [xi, gi, bi, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        const auto& gv = t.value(gi);
        if (t.requires_grad(gi)) {
          auto& gg = t.accumulate(gi);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) gg[j] += gy[r * d + j] * xhat[r * d + j];
          }
        }
        if (t.requires_grad(bi)) {
          auto& gb = t.accumulate(bi);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) gb[j] += gy[r * d + j];
          }
        }
        if (t.requires_grad(xi)) {
          auto& gx = t.accumulate(xi);
          const Real inv_d = Real{1} / static_cast<Real>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            Real mean_g = 0, mean_gx = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const Real g = gy[r * d + j] * gv[j];
              mean_g += g;
              mean_gx += g * xhat[r * d + j];
            }
            mean_g *= inv_d;
            mean_gx *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const Real g = gy[r * d + j] * gv[j];
              gx[r * d + j] += inv_std[r] * (g - mean_g - xhat[r * d + j] * mean_gx);
            }
          }
        }
      },
      "layer_norm");
}

template <typename Real>
Var<Real> dropout(Var<Real> x, double p, Generator* rng) {
  if (p <= 0.0 || rng == nullptr) return x;
  if (p >= 1.0) throw ConfigError("dropout: rate must be below 1, got " + std::to_string(p));
  const auto& xv = x.value();
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  // Each 64-bit draw yields two 32-bit uniforms; keep when u >= p.
  const auto threshold = static_cast<std::uint64_t>(std::ceil(p * 4294967296.0));
  const std::size_t n = xv.numel();
  std::vector<Real> mask(n);
  Tensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < n; i += 2) {
    const std::uint64_t bits = rng->next_u64();
    mask[i] = keep_scale * static_cast<Real>((bits & 0xffffffffULL) >= threshold);
    if (i + 1 < n) mask[i + 1] = keep_scale * static_cast<Real>((bits >> 32) >= threshold);
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] * mask[i];
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(out), {x},
      [xi, mask = std::move(mask)](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        auto& gx = t.accumulate(xi);
        for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * mask[i];
      },
      "dropout");
}

template <typename Real>
Var<Real> mask_positions(Var<Real> x, std::span<const Real> mask) {
  const auto& xv = x.value();
  require_rank("mask_positions", xv.shape(), 3);
  const std::size_t pos = xv.dim(0) * xv.dim(1);
  const std::size_t d = xv.dim(2);
  if (mask.size() != pos) {
    shape_fail("mask_positions", "mask of " + std::to_string(mask.size()) + " for " +
                                     shape_str(xv.shape()));
  }
  Tensor<Real> out(xv.shape());
  for (std::size_t p = 0; p < pos; ++p) {
    for (std::size_t j = 0; j < d; ++j) out[p * d + j] = xv[p * d + j] * mask[p];
  }
  std::vector<Real> saved(mask.begin(), mask.end());
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(out), {x},
      [xi, d, saved = std::move(saved)](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        auto& gx = t.accumulate(xi);
        for (std::size_t p = 0; p < saved.size(); ++p) {
          for (std::size_t j = 0; j < d; ++j) gx[p * d + j] += gy[p * d + j] * saved[p];
        }
      },
      "mask_positions");
}

template <typename Real>
Var<Real> scores_qk(Var<Real> q, Var<Real> k, double scale_by) {
  require_same("scores_qk", q.shape(), k.shape());
  require_rank("scores_qk", q.shape(), 3);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const std::size_t b = qv.dim(0), n = qv.dim(1), d = qv.dim(2);
  const Real s = static_cast<Real>(scale_by);
  Tensor<Real> out({b, n, n});
  for (std::size_t i = 0; i < b; ++i) {
    Map<Real>(out.data() + i * n * n, n, n).noalias() =
        s * (MapC<Real>(qv.data() + i * n * d, n, d) *
             MapC<Real>(kv.data() + i * n * d, n, d).transpose());
  }
  const std::size_t qi = q.id, ki = k.id;
  return q.tape->push(
      std::move(out), {q, k},
      [qi, ki, b, n, d, s](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        const bool gq = t.requires_grad(qi), gk = t.requires_grad(ki);
        for (std::size_t i = 0; i < b; ++i) {
          MapC<Real> g(gy.data() + i * n * n, n, n);
          if (gq) {
            Map<Real>(t.accumulate(qi).data() + i * n * d, n, d).noalias() +=
                s * (g * MapC<Real>(t.value(ki).data() + i * n * d, n, d));
          }
          if (gk) {
            Map<Real>(t.accumulate(ki).data() + i * n * d, n, d).noalias() +=
                s * (g.transpose() * MapC<Real>(t.value(qi).data() + i * n * d, n, d));
          }
        }
      },
      "scores_qk");
}

template <typename Real>
Var<Real> masked_softmax(Var<Real> scores, std::span<const std::uint8_t> key_mask, bool causal) {
  const auto& sv = scores.value();
  require_rank("masked_softmax", sv.shape(), 3);
  const std::size_t b = sv.dim(0), n = sv.dim(1);
  if (sv.dim(2) != n) shape_fail("masked_softmax", "scores must be square, got " + shape_str(sv.shape()));
  if (key_mask.size() != b * n) {
    shape_fail("masked_softmax", "key mask of " + std::to_string(key_mask.size()) + " for " +
                                     shape_str(sv.shape()));
  }
  Tensor<Real> out(sv.shape());
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t r = 0; r < n; ++r) {
      const Real* row = sv.data() + (i * n + r) * n;
      Real* o = out.data() + (i * n + r) * n;
      const std::size_t limit = causal ? r + 1 : n;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t c = 0; c < limit; ++c) {
        if (key_mask[i * n + c]) mx = std::max(mx, row[c]);
      }
      if (mx == -std::numeric_limits<Real>::infinity()) continue;
      Real z = 0;
      for (std::size_t c = 0; c < limit; ++c) {
        if (key_mask[i * n + c]) {
          o[c] = std::exp(row[c] - mx);
          z += o[c];
        }
      }
      for (std::size_t c = 0; c < limit; ++c) o[c] /= z;
    }
  }
  const std::size_t si = scores.id;
  return scores.tape->push(
      std::move(out), {scores},
      [si, b, n](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        const auto& y = t.value(self);
        auto& gs = t.accumulate(si);
        for (std::size_t r = 0; r < b * n; ++r) {
          const Real* yr = y.data() + r * n;
          const Real* gr = gy.data() + r * n;
          Real dot = 0;
          for (std::size_t c = 0; c < n; ++c) dot += yr[c] * gr[c];
          Real* out = gs.data() + r * n;
          for (std::size_t c = 0; c < n; ++c) out[c] += yr[c] * (gr[c] - dot);
        }
      },
      "masked_softmax");
}

template <typename Real>
Var<Real> attend(Var<Real> p, Var<Real> v) {
  const auto& pv = p.value();
  const auto& vv = v.value();
  require_rank("attend(p)", pv.shape(), 3);
  require_rank("attend(v)", vv.shape(), 3);
  const std::size_t b = vv.dim(0), n = vv.dim(1), d = vv.dim(2);
  if (pv.dim(0) != b || pv.dim(1) != n || pv.dim(2) != n) {
    shape_fail("attend", shape_str(pv.shape()) + " x " + shape_str(vv.shape()));
  }
  Tensor<Real> out({b, n, d});
  for (std::size_t i = 0; i < b; ++i) {
    Map<Real>(out.data() + i * n * d, n, d).noalias() =
        MapC<Real>(pv.data() + i * n * n, n, n) * MapC<Real>(vv.data() + i * n * d, n, d);
  }
  const std::size_t pi = p.id, vi = v.id;
  return p.tape->push(
      std::move(out), {p, v},
      [pi, vi, b, n, d](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        const bool gp = t.requires_grad(pi), gv = t.requires_grad(vi);
        for (std::size_t i = 0; i < b; ++i) {
          MapC<Real> g(gy.data() + i * n * d, n, d);
          if (gp) {
            Map<Real>(t.accumulate(pi).data() + i * n * n, n, n).noalias() +=
                g * MapC<Real>(t.value(vi).data() + i * n * d, n, d).transpose();
          }
          if (gv) {
            Map<Real>(t.accumulate(vi).data() + i * n * d, n, d).noalias() +=
                MapC<Real>(t.value(pi).data() + i * n * n, n, n).transpose() * g;
          }
        }
      },
      "attend");
}

template <typename Real>
Var<Real> rowdot(Var<Real> a, Var<Real> b) {
  require_same("rowdot", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() < 1) shape_fail("rowdot", "rank-0 operand");
  const std::size_t d = av.shape().back();
  const std::size_t rows = d == 0 ? 0 : av.numel() / d;
  Shape shape(av.shape().begin(), av.shape().end() - 1);
  if (shape.empty()) shape = {1};
  Tensor<Real> out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    Real acc = 0;
    for (std::size_t j = 0; j < d; ++j) acc += av[r * d + j] * bv[r * d + j];
    out[r] = acc;
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push(
      std::move(out), {a, b},
      [ai, bi, rows, d](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        if (t.requires_grad(ai)) {
          const auto& bv = t.value(bi);
          auto& g = t.accumulate(ai);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) g[r * d + j] += gy[r] * bv[r * d + j];
          }
        }
        if (t.requires_grad(bi)) {
          const auto& av = t.value(ai);
          auto& g = t.accumulate(bi);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) g[r * d + j] += gy[r] * av[r * d + j];
          }
        }
      },
      "rowdot");
}

template <typename Real>
Var<Real> weighted_bce(Var<Real> pos_logits, Var<Real> neg_logits, std::span<const Real> weights) {
  require_same("weighted_bce", pos_logits.shape(), neg_logits.shape());
  const auto& pv = pos_logits.value();
  const auto& nv = neg_logits.value();
  if (weights.size() != pv.numel()) {
    shape_fail("weighted_bce", "weights of " + std::to_string(weights.size()) + " for " +
                                   shape_str(pv.shape()));
  }
  // Accumulate in double so the mean over many positions is stable in f32 mode.
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.numel(); ++i) {
    if (weights[i] == 0) continue;
    acc += static_cast<double>(weights[i]) *
           (static_cast<double>(softplus(-pv[i])) + static_cast<double>(softplus(nv[i])));
  }
  Tensor<Real> out({1}, static_cast<Real>(acc));
  std::vector<Real> saved(weights.begin(), weights.end());
  const std::size_t pi = pos_logits.id, ni = neg_logits.id;
  return pos_logits.tape->push(
      std::move(out), {pos_logits, neg_logits},
      [pi, ni, saved = std::move(saved)](Tape<Real>& t, std::size_t self) {
        const Real g = t.grad(self)[0];
        if (t.requires_grad(pi)) {
          const auto& pv = t.value(pi);
          auto& gp = t.accumulate(pi);
          for (std::size_t i = 0; i < saved.size(); ++i) {
            gp[i] -= g * saved[i] * logistic(-pv[i]);
          }
        }
        if (t.requires_grad(ni)) {
          const auto& nv = t.value(ni);
          auto& gn = t.accumulate(ni);
          for (std::size_t i = 0; i < saved.size(); ++i) gn[i] += g * saved[i] * logistic(nv[i]);
        }
      },
      "weighted_bce");
}

template <typename Real>
Var<Real> take_positions(Var<Real> x, std::span<const std::size_t> idx) {
  const auto& xv = x.value();
  require_rank("take_positions", xv.shape(), 3);
  const std::size_t b = xv.dim(0), n = xv.dim(1), d = xv.dim(2);
  if (idx.size() != b) shape_fail("take_positions", "need one index per row");
  Tensor<Real> out({b, d});
  for (std::size_t i = 0; i < b; ++i) {
    if (idx[i] == kNoPosition) continue;
    if (idx[i] >= n) throw IndexError("take_positions: position " + std::to_string(idx[i]));
    std::copy_n(xv.data() + (i * n + idx[i]) * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> saved(idx.begin(), idx.end());
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(out), {x},
      [xi, n, d, saved = std::move(saved)](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        auto& gx = t.accumulate(xi);
        for (std::size_t i = 0; i < saved.size(); ++i) {
          if (saved[i] == kNoPosition) continue;
          Real* dst = gx.data() + (i * n + saved[i]) * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += gy[i * d + j];
        }
      },
      "take_positions");
}

template <typename Real>
Var<Real> slice_time(Var<Real> x, std::size_t t_index) {
  const auto& xv = x.value();
  require_rank("slice_time", xv.shape(), 3);
  const std::size_t b = xv.dim(0), n = xv.dim(1), f = xv.dim(2);
  if (t_index >= n) throw IndexError("slice_time: step " + std::to_string(t_index));
  Tensor<Real> out({b, f});
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(xv.data() + (i * n + t_index) * f, f, out.data() + i * f);
  }
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(out), {x},
      [xi, b, n, f, t_index](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        auto& gx = t.accumulate(xi);
        for (std::size_t i = 0; i < b; ++i) {
          Real* dst = gx.data() + (i * n + t_index) * f;
          for (std::size_t j = 0; j < f; ++j) dst[j] += gy[i * f + j];
        }
      },
      "slice_time");
}

template <typename Real>
Var<Real> stack_time(std::span<const Var<Real>> steps) {
  if (steps.empty()) shape_fail("stack_time", "no steps");
  const Shape& s0 = steps[0].shape();
  require_rank("stack_time", s0, 2);
  const std::size_t b = s0[0], f = s0[1], n = steps.size();
  Tensor<Real> out({b, n, f});
  std::vector<std::size_t> ids;
  for (std::size_t t = 0; t < n; ++t) {
    require_same("stack_time", steps[t].shape(), s0);
    const auto& v = steps[t].value();
    for (std::size_t i = 0; i < b; ++i) {
      std::copy_n(v.data() + i * f, f, out.data() + (i * n + t) * f);
    }
    ids.push_back(steps[t].id);
  }
  Tape<Real>& tape = *steps[0].tape;
  return tape.push(
      std::move(out), steps,
      [ids, b, n, f](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        for (std::size_t s = 0; s < n; ++s) {
          if (!t.requires_grad(ids[s])) continue;
          auto& g = t.accumulate(ids[s]);
          for (std::size_t i = 0; i < b; ++i) {
            const Real* src = gy.data() + (i * n + s) * f;
            for (std::size_t j = 0; j < f; ++j) g[i * f + j] += src[j];
          }
        }
      },
      "stack_time");
}

template <typename Real>
Var<Real> slice_cols(Var<Real> x, std::size_t start, std::size_t len) {
  const auto& xv = x.value();
  require_rank("slice_cols", xv.shape(), 2);
  const std::size_t b = xv.dim(0), f = xv.dim(1);
  if (start + len > f) shape_fail("slice_cols", "range past " + std::to_string(f) + " columns");
  Tensor<Real> out({b, len});
  for (std::size_t i = 0; i < b; ++i) std::copy_n(xv.data() + i * f + start, len, out.data() + i * len);
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(out), {x},
      [xi, b, f, start, len](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        auto& gx = t.accumulate(xi);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < len; ++j) gx[i * f + start + j] += gy[i * len + j];
        }
      },
      "slice_cols");
}

template <typename Real>
Var<Real> select_rows(Var<Real> on, Var<Real> off, std::span<const std::uint8_t> keep) {
  require_same("select_rows", on.shape(), off.shape());
  const auto& a = on.value();
  const auto& c = off.value();
  const std::size_t b = a.dim(0);
  const std::size_t f = a.numel() / std::max<std::size_t>(b, 1);
  if (keep.size() != b) shape_fail("select_rows", "need one flag per row");
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n((keep[i] ? a : c).data() + i * f, f, out.data() + i * f);
  }
  std::vector<std::uint8_t> saved(keep.begin(), keep.end());
  const std::size_t ai = on.id, ci = off.id;
  return on.tape->push(
      std::move(out), {on, off},
      [ai, ci, f, saved = std::move(saved)](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        for (std::size_t i = 0; i < saved.size(); ++i) {
          const std::size_t target = saved[i] ? ai : ci;
          if (!t.requires_grad(target)) continue;
          auto& g = t.accumulate(target);
          for (std::size_t j = 0; j < f; ++j) g[i * f + j] += gy[i * f + j];
        }
      },
      "select_rows");
}

template <typename Real>
Var<Real> mix_rows(Var<Real> a, Var<Real> c, std::span<const double> lambdas) {
  require_same("mix_rows", a.shape(), c.shape());
  const auto& av = a.value();
  const auto& cv = c.value();
  const std::size_t b = av.dim(0);
  if (lambdas.size() != b) shape_fail("mix_rows", "need one coefficient per row");
  const std::size_t f = av.numel() / std::max<std::size_t>(b, 1);
  std::vector<Real> lam(lambdas.begin(), lambdas.end());
  Tensor<Real> out(av.shape());
  for (std::size_t i = 0; i < b; ++i) {
    const Real l = lam[i], r = Real{1} - lam[i];
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] = l * av[i * f + j] + r * cv[i * f + j];
  }
  const std::size_t ai = a.id, ci = c.id;
  return a.tape->push(
      std::move(out), {a, c},
      [ai, ci, f, lam = std::move(lam)](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        if (t.requires_grad(ai)) {
          auto& g = t.accumulate(ai);
          for (std::size_t i = 0; i < lam.size(); ++i) {
            for (std::size_t j = 0; j < f; ++j) g[i * f + j] += lam[i] * gy[i * f + j];
          }
        }
        if (t.requires_grad(ci)) {
          auto& g = t.accumulate(ci);
          for (std::size_t i = 0; i < lam.size(); ++i) {
            const Real r = Real{1} - lam[i];
            for (std::size_t j = 0; j < f; ++j) g[i * f + j] += r * gy[i * f + j];
          }
        }
      },
      "mix_rows");
}

template <typename Real>
Var<Real> permute_mix(Var<Real> x, std::span<const std::size_t> perm, const Tensor<Real>& weights,
                      MixAxis axis) {
  const auto& xv = x.value();
  require_rank("permute_mix", xv.shape(), 3);
  const std::size_t b = xv.dim(0), n = xv.dim(1), d = xv.dim(2);
  const Shape want = axis == MixAxis::kPositions ? Shape{b, n} : Shape{b, d};
  if (weights.shape() != want) {
    shape_fail("permute_mix", "weights " + shape_str(weights.shape()) + " for input " +
                                  shape_str(xv.shape()) + ", expected " + shape_str(want));
  }
  if (perm.size() != b) shape_fail("permute_mix", "permutation length differs from batch");
  for (auto p : perm) {
    if (p >= b) throw IndexError("permute_mix: permutation entry " + std::to_string(p));
  }
  auto w_at = [&weights, axis](std::size_t i, std::size_t t, std::size_t j) {
    return axis == MixAxis::kPositions ? weights.at(i, t) : weights.at(i, j);
  };
  Tensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t o = perm[i];
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < d; ++j) {
        const Real w = w_at(i, t, j);
        out.at(i, t, j) = w * xv.at(i, t, j) + (Real{1} - w) * xv.at(o, t, j);
      }
    }
  }
  std::vector<std::size_t> p(perm.begin(), perm.end());
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(out), {x},
      [xi, b, n, d, p = std::move(p), weights, axis](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        auto& gx = t.accumulate(xi);
        for (std::size_t i = 0; i < b; ++i) {
          const std::size_t o = p[i];
          for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t j = 0; j < d; ++j) {
              const Real w = axis == MixAxis::kPositions ? weights.at(i, s) : weights.at(i, j);
              const Real g = gy.at(i, s, j);
              gx.at(i, s, j) += w * g;
              gx.at(o, s, j) += (Real{1} - w) * g;
            }
          }
        }
      },
      "permute_mix");
}

template <typename Real>
Var<Real> concat_rows(std::span<const Var<Real>> parts) {
  if (parts.empty()) shape_fail("concat_rows", "no parts");
  Shape shape = parts[0].shape();
  if (shape.empty()) shape_fail("concat_rows", "rank-0 part");
  const std::size_t row = parts[0].value().numel() / std::max<std::size_t>(shape[0], 1);
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1)) {
      shape_fail("concat_rows", shape_str(s) + " vs " + shape_str(shape));
    }
    ids.push_back(p.id);
    offsets.push_back(total);
    total += s[0];
  }
  shape[0] = total;
  Tensor<Real> out(shape);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    std::copy_n(v.data(), v.numel(), out.data() + offsets[k] * row);
  }
  Tape<Real>& tape = *parts[0].tape;
  return tape.push(
      std::move(out), parts,
      [ids, offsets, row](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          auto& g = t.accumulate(ids[k]);
          const Real* src = gy.data() + offsets[k] * row;
          for (std::size_t i = 0; i < g.numel(); ++i) g[i] += src[i];
        }
      },
      "concat_rows");
}

template <typename Real>
Var<Real> slice_rows(Var<Real> x, std::size_t start, std::size_t count) {
  const auto& xv = x.value();
  if (xv.rank() < 1 || start + count > xv.dim(0)) {
    shape_fail("slice_rows", "rows [" + std::to_string(start) + ", " +
                                 std::to_string(start + count) + ") of " + shape_str(xv.shape()));
  }
  const std::size_t row = xv.numel() / std::max<std::size_t>(xv.dim(0), 1);
  Shape shape = xv.shape();
  shape[0] = count;
  Tensor<Real> out(shape);
  std::copy_n(xv.data() + start * row, count * row, out.data());
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(out), {x},
      [xi, start, row](Tape<Real>& t, std::size_t self) {
        const auto& gy = t.grad(self);
        auto& gx = t.accumulate(xi);
        Real* dst = gx.data() + start * row;
        for (std::size_t i = 0; i < gy.numel(); ++i) dst[i] += gy[i];
      },
      "slice_rows");
}

template <typename Real>
Var<Real> sum(Var<Real> x) {
  const auto& xv = x.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) acc += static_cast<double>(xv[i]);
  const std::size_t xi = x.id;
  return x.tape->push(
      Tensor<Real>({1}, static_cast<Real>(acc)), {x},
      [xi](Tape<Real>& t, std::size_t self) {
        const Real g = t.grad(self)[0];
        auto& gx = t.accumulate(xi);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
      },
      "sum");
}

#define BASREC_INSTANTIATE_OPS(R)                                                              \
  template Var<R> gather_rows(Var<R>, std::span<const std::int32_t>, const Shape&);            \
  template Var<R> matmul(Var<R>, Var<R>);                                                      \
  template Var<R> add_bias(Var<R>, Var<R>);                                                    \
  template Var<R> add(Var<R>, Var<R>);                                                         \
  template Var<R> sub(Var<R>, Var<R>);                                                         \
  template Var<R> mul(Var<R>, Var<R>);                                                         \
  template Var<R> scale(Var<R>, double);                                                       \
  template Var<R> sigmoid(Var<R>);                                                             \
  template Var<R> tanh(Var<R>);                                                                \
  template Var<R> relu(Var<R>);                                                                \
  template Var<R> layer_norm(Var<R>, Var<R>, Var<R>, double);                                  \
  template Var<R> dropout(Var<R>, double, Generator*);                                         \
  template Var<R> mask_positions(Var<R>, std::span<const R>);                                  \
  template Var<R> scores_qk(Var<R>, Var<R>, double);                                           \
  template Var<R> masked_softmax(Var<R>, std::span<const std::uint8_t>, bool);                 \
  template Var<R> attend(Var<R>, Var<R>);                                                      \
  template Var<R> rowdot(Var<R>, Var<R>);                                                      \
  template Var<R> weighted_bce(Var<R>, Var<R>, std::span<const R>);                            \
  template Var<R> take_positions(Var<R>, std::span<const std::size_t>);                        \
  template Var<R> slice_time(Var<R>, std::size_t);                                             \
  template Var<R> stack_time(std::span<const Var<R>>);                                         \
  template Var<R> slice_cols(Var<R>, std::size_t, std::size_t);                                \
  template Var<R> select_rows(Var<R>, Var<R>, std::span<const std::uint8_t>);                  \
  template Var<R> mix_rows(Var<R>, Var<R>, std::span<const double>);                           \
  template Var<R> permute_mix(Var<R>, std::span<const std::size_t>, const Tensor<R>&, MixAxis); \
  template Var<R> concat_rows(std::span<const Var<R>>);                                        \
  template Var<R> slice_rows(Var<R>, std::size_t, std::size_t);                                \
  template Var<R> sum(Var<R>);

BASREC_INSTANTIATE_OPS(float)
BASREC_INSTANTIATE_OPS(double)

#undef BASREC_INSTANTIATE_OPS

}  // namespace basrec::ops
