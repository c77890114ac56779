#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tdom/error.hpp"

namespace tdom::grad {

// Dense shape, up to 4 axes. Scalars have nd == 0 and numel == 1.
struct Shape {
  std::array<int, 4> d{1, 1, 1, 1};
  int nd = 0;

  Shape() = default;
  Shape(std::initializer_list<int> dims) {
    nd = static_cast<int>(dims.size());
    if (nd > 4) throw ContractError("shape has more than 4 axes");
    int i = 0;
    for (int v : dims) d[i++] = v;
  }
  long numel() const {
    long n = 1;
    for (int i = 0; i < nd; ++i) n *= d[i];
    return n;
  }
  bool operator==(const Shape& o) const { return nd == o.nd && d == o.d; }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const {
    std::string s = "(";
    for (int i = 0; i < nd; ++i) s += (i ? "," : "") + std::to_string(d[i]);
    return s + ")";
  }
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

// Named trainable arrays plus their accumulated gradients.
template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
  };
  std::vector<Entry> entries;

  int add(const std::string& name, Shape shape, std::vector<T> init) {
    require(static_cast<long>(init.size()) == shape.numel(),
            "param init size mismatch for " + name);
    entries.push_back({name, shape, std::move(init),
                       std::vector<T>(shape.numel(), T(0))});
    return static_cast<int>(entries.size()) - 1;
  }
  int find(const std::string& name) const {
    for (size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return static_cast<int>(i);
    return -1;
  }
  void zero_grad() {
    for (auto& e : entries) std::fill(e.grad.begin(), e.grad.end(), T(0));
  }
};

struct Var {
  int id = -1;
};

// Reverse-mode tape over dense tensors. Nodes are appended in topological
// order; backward walks the tape in reverse.
template <typename T>
class Graph {
 public:
  using Mat =
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;

  struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grd;
    std::function<void()> back;
    bool rg = false;   // gradient required anywhere upstream
    int param = -1;    // index into the bound ParamStore, or -1
  };

  const Shape& shape(Var v) const { return nodes_[v.id].shape; }
  const std::vector<T>& val(Var v) const { return nodes_[v.id].val; }
  std::vector<T>& grd(Var v) { return nodes_[v.id].grd; }

  Var constant(Shape s, const T* data) {
    Var v = alloc(s, false);
    std::memcpy(nodes_[v.id].val.data(), data, sizeof(T) * s.numel());
    return v;
  }
  Var constant(Shape s, const std::vector<T>& data) {
    require(static_cast<long>(data.size()) == s.numel(),
            "constant size mismatch " + s.str());
    return constant(s, data.data());
  }
  Var scalar(T x) { return constant(Shape{}, &x); }
  Var zeros(Shape s) { return alloc(s, false); }

  Var param(ParamStore<T>& store, int idx) {
    auto& e = store.entries[idx];
    Var v = constant(e.shape, e.value.data());
    nodes_[v.id].rg = true;
    nodes_[v.id].param = idx;
    return v;
  }
  // Input that receives a gradient without being a trainable param.
  Var input_grad(Shape s, const T* data) {
    Var v = constant(s, data);
    nodes_[v.id].rg = true;
    return v;
  }

  // ---- elementwise ----
  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    return binary(a, b, [](T x, T y) { return x + y; },
                  [](T, T, T g) { return std::pair<T, T>(g, g); });
  }
  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    return binary(a, b, [](T x, T y) { return x - y; },
                  [](T, T, T g) { return std::pair<T, T>(g, -g); });
  }
  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    return binary(a, b, [](T x, T y) { return x * y; },
                  [](T x, T y, T g) { return std::pair<T, T>(g * y, g * x); });
  }
  Var minimum(Var a, Var b) {
    same_shape(a, b, "minimum");
    return binary(a, b, [](T x, T y) { return x < y ? x : y; },
                  [](T x, T y, T g) {
                    return x < y ? std::pair<T, T>(g, T(0))
                                 : std::pair<T, T>(T(0), g);
                  });
  }
  Var scale(Var a, T c) {
    return unary(a, [c](T x) { return c * x; },
                 [c](T, T, T g) { return c * g; });
  }
  Var add_scalar(Var a, T c) {
    return unary(a, [c](T x) { return x + c; },
                 [](T, T, T g) { return g; });
  }
  Var neg(Var a) { return scale(a, T(-1)); }
  Var relu(Var a) {
    return unary(a, [](T x) { return x > 0 ? x : T(0); },
                 [](T x, T, T g) { return x > 0 ? g : T(0); });
  }
  Var tanh_(Var a) {
    return unary(a, [](T x) { return std::tanh(x); },
                 [](T, T y, T g) { return g * (T(1) - y * y); });
  }
  Var logistic(Var a) {
    return unary(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                 [](T, T y, T g) { return g * y * (T(1) - y); });
  }
  Var exp_(Var a) {
    return unary(a, [](T x) { return std::exp(x); },
                 [](T, T y, T g) { return g * y; });
  }
  Var log_(Var a) {
    return unary(a, [](T x) { return std::log(x); },
                 [](T x, T, T g) { return g / x; });
  }
  Var softplus(Var a) {
    return unary(a,
                 [](T x) {
                   return x > 0 ? x + std::log1p(std::exp(-x))
                                : std::log1p(std::exp(x));
                 },
                 [](T x, T, T g) { return g / (T(1) + std::exp(-x)); });
  }

  // ---- reshaping ----
  Var reshape(Var a, Shape s) {
    require(s.numel() == shape(a).numel(),
            "reshape numel mismatch " + shape(a).str() + " -> " + s.str());
    Var out = alloc(s, nodes_[a.id].rg);
    nodes_[out.id].val = nodes_[a.id].val;
    if (nodes_[out.id].rg) {
      int ai = a.id, oi = out.id;
      nodes_[out.id].back = [this, ai, oi] {
        auto& ga = ensure_grad(ai);
        const auto& go = nodes_[oi].grd;
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
      };
    }
    return out;
  }

  Var permute(Var a, std::array<int, 4> axes) {
    const Shape s = shape(a);
    Shape os;
    os.nd = s.nd;
    std::array<long, 4> istr{}, ostr{};
    long acc = 1;
    for (int i = s.nd - 1; i >= 0; --i) { istr[i] = acc; acc *= s.d[i]; }
    for (int i = 0; i < s.nd; ++i) os.d[i] = s.d[axes[i]];
    acc = 1;
    for (int i = s.nd - 1; i >= 0; --i) { ostr[i] = acc; acc *= os.d[i]; }
    Var out = alloc(os, nodes_[a.id].rg);
    const T* src = nodes_[a.id].val.data();
    T* dst = nodes_[out.id].val.data();
    long n = s.numel();
    int nd = s.nd;
    auto map_index = [ostr, istr, axes, nd](long oi) {
      long rem = oi, ii = 0;
      for (int k = 0; k < nd; ++k) {
        long c = rem / ostr[k];
        rem -= c * ostr[k];
        ii += c * istr[axes[k]];
      }
      return ii;
    };
    for (long i = 0; i < n; ++i) dst[i] = src[map_index(i)];
    if (nodes_[out.id].rg) {
      int ai = a.id, oi = out.id;
      nodes_[out.id].back = [this, ai, oi, map_index, n] {
        auto& ga = ensure_grad(ai);
        const auto& go = nodes_[oi].grd;
        for (long i = 0; i < n; ++i) ga[map_index(i)] += go[i];
      };
    }
    return out;
  }

  Var concat(const std::vector<Var>& parts, int axis) {
    require(!parts.empty(), "concat of zero tensors");
    Shape s0 = shape(parts[0]);
    require(axis >= 0 && axis < s0.nd, "concat axis out of range");
    Shape os = s0;
    os.d[axis] = 0;
    bool rg = false;
    for (Var p : parts) {
      Shape sp = shape(p);
      for (int i = 0; i < s0.nd; ++i)
        require(i == axis || sp.d[i] == s0.d[i],
                "concat shape mismatch " + sp.str() + " vs " + s0.str());
      os.d[axis] += sp.d[axis];
      rg = rg || nodes_[p.id].rg;
    }
    Var out = alloc(os, rg);
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= os.d[i];
    for (int i = axis + 1; i < os.nd; ++i) inner *= os.d[i];
    long orow = os.d[axis] * inner;
    long off = 0;
    std::vector<long> offsets;
    for (Var p : parts) {
      offsets.push_back(off);
      long prow = shape(p).d[axis] * inner;
      const T* src = nodes_[p.id].val.data();
      T* dst = nodes_[out.id].val.data();
      for (long o = 0; o < outer; ++o)
        std::memcpy(dst + o * orow + off, src + o * prow, sizeof(T) * prow);
      off += prow;
    }
    if (rg) {
      std::vector<int> ids;
      std::vector<long> prows;
      for (Var p : parts) {
        ids.push_back(p.id);
        prows.push_back(shape(p).d[axis] * inner);
      }
      int oi = out.id;
      nodes_[out.id].back = [this, ids, prows, offsets, outer, orow, oi] {
        const auto& go = nodes_[oi].grd;
        for (size_t k = 0; k < ids.size(); ++k) {
          if (!nodes_[ids[k]].rg) continue;
          auto& ga = ensure_grad(ids[k]);
          for (long o = 0; o < outer; ++o)
            for (long j = 0; j < prows[k]; ++j)
              ga[o * prows[k] + j] += go[o * orow + offsets[k] + j];
        }
      };
    }
    return out;
  }

  Var slice(Var a, int axis, int start, int len) {
    Shape s = shape(a);
    require(axis >= 0 && axis < s.nd, "slice axis out of range");
    require(start >= 0 && len > 0 && start + len <= s.d[axis],
            "slice range out of bounds");
    Shape os = s;
    os.d[axis] = len;
    Var out = alloc(os, nodes_[a.id].rg);
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s.d[i];
    for (int i = axis + 1; i < s.nd; ++i) inner *= s.d[i];
    long irow = s.d[axis] * inner, orow = len * inner, skip = start * inner;
    const T* src = nodes_[a.id].val.data();
    T* dst = nodes_[out.id].val.data();
    for (long o = 0; o < outer; ++o)
      std::memcpy(dst + o * orow, src + o * irow + skip, sizeof(T) * orow);
    if (nodes_[out.id].rg) {
      int ai = a.id, oi = out.id;
      nodes_[out.id].back = [this, ai, oi, outer, irow, orow, skip] {
        auto& ga = ensure_grad(ai);
        const auto& go = nodes_[oi].grd;
        for (long o = 0; o < outer; ++o)
          for (long j = 0; j < orow; ++j)
            ga[o * irow + skip + j] += go[o * orow + j];
      };
    }
    return out;
  }

  // ---- reductions ----
  Var sum(Var a) {
    Var out = alloc(Shape{}, nodes_[a.id].rg);
    T acc = 0;
    for (T x : nodes_[a.id].val) acc += x;
    nodes_[out.id].val[0] = acc;
    if (nodes_[out.id].rg) {
      int ai = a.id, oi = out.id;
      nodes_[out.id].back = [this, ai, oi] {
        auto& ga = ensure_grad(ai);
        T g = nodes_[oi].grd[0];
        for (auto& v : ga) v += g;
      };
    }
    return out;
  }
  Var mean(Var a) {
    return scale(sum(a), T(1) / T(shape(a).numel()));
  }

  Var mean_axis(Var a, int axis) {
    Shape s = shape(a);
    require(axis >= 0 && axis < s.nd, "mean_axis out of range");
    Shape os;
    os.nd = s.nd - 1;
    for (int i = 0, j = 0; i < s.nd; ++i)
      if (i != axis) os.d[j++] = s.d[i];
    Var out = alloc(os, nodes_[a.id].rg);
    long outer = 1, inner = 1, m = s.d[axis];
    for (int i = 0; i < axis; ++i) outer *= s.d[i];
    for (int i = axis + 1; i < s.nd; ++i) inner *= s.d[i];
    const T* src = nodes_[a.id].val.data();
    T* dst = nodes_[out.id].val.data();
    for (long o = 0; o < outer; ++o)
      for (long j = 0; j < inner; ++j) {
        T acc = 0;
        for (long k = 0; k < m; ++k) acc += src[(o * m + k) * inner + j];
        dst[o * inner + j] = acc / T(m);
      }
    if (nodes_[out.id].rg) {
      int ai = a.id, oi = out.id;
      nodes_[out.id].back = [this, ai, oi, outer, inner, m] {
        auto& ga = ensure_grad(ai);
        const auto& go = nodes_[oi].grd;
        for (long o = 0; o < outer; ++o)
          for (long j = 0; j < inner; ++j) {
            T g = go[o * inner + j] / T(m);
            for (long k = 0; k < m; ++k) ga[(o * m + k) * inner + j] += g;
          }
      };
    }
    return out;
  }

  Var softmax(Var a, int axis) {
    Shape s = shape(a);
    require(axis >= 0 && axis < s.nd, "softmax axis out of range");
    Var out = alloc(s, nodes_[a.id].rg);
    long outer = 1, inner = 1, m = s.d[axis];
    for (int i = 0; i < axis; ++i) outer *= s.d[i];
    for (int i = axis + 1; i < s.nd; ++i) inner *= s.d[i];
    const T* src = nodes_[a.id].val.data();
    T* dst = nodes_[out.id].val.data();
    for (long o = 0; o < outer; ++o)
      for (long j = 0; j < inner; ++j) {
        T mx = src[o * m * inner + j];
        for (long k = 1; k < m; ++k)
          mx = std::max(mx, src[(o * m + k) * inner + j]);
        T z = 0;
        for (long k = 0; k < m; ++k)
          z += std::exp(src[(o * m + k) * inner + j] - mx);
        for (long k = 0; k < m; ++k)
          dst[(o * m + k) * inner + j] =
              std::exp(src[(o * m + k) * inner + j] - mx) / z;
      }
    if (nodes_[out.id].rg) {
      int ai = a.id, oi = out.id;
      nodes_[out.id].back = [this, ai, oi, outer, inner, m] {
        auto& ga = ensure_grad(ai);
        const auto& go = nodes_[oi].grd;
        const auto& y = nodes_[oi].val;
        for (long o = 0; o < outer; ++o)
          for (long j = 0; j < inner; ++j) {
            T dot = 0;
            for (long k = 0; k < m; ++k) {
              long idx = (o * m + k) * inner + j;
              dot += go[idx] * y[idx];
            }
            for (long k = 0; k < m; ++k) {
              long idx = (o * m + k) * inner + j;
              ga[idx] += y[idx] * (go[idx] - dot);
            }
          }
      };
    }
    return out;
  }

  // Normalizes the last axis; gain/bias have shape [D].
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5)) {
    Shape s = shape(x);
    long dim = s.d[s.nd - 1];
    require(shape(gain) == Shape{static_cast<int>(dim)} &&
                shape(bias) == Shape{static_cast<int>(dim)},
            "layer_norm gain/bias must match last axis");
    long rows = s.numel() / dim;
    bool rg = nodes_[x.id].rg || nodes_[gain.id].rg || nodes_[bias.id].rg;
    Var out = alloc(s, rg);
    const T* xv = nodes_[x.id].val.data();
    const T* gv = nodes_[gain.id].val.data();
    const T* bv = nodes_[bias.id].val.data();
    T* ov = nodes_[out.id].val.data();
    std::vector<T> mu(rows), istd(rows);
    for (long r = 0; r < rows; ++r) {
      T m = 0;
      for (long j = 0; j < dim; ++j) m += xv[r * dim + j];
      m /= T(dim);
      T v = 0;
      for (long j = 0; j < dim; ++j) {
        T dxx = xv[r * dim + j] - m;
        v += dxx * dxx;
      }
      v /= T(dim);
      mu[r] = m;
      istd[r] = T(1) / std::sqrt(v + eps);
      for (long j = 0; j < dim; ++j)
        ov[r * dim + j] = (xv[r * dim + j] - m) * istd[r] * gv[j] + bv[j];
    }
    if (rg) {
      int xi = x.id, gi = gain.id, bi = bias.id, oi = out.id;
      nodes_[out.id].back = [this, xi, gi, bi, oi, rows, dim, mu, istd] {
        const auto& go = nodes_[oi].grd;
        const T* xv2 = nodes_[xi].val.data();
        const T* gv2 = nodes_[gi].val.data();
        for (long r = 0; r < rows; ++r) {
          // xhat = (x - mu) * istd
          if (nodes_[gi].rg || nodes_[bi].rg) {
            for (long j = 0; j < dim; ++j) {
              T xh = (xv2[r * dim + j] - mu[r]) * istd[r];
              if (nodes_[gi].rg) ensure_grad(gi)[j] += go[r * dim + j] * xh;
              if (nodes_[bi].rg) ensure_grad(bi)[j] += go[r * dim + j];
            }
          }
          if (nodes_[xi].rg) {
            auto& gx = ensure_grad(xi);
            T sum_g = 0, sum_gx = 0;
            for (long j = 0; j < dim; ++j) {
              T gj = go[r * dim + j] * gv2[j];
              T xh = (xv2[r * dim + j] - mu[r]) * istd[r];
              sum_g += gj;
              sum_gx += gj * xh;
            }
            for (long j = 0; j < dim; ++j) {
              T gj = go[r * dim + j] * gv2[j];
              T xh = (xv2[r * dim + j] - mu[r]) * istd[r];
              gx[r * dim + j] +=
                  istd[r] * (gj - sum_g / T(dim) - xh * sum_gx / T(dim));
            }
          }
        }
      };
    }
    return out;
  }

  // ---- linear algebra ----
  Var matmul(Var a, Var b) {
    Shape sa = shape(a), sb = shape(b);
    require(sa.nd == 2 && sb.nd == 2 && sa.d[1] == sb.d[0],
            "matmul shape mismatch " + sa.str() + " x " + sb.str());
    long n = sa.d[0], k = sa.d[1], m = sb.d[1];
    bool rg = nodes_[a.id].rg || nodes_[b.id].rg;
    Var out = alloc(Shape{static_cast<int>(n), static_cast<int>(m)}, rg);
    CMapM A(nodes_[a.id].val.data(), n, k), B(nodes_[b.id].val.data(), k, m);
    MapM C(nodes_[out.id].val.data(), n, m);
    C.noalias() = A * B;
    if (rg) {
      int ai = a.id, bi = b.id, oi = out.id;
      nodes_[out.id].back = [this, ai, bi, oi, n, k, m] {
        CMapM G(nodes_[oi].grd.data(), n, m);
        CMapM A2(nodes_[ai].val.data(), n, k);
        CMapM B2(nodes_[bi].val.data(), k, m);
        if (nodes_[ai].rg) {
          MapM GA(ensure_grad(ai).data(), n, k);
          GA.noalias() += G * B2.transpose();
        }
        if (nodes_[bi].rg) {
          MapM GB(ensure_grad(bi).data(), k, m);
          GB.noalias() += A2.transpose() * G;
        }
      };
    }
    return out;
  }

  Var bmm(Var a, Var b) {
    Shape sa = shape(a), sb = shape(b);
    require(sa.nd == 3 && sb.nd == 3 && sa.d[0] == sb.d[0] &&
                sa.d[2] == sb.d[1],
            "bmm shape mismatch " + sa.str() + " x " + sb.str());
    long bsz = sa.d[0], n = sa.d[1], k = sa.d[2], m = sb.d[2];
    bool rg = nodes_[a.id].rg || nodes_[b.id].rg;
    Var out = alloc(Shape{static_cast<int>(bsz), static_cast<int>(n),
                          static_cast<int>(m)},
                    rg);
    for (long t = 0; t < bsz; ++t) {
      CMapM A(nodes_[a.id].val.data() + t * n * k, n, k);
      CMapM B(nodes_[b.id].val.data() + t * k * m, k, m);
      MapM C(nodes_[out.id].val.data() + t * n * m, n, m);
      C.noalias() = A * B;
    }
    if (rg) {
      int ai = a.id, bi = b.id, oi = out.id;
      nodes_[out.id].back = [this, ai, bi, oi, bsz, n, k, m] {
        for (long t = 0; t < bsz; ++t) {
          CMapM G(nodes_[oi].grd.data() + t * n * m, n, m);
          CMapM A2(nodes_[ai].val.data() + t * n * k, n, k);
          CMapM B2(nodes_[bi].val.data() + t * k * m, k, m);
          if (nodes_[ai].rg) {
            MapM GA(ensure_grad(ai).data() + t * n * k, n, k);
            GA.noalias() += G * B2.transpose();
          }
          if (nodes_[bi].rg) {
            MapM GB(ensure_grad(bi).data() + t * k * m, k, m);
            GB.noalias() += A2.transpose() * G;
          }
        }
      };
    }
    return out;
  }

  // x: [N,D] plus row-broadcast bias [D].
  Var add_rowwise(Var x, Var b) {
    Shape sx = shape(x), sb = shape(b);
    require(sx.nd == 2 && sb.nd == 1 && sx.d[1] == sb.d[0],
            "add_rowwise shape mismatch " + sx.str() + " + " + sb.str());
    long n = sx.d[0], ddim = sx.d[1];
    bool rg = nodes_[x.id].rg || nodes_[b.id].rg;
    Var out = alloc(sx, rg);
    const T* xv = nodes_[x.id].val.data();
    const T* bv = nodes_[b.id].val.data();
    T* ov = nodes_[out.id].val.data();
    for (long r = 0; r < n; ++r)
      for (long j = 0; j < ddim; ++j) ov[r * ddim + j] = xv[r * ddim + j] + bv[j];
    if (rg) {
      int xi = x.id, bi = b.id, oi = out.id;
      nodes_[out.id].back = [this, xi, bi, oi, n, ddim] {
        const auto& go = nodes_[oi].grd;
        if (nodes_[xi].rg) {
          auto& gx = ensure_grad(xi);
          for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
        }
        if (nodes_[bi].rg) {
          auto& gb = ensure_grad(bi);
          for (long r = 0; r < n; ++r)
            for (long j = 0; j < ddim; ++j) gb[j] += go[r * ddim + j];
        }
      };
    }
    return out;
  }

  // ---- convolution ----
  // x: [N,C,H,W], w: [O,C,kh,kw], zero padding, square stride.
  Var conv2d(Var x, Var w, int stride, int pad) {
    Shape sx = shape(x), sw = shape(w);
    require(sx.nd == 4 && sw.nd == 4 && sx.d[1] == sw.d[1],
            "conv2d shape mismatch " + sx.str() + " * " + sw.str());
    int N = sx.d[0], C = sx.d[1], H = sx.d[2], W = sx.d[3];
    int O = sw.d[0], kh = sw.d[2], kw = sw.d[3];
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    require(Ho > 0 && Wo > 0, "conv2d output would be empty");
    long K = static_cast<long>(C) * kh * kw;
    long rows = static_cast<long>(N) * Ho * Wo;
    auto col = std::make_shared<std::vector<T>>(rows * K, T(0));
    im2col(nodes_[x.id].val.data(), N, C, H, W, kh, kw, stride, pad, Ho, Wo,
           col->data());
    bool rg = nodes_[x.id].rg || nodes_[w.id].rg;
    Var out = alloc(Shape{N, O, Ho, Wo}, rg);
    // col [rows,K] * w^T [K,O] -> [rows,O], then scatter to NCHW
    std::vector<T> tmp(rows * O);
    {
      CMapM Cm(col->data(), rows, K);
      CMapM Wm(nodes_[w.id].val.data(), O, K);
      MapM Tm(tmp.data(), rows, O);
      Tm.noalias() = Cm * Wm.transpose();
    }
    T* ov = nodes_[out.id].val.data();
    long plane = static_cast<long>(Ho) * Wo;
    for (int n = 0; n < N; ++n)
      for (long p = 0; p < plane; ++p)
        for (int o = 0; o < O; ++o)
          ov[(n * O + o) * plane + p] = tmp[(n * plane + p) * O + o];
    if (rg) {
      int xi = x.id, wi = w.id, oi = out.id;
      nodes_[out.id].back = [this, xi, wi, oi, col, N, C, H, W, O, kh, kw,
                             stride, pad, Ho, Wo, K, rows, plane] {
        // gather dOut to [rows,O]
        std::vector<T> gtmp(rows * O);
        const T* go = nodes_[oi].grd.data();
        for (int n = 0; n < N; ++n)
          for (long p = 0; p < plane; ++p)
            for (int o = 0; o < O; ++o)
              gtmp[(n * plane + p) * O + o] = go[(n * O + o) * plane + p];
        CMapM Gm(gtmp.data(), rows, O);
        if (nodes_[wi].rg) {
          MapM GW(ensure_grad(wi).data(), O, K);
          CMapM Cm(col->data(), rows, K);
          GW.noalias() += Gm.transpose() * Cm;
        }
        if (nodes_[xi].rg) {
          std::vector<T> gcol(rows * K);
          {
            MapM GC(gcol.data(), rows, K);
            CMapM Wm(nodes_[wi].val.data(), O, K);
            GC.noalias() = Gm * Wm;
          }
          col2im(gcol.data(), N, C, H, W, kh, kw, stride, pad, Ho, Wo,
                 ensure_grad(xi).data());
        }
      };
    }
    return out;
  }

  // bias [C] broadcast over [N,C,H,W]
  Var add_channel(Var x, Var b) {
    Shape sx = shape(x), sb = shape(b);
    require(sx.nd == 4 && sb.nd == 1 && sx.d[1] == sb.d[0],
            "add_channel shape mismatch " + sx.str() + " + " + sb.str());
    long N = sx.d[0], C = sx.d[1], plane = static_cast<long>(sx.d[2]) * sx.d[3];
    bool rg = nodes_[x.id].rg || nodes_[b.id].rg;
    Var out = alloc(sx, rg);
    const T* xv = nodes_[x.id].val.data();
    const T* bv = nodes_[b.id].val.data();
    T* ov = nodes_[out.id].val.data();
    for (long n = 0; n < N; ++n)
      for (long c = 0; c < C; ++c)
        for (long p = 0; p < plane; ++p)
          ov[(n * C + c) * plane + p] = xv[(n * C + c) * plane + p] + bv[c];
    if (rg) {
      int xi = x.id, bi = b.id, oi = out.id;
      nodes_[out.id].back = [this, xi, bi, oi, N, C, plane] {
        const auto& go = nodes_[oi].grd;
        if (nodes_[xi].rg) {
          auto& gx = ensure_grad(xi);
          for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
        }
        if (nodes_[bi].rg) {
          auto& gb = ensure_grad(bi);
          for (long n = 0; n < N; ++n)
            for (long c = 0; c < C; ++c)
              for (long p = 0; p < plane; ++p)
                gb[c] += go[(n * C + c) * plane + p];
        }
      };
    }
    return out;
  }

  // mean over H and W: [N,C,H,W] -> [N,C]
  Var spatial_mean(Var x) {
    Shape s = shape(x);
    require(s.nd == 4, "spatial_mean expects NCHW, got " + s.str());
    long N = s.d[0], C = s.d[1], plane = static_cast<long>(s.d[2]) * s.d[3];
    Var out = alloc(Shape{static_cast<int>(N), static_cast<int>(C)},
                    nodes_[x.id].rg);
    const T* xv = nodes_[x.id].val.data();
    T* ov = nodes_[out.id].val.data();
    for (long n = 0; n < N; ++n)
      for (long c = 0; c < C; ++c) {
        T acc = 0;
        for (long p = 0; p < plane; ++p) acc += xv[(n * C + c) * plane + p];
        ov[n * C + c] = acc / T(plane);
      }
    if (nodes_[out.id].rg) {
      int xi = x.id, oi = out.id;
      nodes_[out.id].back = [this, xi, oi, N, C, plane] {
        auto& gx = ensure_grad(xi);
        const auto& go = nodes_[oi].grd;
        for (long n = 0; n < N; ++n)
          for (long c = 0; c < C; ++c) {
            T g = go[n * C + c] / T(plane);
            for (long p = 0; p < plane; ++p)
              gx[(n * C + c) * plane + p] += g;
          }
      };
    }
    return out;
  }

  // 2x bilinear upsampling, half-pixel centers: [N,C,H,W] -> [N,C,2H,2W]
  Var bilinear_upsample2x(Var x) {
    Shape s = shape(x);
    require(s.nd == 4, "bilinear_upsample2x expects NCHW, got " + s.str());
    int N = s.d[0], C = s.d[1], H = s.d[2], W = s.d[3];
    int Ho = 2 * H, Wo = 2 * W;
    Var out = alloc(Shape{N, C, Ho, Wo}, nodes_[x.id].rg);
    // Precompute the 1-D interpolation stencil per output coordinate.
    auto stencil = [](int n_out, int n_in) {
      std::vector<std::array<T, 3>> st(n_out);  // (i0 as T, w0, w1)
      for (int o = 0; o < n_out; ++o) {
        double src = (o + 0.5) / 2.0 - 0.5;
        int i0 = static_cast<int>(std::floor(src));
        double f = src - i0;
        int ia = std::clamp(i0, 0, n_in - 1);
        int ib = std::clamp(i0 + 1, 0, n_in - 1);
        st[o] = {T(ia * n_in + ib), T(1.0 - f), T(f)};
      }
      return st;
    };
    auto sy = stencil(Ho, H), sx = stencil(Wo, W);
    const T* xv = nodes_[x.id].val.data();
    T* ov = nodes_[out.id].val.data();
    long iplane = static_cast<long>(H) * W, oplane = static_cast<long>(Ho) * Wo;
    for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
      const T* in = xv + nc * iplane;
      T* o = ov + nc * oplane;
      for (int y = 0; y < Ho; ++y) {
        int ya = static_cast<int>(sy[y][0]) / H, yb = static_cast<int>(sy[y][0]) % H;
        T wy0 = sy[y][1], wy1 = sy[y][2];
        for (int xo = 0; xo < Wo; ++xo) {
          int xa = static_cast<int>(sx[xo][0]) / W,
              xb = static_cast<int>(sx[xo][0]) % W;
          T wx0 = sx[xo][1], wx1 = sx[xo][2];
          o[y * Wo + xo] = wy0 * (wx0 * in[ya * W + xa] + wx1 * in[ya * W + xb]) +
                           wy1 * (wx0 * in[yb * W + xa] + wx1 * in[yb * W + xb]);
        }
      }
    }
    if (nodes_[out.id].rg) {
      int xi = x.id, oi = out.id;
      nodes_[out.id].back = [this, xi, oi, N, C, H, W, Ho, Wo, sy, sx, iplane,
                             oplane] {
        auto& gx = ensure_grad(xi);
        const auto& go = nodes_[oi].grd;
        for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
          T* gi = gx.data() + nc * iplane;
          const T* g = go.data() + nc * oplane;
          for (int y = 0; y < Ho; ++y) {
            int ya = static_cast<int>(sy[y][0]) / H,
                yb = static_cast<int>(sy[y][0]) % H;
            T wy0 = sy[y][1], wy1 = sy[y][2];
            for (int xo = 0; xo < Wo; ++xo) {
              int xa = static_cast<int>(sx[xo][0]) / W,
                  xb = static_cast<int>(sx[xo][0]) % W;
              T wx0 = sx[xo][1], wx1 = sx[xo][2];
              T gv = g[y * Wo + xo];
              gi[ya * W + xa] += wy0 * wx0 * gv;
              gi[ya * W + xb] += wy0 * wx1 * gv;
              gi[yb * W + xa] += wy1 * wx0 * gv;
              gi[yb * W + xb] += wy1 * wx1 * gv;
            }
          }
        }
      };
    }
    return out;
  }

  // ---- backward ----
  void backward(Var loss) {
    require(shape(loss).numel() == 1, "backward needs a scalar loss, got " +
                                          shape(loss).str());
    require(nodes_[loss.id].rg, "loss does not depend on any parameter");
    ensure_grad(loss.id)[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      if (nodes_[i].back && !nodes_[i].grd.empty()) nodes_[i].back();
    }
  }

  // Adds node gradients into the bound store's grad buffers.
  void collect_param_grads(ParamStore<T>& store) {
    for (auto& n : nodes_) {
      if (n.param < 0 || n.grd.empty()) continue;
      auto& g = store.entries[n.param].grad;
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grd[i];
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;

  Var alloc(Shape s, bool rg) {
    Node n;
    n.shape = s;
    n.val.assign(s.numel(), T(0));
    n.rg = rg;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<T>& ensure_grad(int id) {
    auto& n = nodes_[id];
    if (n.grd.empty()) n.grd.assign(n.shape.numel(), T(0));
    return n.grd;
  }

  void same_shape(Var a, Var b, const char* op) {
    require(shape(a) == shape(b), std::string(op) + " shape mismatch " +
                                      shape(a).str() + " vs " +
                                      shape(b).str());
  }

  template <typename F, typename B>
  Var unary(Var a, F fwd, B bwd) {
    Var out = alloc(shape(a), nodes_[a.id].rg);
    const T* src = nodes_[a.id].val.data();
    T* dst = nodes_[out.id].val.data();
    long n = shape(a).numel();
    for (long i = 0; i < n; ++i) dst[i] = fwd(src[i]);
    if (nodes_[out.id].rg) {
      int ai = a.id, oi = out.id;
      nodes_[out.id].back = [this, ai, oi, bwd, n] {
        auto& ga = ensure_grad(ai);
        const auto& go = nodes_[oi].grd;
        const auto& x = nodes_[ai].val;
        const auto& y = nodes_[oi].val;
        for (long i = 0; i < n; ++i) ga[i] += bwd(x[i], y[i], go[i]);
      };
    }
    return out;
  }

  template <typename F, typename B>
  Var binary(Var a, Var b, F fwd, B bwd) {
    bool rg = nodes_[a.id].rg || nodes_[b.id].rg;
    Var out = alloc(shape(a), rg);
    const T* av = nodes_[a.id].val.data();
    const T* bv = nodes_[b.id].val.data();
    T* dst = nodes_[out.id].val.data();
    long n = shape(a).numel();
    for (long i = 0; i < n; ++i) dst[i] = fwd(av[i], bv[i]);
    if (rg) {
      int ai = a.id, bi = b.id, oi = out.id;
      nodes_[out.id].back = [this, ai, bi, oi, bwd, n] {
        const auto& go = nodes_[oi].grd;
        const auto& x = nodes_[ai].val;
        const auto& y = nodes_[bi].val;
        bool ra = nodes_[ai].rg, rb = nodes_[bi].rg;
        std::vector<T>* ga = ra ? &ensure_grad(ai) : nullptr;
        std::vector<T>* gb = rb ? &ensure_grad(bi) : nullptr;
        for (long i = 0; i < n; ++i) {
          auto [dx, dy] = bwd(x[i], y[i], go[i]);
          if (ra) (*ga)[i] += dx;
          if (rb) (*gb)[i] += dy;
        }
      };
    }
    return out;
  }

  static void im2col(const T* x, int N, int C, int H, int W, int kh, int kw,
                     int stride, int pad, int Ho, int Wo, T* col) {
    long K = static_cast<long>(C) * kh * kw;
    for (int n = 0; n < N; ++n) {
      for (int yo = 0; yo < Ho; ++yo) {
        for (int xo = 0; xo < Wo; ++xo) {
          T* row =
              col + ((static_cast<long>(n) * Ho + yo) * Wo + xo) * K;
          for (int c = 0; c < C; ++c) {
            const T* plane = x + (static_cast<long>(n) * C + c) * H * W;
            for (int dy = 0; dy < kh; ++dy) {
              int yi = yo * stride - pad + dy;
              for (int dx = 0; dx < kw; ++dx) {
                int xi = xo * stride - pad + dx;
                row[(c * kh + dy) * kw + dx] =
                    (yi >= 0 && yi < H && xi >= 0 && xi < W)
                        ? plane[yi * W + xi]
                        : T(0);
              }
            }
          }
        }
      }
    }
  }

  static void col2im(const T* col, int N, int C, int H, int W, int kh, int kw,
                     int stride, int pad, int Ho, int Wo, T* gx) {
    long K = static_cast<long>(C) * kh * kw;
    for (int n = 0; n < N; ++n) {
      for (int yo = 0; yo < Ho; ++yo) {
        for (int xo = 0; xo < Wo; ++xo) {
          const T* row =
              col + ((static_cast<long>(n) * Ho + yo) * Wo + xo) * K;
          for (int c = 0; c < C; ++c) {
            T* plane = gx + (static_cast<long>(n) * C + c) * H * W;
            for (int dy = 0; dy < kh; ++dy) {
              int yi = yo * stride - pad + dy;
              if (yi < 0 || yi >= H) continue;
              for (int dx = 0; dx < kw; ++dx) {
                int xi = xo * stride - pad + dx;
                if (xi < 0 || xi >= W) continue;
                plane[yi * W + xi] += row[(c * kh + dy) * kw + dx];
              }
            }
          }
        }
      }
    }
  }
};

}  // namespace tdom::grad
