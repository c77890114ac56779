#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tdom/graph.hpp"

namespace tdom::grad {

// All randomness in the project flows through explicitly seeded engines.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  double normal(double mu, double sigma) {
    return std::normal_distribution<double>(mu, sigma)(eng_);
  }
  int uniform_int(int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, hi)(eng_);
  }
  uint64_t raw() { return eng_(); }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

template <typename T>
std::vector<T> uniform_init(Rng& rng, long n, double bound) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return v;
}

// Kaiming-style bound for a weight with the given fan-in.
inline double fan_in_bound(long fan_in) { return std::sqrt(1.0 / fan_in); }

template <typename T>
int add_linear(ParamStore<T>& ps, Rng& rng, const std::string& name, int in,
               int out) {
  double b = fan_in_bound(in);
  ps.add(name + ".w", Shape{in, out}, uniform_init<T>(rng, long(in) * out, b));
  ps.add(name + ".b", Shape{out}, std::vector<T>(out, T(0)));
  return ps.find(name + ".w");
}

template <typename T>
int add_conv(ParamStore<T>& ps, Rng& rng, const std::string& name, int cin,
             int cout, int k) {
  double b = fan_in_bound(long(cin) * k * k);
  ps.add(name + ".w", Shape{cout, cin, k, k},
         uniform_init<T>(rng, long(cout) * cin * k * k, b));
  ps.add(name + ".b", Shape{cout}, std::vector<T>(cout, T(0)));
  return ps.find(name + ".w");
}

template <typename T>
int add_layer_norm(ParamStore<T>& ps, const std::string& name, int dim) {
  ps.add(name + ".g", Shape{dim}, std::vector<T>(dim, T(1)));
  ps.add(name + ".b", Shape{dim}, std::vector<T>(dim, T(0)));
  return ps.find(name + ".g");
}

// x: [N,in] -> [N,out]
template <typename T>
Var linear(Graph<T>& g, ParamStore<T>& ps, const std::string& name, Var x) {
  Var w = g.param(ps, ps.find(name + ".w"));
  Var b = g.param(ps, ps.find(name + ".b"));
  return g.add_rowwise(g.matmul(x, w), b);
}

template <typename T>
Var conv(Graph<T>& g, ParamStore<T>& ps, const std::string& name, Var x,
         int stride, int pad) {
  Var w = g.param(ps, ps.find(name + ".w"));
  Var b = g.param(ps, ps.find(name + ".b"));
  return g.add_channel(g.conv2d(x, w, stride, pad), b);
}

template <typename T>
Var layer_norm(Graph<T>& g, ParamStore<T>& ps, const std::string& name,
               Var x) {
  return g.layer_norm(x, g.param(ps, ps.find(name + ".g")),
                      g.param(ps, ps.find(name + ".b")));
}

template <typename T>
void add_mha(ParamStore<T>& ps, Rng& rng, const std::string& name, int dim) {
  add_linear(ps, rng, name + ".q", dim, dim);
  add_linear(ps, rng, name + ".k", dim, dim);
  add_linear(ps, rng, name + ".v", dim, dim);
  add_linear(ps, rng, name + ".o", dim, dim);
}

// Multi-head attention. q: [N,Tq,D], kv: [N,Tk,D] -> [N,Tq,D].
// Scaled dot-product per head, no positional embedding.
template <typename T>
Var mha(Graph<T>& g, ParamStore<T>& ps, const std::string& name, Var q,
        Var kv, int heads) {
  Shape sq = g.shape(q), skv = g.shape(kv);
  require(sq.nd == 3 && skv.nd == 3 && sq.d[0] == skv.d[0] &&
              sq.d[2] == skv.d[2],
          "mha shape mismatch " + sq.str() + " vs " + skv.str());
  int N = sq.d[0], Tq = sq.d[1], D = sq.d[2], Tk = skv.d[1];
  require(D % heads == 0, "mha model dim " + std::to_string(D) +
                              " not divisible by " + std::to_string(heads) +
                              " heads");
  int hd = D / heads;
  auto split = [&](Var x, int tok) {
    // [N*tok, D] -> [N, tok, H, hd] -> [N, H, tok, hd] -> [N*H, tok, hd]
    Var y = g.reshape(x, Shape{N, tok, heads, hd});
    y = g.permute(y, {0, 2, 1, 3});
    return g.reshape(y, Shape{N * heads, tok, hd});
  };
  Var qf = linear(g, ps, name + ".q", g.reshape(q, Shape{N * Tq, D}));
  Var kf = linear(g, ps, name + ".k", g.reshape(kv, Shape{N * Tk, D}));
  Var vf = linear(g, ps, name + ".v", g.reshape(kv, Shape{N * Tk, D}));
  Var qh = split(qf, Tq), kh = split(kf, Tk), vh = split(vf, Tk);
  Var scores = g.bmm(qh, g.permute(kh, {0, 2, 1, 3}));
  scores = g.scale(scores, static_cast<T>(1.0 / std::sqrt(double(hd))));
  Var attn = g.softmax(scores, 2);
  Var ctx = g.bmm(attn, vh);  // [N*H, Tq, hd]
  ctx = g.reshape(ctx, Shape{N, heads, Tq, hd});
  ctx = g.permute(ctx, {0, 2, 1, 3});
  Var out = linear(g, ps, name + ".o", g.reshape(ctx, Shape{N * Tq, D}));
  return g.reshape(out, Shape{N, Tq, D});
}

// ---- optimizer ----

// Bias-corrected adaptive moment estimation.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore<T>& ps) {
    if (m_.size() != ps.entries.size()) {
      m_.resize(ps.entries.size());
      v_.resize(ps.entries.size());
      for (size_t i = 0; i < ps.entries.size(); ++i) {
        m_[i].assign(ps.entries[i].value.size(), T(0));
        v_[i].assign(ps.entries[i].value.size(), T(0));
      }
    }
    ++t_;
    double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (size_t i = 0; i < ps.entries.size(); ++i) {
      auto& e = ps.entries[i];
      for (size_t j = 0; j < e.value.size(); ++j) {
        double gj = e.grad[j];
        m_[i][j] = static_cast<T>(b1_ * m_[i][j] + (1.0 - b1_) * gj);
        v_[i][j] = static_cast<T>(b2_ * v_[i][j] + (1.0 - b2_) * gj * gj);
        double mh = m_[i][j] / c1, vh = v_[i][j] / c2;
        e.value[j] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  int64_t steps() const { return t_; }
  double lr() const { return lr_; }

 private:
  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// ---- gradient checking ----

// Central finite differences at 64-bit. Checks every entry of the store,
// or a seeded random subsample of `max_per_param` entries per tensor when
// the full sweep would be too slow. `build` must construct a scalar loss
// from the current store contents.
inline double grad_check(
    ParamStore<double>& ps,
    const std::function<Var(Graph<double>&, ParamStore<double>&)>& build,
    double step = 1e-5, int max_per_param = -1, uint64_t seed = 12345) {
  ps.zero_grad();
  {
    Graph<double> g;
    Var loss = build(g, ps);
    g.backward(loss);
    g.collect_param_grads(ps);
  }
  auto eval = [&]() {
    Graph<double> g;
    Var loss = build(g, ps);
    return g.val(loss)[0];
  };
  Rng pick(seed);
  double worst = 0.0;
  for (auto& e : ps.entries) {
    std::vector<size_t> idx(e.value.size());
    for (size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    if (max_per_param > 0 &&
        idx.size() > static_cast<size_t>(max_per_param)) {
      std::shuffle(idx.begin(), idx.end(), pick.engine());
      idx.resize(max_per_param);
    }
    for (size_t j : idx) {
      double keep = e.value[j];
      e.value[j] = keep + step;
      double fp = eval();
      e.value[j] = keep - step;
      double fm = eval();
      e.value[j] = keep;
      double num = (fp - fm) / (2.0 * step);
      double ana = e.grad[j];
      double denom = std::max({std::abs(num), std::abs(ana), 1e-6});
      worst = std::max(worst, std::abs(num - ana) / denom);
    }
  }
  return worst;
}

}  // namespace tdom::grad
