#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tdom/nn.hpp"

using namespace tdom::grad;

namespace {

ParamStore<double> random_store(
    const std::vector<std::pair<std::string, Shape>>& specs, uint64_t seed) {
  Rng rng(seed);
  ParamStore<double> ps;
  for (const auto& [name, shape] : specs) {
    std::vector<double> v(shape.numel());
    for (auto& x : v) x = rng.normal(0.0, 0.6);
    ps.add(name, shape, std::move(v));
  }
  return ps;
}

}  // namespace

TEST_CASE("analytic gradients: sum and quadratic") {
  ParamStore<double> ps;
  ps.add("w", Shape{2}, {1.0, 2.0});
  Graph<double> g;
  Var w = g.param(ps, 0);
  Var loss = g.sum(g.mul(w, w));
  g.backward(loss);
  g.collect_param_grads(ps);
  CHECK(ps.entries[0].grad[0] == doctest::Approx(2.0));
  CHECK(ps.entries[0].grad[1] == doctest::Approx(4.0));

  ps.zero_grad();
  Graph<double> g2;
  Var w2 = g2.param(ps, 0);
  g2.backward(g2.sum(w2));
  g2.collect_param_grads(ps);
  CHECK(ps.entries[0].grad[0] == doctest::Approx(1.0));
  CHECK(ps.entries[0].grad[1] == doctest::Approx(1.0));
}

TEST_CASE("relu of negative input has zero value and gradient") {
  ParamStore<double> ps;
  ps.add("x", Shape{1}, {3.0});
  Graph<double> g;
  Var x = g.param(ps, 0);
  Var y = g.relu(g.neg(x));
  CHECK(g.val(y)[0] == 0.0);
  g.backward(g.sum(y));
  g.collect_param_grads(ps);
  CHECK(ps.entries[0].grad[0] == 0.0);
}

TEST_CASE("softmax over a length-1 axis is identity one") {
  Graph<double> g;
  double v = 2.7;
  Var x = g.constant(Shape{1, 1}, &v);
  CHECK(g.val(g.softmax(x, 1))[0] == doctest::Approx(1.0));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(3);
  std::vector<double> v(5 * 7);
  for (auto& x : v) x = rng.normal(0, 2);
  Graph<double> g;
  Var y = g.softmax(g.constant(Shape{5, 7}, v), 1);
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) s += g.val(y)[r * 7 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("conv2d with 1x1 identity kernel is the identity") {
  Rng rng(5);
  std::vector<double> img(2 * 1 * 4 * 4);
  for (auto& x : img) x = rng.normal(0, 1);
  Graph<double> g;
  Var x = g.constant(Shape{2, 1, 4, 4}, img);
  double one = 1.0;
  Var w = g.constant(Shape{1, 1, 1, 1}, &one);
  Var y = g.conv2d(x, w, 1, 0);
  for (size_t i = 0; i < img.size(); ++i)
    CHECK(g.val(y)[i] == doctest::Approx(img[i]));
}

TEST_CASE("grad check: linear layer") {
  auto ps = random_store({{"w", {3, 4}}, {"b", {4}}, {"x", {5, 3}}}, 11);
  double err = grad_check(ps, [](Graph<double>& g, ParamStore<double>& ps) {
    Var x = g.param(ps, ps.find("x"));
    Var y = g.add_rowwise(g.matmul(x, g.param(ps, ps.find("w"))),
                          g.param(ps, ps.find("b")));
    return g.mean(g.mul(y, y));
  });
  CHECK(err <= 1e-7);
}

TEST_CASE("grad check: every primitive op") {
  auto check = [](double tol, auto build) {
    auto ps = random_store({{"a", {2, 3, 4, 5}}, {"b", {2, 3, 4, 5}}}, 17);
    double err = grad_check(ps, build);
    CHECK(err <= tol);
  };
  using G = Graph<double>;
  using PS = ParamStore<double>;
  check(1e-7, [](G& g, PS& ps) {
    return g.mean(g.add(g.param(ps, 0), g.param(ps, 1)));
  });
  check(1e-7, [](G& g, PS& ps) {
    return g.mean(g.mul(g.param(ps, 0), g.param(ps, 1)));
  });
  check(1e-6, [](G& g, PS& ps) {
    return g.mean(g.mul(g.sub(g.param(ps, 0), g.param(ps, 1)),
                        g.sub(g.param(ps, 0), g.param(ps, 1))));
  });
  check(1e-6, [](G& g, PS& ps) { return g.mean(g.tanh_(g.param(ps, 0))); });
  check(1e-6, [](G& g, PS& ps) { return g.mean(g.logistic(g.param(ps, 0))); });
  check(1e-6, [](G& g, PS& ps) { return g.mean(g.exp_(g.param(ps, 0))); });
  check(1e-6, [](G& g, PS& ps) { return g.mean(g.softplus(g.param(ps, 0))); });
  check(1e-6, [](G& g, PS& ps) {
    Var s = g.softmax(g.param(ps, 0), 2);
    return g.mean(g.mul(s, g.param(ps, 1)));
  });
  check(1e-6, [](G& g, PS& ps) {
    Var s = g.softmax(g.param(ps, 0), 1);
    return g.mean(g.mul(s, g.param(ps, 1)));
  });
  check(1e-6, [](G& g, PS& ps) {
    return g.mean(g.minimum(g.param(ps, 0), g.param(ps, 1)));
  });
  check(1e-6, [](G& g, PS& ps) {
    Var c = g.concat({g.param(ps, 0), g.param(ps, 1)}, 1);
    return g.mean(g.mul(c, c));
  });
  check(1e-6, [](G& g, PS& ps) {
    Var s = g.slice(g.param(ps, 0), 2, 1, 2);
    return g.mean(g.mul(s, s));
  });
  check(1e-6, [](G& g, PS& ps) {
    Var m = g.mean_axis(g.param(ps, 0), 1);
    return g.mean(g.mul(m, m));
  });
  check(1e-6, [](G& g, PS& ps) {
    Var p = g.permute(g.param(ps, 0), {2, 0, 3, 1});
    return g.mean(g.mul(p, g.permute(g.param(ps, 1), {2, 0, 3, 1})));
  });
  check(1e-6, [](G& g, PS& ps) {
    Var r = g.reshape(g.param(ps, 0), Shape{6, 20});
    return g.mean(g.mul(r, r));
  });
  check(1e-6, [](G& g, PS& ps) {
    Var u = g.bilinear_upsample2x(g.param(ps, 0));
    return g.mean(g.mul(u, u));
  });
}

TEST_CASE("grad check: matmul, bmm, conv2d, layer_norm") {
  {
    auto ps = random_store({{"a", {4, 6}}, {"b", {6, 3}}}, 23);
    CHECK(grad_check(ps, [](Graph<double>& g, ParamStore<double>& ps) {
            Var y = g.matmul(g.param(ps, 0), g.param(ps, 1));
            return g.mean(g.mul(y, y));
          }) <= 1e-6);
  }
  {
    auto ps = random_store({{"a", {3, 2, 4}}, {"b", {3, 4, 5}}}, 29);
    CHECK(grad_check(ps, [](Graph<double>& g, ParamStore<double>& ps) {
            Var y = g.bmm(g.param(ps, 0), g.param(ps, 1));
            return g.mean(g.mul(y, y));
          }) <= 1e-6);
  }
  {
    auto ps = random_store(
        {{"x", {2, 3, 6, 5}}, {"w", {4, 3, 3, 3}}, {"b", {4}}}, 31);
    CHECK(grad_check(ps, [](Graph<double>& g, ParamStore<double>& ps) {
            Var y = g.add_channel(
                g.conv2d(g.param(ps, 0), g.param(ps, 1), 2, 1),
                g.param(ps, 2));
            return g.mean(g.mul(y, y));
          }) <= 1e-6);
  }
  {
    auto ps = random_store({{"x", {5, 8}}, {"g", {8}}, {"b", {8}}}, 37);
    CHECK(grad_check(ps, [](Graph<double>& g, ParamStore<double>& ps) {
            Var y = g.layer_norm(g.param(ps, 0), g.param(ps, 1),
                                 g.param(ps, 2));
            return g.mean(g.mul(y, y));
          }) <= 1e-5);
  }
  {
    auto ps = random_store({{"x", {2, 2, 3, 4}}}, 41);
    CHECK(grad_check(ps, [](Graph<double>& g, ParamStore<double>& ps) {
            Var y = g.spatial_mean(g.param(ps, 0));
            return g.mean(g.mul(y, y));
          }) <= 1e-6);
  }
}

TEST_CASE("mha: singleton key gets attention weight one") {
  Rng rng(43);
  ParamStore<double> ps;
  add_mha(ps, rng, "att", 8);
  std::vector<double> q(1 * 2 * 8), kv(1 * 1 * 8);
  for (auto& x : q) x = rng.normal(0, 1);
  for (auto& x : kv) x = rng.normal(0, 1);
  Graph<double> g;
  Var qv = g.constant(Shape{1, 2, 8}, q);
  Var kvv = g.constant(Shape{1, 1, 8}, kv);
  Var out = mha(g, ps, "att", qv, kvv, 2);
  // With one key token, output equals Wo(v) + bo regardless of query.
  Graph<double> g2;
  Var vf = linear(g2, ps, "att.v", g2.constant(Shape{1, 8}, kv));
  Var of = linear(g2, ps, "att.o", vf);
  for (int t = 0; t < 2; ++t)
    for (int j = 0; j < 8; ++j)
      CHECK(g.val(out)[t * 8 + j] == doctest::Approx(g2.val(of)[j]));
}

TEST_CASE("mha: permuting key/value tokens leaves outputs unchanged") {
  Rng rng(47);
  ParamStore<double> ps;
  add_mha(ps, rng, "att", 8);
  std::vector<double> q(2 * 3 * 8), kv(2 * 4 * 8);
  for (auto& x : q) x = rng.normal(0, 1);
  for (auto& x : kv) x = rng.normal(0, 1);
  std::vector<double> kvp(kv.size());
  int perm[4] = {2, 0, 3, 1};
  for (int n = 0; n < 2; ++n)
    for (int t = 0; t < 4; ++t)
      for (int j = 0; j < 8; ++j)
        kvp[(n * 4 + t) * 8 + j] = kv[(n * 4 + perm[t]) * 8 + j];
  Graph<double> g;
  Var o1 = mha(g, ps, "att", g.constant(Shape{2, 3, 8}, q),
               g.constant(Shape{2, 4, 8}, kv), 2);
  Var o2 = mha(g, ps, "att", g.constant(Shape{2, 3, 8}, q),
               g.constant(Shape{2, 4, 8}, kvp), 2);
  for (size_t i = 0; i < g.val(o1).size(); ++i)
    CHECK(g.val(o1)[i] == doctest::Approx(g.val(o2)[i]).epsilon(1e-10));
}

TEST_CASE("mha: indivisible head count is rejected") {
  Rng rng(49);
  ParamStore<double> ps;
  add_mha(ps, rng, "att", 8);
  Graph<double> g;
  std::vector<double> q(1 * 2 * 8, 0.1);
  Var qv = g.constant(Shape{1, 2, 8}, q);
  CHECK_THROWS_AS(mha(g, ps, "att", qv, qv, 3), tdom::ContractError);
}

TEST_CASE("grad check: mha against finite differences") {
  Rng rng(53);
  ParamStore<double> ps;
  add_mha(ps, rng, "att", 8);
  {
    std::vector<double> q(1 * 2 * 8), kv(1 * 2 * 8);
    for (auto& x : q) x = rng.normal(0, 0.7);
    for (auto& x : kv) x = rng.normal(0, 0.7);
    ps.add("q", Shape{1, 2, 8}, q);
    ps.add("kv", Shape{1, 2, 8}, kv);
  }
  double err = grad_check(ps, [](Graph<double>& g, ParamStore<double>& ps) {
    Var out = mha(g, ps, "att", g.param(ps, ps.find("q")),
                  g.param(ps, ps.find("kv")), 2);
    return g.mean(g.mul(out, out));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("backward rejects non-scalar loss") {
  ParamStore<double> ps;
  ps.add("w", Shape{3}, {1.0, 2.0, 3.0});
  Graph<double> g;
  Var w = g.param(ps, 0);
  CHECK_THROWS_AS(g.backward(w), tdom::ContractError);
}

TEST_CASE("adam: first step moves by about lr against the gradient sign") {
  ParamStore<double> ps;
  ps.add("w", Shape{3}, {0.0, 0.0, 0.0});
  ps.entries[0].grad = {0.5, -2.0, 10.0};
  Adam<double> opt(0.01);
  opt.step(ps);
  for (int j = 0; j < 3; ++j) {
    double sign = ps.entries[0].grad[j] > 0 ? -1.0 : 1.0;
    CHECK(ps.entries[0].value[j] ==
          doctest::Approx(sign * 0.01).epsilon(1e-5));
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamStore<double> ps;
  ps.add("w", Shape{2}, {1.5, -0.5});
  Adam<double> opt(0.01);
  opt.step(ps);
  CHECK(ps.entries[0].value[0] == doctest::Approx(1.5));
  CHECK(ps.entries[0].value[1] == doctest::Approx(-0.5));
}

TEST_CASE("adam: identical seeded runs give identical trajectories") {
  auto run = [] {
    Rng rng(7);
    ParamStore<double> ps;
    ps.add("w", Shape{4}, uniform_init<double>(rng, 4, 1.0));
    Adam<double> opt(0.003);
    for (int i = 0; i < 50; ++i) {
      ps.zero_grad();
      Graph<double> g;
      Var w = g.param(ps, 0);
      Var loss = g.mean(g.mul(w, w));
      g.backward(loss);
      g.collect_param_grads(ps);
      opt.step(ps);
    }
    return ps.entries[0].value;
  };
  auto a = run(), b = run();
  for (int j = 0; j < 4; ++j) CHECK(a[j] == b[j]);
}
