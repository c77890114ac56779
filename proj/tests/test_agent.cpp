#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tdom/agent.hpp"

using namespace tdom;
using namespace tdom::agent;

namespace {

Observation random_obs(grad::Rng& rng) {
  Observation o;
  for (auto& v : o.vis) v = float(0.5 - rng.uniform(0.0, 0.02));
  for (auto& v : o.ind) v = float(rng.normal(0.0, 0.3));
  for (auto& v : o.thu) v = float(rng.normal(0.0, 0.2));
  for (auto& v : o.pro) v = float(rng.normal(0.0, 0.5));
  o.aux = {0.0f, 0.0f};
  return o;
}

// raw action that snaps to the given index on an axis with `count` points
double raw_for_index(int idx, int count) {
  return 2.0 * idx / (count - 1) - 1.0;
}

}  // namespace

TEST_CASE("outer selection boundary and determinism") {
  CHECK(Agent::outer_from_raw(0.0).selection == Granularity::Fine);
  CHECK(Agent::outer_from_raw(1e-9).selection == Granularity::Fine);
  CHECK(Agent::outer_from_raw(-1e-9).selection == Granularity::Coarse);

  Agent ag(fusion::Mode::Ours, 7);
  grad::Rng rng(1);
  auto obs = random_obs(rng);
  grad::Rng r1(2), r2(99);
  auto a = ag.act_outer(obs, r1, true);
  auto b = ag.act_outer(obs, r2, true);
  CHECK(a.u[0] == b.u[0]);
  CHECK(a.logp == b.logp);
}

TEST_CASE("outer aux contract") {
  Agent ag(fusion::Mode::Ours, 7);
  grad::Rng rng(1);
  auto obs = random_obs(rng);
  obs.aux = encode_aux(Stage::Inner, OuterAction{Granularity::Fine});
  grad::Rng ar(3);
  CHECK_THROWS_AS((void)ag.act_outer(obs, ar, false), ContractError);
}

TEST_CASE("fresh policy produces both selections") {
  Agent ag(fusion::Mode::Ours, 11);
  grad::Rng rng(13), ar(17);
  int fine = 0, coarse = 0;
  for (int i = 0; i < 200; ++i) {
    auto obs = random_obs(rng);
    auto a = ag.act_outer(obs, ar, false);
    (a.u[0] >= 0 ? fine : coarse)++;
  }
  CHECK(fine > 0);
  CHECK(coarse > 0);
}

TEST_CASE("inner snapping hits the grid corners") {
  std::array<double, 4> lo{-1.0, -1.0, -1.0, 0.0};
  std::array<double, 4> hi{1.0, 1.0, 1.0, 0.0};
  auto f = Agent::inner_from_raw(lo, fine_grid());
  CHECK(f.ix == 0);
  CHECK(f.iz == 0);
  CHECK(f.itheta == 0);
  CHECK(f.omega);
  auto pf = decode_action(fine_grid(), f);
  CHECK(pf.x_mm == doctest::Approx(-7.5));
  CHECK(pf.z_mm == doctest::Approx(-3.0));
  CHECK(pf.theta_deg == doctest::Approx(0.0));
  auto c = Agent::inner_from_raw(hi, coarse_grid());
  auto pc = decode_action(coarse_grid(), c);
  CHECK(pc.x_mm == doctest::Approx(18.7));
  CHECK(pc.z_mm == doctest::Approx(7.5));
  CHECK(pc.theta_deg == doctest::Approx(7.5));
  // snapped actions always decode onto grid points
  grad::Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    std::array<double, 4> u{rng.uniform(-1, 1), rng.uniform(-1, 1),
                            rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto a = Agent::inner_from_raw(u, fine_grid());
    auto p = decode_action(fine_grid(), a);
    CHECK(p.x_mm == doctest::Approx(fine_grid().x.value(a.ix)));
  }
}

TEST_CASE("inner aux/grid contract") {
  Agent ag(fusion::Mode::Ours, 7);
  grad::Rng rng(1), ar(2);
  auto obs = random_obs(rng);
  obs.aux = encode_aux(Stage::Inner, OuterAction{Granularity::Coarse});
  CHECK_THROWS_AS((void)ag.act_inner(obs, fine_grid(), ar, false),
                  ContractError);
  obs.aux = encode_aux(Stage::Inner, OuterAction{Granularity::Fine});
  auto a = ag.act_inner(obs, fine_grid(), ar, false);
  CHECK(a.dim == 4);
  CHECK(std::isfinite(a.logp));
}

TEST_CASE("sampled log-probs integrate to a proper density") {
  // for u ~ pi, E[1 / pi(u)] equals the support length, here 2
  Agent ag(fusion::Mode::Ours, 23);
  grad::Rng rng(29), ar(31);
  auto obs = random_obs(rng);
  double acc = 0.0;
  const int n = 1200;
  for (int i = 0; i < n; ++i) {
    auto a = ag.act_outer(obs, ar, false);
    acc += std::exp(-a.logp);
  }
  CHECK(acc / n == doctest::Approx(2.0).epsilon(0.12));
}

TEST_CASE("update is a flagged no-op before learning starts") {
  Agent ag(fusion::Mode::NT, 3);
  ReplayBuffer buf(100);
  cfg::SacParams sac;
  grad::Rng rng(5);
  auto rep = ag.update(buf, sac, rng);
  CHECK_FALSE(rep.updated);
}

TEST_CASE("bandit: reward on one action is found by the greedy policy") {
  Agent ag(fusion::Mode::NT, 41);
  grad::Rng rng(43);
  auto obs = random_obs(rng);
  auto grid = fine_grid();
  const int tx = 2, tz = 4, tt = 1;
  ReplayBuffer buf(400);
  for (int i = 0; i < 300; ++i) {
    Transition t;
    t.obs = obs;
    t.inner_aux = encode_aux(Stage::Inner, OuterAction{Granularity::Fine});
    if (i % 2 == 0) {
      t.u_out = 0.5f;
      t.u_in = {float(raw_for_index(tx, grid.x.count)),
                float(raw_for_index(tz, grid.z.count)),
                float(raw_for_index(tt, grid.theta.count)),
                float(rng.uniform(-1, 1))};
    } else {
      t.u_out = float(rng.uniform(-1.0, -0.01));
      for (auto& u : t.u_in) u = float(rng.uniform(-1, 1));
    }
    auto a = Agent::inner_from_raw(
        {t.u_in[0], t.u_in[1], t.u_in[2], t.u_in[3]}, grid);
    bool hit = t.u_out >= 0 && a.ix == tx && a.iz == tz && a.itheta == tt;
    t.reward = hit ? 1.0f : 0.0f;
    buf.push(t);
  }
  cfg::SacParams sac;
  sac.batch_size = 32;
  grad::Rng ur(47);
  LossReport last;
  for (int step = 0; step < 120; ++step) {
    last = ag.update(buf, sac, ur);
    REQUIRE(last.updated);
    REQUIRE(std::isfinite(last.inner_critic));
  }
  grad::Rng ar(53);
  auto ao = ag.act_outer(obs, ar, true);
  CHECK(ao.u[0] >= 0.0);  // fine granularity is the rewarded branch
  Observation inner = obs;
  inner.aux = encode_aux(Stage::Inner, OuterAction{Granularity::Fine});
  auto ai = ag.act_inner(inner, grid, ar, true);
  auto act = Agent::inner_from_raw(ai.u, grid);
  CHECK(act.ix == tx);
  CHECK(act.iz == tz);
  CHECK(act.itheta == tt);
}

TEST_CASE("all-zero rewards keep the losses finite") {
  Agent ag(fusion::Mode::NT, 61);
  grad::Rng rng(67);
  ReplayBuffer buf(64);
  for (int i = 0; i < 32; ++i) {
    Transition t;
    t.obs = random_obs(rng);
    t.inner_aux = encode_aux(Stage::Inner, OuterAction{Granularity::Coarse});
    t.u_out = float(rng.uniform(-1, 1));
    for (auto& u : t.u_in) u = float(rng.uniform(-1, 1));
    t.reward = 0.0f;
    buf.push(t);
  }
  cfg::SacParams sac;
  sac.batch_size = 16;
  grad::Rng ur(71);
  for (int step = 0; step < 5; ++step) {
    auto rep = ag.update(buf, sac, ur);
    CHECK(rep.updated);
    CHECK(std::isfinite(rep.outer_critic));
    CHECK(std::isfinite(rep.outer_actor));
    CHECK(std::isfinite(rep.inner_critic));
    CHECK(std::isfinite(rep.inner_actor));
  }
}

TEST_CASE("identical seeds give identical loss trajectories") {
  auto run = [] {
    Agent ag(fusion::Mode::NT, 81);
    grad::Rng rng(83);
    ReplayBuffer buf(64);
    for (int i = 0; i < 24; ++i) {
      Transition t;
      t.obs = random_obs(rng);
      t.inner_aux = encode_aux(Stage::Inner, OuterAction{Granularity::Fine});
      t.u_out = float(rng.uniform(-1, 1));
      for (auto& u : t.u_in) u = float(rng.uniform(-1, 1));
      t.reward = i % 3 == 0 ? 1.0f : 0.0f;
      buf.push(t);
    }
    cfg::SacParams sac;
    sac.batch_size = 16;
    grad::Rng ur(89);
    std::vector<double> losses;
    for (int step = 0; step < 3; ++step) {
      auto rep = ag.update(buf, sac, ur);
      losses.push_back(rep.inner_critic);
      losses.push_back(rep.inner_actor);
    }
    return losses;
  };
  CHECK(run() == run());
}

TEST_CASE("SL mode: no outer loop, full-range grid only") {
  Agent ag(fusion::Mode::SL, 91);
  grad::Rng rng(93), ar(97);
  auto obs = random_obs(rng);
  CHECK_THROWS_AS((void)ag.act_outer(obs, ar, false), ContractError);
  CHECK_THROWS_AS((void)ag.act_inner(obs, fine_grid(), ar, false),
                  ContractError);
  auto a = ag.act_inner(obs, single_loop_grid(), ar, false);
  CHECK(a.dim == 4);
}

TEST_CASE("checkpoint round-trip, corruption, and mode mismatch") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "tdom_agent_ckpt";
  fs::create_directories(dir);
  auto path = (dir / "agent.ckpt").string();

  Agent ag(fusion::Mode::Ours, 101);
  ag.save(path, "cfghash");
  Agent back(fusion::Mode::Ours, 202);  // different init, same architecture
  back.load(path, "cfghash");
  REQUIRE(back.params().entries.size() == ag.params().entries.size());
  for (size_t i = 0; i < ag.params().entries.size(); ++i)
    CHECK(back.params().entries[i].value == ag.params().entries[i].value);

  Agent other(fusion::Mode::Ours, 303);
  CHECK_THROWS_AS(other.load(path, "differenthash"), RuntimeFailure);
  Agent ov(fusion::Mode::OV, 404);
  CHECK_THROWS_AS(ov.load(path, "cfghash"), RuntimeFailure);

  // truncation is caught before any tensor is touched
  auto full = fs::file_size(path);
  fs::resize_file(path, full - 7);
  Agent trunc(fusion::Mode::Ours, 505);
  CHECK_THROWS_AS(trunc.load(path, "cfghash"), RuntimeFailure);
  fs::remove_all(dir);
}
