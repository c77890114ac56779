#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tdom/core.hpp"

using namespace tdom;

TEST_CASE("fine grid matches the configured ranges") {
  ActionGrid g = fine_grid();
  CHECK(g.x.min == doctest::Approx(-7.5));
  CHECK(g.x.max == doctest::Approx(7.5));
  CHECK(g.x.count == 4);
  CHECK(g.z.count == 7);
  CHECK(g.theta.count == 4);
  CHECK(g.theta.max == doctest::Approx(3.0));
}

TEST_CASE("decode_action endpoints and midpoints") {
  ActionGrid fine = fine_grid(), coarse = coarse_grid();
  CHECK(decode_action(fine, {0, 0, 0}).z_mm == doctest::Approx(-3.0));
  CHECK(decode_action(fine, {0, 3, 0}).z_mm == doctest::Approx(0.0));
  CHECK(decode_action(coarse, {3, 0, 0}).x_mm == doctest::Approx(18.7));
  CHECK_THROWS_AS(decode_action(fine, {4, 0, 0}), ContractError);
  CHECK_THROWS_AS(decode_action(fine, {0, 7, 0}), ContractError);
}

TEST_CASE("decode/encode round-trips over every grid point") {
  for (Granularity gg : {Granularity::Fine, Granularity::Coarse}) {
    const ActionGrid& g = grid_for(gg);
    for (int ix = 0; ix < g.x.count; ++ix)
      for (int iz = 0; iz < g.z.count; ++iz)
        for (int it = 0; it < g.theta.count; ++it) {
          InnerAction a{ix, iz, it, true};
          PhysicalAction p = decode_action(g, a);
          InnerAction back = encode_action(g, p);
          CHECK(back.ix == ix);
          CHECK(back.iz == iz);
          CHECK(back.itheta == it);
        }
  }
}

TEST_CASE("coarse spacing is 2.5x fine spacing per dimension") {
  ActionGrid f = fine_grid(), c = coarse_grid();
  CHECK(c.z.spacing() / f.z.spacing() == doctest::Approx(2.5));
  CHECK(c.theta.spacing() / f.theta.spacing() == doctest::Approx(2.5));
  // x follows the stated 18.7 endpoint, within 0.3% of exact 2.5x.
  CHECK(c.x.spacing() / f.x.spacing() == doctest::Approx(2.5).epsilon(0.005));
}

TEST_CASE("snap_continuous endpoints, clamping, and formula") {
  CHECK(snap_continuous(-1.0, 7) == 0);
  CHECK(snap_continuous(1.0, 7) == 6);
  CHECK(snap_continuous(0.1, 7) == 3);
  CHECK(snap_continuous(-5.0, 7) == 0);
  CHECK(snap_continuous(5.0, 7) == 6);
}

TEST_CASE("snap_continuous is monotone and surjective") {
  for (int count : {2, 4, 7, 16}) {
    int prev = 0;
    bool seen[16] = {};
    for (int i = 0; i <= 1000; ++i) {
      double u = -1.0 + 2.0 * i / 1000.0;
      int idx = snap_continuous(u, count);
      CHECK(idx >= prev);
      CHECK(idx < count);
      seen[idx] = true;
      prev = idx;
    }
    for (int k = 0; k < count; ++k) CHECK(seen[k]);
  }
}

TEST_CASE("aux encoding") {
  auto outer = encode_aux(Stage::Outer, std::nullopt);
  CHECK(outer[0] == 0.0f);
  CHECK(outer[1] == 0.0f);
  auto fine = encode_aux(Stage::Inner, OuterAction{Granularity::Fine});
  CHECK(fine[0] == 1.0f);
  CHECK(fine[1] == 1.0f);
  auto coarse = encode_aux(Stage::Inner, OuterAction{Granularity::Coarse});
  CHECK(coarse[0] == -1.0f);
  CHECK(coarse[1] == 1.0f);
  CHECK_THROWS_AS(encode_aux(Stage::Inner, std::nullopt), ContractError);
}
