#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "tdom/slipnet.hpp"

using namespace tdom;
using namespace tdom::slip;

namespace {

img::Image rect_mask(double cx, double cy, double hw, double hh) {
  img::Image m(kH, kW, 0.0f);
  for (int y = 0; y < kH; ++y)
    for (int x = 0; x < kW; ++x)
      if (std::abs(x - cx) <= hw && std::abs(y - cy) <= hh) m.at(y, x) = 1.0f;
  return m;
}

// true if a 5x5 neighborhood in `ref` contains value `v`
bool near_value(const img::Image& ref, int y, int x, float v) {
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx) {
      int yy = y + dy, xx = x + dx;
      if (ref.inside(yy, xx) && ref.at(yy, xx) == v) return true;
    }
  return false;
}

}  // namespace

TEST_CASE("bin to angle mapping") {
  CHECK(bin_angle(0) == -90.0);
  CHECK(bin_angle(6) == 0.0);
  CHECK(bin_angle(11) == 75.0);
  CHECK_THROWS_AS((void)bin_angle(12), ContractError);
}

TEST_CASE("bin 6 applies no rotation, only the pad-and-resize") {
  auto m = rect_mask(64, 48, 30, 20);
  auto r = rotate_mask(m, 6);
  // centroid maps through the transform, area scales with its determinant
  auto centroid = [](const img::Image& im, double& cx, double& cy) {
    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < im.h; ++y)
      for (int x = 0; x < im.w; ++x)
        if (im.at(y, x) > 0.5f) {
          sx += x;
          sy += y;
          n += 1;
        }
    cx = sx / n;
    cy = sy / n;
    return n;
  };
  double cx0, cy0, cx1, cy1;
  double a0 = centroid(m, cx0, cy0);
  double a1 = centroid(r, cx1, cy1);
  auto t = bin_xform(6);
  double ex, ey;
  t.apply(cx0, cy0, ex, ey);
  CHECK(cx1 == doctest::Approx(ex).epsilon(0.02));
  CHECK(cy1 == doctest::Approx(ey).epsilon(0.02));
  double det = t.m[0] * t.m[4] - t.m[1] * t.m[3];
  CHECK(a1 / a0 == doctest::Approx(det).epsilon(0.05));
}

TEST_CASE("rotation round-trips within the resampling tolerance") {
  auto m = rect_mask(60, 50, 34, 22);
  for (int b : {0, 2, 6, 9, 11}) {
    auto t = bin_xform(b);
    auto fwd = img::warp_nn(m, t, kH, kW);
    auto back = img::warp_nn(fwd, t.inverse(), kH, kW);
    int bad = 0;
    for (int y = 0; y < kH; ++y)
      for (int x = 0; x < kW; ++x)
        if (back.at(y, x) != m.at(y, x) &&
            !near_value(m, y, x, back.at(y, x) > 0.5f ? 0.0f : 1.0f))
          ++bad;  // disagreement away from any boundary
    CHECK(bad == 0);
  }
}

TEST_CASE("forward: logistic range, constant map on empty input") {
  grad::Rng rng(3);
  grad::ParamStore<float> ps;
  add_slip_params(ps, rng);
  std::vector<img::Image> rotated;
  auto m = rect_mask(64, 48, 30, 20);
  for (int b = 0; b < kBins; ++b) rotated.push_back(rotate_mask(m, b));
  auto stack = forward(ps, rotated);
  for (float v : stack.val) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  std::vector<img::Image> zeros(kBins, img::Image(kH, kW, 0.0f));
  auto zstack = forward(ps, zeros);  // fresh params have zero biases
  for (float v : zstack.val) CHECK(v == 0.5f);
  rotated.pop_back();
  CHECK_THROWS_AS((void)forward(ps, rotated), ContractError);
}

TEST_CASE("select: argmax and lexicographic ties") {
  AffordanceStack s;
  auto sel = select(s);  // uniform stack
  CHECK(sel.bin == 0);
  CHECK(sel.v == 0);
  CHECK(sel.u == 0);
  s.at(9, 40, 70) = 0.9f;
  s.at(2, 50, 10) = 0.9f;
  sel = select(s);
  CHECK(sel.bin == 2);
  CHECK(sel.v == 50);
  CHECK(sel.u == 10);
  s.at(5, 7, 8) = 0.95f;
  sel = select(s);
  CHECK(sel.bin == 5);
}

TEST_CASE("pinhole back-projection") {
  sim::Intrinsics intr;
  img::Image depth(kH, kW, 0.5f);
  double p[3];
  pixel_to_3d(intr.cx, intr.cy, depth, intr, p);
  CHECK(p[0] == doctest::Approx(0.0));
  CHECK(p[1] == doctest::Approx(0.0));
  CHECK(p[2] == doctest::Approx(0.5));
  pixel_to_3d(intr.cx + 50, intr.cy, depth, intr, p);
  CHECK(p[0] == doctest::Approx(50 * 0.5 / intr.fx));
  depth.at(10, 10) = 0.0f;
  CHECK_THROWS_AS(pixel_to_3d(10, 10, depth, intr, p), RuntimeFailure);
}

TEST_CASE("labels: 29-pixel disks in the annotated bin and its neighbors") {
  SlipSample s;
  s.mask = rect_mask(64, 48, 30, 20);
  s.u = 64;
  s.v = 48;
  s.bin = 6;
  s.cls = "book";
  auto t = make_label(s, 3);
  int pos = 0;
  for (int b = 0; b < kBins; ++b) {
    int in_bin = 0;
    for (int y = 0; y < kH; ++y)
      for (int x = 0; x < kW; ++x) in_bin += t.at(b, y, x) > 0.5f;
    if (b >= 5 && b <= 7) {
      CHECK(in_bin == 29);  // interior annotation, no clipping
      pos += in_bin;
    } else {
      CHECK(in_bin == 0);
    }
  }
  CHECK(pos == 3 * 29);
  // clipped at the border: pick an annotation whose bin-frame image sits
  // right on the left edge
  SlipSample e = s;
  e.bin = 6;
  double bu, bv;
  bin_xform(6).inverse().apply(0.0, 48.0, bu, bv);
  e.u = int(std::lround(bu));
  e.v = int(std::lround(bv));
  auto te = make_label(e, 3);
  int cpos = 0;
  for (float v : te.val) cpos += v > 0.5f;
  CHECK(cpos > 0);
  CHECK(cpos < 3 * 29);
}

TEST_CASE("samples: classes, annotation on mask, aligned bin geometry") {
  grad::Rng rng(11);
  for (const char* cls : {"book", "shirt", "pancake"}) {
    for (int i = 0; i < 20; ++i) {
      auto s = make_sample(cls, rng);
      CHECK(s.bin == 6);
      CHECK(s.mask.at(s.v, s.u) > 0.5f);
      auto a = augment(s, rng);
      CHECK(a.bin >= 0);
      CHECK(a.bin < kBins);
      CHECK(a.mask.at(a.v, a.u) > 0.5f);
      // mapping into the annotated bin frame lands on the rotated mask
      auto rot = rotate_mask(a.mask, a.bin);
      double u, v;
      bin_xform(a.bin).apply(a.u, a.v, u, v);
      CHECK(near_value(rot, int(std::lround(v)), int(std::lround(u)), 1.0f));
    }
  }
  CHECK_THROWS_AS((void)make_sample("sock", rng), ContractError);
}

TEST_CASE("book annotation aligns to the top-right in its bin frame") {
  grad::Rng rng(13);
  for (int i = 0; i < 25; ++i) {
    auto a = augment(make_sample("book", rng), rng);
    auto rot = rotate_mask(a.mask, a.bin);
    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < kH; ++y)
      for (int x = 0; x < kW; ++x)
        if (rot.at(y, x) > 0.5f) {
          sx += x;
          sy += y;
          n += 1;
        }
    double u, v;
    bin_xform(a.bin).apply(a.u, a.v, u, v);
    // right of and above the rotated silhouette's centroid
    CHECK(u > sx / n);
    CHECK(v < sy / n);
  }
}

TEST_CASE("dataset: generation and file round-trip") {
  cfg::SlipParams p;
  p.dataset_size = 30;
  grad::Rng rng(17);
  auto ds = make_dataset(p, rng);
  CHECK(ds.size() == 30);
  CHECK(ds[0].cls == "book");
  CHECK(ds[1].cls == "shirt");
  CHECK(ds[2].cls == "pancake");
  auto dir = std::filesystem::temp_directory_path() / "tdom_slipds";
  std::filesystem::remove_all(dir);
  write_dataset(dir.string(), ds);
  auto back = read_dataset(dir.string());
  REQUIRE(back.size() == ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].u == ds[i].u);
    CHECK(back[i].v == ds[i].v);
    CHECK(back[i].bin == ds[i].bin);
    CHECK(back[i].cls == ds[i].cls);
    CHECK(back[i].mask.pix == ds[i].mask.pix);
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS((void)read_dataset("/nonexistent/tdom"), RuntimeFailure);
}

TEST_CASE("training: memorizes one sample, loss trends down") {
  grad::Rng rng(19);
  std::vector<SlipSample> one{make_sample("book", rng)};
  cfg::SlipParams p;
  p.steps = 250;
  p.batch_size = 1;
  SlipTrainLog log;
  auto ps = train_slip(one, p, 23, &log);
  REQUIRE(log.loss.size() == 250);
  CHECK(log.loss.front() > log.loss.back());
  CHECK(log.loss.back() < 0.01f);
  // the memorized sample is recovered
  std::vector<SlipSample> holdout{one[0]};
  auto st = evaluate(ps, holdout);
  CHECK(st.pixel_ok == 1.0);
  CHECK(st.bin_ok == 1.0);
  CHECK_THROWS_AS((void)train_slip({}, p, 1, nullptr), ContractError);
}

TEST_CASE("training: small-corpus smoke run stays finite and improves") {
  cfg::SlipParams p;
  p.dataset_size = 60;
  p.steps = 120;
  p.batch_size = 2;
  grad::Rng rng(29);
  auto ds = make_dataset(p, rng);
  SlipTrainLog log;
  auto ps = train_slip(ds, p, 31, &log);
  for (float l : log.loss) CHECK(std::isfinite(l));
  double head = 0, tail = 0;
  for (int i = 0; i < 20; ++i) {
    head += log.loss[i];
    tail += log.loss[log.loss.size() - 1 - i];
  }
  CHECK(tail < head);
}
