#include "tdom/slipnet.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tdom::slip {

using grad::Graph;
using grad::ParamStore;
using grad::require;
using grad::Rng;
using grad::Shape;
using grad::Var;

double bin_angle(int bin) {
  require(bin >= 0 && bin < kBins, "rotation bin out of range");
  return -90.0 + 15.0 * bin;
}

img::Xform bin_xform(int bin) {
  return img::rotate_pad_xform(kH, kW, bin_angle(bin), kH, kW);
}

img::Image rotate_mask(const img::Image& mask, int bin) {
  return img::warp_nn(mask, bin_xform(bin), kH, kW);
}

void add_slip_params(ParamStore<float>& ps, Rng& rng) {
  // first layer starts as an oriented edge-filter bank (8 directions at
  // 22.5 degree spacing) plus noise; affordance selection hinges on edge
  // orientation and random 3x3 filters are slow to discover it
  std::vector<float> w(8 * 9);
  for (int k = 0; k < 8; ++k) {
    double phi = k * M_PI / 8.0;
    double gx = std::cos(phi), gy = std::sin(phi);
    for (int yy = -1; yy <= 1; ++yy)
      for (int xx = -1; xx <= 1; ++xx)
        w[size_t(k) * 9 + size_t(yy + 1) * 3 + size_t(xx + 1)] =
            float(0.5 * (gx * xx + gy * yy) + rng.normal(0.0, 0.05));
  }
  ps.add("slip.c1.w", Shape{8, 1, 3, 3}, w);
  ps.add("slip.c1.b", Shape{8}, std::vector<float>(8, 0.0f));
  grad::add_conv(ps, rng, "slip.c2", 8, 16, 3);
  grad::add_conv(ps, rng, "slip.c3", 16, 8, 1);
  grad::add_conv(ps, rng, "slip.c4", 8, 1, 1);
}

namespace {

Var slip_logits(Graph<float>& g, ParamStore<float>& ps, Var x) {
  Var h = g.relu(grad::conv(g, ps, "slip.c1", x, 2, 1));
  h = g.relu(grad::conv(g, ps, "slip.c2", h, 2, 1));
  h = grad::conv(g, ps, "slip.c3", h, 1, 0);
  h = g.bilinear_upsample2x(h);
  h = grad::conv(g, ps, "slip.c4", h, 1, 0);
  return g.bilinear_upsample2x(h);
}

std::vector<float> pack_images(const std::vector<img::Image>& ims) {
  std::vector<float> buf;
  buf.reserve(ims.size() * size_t(kH) * kW);
  for (const auto& im : ims) {
    require(im.h == kH && im.w == kW, "slip image must be 96x128");
    buf.insert(buf.end(), im.pix.begin(), im.pix.end());
  }
  return buf;
}

}  // namespace

AffordanceStack forward(ParamStore<float>& ps,
                        const std::vector<img::Image>& rotated) {
  require(rotated.size() == kBins, "forward expects 12 rotated masks");
  Graph<float> g;
  Var x = g.constant(Shape{kBins, 1, kH, kW}, pack_images(rotated));
  Var p = g.logistic(slip_logits(g, ps, x));
  AffordanceStack out;
  const auto& v = g.val(p);
  std::copy(v.begin(), v.end(), out.val.begin());
  return out;
}

Selection select(const AffordanceStack& stack) {
  Selection best;
  best.score = -1.0f;
  for (int b = 0; b < kBins; ++b)
    for (int y = 0; y < kH; ++y)
      for (int x = 0; x < kW; ++x)
        if (stack.at(b, y, x) > best.score) {
          best = {b, y, x, stack.at(b, y, x)};
        }
  return best;
}

void pixel_to_3d(int u, int v, const img::Image& depth,
                 const sim::Intrinsics& intr, double out[3]) {
  require(depth.inside(v, u), "pixel outside the depth image");
  double d = depth.at(v, u);
  if (!(d > 0.0)) throw RuntimeFailure("invalid depth at slip pixel");
  out[0] = (u - intr.cx) * d / intr.fx;
  out[1] = (v - intr.cy) * d / intr.fy;
  out[2] = d;
}

AffordanceStack make_label(const SlipSample& s, int radius) {
  require(s.bin >= 0 && s.bin < kBins, "sample bin out of range");
  AffordanceStack t;
  // the annotated bin and its neighbors are all labeled positive: a one-bin
  // error is tolerated downstream and a 15-degree rotation is below the
  // receptive field's angular resolution, so asking the net to separate
  // them only injects noise; the spread also centers the learned response
  // ridge on the annotated bin
  for (int b = 0; b < kBins; ++b) {
    int db = std::abs(b - s.bin);
    db = std::min(db, kBins - db);
    if (db > 1) continue;
    double ru, rv;
    bin_xform(b).apply(s.u, s.v, ru, rv);
    int cu = int(std::lround(ru)), cv = int(std::lround(rv));
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        if (dx * dx + dy * dy > radius * radius) continue;
        int y = cv + dy, x = cu + dx;
        if (y >= 0 && y < kH && x >= 0 && x < kW) t.at(b, y, x) = 1.0f;
      }
  }
  return t;
}

AffordanceStack make_loss_weights(const SlipSample& s,
                                  const cfg::SlipParams& p) {
  AffordanceStack w;
  std::fill(w.val.begin(), w.val.end(), 1.0f);
  // positives dominate nothing by count, so they are up-weighted; the
  // annotated location in distant rotation bins is the argmax's direct
  // competitor and gets its own weight so the bins order correctly
  int rn = p.label_radius + 4;
  for (int b = 0; b < kBins; ++b) {
    int db = std::abs(b - s.bin);
    db = std::min(db, kBins - db);
    double ru, rv;
    bin_xform(b).apply(s.u, s.v, ru, rv);
    int cu = int(std::lround(ru)), cv = int(std::lround(rv));
    int r = db <= 1 ? p.label_radius : rn;
    float val = db <= 1 ? float(p.pos_weight) : float(p.neg_weight);
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        if (dx * dx + dy * dy > r * r) continue;
        int y = cv + dy, x = cu + dx;
        if (y >= 0 && y < kH && x >= 0 && x < kW) w.at(b, y, x) = val;
      }
  }
  return w;
}

namespace {

bool annotation_ok(const SlipSample& s) {
  if (s.u < 2 || s.u >= kW - 2 || s.v < 2 || s.v >= kH - 2) return false;
  return s.mask.at(s.v, s.u) > 0.5f;
}

}  // namespace

SlipSample augment(const SlipSample& s, Rng& rng) {
  for (int attempt = 0; attempt < 20; ++attempt) {
    // rotations stay near the 15-degree bin grid: a 7 px receptive field
    // cannot resolve sub-bin orientation, so off-grid rotations would only
    // act as label noise between adjacent bins
    int k = rng.uniform_int(-6, 6);
    double rot = 15.0 * k + rng.uniform(-2.0, 2.0);
    double tx = rng.uniform(-0.2, 0.2) * kW;
    double ty = rng.uniform(-0.2, 0.2) * kH;
    double sc = rng.uniform(0.7, 1.3);
    double cx = (kW - 1) / 2.0, cy = (kH - 1) / 2.0;
    img::Xform scale = img::Xform::translation(cx, cy)
                           .after(img::Xform::scaling(sc, sc))
                           .after(img::Xform::translation(-cx, -cy));
    img::Xform t = img::Xform::translation(tx, ty)
                       .after(img::Xform::rotation_deg(rot, cx, cy))
                       .after(scale);
    long q = s.bin - k;
    // the shifted bin must stay inside the 180-degree fan the bins cover;
    // otherwise no bin represents the new orientation
    if (q < 0 || q >= kBins) continue;
    SlipSample out;
    out.cls = s.cls;
    out.bin = int(q);
    out.mask = img::warp_nn(s.mask, t, kH, kW);
    double u, v;
    t.apply(s.u, s.v, u, v);
    out.u = int(std::lround(u));
    out.v = int(std::lround(v));
    if (annotation_ok(out)) return out;
  }
  return s;
}

SlipSample make_sample(const std::string& cls, Rng& rng) {
  SlipSample s;
  s.cls = cls;
  s.bin = 6;  // canonical orientation
  s.mask = img::Image(kH, kW, 0.0f);
  double cx = (kW - 1) / 2.0 + rng.uniform(-8.0, 8.0);
  double cy = (kH - 1) / 2.0 + rng.uniform(-5.0, 5.0);
  if (cls == "book") {
    // rectangle with a slit cut diagonally into the top-right corner where
    // the top page is folded back; the slit marks the page-turn corner
    double hw = rng.uniform(28.0, 40.0), hh = rng.uniform(18.0, 28.0);
    double len = rng.uniform(11.0, 13.0);
    double mx = -1.0 / std::sqrt(2.0), my = 1.0 / std::sqrt(2.0);
    for (int y = 0; y < kH; ++y)
      for (int x = 0; x < kW; ++x) {
        double dx = x - cx, dy = y - cy;
        bool in = std::abs(dx) <= hw && std::abs(dy) <= hh;
        double bx = dx - hw, by = dy + hh;  // from the top-right corner
        double along = bx * mx + by * my, across = -bx * my + by * mx;
        if (in && along >= -1.0 && along <= len &&
            std::abs(across) <= 1.0 + 0.45 * (len - along))
          in = false;
        if (in) s.mask.at(y, x) = 1.0f;
      }
    s.u = int(std::lround(cx + hw + mx * (len + 1.0)));
    s.v = int(std::lround(cy - hh + my * (len + 1.0)));
  } else if (cls == "shirt") {
    // slanted neck cut from the top hem, collar tip annotated; the cut runs
    // along the same diagonal as the other classes so the local tip pattern
    // maps to the rotation bin the same way regardless of class (the net's
    // 7 px receptive field cannot see which class it is looking at)
    double hw = rng.uniform(20.0, 26.0), hh = rng.uniform(24.0, 30.0);
    double sl = rng.uniform(10.0, 14.0);  // sleeve length
    double len = rng.uniform(11.0, 13.0);
    double w0 = 6.0;  // cut enters right of the hem midpoint
    double mx = -1.0 / std::sqrt(2.0), my = 1.0 / std::sqrt(2.0);
    for (int y = 0; y < kH; ++y)
      for (int x = 0; x < kW; ++x) {
        double dx = x - cx, dy = y - cy;
        bool body = std::abs(dx) <= hw && std::abs(dy) <= hh;
        bool sleeve = std::abs(dx) > hw && std::abs(dx) <= hw + sl &&
                      dy >= -hh && dy <= -hh + 14.0;
        double bx = dx - w0, by = dy + hh;
        double along = bx * mx + by * my, across = -bx * my + by * mx;
        bool cut = along >= -1.0 && along <= len &&
                   std::abs(across) <= 1.0 + 0.45 * (len - along);
        if ((body || sleeve) && !cut) s.mask.at(y, x) = 1.0f;
      }
    s.u = int(std::lround(cx + w0 + mx * (len + 1.0)));
    s.v = int(std::lround(cy - hh + my * (len + 1.0)));
  } else if (cls == "pancake") {
    // ellipse with a slit at the rim point nearest the top-right diagonal,
    // where the wrapper seam is folded open
    double a = rng.uniform(30.0, 40.0);
    double b = a * rng.uniform(0.55, 0.75);
    double dxn = 1.0 / std::sqrt(2.0), dyn = -1.0 / std::sqrt(2.0);
    double norm = std::sqrt(a * a * dxn * dxn + b * b * dyn * dyn);
    double px = a * a * dxn / norm, py = b * b * dyn / norm;  // rim point
    double len = rng.uniform(11.0, 13.0);
    double mx = -dxn, my = -dyn;  // inward along the rim normal
    for (int y = 0; y < kH; ++y)
      for (int x = 0; x < kW; ++x) {
        double dx = x - cx, dy = y - cy;
        bool in = (dx / a) * (dx / a) + (dy / b) * (dy / b) <= 1.0;
        double bx = dx - px, by = dy - py;
        double along = bx * mx + by * my, across = -bx * my + by * mx;
        if (in && along >= -1.0 && along <= len &&
            std::abs(across) <= 1.0 + 0.45 * (len - along))
          in = false;
        if (in) s.mask.at(y, x) = 1.0f;
      }
    s.u = int(std::lround(cx + px + mx * (len + 1.0)));
    s.v = int(std::lround(cy + py + my * (len + 1.0)));
  } else {
    throw ContractError("unknown slip sample class: " + cls);
  }
  require(annotation_ok(s), "generated annotation left the mask");
  return s;
}

std::vector<SlipSample> make_dataset(const cfg::SlipParams& p, Rng& rng) {
  static const char* classes[3] = {"book", "shirt", "pancake"};
  std::vector<SlipSample> out;
  out.reserve(p.dataset_size);
  for (int i = 0; i < p.dataset_size; ++i)
    out.push_back(augment(make_sample(classes[i % 3], rng), rng));
  return out;
}

void write_dataset(const std::string& dir,
                   const std::vector<SlipSample>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream labels(dir + "/labels.txt");
  if (!labels) throw RuntimeFailure("cannot write labels under " + dir);
  for (size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu.pgm", i);
    img::write_pgm(dir + "/" + name, samples[i].mask);
    labels << name << " " << samples[i].u << " " << samples[i].v << " "
           << samples[i].bin << " " << samples[i].cls << "\n";
  }
  if (!labels) throw RuntimeFailure("short label write under " + dir);
}

std::vector<SlipSample> read_dataset(const std::string& dir) {
  std::ifstream labels(dir + "/labels.txt");
  if (!labels) throw RuntimeFailure("cannot read labels under " + dir);
  std::vector<SlipSample> out;
  std::string line;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name;
    SlipSample s;
    if (!(ss >> name >> s.u >> s.v >> s.bin >> s.cls))
      throw RuntimeFailure("malformed label line: " + line);
    s.mask = img::read_pgm(dir + "/" + name);
    out.push_back(std::move(s));
  }
  return out;
}

ParamStore<float> train_slip(const std::vector<SlipSample>& dataset,
                             const cfg::SlipParams& p, uint64_t seed,
                             SlipTrainLog* log) {
  require(!dataset.empty(), "slip training needs a non-empty dataset");
  Rng rng(seed);
  ParamStore<float> ps;
  add_slip_params(ps, rng);
  grad::Adam<float> opt(p.lr);
  const long per = long(kBins) * kH * kW;
  for (int step = 0; step < p.steps; ++step) {
    int bsz = std::min<int>(p.batch_size, int(dataset.size()));
    std::vector<img::Image> inputs;
    std::vector<float> targets, weights;
    inputs.reserve(size_t(bsz) * kBins);
    targets.reserve(size_t(bsz) * per);
    weights.reserve(size_t(bsz) * per);
    for (int b = 0; b < bsz; ++b) {
      const auto& s = dataset[size_t(
          rng.uniform_int(0, int(dataset.size()) - 1))];
      for (int bin = 0; bin < kBins; ++bin)
        inputs.push_back(rotate_mask(s.mask, bin));
      auto label = make_label(s, p.label_radius);
      targets.insert(targets.end(), label.val.begin(), label.val.end());
      auto wmap = make_loss_weights(s, p);
      weights.insert(weights.end(), wmap.val.begin(), wmap.val.end());
    }
    Graph<float> g;
    int n = bsz * kBins;
    Var x = g.constant(Shape{n, 1, kH, kW}, pack_images(inputs));
    Var t = g.constant(Shape{n, 1, kH, kW}, targets);
    Var z = slip_logits(g, ps, x);
    Var wm = g.constant(Shape{n, 1, kH, kW}, weights);
    // per-pixel weighted cross-entropy from logits:
    //   w (t softplus(-z) + (1 - t) softplus(z)) = w (softplus(z) - t z)
    Var loss =
        g.mean(g.mul(wm, g.sub(g.softplus(z), g.mul(t, z))));
    ps.zero_grad();
    g.backward(loss);
    g.collect_param_grads(ps);
    opt.step(ps);
    // report the plain mean BCE of this batch
    const auto& zv = g.val(z);
    double bce = 0.0;
    for (size_t i = 0; i < zv.size(); ++i) {
      double zz = zv[i];
      double spd = zz > 30 ? zz : std::log1p(std::exp(zz));
      bce += spd - double(targets[i]) * zz;
    }
    bce /= double(zv.size());
    if (!std::isfinite(bce) || !std::isfinite(g.val(loss)[0]))
      throw RuntimeFailure("slip training diverged at step " +
                           std::to_string(step));
    if (log) log->loss.push_back(float(bce));
  }
  return ps;
}

SlipCommand plan_slip(ParamStore<float>& ps, const img::Image& mask,
                      const img::Image& depth, const sim::Intrinsics& intr,
                      double standoff_mm) {
  std::vector<img::Image> rotated;
  rotated.reserve(kBins);
  for (int b = 0; b < kBins; ++b) rotated.push_back(rotate_mask(mask, b));
  Selection sel = select(forward(ps, rotated));
  double u, v;
  bin_xform(sel.bin).inverse().apply(sel.u, sel.v, u, v);
  SlipCommand cmd;
  cmd.u = std::clamp(int(std::lround(u)), 0, kW - 1);
  cmd.v = std::clamp(int(std::lround(v)), 0, kH - 1);
  cmd.bin = sel.bin;
  cmd.direction_deg = bin_angle(sel.bin);
  cmd.standoff_mm = standoff_mm;
  pixel_to_3d(cmd.u, cmd.v, depth, intr, cmd.point3d);
  return cmd;
}

EvalStats evaluate(ParamStore<float>& ps,
                   const std::vector<SlipSample>& holdout) {
  require(!holdout.empty(), "evaluation needs samples");
  EvalStats st;
  for (const auto& s : holdout) {
    std::vector<img::Image> rotated;
    for (int b = 0; b < kBins; ++b) rotated.push_back(rotate_mask(s.mask, b));
    Selection sel = select(forward(ps, rotated));
    double u, v;
    bin_xform(sel.bin).inverse().apply(sel.u, sel.v, u, v);
    double err = std::hypot(u - s.u, v - s.v);
    int db = std::abs(sel.bin - s.bin);
    db = std::min(db, kBins - db);
    if (err <= 5.0) st.pixel_ok += 1;
    if (db <= 1) st.bin_ok += 1;
  }
  st.pixel_ok /= double(holdout.size());
  st.bin_ok /= double(holdout.size());
  return st;
}

}  // namespace tdom::slip
