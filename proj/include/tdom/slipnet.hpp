#pragma once

#include <string>
#include <vector>

#include "tdom/config.hpp"
#include "tdom/image.hpp"
#include "tdom/nn.hpp"
#include "tdom/simenv.hpp"

namespace tdom::slip {

inline constexpr int kBins = 12;
inline constexpr int kH = 96;
inline constexpr int kW = 128;

// Bin b encodes an image rotation of -90 + 15 b degrees.
double bin_angle(int bin);

struct AffordanceStack {
  std::vector<float> val;  // [kBins][kH][kW]
  AffordanceStack() : val(size_t(kBins) * kH * kW, 0.0f) {}
  float& at(int b, int y, int x) {
    return val[(size_t(b) * kH + y) * kW + x];
  }
  float at(int b, int y, int x) const {
    return val[(size_t(b) * kH + y) * kW + x];
  }
};

struct SlipCommand {
  int u = 0, v = 0;          // pixel in the original image
  int bin = 0;
  double direction_deg = 0;  // always -90 + 15 bin
  double point3d[3] = {0, 0, 0};  // meters, camera frame
  double standoff_mm = 3.0;
};

struct SlipSample {
  img::Image mask;           // kH x kW binary
  int u = 0, v = 0;          // annotated pixel, original frame
  int bin = 0;
  std::string cls;           // book | shirt | pancake
};

// Pixel map from the original image into rotated bin space.
img::Xform bin_xform(int bin);
img::Image rotate_mask(const img::Image& mask, int bin);

void add_slip_params(grad::ParamStore<float>& ps, grad::Rng& rng);

// Probability maps for the 12 pre-rotated masks.
AffordanceStack forward(grad::ParamStore<float>& ps,
                        const std::vector<img::Image>& rotated);

// Global argmax; ties broken lexicographically by (bin, v, u).
struct Selection {
  int bin = 0, v = 0, u = 0;
  float score = 0;
};
Selection select(const AffordanceStack& stack);

void pixel_to_3d(int u, int v, const img::Image& depth,
                 const sim::Intrinsics& intr, double out[3]);

// Target stack: a disk of radius r around the annotated pixel, drawn in
// the annotated bin's rotated frame; zero elsewhere.
AffordanceStack make_label(const SlipSample& s, int radius);

// Per-pixel loss weights: pos_weight on the positive disk, neg_weight on
// the annotated location's image in every other bin, 1 elsewhere.
AffordanceStack make_loss_weights(const SlipSample& s,
                                  const cfg::SlipParams& p);

SlipSample augment(const SlipSample& s, grad::Rng& rng);

// Procedural samples with class-specific annotation rules.
SlipSample make_sample(const std::string& cls, grad::Rng& rng);
std::vector<SlipSample> make_dataset(const cfg::SlipParams& p,
                                     grad::Rng& rng);

void write_dataset(const std::string& dir,
                   const std::vector<SlipSample>& samples);
std::vector<SlipSample> read_dataset(const std::string& dir);

struct SlipTrainLog {
  std::vector<float> loss;  // unweighted mean BCE per step
};

grad::ParamStore<float> train_slip(const std::vector<SlipSample>& dataset,
                                   const cfg::SlipParams& p, uint64_t seed,
                                   SlipTrainLog* log = nullptr);

// End-to-end: rotate, score, select, map back, back-project.
SlipCommand plan_slip(grad::ParamStore<float>& ps, const img::Image& mask,
                      const img::Image& depth, const sim::Intrinsics& intr,
                      double standoff_mm);

struct EvalStats {
  double pixel_ok = 0;  // fraction with original-frame error <= 5 px
  double bin_ok = 0;    // fraction with circular bin error <= 1
};
EvalStats evaluate(grad::ParamStore<float>& ps,
                   const std::vector<SlipSample>& holdout);

}  // namespace tdom::slip
