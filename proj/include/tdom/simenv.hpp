#pragma once

#include <string>

#include "tdom/config.hpp"
#include "tdom/core.hpp"
#include "tdom/image.hpp"
#include "tdom/nn.hpp"

namespace tdom::sim {

struct Intrinsics {
  double fx = 100.0, fy = 100.0;
  int cx = 64, cy = 48;
};

inline constexpr int kImageH = 96;
inline constexpr int kImageW = 128;

struct Render {
  img::Image mask;   // binary silhouette
  img::Image depth;  // meters
  Intrinsics intr;
};

// Rotated-rectangle silhouette, pixel units, angle in degrees.
struct ObjectPose {
  double cx = 63.5, cy = 47.5;
  double angle = 0.0;
  double half_w = 40.0, half_h = 28.0;
};

// Minimal slip execution request: image pixel plus slip direction.
struct SlipExec {
  int u = 0, v = 0;
  double direction_deg = 0.0;
};

struct StackState {
  std::string scenario;
  int total_layers = 0;
  int remaining = 0;
  double tilt = 0.0;      // degrees
  double eps = 0.0;       // latent height error, mm
  double a_off = 0.0;     // gripper offset after the slip, cm
  double b_off = 0.0;
  ObjectPose pose;
  grad::Rng rng{0};
};

const cfg::MaterialProfile& top_material(const cfg::RunConfig& c,
                                         const StackState& s);

// Full stack restored, per-episode latents resampled; deterministic per seed.
StackState reset(const cfg::RunConfig& c, const std::string& scenario,
                 uint64_t seed);

// Resamples the per-episode latents (height error, object pose) without
// touching the remaining count.
void next_episode(const cfg::RunConfig& c, StackState& s);

// Restores the full layer count after the stack is exhausted.
void recycle(const cfg::RunConfig& c, StackState& s);

bool inside_object(const StackState& s, double u, double v);

Render render_topdown(const cfg::RunConfig& c, StackState& s);

double contact_force(const cfg::SimParams& p, double d_mm);

// Closed-form single-layer grasp probability at an explicit height error.
double success_probability_eps(const cfg::RunConfig& c, const StackState& s,
                               const PhysicalAction& act, double a_off_cm,
                               double b_off_cm, double eps_mm);

// Same, at the state's current latent height error.
double success_probability(const cfg::RunConfig& c, const StackState& s,
                           const PhysicalAction& act, double a_off_cm,
                           double b_off_cm);

Observation execute_slip(const cfg::RunConfig& c, StackState& s,
                         const SlipExec& cmd);

struct StepResult {
  int reward = 0;
  bool done = true;
};

StepResult step(const cfg::RunConfig& c, StackState& s, OuterAction outer,
                const InnerAction& inner);

// One Bernoulli grasp trial for an explicit physical action; used by the
// single-loop ablation whose grid has no granularity tag.
StepResult step_physical(const cfg::RunConfig& c, StackState& s,
                         const PhysicalAction& act);

struct OracleResult {
  OuterAction outer;
  InnerAction inner;
  double p = 0.0;  // height-error-marginalized success probability
};

// Exhaustive search over both grids at the nominal slip offsets, height
// error marginalized by 64-node quadrature over its normal distribution.
OracleResult oracle_best(const cfg::RunConfig& c, const StackState& s);

// Marginal success probability of one action (same quadrature).
double marginal_p(const cfg::RunConfig& c, const StackState& s,
                  const PhysicalAction& act, double a_off_cm, double b_off_cm);

// Monte-Carlo estimate of the same marginal, for cross-checking.
double marginal_p_mc(const cfg::RunConfig& c, const StackState& s,
                     const PhysicalAction& act, double a_off_cm,
                     double b_off_cm, int samples, uint64_t seed);

}  // namespace tdom::sim
