#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tdom/fusion.hpp"

namespace tdom::cfg {

// Latent material constants behind the success model and sensor synthesis.
// Lengths in mm unless noted; (u*, s_u, s_v, slip_offset) in cm; forces in
// newtons; angles in degrees.
struct MaterialProfile {
  std::string name;
  double thickness = 0.1;
  double adhesion_base = 0.05;   // a_m
  double friction = 0.5;         // mu_m
  double roughness = 3.0;        // f_m, cycles per tactile field
  double softness = 0.5;         // [0,1]
  double depth_noise = 1.0;      // sigma_m
  double u_star = 1.0;           // diagonal-distance optimum
  double s_u = 1.0;
  double s_v = 1.0;
  double f_lo = 0.4;             // force window
  double f_hi = 1.2;
  double theta_star = 1.5;       // rotation optimum
  double s_theta = 1.0;
  double tactile_amp = 1.0;      // A_m, field units per unit force ratio
  double slip_offset = 0.5;      // nominal alpha/beta offset after a slip
};

struct Scenario {
  std::string name;
  std::vector<std::string> layer_cycle;  // repeated top-down over the stack
  int layers = 20;
  double tilt = 0.0;  // degrees
};

// Global simulator constants shared by every material.
struct SimParams {
  double f_sat = 2.0;        // contact force saturation, N
  double kappa = 3.0;        // contact force length scale, mm
  double force_w = 0.1;      // logistic window softness, N
  double c_tilt = 0.15;      // tilt contribution to multi-pick
  double c_force = 0.3;      // overshoot contribution to multi-pick
  double b_layer = 0.01;     // normal-force bias per remaining layer, N
  double noise_force = 0.02;   // N
  double noise_moment = 0.002; // N*m
  double thumb_atten = 0.6;
  double standoff = 3.0;     // mm
  double cam_depth = 0.5;    // camera height over the desk, m
  double r_torque = 0.02;    // lever arm for the synthesized beta moment, m
};

struct SacParams {
  double lr = 0.003;
  int gradient_steps = 3;
  int buffer_size = 10000;
  int learning_starts = 10;  // episodes
  double gamma = 0.99;
  int batch_size = 64;
  int n_envs = 2;
  double alpha = 0.2;
};

struct SlipParams {
  double lr = 0.001;
  int steps = 2000;          // optimizer steps
  int batch_size = 8;
  int dataset_size = 600;
  int holdout = 60;
  int label_radius = 3;      // px
  double pos_weight = 100.0; // positive-pixel weight in the training loss
  double neg_weight = 100.0;  // weight on the annotation site in wrong bins
};

struct RunConfig {
  std::vector<std::string> scenarios{"printer_book", "winter_fabric"};
  uint64_t seed = 1;
  int episodes = 3000;
  int eval_episodes = 200;
  fusion::Mode mode = fusion::Mode::Ours;
  bool critic_encoder_only = true;
  bool symmetric_cross = false;
  bool deterministic = false;
  std::string out_root = "runs";
  SacParams sac;
  SlipParams slip;
  SimParams sim;
  std::map<std::string, MaterialProfile> materials;
  std::map<std::string, Scenario> scenario_table;

  const MaterialProfile& material(const std::string& name) const;
  const Scenario& scenario(const std::string& name) const;
};

RunConfig default_config();

// Reads a JSON document and overlays it on the defaults. An empty path
// yields the defaults. Unknown keys and out-of-range values are errors.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text, const std::string& origin);

// Canonical serialization of the fully resolved config.
std::string dump_config(const RunConfig& c);

// FNV-1a over the canonical dump; names run directories and ties
// checkpoints to the config that produced them.
std::string config_hash(const RunConfig& c);

}  // namespace tdom::cfg
