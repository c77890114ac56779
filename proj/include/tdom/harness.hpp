#pragma once

#include <array>
#include <string>
#include <vector>

#include "tdom/agent.hpp"
#include "tdom/config.hpp"
#include "tdom/simenv.hpp"
#include "tdom/slipnet.hpp"

namespace tdom::harness {

inline constexpr const char* kMetricsHeader =
    "episode,env,selection,x_mm,z_mm,theta_deg,reward,rate100,"
    "outer_critic,outer_actor,inner_critic,inner_actor";

struct EpisodeRow {
  int episode = 0;
  int env = 0;
  std::string selection;  // coarse | fine | single
  double x_mm = 0, z_mm = 0, theta_deg = 0;
  int reward = 0;
  double rate100 = 0;  // success rate over the trailing 100 episodes
  agent::LossReport loss;
};

struct MetricsLog {
  std::vector<EpisodeRow> rows;
  std::string csv() const;
};

struct TrainResult {
  MetricsLog log;
  double auc = 0;      // mean trailing success rate over the budget
  bool finite = true;  // no NaN/inf losses observed
};

// Sequential round-robin over one environment per configured scenario.
// Writes the metrics CSV incrementally when metrics_path is non-empty.
TrainResult train_run(const cfg::RunConfig& c, grad::ParamStore<float>& slip,
                      agent::Agent& agent,
                      const std::string& metrics_path = "");

struct EvalResult {
  int episodes = 0;
  int successes = 0;
  double rate = 0;
  double ci_lo = 0, ci_hi = 0;  // 95% Wilson interval
  double mean_policy_p = 0;     // analytic marginal of the executed actions
  double mean_oracle_p = 0;     // oracle_best marginal, same episodes
};

// Greedy policy rollout; with use_oracle the oracle action replaces the
// policy, which ties the Bernoulli estimate to the closed-form optimum.
EvalResult evaluate(const cfg::RunConfig& c, agent::Agent& agent,
                    grad::ParamStore<float>& slip, const std::string& scenario,
                    int episodes, uint64_t seed, bool use_oracle = false);

struct Heatmap {
  std::array<double, 36> cell{};  // [a][b], offsets (i + 0.5) cm
  double& at(int ia, int ib) { return cell[ia * 6 + ib]; }
  double at(int ia, int ib) const { return cell[ia * 6 + ib]; }
};

// Fixed action replayed over the 6x6 grid of slip offsets, `trials`
// Bernoulli grasps per cell with the height error resampled every trial.
Heatmap heatmap_experiment(const cfg::RunConfig& c, const std::string& scenario,
                           const PhysicalAction& act, int trials,
                           uint64_t seed);

// Whitespace-separated 6x6 matrix, one row per alpha offset.
std::string heatmap_text(const Heatmap& h);

struct ComplianceResult {
  std::vector<double> overshoot_mm;  // 0.5 mm sweep steps
  std::vector<double> force_n;
  double band_lo = 0, band_hi = 0;   // force range over d in [2k, 6k]
  double tolerated_mm = 0;           // largest lift keeping p >= 0.5 p0
};

ComplianceResult compliance_experiment(const cfg::RunConfig& c,
                                       const std::string& scenario);

struct SelectionStats {
  double coarse = 0, fine = 0;  // fractions, sum to 1
};

// Greedy outer selections tallied over fresh episodes. SL checkpoints have
// no outer loop and are rejected.
SelectionStats selection_stats(const cfg::RunConfig& c, agent::Agent& agent,
                               grad::ParamStore<float>& slip,
                               const std::string& scenario, int episodes,
                               uint64_t seed);

struct AblationRow {
  fusion::Mode mode;
  uint64_t seed = 0;
  double auc = 0;
  bool finite = true;
  double eval_rate = 0;  // pooled greedy rate over the scenario pair
};

// Same seeds and budget for every mode; per-run metrics CSVs land in
// out_dir (skipped when empty).
std::vector<AblationRow> ablation_suite(const cfg::RunConfig& base,
                                        const std::vector<fusion::Mode>& modes,
                                        const std::vector<uint64_t>& seeds,
                                        grad::ParamStore<float>& slip,
                                        const std::string& out_dir);

}  // namespace tdom::harness
