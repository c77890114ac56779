#include "tdom/harness.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>

#include "tdom/error.hpp"

namespace tdom::harness {

using agent::Agent;
using agent::Transition;
using grad::Rng;
using grad::require;

namespace {

std::string fmt(double v, const char* f = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string row_csv(const EpisodeRow& r) {
  std::string s = std::to_string(r.episode) + "," + std::to_string(r.env) +
                  "," + r.selection + "," + fmt(r.x_mm) + "," + fmt(r.z_mm) +
                  "," + fmt(r.theta_deg) + "," + std::to_string(r.reward) +
                  "," + fmt(r.rate100, "%.4f");
  for (double v : {r.loss.outer_critic, r.loss.outer_actor,
                   r.loss.inner_critic, r.loss.inner_actor})
    s += "," + fmt(v);
  return s;
}

std::array<float, 4> to_f4(const std::array<double, 4>& u) {
  return {float(u[0]), float(u[1]), float(u[2]), float(u[3])};
}

// Advances the environment to the next episode, restocking first if the
// previous grasp consumed the last layer.
void advance(const cfg::RunConfig& c, sim::StackState& s) {
  if (s.remaining == 0)
    sim::recycle(c, s);
  else
    sim::next_episode(c, s);
}

struct Decision {
  std::string selection;
  PhysicalAction act;
  InnerAction inner;
  OuterAction outer;
  Transition t;  // reward left unset
};

// Shared policy rollout for one episode: slip, outer stage, inner stage.
Decision decide(const cfg::RunConfig& c, sim::StackState& s,
                grad::ParamStore<float>& slip, Agent& agent, Rng& rng,
                bool deterministic) {
  auto r = sim::render_topdown(c, s);
  auto cmd = slip::plan_slip(slip, r.mask, r.depth, r.intr, c.sim.standoff);
  Observation obs =
      sim::execute_slip(c, s, {cmd.u, cmd.v, cmd.direction_deg});
  Decision d;
  d.t.obs = obs;
  if (agent.mode() == fusion::Mode::SL) {
    const ActionGrid& grid = single_loop_grid();
    auto ir = agent.act_inner(obs, grid, rng, deterministic);
    d.inner = Agent::inner_from_raw(ir.u, grid);
    d.act = decode_action(grid, d.inner);
    d.t.inner_aux = obs.aux;
    d.t.u_in = to_f4(ir.u);
    d.selection = "single";
  } else {
    auto orr = agent.act_outer(obs, rng, deterministic);
    d.outer = Agent::outer_from_raw(orr.u[0]);
    const ActionGrid& grid = grid_for(d.outer.selection);
    Observation iobs = obs;
    iobs.aux = encode_aux(Stage::Inner, d.outer);
    auto ir = agent.act_inner(iobs, grid, rng, deterministic);
    d.inner = Agent::inner_from_raw(ir.u, grid);
    d.act = decode_action(grid, d.inner);
    d.t.inner_aux = iobs.aux;
    d.t.u_out = float(orr.u[0]);
    d.t.u_in = to_f4(ir.u);
    d.selection =
        d.outer.selection == Granularity::Fine ? "fine" : "coarse";
  }
  return d;
}

bool losses_finite(const agent::LossReport& l) {
  if (!l.updated) return true;
  for (double v : {l.outer_critic, l.outer_actor, l.inner_critic,
                   l.inner_actor})
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

std::string MetricsLog::csv() const {
  std::string s = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) s += row_csv(r) + "\n";
  return s;
}

TrainResult train_run(const cfg::RunConfig& c, grad::ParamStore<float>& slip,
                      Agent& agent, const std::string& metrics_path) {
  if (slip.find("slip.c1.w") < 0)
    throw RuntimeFailure("slip parameters missing; train the slip model first");
  require(!c.scenarios.empty(), "no scenarios configured");

  std::vector<sim::StackState> envs;
  for (size_t i = 0; i < c.scenarios.size(); ++i)
    envs.push_back(sim::reset(c, c.scenarios[i], c.seed + 7919 * i));

  agent::ReplayBuffer buf(c.sac.buffer_size);
  Rng act_rng(c.seed * 2654435761ull + 17);
  Rng upd_rng(c.seed * 2654435761ull + 29);

  std::ofstream out;
  std::string partial = metrics_path + ".partial";
  if (!metrics_path.empty()) {
    out.open(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write metrics: " + partial);
    out << kMetricsHeader << "\n" << std::flush;
  }

  TrainResult res;
  std::deque<int> window;
  int window_sum = 0;
  double auc_acc = 0;
  for (int e = 0; e < c.episodes; ++e) {
    int ei = e % int(envs.size());
    sim::StackState& s = envs[ei];
    Decision d = decide(c, s, slip, agent, act_rng, false);
    sim::StepResult sr =
        agent.mode() == fusion::Mode::SL
            ? sim::step_physical(c, s, d.act)
            : sim::step(c, s, d.outer, d.inner);
    d.t.reward = float(sr.reward);
    d.t.env_id = ei;
    d.t.episode = e;
    buf.push(d.t);

    EpisodeRow row;
    row.episode = e;
    row.env = ei;
    row.selection = d.selection;
    row.x_mm = d.act.x_mm;
    row.z_mm = d.act.z_mm;
    row.theta_deg = d.act.theta_deg;
    row.reward = sr.reward;
    row.loss = agent.update(buf, c.sac, upd_rng);
    if (!losses_finite(row.loss)) res.finite = false;

    window.push_back(sr.reward);
    window_sum += sr.reward;
    if (window.size() > 100) {
      window_sum -= window.front();
      window.pop_front();
    }
    row.rate100 = double(window_sum) / window.size();
    auc_acc += row.rate100;

    res.log.rows.push_back(row);
    if (out) out << row_csv(row) << "\n" << std::flush;
    advance(c, s);
  }
  res.auc = c.episodes > 0 ? auc_acc / c.episodes : 0.0;
  if (out) {
    out.close();
    std::filesystem::rename(partial, metrics_path);
  }
  return res;
}

namespace {

void wilson(int k, int n, double& lo, double& hi) {
  const double z = 1.959963984540054;
  double p = double(k) / n;
  double denom = 1.0 + z * z / n;
  double center = (p + z * z / (2.0 * n)) / denom;
  double half =
      z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
  lo = std::max(0.0, center - half);
  hi = std::min(1.0, center + half);
}

}  // namespace

EvalResult evaluate(const cfg::RunConfig& c, Agent& agent,
                    grad::ParamStore<float>& slip, const std::string& scenario,
                    int episodes, uint64_t seed, bool use_oracle) {
  require(episodes > 0, "evaluate needs a positive episode count");
  c.scenario(scenario);  // unknown scenario -> config error
  sim::StackState s = sim::reset(c, scenario, seed);
  Rng rng(seed * 2654435761ull + 101);
  // the marginalized optimum only depends on the top material and tilt
  std::map<std::string, sim::OracleResult> oracle_cache;

  EvalResult r;
  r.episodes = episodes;
  for (int e = 0; e < episodes; ++e) {
    const auto& mat = sim::top_material(c, s);
    auto oc = oracle_cache.find(mat.name);
    if (oc == oracle_cache.end())
      oc = oracle_cache.emplace(mat.name, sim::oracle_best(c, s)).first;
    r.mean_oracle_p += oc->second.p;

    PhysicalAction act;
    if (use_oracle) {
      act = decode_action(grid_for(oc->second.outer.selection),
                          oc->second.inner);
    } else {
      act = decide(c, s, slip, agent, rng, true).act;
    }
    r.mean_policy_p += sim::marginal_p(c, s, act, s.a_off, s.b_off);
    sim::StepResult sr = sim::step_physical(c, s, act);
    r.successes += sr.reward;
    advance(c, s);
  }
  r.rate = double(r.successes) / episodes;
  r.mean_policy_p /= episodes;
  r.mean_oracle_p /= episodes;
  wilson(r.successes, episodes, r.ci_lo, r.ci_hi);
  return r;
}

Heatmap heatmap_experiment(const cfg::RunConfig& c, const std::string& scenario,
                           const PhysicalAction& act, int trials,
                           uint64_t seed) {
  require(trials > 0, "heatmap needs a positive trial count");
  sim::StackState s = sim::reset(c, scenario, seed);
  const auto& m = sim::top_material(c, s);
  Rng rng(seed * 2654435761ull + 211);
  Heatmap h;
  for (int ia = 0; ia < 6; ++ia) {
    for (int ib = 0; ib < 6; ++ib) {
      double a = ia + 0.5, b = ib + 0.5;  // cm
      int ok = 0;
      for (int t = 0; t < trials; ++t) {
        double eps = rng.normal(0.0, m.depth_noise);
        double p = sim::success_probability_eps(c, s, act, a, b, eps);
        if (rng.uniform(0.0, 1.0) < p) ++ok;
      }
      h.at(ia, ib) = double(ok) / trials;
    }
  }
  return h;
}

std::string heatmap_text(const Heatmap& h) {
  std::string s;
  for (int ia = 0; ia < 6; ++ia) {
    for (int ib = 0; ib < 6; ++ib)
      s += (ib ? " " : "") + fmt(h.at(ia, ib), "%.3f");
    s += "\n";
  }
  return s;
}

ComplianceResult compliance_experiment(const cfg::RunConfig& c,
                                       const std::string& scenario) {
  sim::StackState s = sim::reset(c, scenario, 1);
  const auto& p = c.sim;
  ComplianceResult r;
  for (double d = 0.0; d <= 6.0 * p.kappa + 1e-9; d += 0.5) {
    r.overshoot_mm.push_back(d);
    r.force_n.push_back(sim::contact_force(p, d));
  }
  r.band_lo = sim::contact_force(p, 2.0 * p.kappa);
  r.band_hi = sim::contact_force(p, 6.0 * p.kappa);

  // lift the stack in 0.5 mm steps under the oracle action until the
  // marginal success probability halves
  sim::OracleResult best = sim::oracle_best(c, s);
  PhysicalAction act =
      decode_action(grid_for(best.outer.selection), best.inner);
  const auto& m = sim::top_material(c, s);
  double p0 = best.p;
  for (double lift = 0.5; lift <= 40.0; lift += 0.5) {
    PhysicalAction raised = act;
    raised.z_mm += lift;
    if (sim::marginal_p(c, s, raised, m.slip_offset, m.slip_offset) <
        0.5 * p0)
      break;
    r.tolerated_mm = lift;
  }
  return r;
}

SelectionStats selection_stats(const cfg::RunConfig& c, Agent& agent,
                               grad::ParamStore<float>& slip,
                               const std::string& scenario, int episodes,
                               uint64_t seed) {
  require(agent.mode() != fusion::Mode::SL,
          "selection stats are undefined for the single-loop ablation");
  require(episodes > 0, "selection stats need a positive episode count");
  sim::StackState s = sim::reset(c, scenario, seed);
  Rng rng(seed * 2654435761ull + 307);
  int fine = 0;
  for (int e = 0; e < episodes; ++e) {
    Decision d = decide(c, s, slip, agent, rng, true);
    if (d.outer.selection == Granularity::Fine) ++fine;
    sim::next_episode(c, s);  // no grasp, the stack is untouched
  }
  SelectionStats st;
  st.fine = double(fine) / episodes;
  st.coarse = 1.0 - st.fine;
  return st;
}

std::vector<AblationRow> ablation_suite(const cfg::RunConfig& base,
                                        const std::vector<fusion::Mode>& modes,
                                        const std::vector<uint64_t>& seeds,
                                        grad::ParamStore<float>& slip,
                                        const std::string& out_dir) {
  require(modes.size() >= 2, "ablation suite needs at least two modes");
  require(!seeds.empty(), "ablation suite needs at least one seed");
  std::vector<AblationRow> rows;
  for (fusion::Mode mode : modes) {
    for (uint64_t seed : seeds) {
      cfg::RunConfig c = base;
      c.mode = mode;
      c.seed = seed;
      Agent agent(mode, seed);
      std::string path;
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        path = out_dir + "/" + fusion::mode_name(mode) + "_s" +
               std::to_string(seed) + ".csv";
      }
      TrainResult tr = train_run(c, slip, agent, path);

      AblationRow row;
      row.mode = mode;
      row.seed = seed;
      row.auc = tr.auc;
      row.finite = tr.finite;
      int per = std::max(1, c.eval_episodes / int(c.scenarios.size()));
      int succ = 0, total = 0;
      for (const auto& sc : c.scenarios) {
        EvalResult ev = evaluate(c, agent, slip, sc, per, seed + 99);
        succ += ev.successes;
        total += ev.episodes;
      }
      row.eval_rate = double(succ) / total;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace tdom::harness
