#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tdom/agent.hpp"
#include "tdom/checkpoint.hpp"
#include "tdom/config.hpp"
#include "tdom/harness.hpp"
#include "tdom/slipnet.hpp"

namespace fs = std::filesystem;
using namespace tdom;

namespace {

struct Cli {
  std::string config_path;
  long long seed = -1;  // negative keeps the config value
  std::string out_override;
  bool deterministic = false;
};

cfg::RunConfig resolve(const Cli& cli) {
  cfg::RunConfig c = cfg::load_config(cli.config_path);
  if (const char* env = std::getenv("TDOM_OUT_ROOT")) c.out_root = env;
  if (!cli.out_override.empty()) c.out_root = cli.out_override;
  if (cli.seed >= 0) c.seed = uint64_t(cli.seed);
  if (cli.deterministic) c.deterministic = true;
  return c;
}

void write_text_atomic(const std::string& path, const std::string& text) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp);
    out << text;
  }
  fs::rename(tmp, path);
}

// Creates <out_root>/<config hash>_s<seed> and echoes the resolved config.
std::string make_run_dir(const cfg::RunConfig& c) {
  std::string dir = c.out_root + "/" + cfg::config_hash(c) + "_s" +
                    std::to_string(c.seed);
  fs::create_directories(dir);
  write_text_atomic(dir + "/config.json", cfg::dump_config(c));
  return dir;
}

grad::ParamStore<float> load_slip(const std::string& path) {
  if (!fs::exists(path))
    throw RuntimeFailure("slip checkpoint not found: " + path +
                         " (run train-slip first)");
  ckpt::Checkpoint ck = ckpt::read_checkpoint(path);
  ckpt::check_compat(ck, "", "slip");
  grad::ParamStore<float> ps;
  grad::Rng rng(1);
  slip::add_slip_params(ps, rng);
  ckpt::to_params(ck, ps);
  return ps;
}

agent::Agent load_agent(const std::string& path, const cfg::RunConfig& c) {
  if (!fs::exists(path))
    throw RuntimeFailure("agent checkpoint not found: " + path);
  ckpt::Checkpoint ck = ckpt::read_checkpoint(path);
  agent::Agent a(fusion::mode_from_name(ck.mode), c.seed);
  a.load(path, cfg::config_hash(c));
  return a;
}

std::vector<slip::SlipSample> load_or_make_dataset(const cfg::RunConfig& c,
                                                   const std::string& dir) {
  if (!dir.empty()) return slip::read_dataset(dir);
  grad::Rng rng(c.seed);
  return slip::make_dataset(c.slip, rng);
}

int cmd_gen_slip_data(const cfg::RunConfig& c, std::string dir) {
  std::string run = make_run_dir(c);
  if (dir.empty()) dir = run + "/slip_data";
  grad::Rng rng(c.seed);
  auto ds = slip::make_dataset(c.slip, rng);
  slip::write_dataset(dir, ds);
  std::printf("wrote %zu samples to %s\n", ds.size(), dir.c_str());
  return 0;
}

int cmd_train_slip(const cfg::RunConfig& c, const std::string& data_dir) {
  std::string run = make_run_dir(c);
  auto ds = load_or_make_dataset(c, data_dir);
  if (int(ds.size()) <= c.slip.holdout)
    throw ConfigError("dataset smaller than the holdout split");
  std::vector<slip::SlipSample> train(ds.begin(), ds.end() - c.slip.holdout);
  std::vector<slip::SlipSample> hold(ds.end() - c.slip.holdout, ds.end());
  slip::SlipTrainLog log;
  auto ps = slip::train_slip(train, c.slip, c.seed, &log);
  auto st = slip::evaluate(ps, hold);
  std::string path = run + "/slip.tdom";
  ckpt::write_checkpoint(
      path, ckpt::from_params(ps, cfg::config_hash(c), "slip"));
  std::printf("steps %d  bce %.4f -> %.4f\n", c.slip.steps,
              log.loss.front(), log.loss.back());
  std::printf("holdout pixel_ok %.3f  bin_ok %.3f\n", st.pixel_ok, st.bin_ok);
  std::printf("checkpoint %s\n", path.c_str());
  return 0;
}

int cmd_train(const cfg::RunConfig& c, std::string slip_path) {
  std::string run = make_run_dir(c);
  if (slip_path.empty()) slip_path = run + "/slip.tdom";
  auto slip_ps = load_slip(slip_path);
  agent::Agent a(c.mode, c.seed);
  harness::TrainResult r =
      harness::train_run(c, slip_ps, a, run + "/metrics.csv");
  std::string path = run + "/agent.tdom";
  a.save(path, cfg::config_hash(c));
  double tail = r.log.rows.empty() ? 0.0 : r.log.rows.back().rate100;
  std::printf("episodes %d  auc %.4f  final rate100 %.3f  %s\n", c.episodes,
              r.auc, tail, r.finite ? "finite" : "NON-FINITE LOSSES");
  std::printf("metrics %s/metrics.csv\ncheckpoint %s\n", run.c_str(),
              path.c_str());
  return r.finite ? 0 : 3;
}

int cmd_eval(const cfg::RunConfig& c, std::string ckpt_path,
             const std::string& scenario, int episodes, uint64_t eval_seed,
             bool use_oracle) {
  std::string run = make_run_dir(c);
  if (episodes <= 0) episodes = c.eval_episodes;
  grad::ParamStore<float> no_slip;
  harness::EvalResult r;
  if (use_oracle) {
    agent::Agent dummy(fusion::Mode::NT, 1);
    r = harness::evaluate(c, dummy, no_slip, scenario, episodes, eval_seed,
                          true);
  } else {
    if (ckpt_path.empty()) ckpt_path = run + "/agent.tdom";
    agent::Agent a = load_agent(ckpt_path, c);
    auto slip_ps = load_slip(run + "/slip.tdom");
    r = harness::evaluate(c, a, slip_ps, scenario, episodes, eval_seed,
                          false);
  }
  std::printf("%s: %d/%d  rate %.3f  ci95 [%.3f, %.3f]\n", scenario.c_str(),
              r.successes, r.episodes, r.rate, r.ci_lo, r.ci_hi);
  std::printf("policy p %.4f  oracle p %.4f  ratio %.3f\n", r.mean_policy_p,
              r.mean_oracle_p,
              r.mean_oracle_p > 0 ? r.mean_policy_p / r.mean_oracle_p : 0.0);
  return 0;
}

std::vector<fusion::Mode> parse_modes(const std::string& csv) {
  std::vector<fusion::Mode> out;
  std::string cur;
  std::istringstream is(csv);
  while (std::getline(is, cur, ','))
    if (!cur.empty()) out.push_back(fusion::mode_from_name(cur));
  return out;
}

int cmd_ablate(const cfg::RunConfig& c, std::string slip_path,
               const std::string& modes_csv, std::vector<uint64_t> seeds) {
  std::string run = make_run_dir(c);
  if (slip_path.empty()) slip_path = run + "/slip.tdom";
  auto slip_ps = load_slip(slip_path);
  if (seeds.empty()) seeds = {c.seed};
  auto rows = harness::ablation_suite(c, parse_modes(modes_csv), seeds,
                                      slip_ps, run + "/ablate");
  std::string csv = "mode,seed,auc,eval_rate,finite\n";
  bool all_finite = true;
  for (const auto& r : rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%s,%llu,%.4f,%.4f,%d",
                  fusion::mode_name(r.mode).c_str(),
                  (unsigned long long)r.seed, r.auc, r.eval_rate,
                  int(r.finite));
    csv += std::string(line) + "\n";
    std::printf("%-4s seed %-3llu auc %.4f  eval %.3f  %s\n",
                fusion::mode_name(r.mode).c_str(),
                (unsigned long long)r.seed, r.auc, r.eval_rate,
                r.finite ? "finite" : "NON-FINITE");
    all_finite = all_finite && r.finite;
  }
  write_text_atomic(run + "/ablate/summary.csv", csv);
  return all_finite ? 0 : 3;
}

int cmd_heatmap(const cfg::RunConfig& c, const std::string& scenario,
                int trials, uint64_t hm_seed) {
  std::string run = make_run_dir(c);
  sim::StackState s = sim::reset(c, scenario, hm_seed);
  sim::OracleResult best = sim::oracle_best(c, s);
  PhysicalAction act =
      decode_action(grid_for(best.outer.selection), best.inner);
  harness::Heatmap h =
      harness::heatmap_experiment(c, scenario, act, trials, hm_seed);
  std::string txt = harness::heatmap_text(h);
  write_text_atomic(run + "/heatmap_" + scenario + ".txt", txt);
  std::printf("%s", txt.c_str());
  return 0;
}

int cmd_compliance(const cfg::RunConfig& c, const std::string& scenario) {
  std::string run = make_run_dir(c);
  harness::ComplianceResult r = harness::compliance_experiment(c, scenario);
  std::string txt = "overshoot_mm force_n\n";
  for (size_t i = 0; i < r.overshoot_mm.size(); ++i) {
    char line[64];
    std::snprintf(line, sizeof line, "%.1f %.5f", r.overshoot_mm[i],
                  r.force_n[i]);
    txt += std::string(line) + "\n";
  }
  write_text_atomic(run + "/compliance_" + scenario + ".txt", txt);
  std::printf("force band over [2k,6k]: %.4f .. %.4f N (range %.2f%% F_sat)\n",
              r.band_lo, r.band_hi,
              100.0 * (r.band_hi - r.band_lo) / c.sim.f_sat);
  std::printf("tolerated lift %.1f mm\n", r.tolerated_mm);
  return 0;
}

int cmd_stats(const cfg::RunConfig& c, std::string ckpt_path,
              const std::string& scenario, int episodes, uint64_t seed) {
  std::string run = make_run_dir(c);
  if (ckpt_path.empty()) ckpt_path = run + "/agent.tdom";
  agent::Agent a = load_agent(ckpt_path, c);
  auto slip_ps = load_slip(run + "/slip.tdom");
  harness::SelectionStats st =
      harness::selection_stats(c, a, slip_ps, scenario, episodes, seed);
  std::printf("%s: coarse %.3f  fine %.3f\n", scenario.c_str(), st.coarse,
              st.fine);
  return 0;
}

int cmd_oracle(const cfg::RunConfig& c, const std::string& scenario) {
  sim::StackState s = sim::reset(c, scenario, c.seed);
  sim::OracleResult best = sim::oracle_best(c, s);
  PhysicalAction act =
      decode_action(grid_for(best.outer.selection), best.inner);
  std::printf("%s: %s  x %.2f mm  z %.2f mm  theta %.2f deg  P* %.4f\n",
              scenario.c_str(),
              best.outer.selection == Granularity::Fine ? "fine" : "coarse",
              act.x_mm, act.z_mm, act.theta_deg, best.p);
  return 0;
}

int cmd_gradcheck() {
  grad::ParamStore<double> ps;
  grad::Rng rng(3);
  fusion::add_encoder_params(ps, rng, fusion::Mode::Ours);
  fusion::ObsBatch b;
  Observation o;
  for (auto& v : o.vis) v = float(0.5 - rng.uniform(0.0, 0.02));
  for (auto& v : o.ind) v = float(rng.normal(0.0, 0.3));
  for (auto& v : o.thu) v = float(rng.normal(0.0, 0.3));
  for (auto& v : o.pro) v = float(rng.normal(0.0, 0.5));
  o.aux = {0.0f, 0.0f};
  b.append(o);
  double worst = grad::grad_check(
      ps,
      [&](grad::Graph<double>& g, grad::ParamStore<double>& p) {
        auto in = fusion::obs_inputs<double>(g, b);
        grad::Var l = fusion::encode_obs(g, p, fusion::Mode::Ours, in.vis,
                                         in.ind, in.thu, in.pro, in.aux);
        return g.sum(l);
      },
      1e-5, 2);
  std::printf("encoder composite worst relative error %.3e\n", worst);
  if (worst > 1e-4) throw RuntimeFailure("gradient check failed");
  std::printf("ok\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layered-stack singulation workbench"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand name

  Cli cli;
  app.add_option("-c,--config", cli.config_path, "config file (JSON)");
  app.add_option("-s,--seed", cli.seed, "seed override");
  app.add_option("-o,--out", cli.out_override, "output root override");
  app.add_flag("--deterministic", cli.deterministic,
               "force sequential single-worker execution");

  std::string data_dir, slip_path, ckpt_path, scenario, modes_csv =
      "Ours,OV,NT,NF,SL,NA";
  std::vector<uint64_t> seeds;
  int episodes = 0, trials = 100, stats_episodes = 100;
  uint64_t eval_seed = 777, hm_seed = 9, stats_seed = 5;
  bool use_oracle = false;

  auto* gen = app.add_subcommand("gen-slip-data",
                                 "generate the synthetic slip dataset");
  gen->add_option("--dir", data_dir, "output directory");

  auto* ts = app.add_subcommand("train-slip", "train the slip affordance net");
  ts->add_option("--data", data_dir, "pre-generated dataset directory");

  auto* tr = app.add_subcommand("train", "train the dual-loop policy");
  tr->add_option("--slip", slip_path, "slip checkpoint path");

  auto* ev = app.add_subcommand("eval", "evaluate a greedy policy");
  ev->add_option("--checkpoint", ckpt_path, "agent checkpoint path");
  ev->add_option("--scenario", scenario, "scenario name")->required();
  ev->add_option("--episodes", episodes, "evaluation episodes");
  ev->add_option("--eval-seed", eval_seed, "evaluation seed");
  ev->add_flag("--use-oracle", use_oracle,
               "inject the oracle action instead of the policy");

  auto* ab = app.add_subcommand("ablate", "run the ablation suite");
  ab->add_option("--slip", slip_path, "slip checkpoint path");
  ab->add_option("--modes", modes_csv, "comma-separated mode list");
  ab->add_option("--seeds", seeds, "seed list");

  auto* hm = app.add_subcommand("heatmap", "offset-grid success heatmap");
  hm->add_option("--scenario", scenario, "scenario name")->required();
  hm->add_option("--trials", trials, "Bernoulli trials per cell");
  hm->add_option("--hm-seed", hm_seed, "experiment seed");

  auto* co = app.add_subcommand("compliance", "force band and tolerated lift");
  co->add_option("--scenario", scenario, "scenario name")->required();

  auto* st = app.add_subcommand("stats", "outer-loop selection statistics");
  st->add_option("--checkpoint", ckpt_path, "agent checkpoint path");
  st->add_option("--scenario", scenario, "scenario name")->required();
  st->add_option("--episodes", stats_episodes, "episodes to tally");
  st->add_option("--stats-seed", stats_seed, "experiment seed");

  auto* orc = app.add_subcommand("oracle", "closed-form optimal action");
  orc->add_option("--scenario", scenario, "scenario name")->required();

  app.add_subcommand("gradcheck", "finite-difference check of the encoder");

  if (argc <= 1) {
    std::fputs(app.help().c_str(), stderr);
    return 1;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    cfg::RunConfig c = resolve(cli);
    if (gen->parsed()) return cmd_gen_slip_data(c, data_dir);
    if (ts->parsed()) return cmd_train_slip(c, data_dir);
    if (tr->parsed()) return cmd_train(c, slip_path);
    if (ev->parsed())
      return cmd_eval(c, ckpt_path, scenario, episodes, eval_seed,
                      use_oracle);
    if (ab->parsed()) return cmd_ablate(c, slip_path, modes_csv, seeds);
    if (hm->parsed()) return cmd_heatmap(c, scenario, trials, hm_seed);
    if (co->parsed()) return cmd_compliance(c, scenario);
    if (st->parsed())
      return cmd_stats(c, ckpt_path, scenario, stats_episodes, stats_seed);
    if (orc->parsed()) return cmd_oracle(c, scenario);
    return cmd_gradcheck();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
