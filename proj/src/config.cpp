#include "tdom/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tdom/error.hpp"

namespace tdom::cfg {

using nlohmann::json;

const MaterialProfile& RunConfig::material(const std::string& name) const {
  auto it = materials.find(name);
  if (it == materials.end()) throw ConfigError("unknown material: " + name);
  return it->second;
}

const Scenario& RunConfig::scenario(const std::string& name) const {
  auto it = scenario_table.find(name);
  if (it == scenario_table.end()) throw ConfigError("unknown scenario: " + name);
  return it->second;
}

namespace {

MaterialProfile make_material(const std::string& name, double thickness,
                              double a_m, double friction, double roughness,
                              double softness, double depth_noise,
                              double u_star, double s_u, double s_v,
                              double f_lo, double f_hi, double s_theta,
                              double amp, double slip_offset) {
  MaterialProfile m;
  m.name = name;
  m.thickness = thickness;
  m.adhesion_base = a_m;
  m.friction = friction;
  m.roughness = roughness;
  m.softness = softness;
  m.depth_noise = depth_noise;
  m.u_star = u_star;
  m.s_u = s_u;
  m.s_v = s_v;
  m.f_lo = f_lo;
  m.f_hi = f_hi;
  m.theta_star = 1.5;
  m.s_theta = s_theta;
  m.tactile_amp = amp;
  m.slip_offset = slip_offset;
  return m;
}

Scenario make_scenario(const std::string& name,
                       std::vector<std::string> cycle, int layers,
                       double tilt) {
  Scenario s;
  s.name = name;
  s.layer_cycle = std::move(cycle);
  s.layers = layers;
  s.tilt = tilt;
  return s;
}

void fill_defaults(RunConfig& c) {
  auto put = [&](MaterialProfile m) { c.materials[m.name] = std::move(m); };
  put(make_material("printer", 0.075, 0.055, 0.45, 6.0, 0.3, 2.5,
                    1.0, 0.9, 1.2, 0.4, 1.2, 1.2, 0.8, 0.5));
  put(make_material("winter_fabric", 0.5, 0.03, 0.7, 3.0, 0.8, 0.5,
                    2.2, 1.7, 1.8, 0.3, 1.9, 0.8, 1.4, 1.6));
  put(make_material("coated", 0.05, 0.08, 0.35, 7.0, 0.2, 2.0,
                    1.0, 0.9, 1.2, 0.4, 1.2, 1.2, 0.7, 0.5));
  put(make_material("plastic", 0.15, 0.06, 0.3, 5.0, 0.25, 2.8,
                    1.2, 1.0, 1.3, 0.4, 1.3, 1.2, 0.75, 0.6));
  put(make_material("summer_fabric", 0.3, 0.035, 0.65, 3.5, 0.7, 0.6,
                    2.0, 1.6, 1.7, 0.3, 1.8, 0.9, 1.2, 1.4));
  put(make_material("towel", 1.5, 0.02, 0.8, 2.0, 0.95, 0.6,
                    2.5, 2.0, 2.0, 0.3, 1.9, 1.0, 1.6, 1.8));
  put(make_material("cloth", 0.7, 0.04, 0.7, 2.5, 0.85, 0.6,
                    2.2, 1.8, 1.8, 0.3, 1.8, 0.9, 1.4, 1.6));
  put(make_material("baking", 0.025, 0.07, 0.3, 8.0, 0.2, 2.2,
                    0.9, 0.8, 1.1, 0.4, 1.1, 1.3, 0.6, 0.4));
  put(make_material("pancake", 1.0, 0.05, 0.6, 1.5, 0.9, 0.8,
                    2.4, 1.9, 1.9, 0.3, 1.8, 1.0, 1.5, 1.7));

  auto sput = [&](Scenario s) { c.scenario_table[s.name] = std::move(s); };
  sput(make_scenario("printer_book", {"printer"}, 50, 0.0));
  sput(make_scenario("winter_fabric", {"winter_fabric"}, 20, 0.0));
  sput(make_scenario("coated_paper", {"coated"}, 30, 0.0));
  sput(make_scenario("plastic_paper", {"plastic"}, 30, 0.0));
  sput(make_scenario("towel", {"towel"}, 10, 0.0));
  sput(make_scenario("tshirt", {"cloth"}, 15, 0.0));
  sput(make_scenario("mixed_fabric_paper", {"winter_fabric", "printer"}, 20,
                     0.0));
  sput(make_scenario("pancake_baking", {"pancake", "baking"}, 20, 0.0));
}

[[noreturn]] void bad_key(const std::string& path) {
  throw ConfigError("unknown config key: " + path);
}

double num(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path + " must be a number");
  return v.get<double>();
}

int integer(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
  return v.get<int>();
}

bool boolean(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path + " must be a boolean");
  return v.get<bool>();
}

std::string text(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path + " must be a string");
  return v.get<std::string>();
}

void overlay(SacParams& p, const json& j, const std::string& path) {
  for (auto& [k, v] : j.items()) {
    if (k == "lr") p.lr = num(v, path + ".lr");
    else if (k == "gradient_steps") p.gradient_steps = integer(v, path + ".gradient_steps");
    else if (k == "buffer_size") p.buffer_size = integer(v, path + ".buffer_size");
    else if (k == "learning_starts") p.learning_starts = integer(v, path + ".learning_starts");
    else if (k == "gamma") p.gamma = num(v, path + ".gamma");
    else if (k == "batch_size") p.batch_size = integer(v, path + ".batch_size");
    else if (k == "n_envs") p.n_envs = integer(v, path + ".n_envs");
    else if (k == "alpha") p.alpha = num(v, path + ".alpha");
    else bad_key(path + "." + k);
  }
}

void overlay(SlipParams& p, const json& j, const std::string& path) {
  for (auto& [k, v] : j.items()) {
    if (k == "lr") p.lr = num(v, path + ".lr");
    else if (k == "steps") p.steps = integer(v, path + ".steps");
    else if (k == "batch_size") p.batch_size = integer(v, path + ".batch_size");
    else if (k == "dataset_size") p.dataset_size = integer(v, path + ".dataset_size");
    else if (k == "holdout") p.holdout = integer(v, path + ".holdout");
    else if (k == "label_radius") p.label_radius = integer(v, path + ".label_radius");
    else if (k == "pos_weight") p.pos_weight = num(v, path + ".pos_weight");
    else if (k == "neg_weight") p.neg_weight = num(v, path + ".neg_weight");
    else bad_key(path + "." + k);
  }
}

void overlay(SimParams& p, const json& j, const std::string& path) {
  for (auto& [k, v] : j.items()) {
    if (k == "f_sat") p.f_sat = num(v, path + ".f_sat");
    else if (k == "kappa") p.kappa = num(v, path + ".kappa");
    else if (k == "force_w") p.force_w = num(v, path + ".force_w");
    else if (k == "c_tilt") p.c_tilt = num(v, path + ".c_tilt");
    else if (k == "c_force") p.c_force = num(v, path + ".c_force");
    else if (k == "b_layer") p.b_layer = num(v, path + ".b_layer");
    else if (k == "noise_force") p.noise_force = num(v, path + ".noise_force");
    else if (k == "noise_moment") p.noise_moment = num(v, path + ".noise_moment");
    else if (k == "thumb_atten") p.thumb_atten = num(v, path + ".thumb_atten");
    else if (k == "standoff") p.standoff = num(v, path + ".standoff");
    else if (k == "cam_depth") p.cam_depth = num(v, path + ".cam_depth");
    else if (k == "r_torque") p.r_torque = num(v, path + ".r_torque");
    else bad_key(path + "." + k);
  }
}

void overlay(MaterialProfile& m, const json& j, const std::string& path) {
  for (auto& [k, v] : j.items()) {
    if (k == "thickness") m.thickness = num(v, path + ".thickness");
    else if (k == "adhesion_base") m.adhesion_base = num(v, path + ".adhesion_base");
    else if (k == "friction") m.friction = num(v, path + ".friction");
    else if (k == "roughness") m.roughness = num(v, path + ".roughness");
    else if (k == "softness") m.softness = num(v, path + ".softness");
    else if (k == "depth_noise") m.depth_noise = num(v, path + ".depth_noise");
    else if (k == "u_star") m.u_star = num(v, path + ".u_star");
    else if (k == "s_u") m.s_u = num(v, path + ".s_u");
    else if (k == "s_v") m.s_v = num(v, path + ".s_v");
    else if (k == "f_lo") m.f_lo = num(v, path + ".f_lo");
    else if (k == "f_hi") m.f_hi = num(v, path + ".f_hi");
    else if (k == "theta_star") m.theta_star = num(v, path + ".theta_star");
    else if (k == "s_theta") m.s_theta = num(v, path + ".s_theta");
    else if (k == "tactile_amp") m.tactile_amp = num(v, path + ".tactile_amp");
    else if (k == "slip_offset") m.slip_offset = num(v, path + ".slip_offset");
    else bad_key(path + "." + k);
  }
}

void overlay(Scenario& s, const json& j, const std::string& path) {
  for (auto& [k, v] : j.items()) {
    if (k == "layer_cycle") {
      if (!v.is_array() || v.empty())
        throw ConfigError(path + ".layer_cycle must be a non-empty array");
      s.layer_cycle.clear();
      for (size_t i = 0; i < v.size(); ++i)
        s.layer_cycle.push_back(
            text(v[i], path + ".layer_cycle[" + std::to_string(i) + "]"));
    } else if (k == "layers") {
      s.layers = integer(v, path + ".layers");
    } else if (k == "tilt") {
      s.tilt = num(v, path + ".tilt");
    } else {
      bad_key(path + "." + k);
    }
  }
}

void check_range(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config value out of range: " + key + " " + what);
}

void validate(const RunConfig& c) {
  check_range(c.episodes >= 1, "episodes", "must be >= 1");
  check_range(c.eval_episodes >= 1, "eval_episodes", "must be >= 1");
  check_range(c.sac.lr > 0, "sac.lr", "must be > 0");
  check_range(c.sac.gradient_steps >= 1, "sac.gradient_steps", "must be >= 1");
  check_range(c.sac.batch_size >= 1, "sac.batch_size", "must be >= 1");
  check_range(c.sac.buffer_size >= c.sac.batch_size, "sac.buffer_size",
              "must be >= sac.batch_size");
  check_range(c.sac.learning_starts >= 0, "sac.learning_starts",
              "must be >= 0");
  check_range(c.sac.gamma > 0 && c.sac.gamma <= 1, "sac.gamma",
              "must be in (0, 1]");
  check_range(c.sac.n_envs >= 1, "sac.n_envs", "must be >= 1");
  check_range(c.sac.alpha >= 0, "sac.alpha", "must be >= 0");
  check_range(c.slip.lr > 0, "slip.lr", "must be > 0");
  check_range(c.slip.steps >= 1, "slip.steps", "must be >= 1");
  check_range(c.slip.batch_size >= 1, "slip.batch_size", "must be >= 1");
  check_range(c.slip.dataset_size > c.slip.holdout, "slip.dataset_size",
              "must exceed slip.holdout");
  check_range(c.slip.holdout >= 1, "slip.holdout", "must be >= 1");
  check_range(c.slip.label_radius >= 1, "slip.label_radius", "must be >= 1");
  check_range(c.slip.pos_weight >= 1, "slip.pos_weight", "must be >= 1");
  check_range(c.slip.neg_weight >= 1, "slip.neg_weight", "must be >= 1");
  check_range(c.sim.f_sat > 0, "sim.f_sat", "must be > 0");
  check_range(c.sim.kappa > 0, "sim.kappa", "must be > 0");
  check_range(c.sim.force_w > 0, "sim.force_w", "must be > 0");
  check_range(c.sim.standoff > 0, "sim.standoff", "must be > 0");
  check_range(c.sim.cam_depth > 0, "sim.cam_depth", "must be > 0");
  for (auto& [name, m] : c.materials) {
    std::string p = "materials." + name;
    check_range(m.thickness > 0, p + ".thickness", "must be > 0");
    check_range(m.adhesion_base >= 0 && m.adhesion_base <= 1,
                p + ".adhesion_base", "must be in [0, 1]");
    check_range(m.softness >= 0 && m.softness <= 1, p + ".softness",
                "must be in [0, 1]");
    check_range(m.depth_noise >= 0, p + ".depth_noise", "must be >= 0");
    check_range(m.s_u > 0, p + ".s_u", "must be > 0");
    check_range(m.s_v > 0, p + ".s_v", "must be > 0");
    check_range(m.s_theta > 0, p + ".s_theta", "must be > 0");
    check_range(m.f_lo < m.f_hi, p + ".f_lo", "must be < f_hi");
    check_range(m.roughness > 0, p + ".roughness", "must be > 0");
  }
  for (auto& [name, s] : c.scenario_table) {
    std::string p = "scenarios." + name;
    check_range(s.layers >= 1, p + ".layers", "must be >= 1");
    check_range(s.tilt >= 0 && s.tilt < 90, p + ".tilt",
                "must be in [0, 90)");
    check_range(!s.layer_cycle.empty(), p + ".layer_cycle",
                "must be non-empty");
    for (auto& ln : s.layer_cycle)
      if (!c.materials.count(ln))
        throw ConfigError(p + ".layer_cycle names unknown material: " + ln);
  }
  for (auto& sn : c.scenarios)
    if (!c.scenario_table.count(sn))
      throw ConfigError("scenarios lists unknown scenario: " + sn);
  if (c.scenarios.empty())
    throw ConfigError("scenarios must list at least one scenario");
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  fill_defaults(c);
  return c;
}

RunConfig parse_config(const std::string& doc, const std::string& origin) {
  json j;
  try {
    j = json::parse(doc);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": top level must be an object");
  RunConfig c = default_config();
  for (auto& [k, v] : j.items()) {
    if (k == "scenarios") {
      if (!v.is_array()) throw ConfigError("scenarios must be an array");
      c.scenarios.clear();
      for (size_t i = 0; i < v.size(); ++i)
        c.scenarios.push_back(text(v[i], "scenarios[" + std::to_string(i) + "]"));
    } else if (k == "seed") {
      if (!v.is_number_unsigned())
        throw ConfigError("seed must be a non-negative integer");
      c.seed = v.get<uint64_t>();
    } else if (k == "episodes") {
      c.episodes = integer(v, "episodes");
    } else if (k == "eval_episodes") {
      c.eval_episodes = integer(v, "eval_episodes");
    } else if (k == "mode") {
      c.mode = fusion::mode_from_name(text(v, "mode"));
    } else if (k == "critic_encoder_only") {
      c.critic_encoder_only = boolean(v, "critic_encoder_only");
    } else if (k == "symmetric_cross") {
      c.symmetric_cross = boolean(v, "symmetric_cross");
    } else if (k == "deterministic") {
      c.deterministic = boolean(v, "deterministic");
    } else if (k == "out_root") {
      c.out_root = text(v, "out_root");
    } else if (k == "sac") {
      overlay(c.sac, v, "sac");
    } else if (k == "slip") {
      overlay(c.slip, v, "slip");
    } else if (k == "sim") {
      overlay(c.sim, v, "sim");
    } else if (k == "materials") {
      if (!v.is_object()) throw ConfigError("materials must be an object");
      for (auto& [mn, mv] : v.items()) {
        MaterialProfile& m = c.materials[mn];  // new names start from defaults
        m.name = mn;
        overlay(m, mv, "materials." + mn);
      }
    } else if (k == "scenarios_table") {
      if (!v.is_object()) throw ConfigError("scenarios_table must be an object");
      for (auto& [sn, sv] : v.items()) {
        Scenario& s = c.scenario_table[sn];
        s.name = sn;
        overlay(s, sv, "scenarios_table." + sn);
      }
    } else {
      bad_key(k);
    }
  }
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) {
    RunConfig c = default_config();
    validate(c);
    return c;
  }
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string dump_config(const RunConfig& c) {
  json j;
  j["scenarios"] = c.scenarios;
  j["seed"] = c.seed;
  j["episodes"] = c.episodes;
  j["eval_episodes"] = c.eval_episodes;
  j["mode"] = fusion::mode_name(c.mode);
  j["critic_encoder_only"] = c.critic_encoder_only;
  j["symmetric_cross"] = c.symmetric_cross;
  j["deterministic"] = c.deterministic;
  j["out_root"] = c.out_root;
  j["sac"] = {{"lr", c.sac.lr},
              {"gradient_steps", c.sac.gradient_steps},
              {"buffer_size", c.sac.buffer_size},
              {"learning_starts", c.sac.learning_starts},
              {"gamma", c.sac.gamma},
              {"batch_size", c.sac.batch_size},
              {"n_envs", c.sac.n_envs},
              {"alpha", c.sac.alpha}};
  j["slip"] = {{"lr", c.slip.lr},
               {"steps", c.slip.steps},
               {"batch_size", c.slip.batch_size},
               {"dataset_size", c.slip.dataset_size},
               {"holdout", c.slip.holdout},
               {"label_radius", c.slip.label_radius},
               {"pos_weight", c.slip.pos_weight},
               {"neg_weight", c.slip.neg_weight}};
  j["sim"] = {{"f_sat", c.sim.f_sat},
              {"kappa", c.sim.kappa},
              {"force_w", c.sim.force_w},
              {"c_tilt", c.sim.c_tilt},
              {"c_force", c.sim.c_force},
              {"b_layer", c.sim.b_layer},
              {"noise_force", c.sim.noise_force},
              {"noise_moment", c.sim.noise_moment},
              {"thumb_atten", c.sim.thumb_atten},
              {"standoff", c.sim.standoff},
              {"cam_depth", c.sim.cam_depth},
              {"r_torque", c.sim.r_torque}};
  json mats = json::object();
  for (auto& [name, m] : c.materials) {
    mats[name] = {{"thickness", m.thickness},
                  {"adhesion_base", m.adhesion_base},
                  {"friction", m.friction},
                  {"roughness", m.roughness},
                  {"softness", m.softness},
                  {"depth_noise", m.depth_noise},
                  {"u_star", m.u_star},
                  {"s_u", m.s_u},
                  {"s_v", m.s_v},
                  {"f_lo", m.f_lo},
                  {"f_hi", m.f_hi},
                  {"theta_star", m.theta_star},
                  {"s_theta", m.s_theta},
                  {"tactile_amp", m.tactile_amp},
                  {"slip_offset", m.slip_offset}};
  }
  j["materials"] = mats;
  json scs = json::object();
  for (auto& [name, s] : c.scenario_table) {
    scs[name] = {{"layer_cycle", s.layer_cycle},
                 {"layers", s.layers},
                 {"tilt", s.tilt}};
  }
  j["scenarios_table"] = scs;
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& c) {
  std::string s = dump_config(c);
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return std::string(buf);
}

}  // namespace tdom::cfg
