#include "tdom/simenv.hpp"

#include <cmath>

namespace tdom::sim {

using grad::require;

namespace {

const cfg::Scenario& scen(const cfg::RunConfig& c, const StackState& s) {
  return c.scenario(s.scenario);
}

const cfg::MaterialProfile& layer_material(const cfg::RunConfig& c,
                                           const cfg::Scenario& sc,
                                           int layer_index) {
  const auto& cyc = sc.layer_cycle;
  return c.material(cyc[size_t(layer_index) % cyc.size()]);
}

double stack_height_mm(const cfg::RunConfig& c, const StackState& s) {
  const auto& sc = scen(c, s);
  double h = 0.0;
  for (int i = s.total_layers - s.remaining; i < s.total_layers; ++i)
    h += layer_material(c, sc, i).thickness;
  return h;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration.
void legendre_rule(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = t;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (t * p1 - p0) / (t * t - 1.0);
      double step = p1 / dp;
      t -= step;
      if (std::abs(step) < 1e-15) break;
    }
    x[i] = -t;
    x[n - 1 - i] = t;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - t * t) * dp * dp);
  }
}

}  // namespace

const cfg::MaterialProfile& top_material(const cfg::RunConfig& c,
                                         const StackState& s) {
  require(s.remaining > 0, "empty stack has no top layer");
  return layer_material(c, scen(c, s), s.total_layers - s.remaining);
}

void next_episode(const cfg::RunConfig& c, StackState& s) {
  require(s.remaining > 0, "cannot start an episode on an empty stack");
  const auto& m = top_material(c, s);
  s.eps = s.rng.normal(0.0, m.depth_noise);
  s.pose.cx = (kImageW - 1) / 2.0 + s.rng.uniform(-8.0, 8.0);
  s.pose.cy = (kImageH - 1) / 2.0 + s.rng.uniform(-6.0, 6.0);
  s.pose.angle = s.rng.uniform(-10.0, 10.0);
  s.pose.half_w = 40.0 * s.rng.uniform(0.9, 1.1);
  s.pose.half_h = 28.0 * s.rng.uniform(0.9, 1.1);
  s.a_off = m.slip_offset;
  s.b_off = m.slip_offset;
}

StackState reset(const cfg::RunConfig& c, const std::string& scenario,
                 uint64_t seed) {
  const auto& sc = c.scenario(scenario);
  StackState s;
  s.scenario = scenario;
  s.total_layers = sc.layers;
  s.remaining = sc.layers;
  s.tilt = sc.tilt;
  s.rng = grad::Rng(seed);
  next_episode(c, s);
  return s;
}

void recycle(const cfg::RunConfig& c, StackState& s) {
  s.remaining = s.total_layers;
  next_episode(c, s);
}

bool inside_object(const StackState& s, double u, double v) {
  double r = -s.pose.angle * M_PI / 180.0;
  double dx = u - s.pose.cx, dy = v - s.pose.cy;
  double ox = std::cos(r) * dx - std::sin(r) * dy;
  double oy = std::sin(r) * dx + std::cos(r) * dy;
  return std::abs(ox) <= s.pose.half_w && std::abs(oy) <= s.pose.half_h;
}

Render render_topdown(const cfg::RunConfig& c, StackState& s) {
  if (s.remaining <= 0) throw RuntimeFailure("render on an empty stack");
  const auto& m = top_material(c, s);
  double h_m = (stack_height_mm(c, s) + s.eps) / 1000.0;
  Render r;
  r.mask = img::Image(kImageH, kImageW, 0.0f);
  r.depth = img::Image(kImageH, kImageW, 0.0f);
  for (int y = 0; y < kImageH; ++y) {
    for (int x = 0; x < kImageW; ++x) {
      bool in = inside_object(s, x, y);
      double base = c.sim.cam_depth - (in ? h_m : 0.0);
      double noisy = base + s.rng.normal(0.0, m.depth_noise / 1000.0);
      r.mask.at(y, x) = in ? 1.0f : 0.0f;
      r.depth.at(y, x) = float(noisy);
    }
  }
  return r;
}

double contact_force(const cfg::SimParams& p, double d_mm) {
  return p.f_sat * std::tanh(std::max(d_mm, 0.0) / p.kappa);
}

double success_probability_eps(const cfg::RunConfig& c, const StackState& s,
                               const PhysicalAction& act, double a_off_cm,
                               double b_off_cm, double eps_mm) {
  require(act.omega, "grasp requires a closed gripper");
  const auto& m = top_material(c, s);
  const auto& p = c.sim;
  double a = a_off_cm + act.x_mm / 10.0;
  double u = (a + b_off_cm) / std::sqrt(2.0);
  double v = std::abs(a - b_off_cm) / std::sqrt(2.0);
  double d = act.z_mm - eps_mm;
  double f = contact_force(p, d);
  double g_pos = std::exp(-(u - m.u_star) * (u - m.u_star) /
                          (2.0 * m.s_u * m.s_u)) *
                 std::exp(-v * v / (2.0 * m.s_v * m.s_v));
  double g_f = logistic((f - m.f_lo) / p.force_w) *
               logistic((m.f_hi - f) / p.force_w);
  double dth = act.theta_deg - m.theta_star;
  double g_th = std::exp(-dth * dth / (2.0 * m.s_theta * m.s_theta));
  double p_multi = m.adhesion_base + p.c_tilt * std::sin(s.tilt * M_PI / 180.0) +
                   p.c_force * std::max(0.0, f - m.f_hi) / p.f_sat;
  p_multi = std::min(1.0, std::max(0.0, p_multi));
  return g_pos * g_f * g_th * (1.0 - p_multi);
}

double success_probability(const cfg::RunConfig& c, const StackState& s,
                           const PhysicalAction& act, double a_off_cm,
                           double b_off_cm) {
  return success_probability_eps(c, s, act, a_off_cm, b_off_cm, s.eps);
}

Observation execute_slip(const cfg::RunConfig& c, StackState& s,
                         const SlipExec& cmd) {
  if (s.remaining <= 0) throw RuntimeFailure("slip on an empty stack");
  require(cmd.u >= 0 && cmd.u < kImageW && cmd.v >= 0 && cmd.v < kImageH,
          "slip command outside image bounds");
  const auto& m = top_material(c, s);
  const auto& p = c.sim;
  Observation o;
  o.degenerate = !inside_object(s, cmd.u, cmd.v);
  double f0 = o.degenerate ? 0.0 : contact_force(p, p.standoff - s.eps);

  double h_m = (stack_height_mm(c, s) + s.eps) / 1000.0;
  for (int y = 0; y < kVisSize; ++y) {
    for (int x = 0; x < kVisSize; ++x) {
      int iy = cmd.v - kVisSize / 2 + y, ix = cmd.u - kVisSize / 2 + x;
      bool in = inside_object(s, ix, iy);
      double base = c.sim.cam_depth - (in ? h_m : 0.0);
      o.vis[y * kVisSize + x] =
          float(base + s.rng.normal(0.0, m.depth_noise / 1000.0));
    }
  }

  double n0 = s.rng.normal(0.0, p.noise_force);
  double n1 = s.rng.normal(0.0, p.noise_force);
  double n2 = s.rng.normal(0.0, p.noise_force);
  double m3 = s.rng.normal(0.0, p.noise_moment);
  double m4 = s.rng.normal(0.0, p.noise_moment);
  double m5 = s.rng.normal(0.0, p.noise_moment);
  double th0 = cmd.direction_deg * M_PI / 180.0;
  o.pro[0] = float(m.friction * f0 + n0);
  o.pro[1] = float(n1);
  o.pro[2] = float(o.degenerate ? n2 : -f0 - p.b_layer * s.remaining + n2);
  o.pro[3] = float(m3);
  o.pro[4] = float(p.r_torque * f0 * std::sin(th0) + m4);
  o.pro[5] = float(m5);

  double amp = m.tactile_amp * (f0 / p.f_sat) * m.softness;
  double psi = s.rng.uniform(0.0, M_PI);
  double phase = s.rng.uniform(0.0, 2.0 * M_PI);
  double kx = std::cos(psi) * m.roughness, ky = std::sin(psi) * m.roughness;
  auto fill = [&](std::array<float, kTouchSize * kTouchSize * kTouchChannels>&
                      field,
                  double scale) {
    const int n = kTouchSize;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        double arg = 2.0 * M_PI * (kx * x + ky * y) / n + phase;
        double dome = std::exp(-((x - 12.0) * (x - 12.0) +
                                 (y - 12.0) * (y - 12.0)) /
                               (2.0 * 5.0 * 5.0));
        field[0 * n * n + y * n + x] =
            float(scale * amp * std::sin(arg) + s.rng.normal(0.0, 0.005));
        field[1 * n * n + y * n + x] =
            float(scale * amp * std::cos(arg) + s.rng.normal(0.0, 0.005));
        field[2 * n * n + y * n + x] =
            float(scale * amp * dome + s.rng.normal(0.0, 0.005));
      }
    }
  };
  fill(o.ind, 1.0);
  fill(o.thu, p.thumb_atten);

  o.aux = encode_aux(Stage::Outer, std::nullopt);
  return o;
}

StepResult step_physical(const cfg::RunConfig& c, StackState& s,
                         const PhysicalAction& act) {
  if (s.remaining <= 0) throw RuntimeFailure("step on an empty stack");
  double prob = success_probability(c, s, act, s.a_off, s.b_off);
  StepResult r;
  r.reward = s.rng.uniform(0.0, 1.0) < prob ? 1 : 0;
  r.done = true;
  if (r.reward) s.remaining -= 1;
  return r;
}

StepResult step(const cfg::RunConfig& c, StackState& s, OuterAction outer,
                const InnerAction& inner) {
  const ActionGrid& grid = grid_for(outer.selection);
  PhysicalAction act = decode_action(grid, inner);
  act.omega = true;
  return step_physical(c, s, act);
}

double marginal_p(const cfg::RunConfig& c, const StackState& s,
                  const PhysicalAction& act, double a_off_cm,
                  double b_off_cm) {
  const auto& m = top_material(c, s);
  double sigma = m.depth_noise;
  if (sigma <= 0.0)
    return success_probability_eps(c, s, act, a_off_cm, b_off_cm, 0.0);
  static std::vector<double> xs, ws;
  if (xs.empty()) legendre_rule(64, xs, ws);
  const double span = 6.0;  // +-6 sigma covers the mass to ~2e-9
  double acc = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double e = span * sigma * xs[i];
    double pdf = std::exp(-e * e / (2.0 * sigma * sigma)) /
                 (sigma * std::sqrt(2.0 * M_PI));
    acc += ws[i] * span * sigma * pdf *
           success_probability_eps(c, s, act, a_off_cm, b_off_cm, e);
  }
  return acc;
}

double marginal_p_mc(const cfg::RunConfig& c, const StackState& s,
                     const PhysicalAction& act, double a_off_cm,
                     double b_off_cm, int samples, uint64_t seed) {
  const auto& m = top_material(c, s);
  grad::Rng rng(seed);
  double acc = 0.0;
  for (int i = 0; i < samples; i += 2) {
    double e = rng.normal(0.0, m.depth_noise);
    // antithetic pairing halves the estimator variance
    acc += success_probability_eps(c, s, act, a_off_cm, b_off_cm, e);
    acc += success_probability_eps(c, s, act, a_off_cm, b_off_cm, -e);
  }
  return acc / (2 * ((samples + 1) / 2));
}

OracleResult oracle_best(const cfg::RunConfig& c, const StackState& s) {
  require(s.remaining > 0, "oracle on an empty stack");
  const auto& m = top_material(c, s);
  OracleResult best;
  best.p = -1.0;
  for (Granularity g : {Granularity::Fine, Granularity::Coarse}) {
    const ActionGrid& grid = grid_for(g);
    for (int ix = 0; ix < grid.x.count; ++ix) {
      for (int iz = 0; iz < grid.z.count; ++iz) {
        for (int it = 0; it < grid.theta.count; ++it) {
          InnerAction a{ix, iz, it, true};
          PhysicalAction act = decode_action(grid, a);
          double p = marginal_p(c, s, act, m.slip_offset, m.slip_offset);
          if (p > best.p) {
            best.p = p;
            best.outer = OuterAction{g};
            best.inner = a;
          }
        }
      }
    }
  }
  return best;
}

}  // namespace tdom::sim
