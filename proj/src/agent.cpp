#include "tdom/agent.hpp"

#include <cmath>

namespace tdom::agent {

using grad::Graph;
using grad::require;
using grad::Shape;
using grad::Var;

namespace {

// Raw log-std parameters are squashed into [-5, 2]; the init value puts
// the effective standard deviation at 1.
constexpr float kLsCenter = -1.5f;
constexpr float kLsScale = 3.5f;
constexpr float kLsInit = 0.4581454f;
constexpr double kLogSqrt2Pi = 0.9189385332046727;

double clamp_ls(double raw) {
  return kLsCenter + kLsScale * std::tanh(raw);
}

// log(1 - tanh(z)^2), evaluated without cancellation
double tanh_correction(double z) {
  return 2.0 * (std::log(2.0) - z - std::log1p(std::exp(-2.0 * z)));
}

void add_mlp_head(ParamStore<float>& ps, grad::Rng& rng,
                  const std::string& name, int in, int out) {
  grad::add_linear(ps, rng, name + ".l1", in, 64);
  grad::add_linear(ps, rng, name + ".mu", 64, out);
  ps.add(name + ".ls", Shape{out}, std::vector<float>(out, kLsInit));
}

void add_critic(ParamStore<float>& ps, grad::Rng& rng,
                const std::string& name, int adim) {
  grad::add_linear(ps, rng, name + ".l1", fusion::kFusedDim + adim, 64);
  grad::add_linear(ps, rng, name + ".l2", 64, 64);
  grad::add_linear(ps, rng, name + ".l3", 64, 1);
}

// Linear layer read from frozen copies of the stored weights so no
// gradient reaches them; used for the actor's pass through the critics.
Var frozen_linear(Graph<float>& g, const ParamStore<float>& ps,
                  const std::string& name, Var x) {
  const auto& w = ps.entries[ps.find(name + ".w")];
  const auto& b = ps.entries[ps.find(name + ".b")];
  return g.add_rowwise(g.matmul(x, g.constant(w.shape, w.value)),
                       g.constant(b.shape, b.value));
}

Var head_linear(Graph<float>& g, ParamStore<float>& ps,
                const std::string& name, Var x, bool frozen) {
  return frozen ? frozen_linear(g, ps, name, x)
                : grad::linear(g, ps, name, x);
}

Var critic_q(Graph<float>& g, ParamStore<float>& ps, const std::string& name,
             Var latent, Var action, bool frozen) {
  Var x = g.concat({latent, action}, 1);
  Var h = g.relu(head_linear(g, ps, name + ".l1", x, frozen));
  h = g.relu(head_linear(g, ps, name + ".l2", h, frozen));
  return head_linear(g, ps, name + ".l3", h, frozen);
}

Var actor_mu(Graph<float>& g, ParamStore<float>& ps, const std::string& name,
             Var latent) {
  Var h = g.relu(grad::linear(g, ps, name + ".l1", latent));
  return grad::linear(g, ps, name + ".mu", h);
}

// Squashed log-std as [B, dim] rows, gradient flowing to the raw param.
Var ls_rows(Graph<float>& g, ParamStore<float>& ps, const std::string& name,
            int batch, int dim) {
  Var raw = g.param(ps, ps.find(name + ".ls"));
  Var ls = g.add_scalar(g.scale(g.tanh_(raw), kLsScale), kLsCenter);
  return g.add_rowwise(g.zeros(Shape{batch, dim}), ls);
}

}  // namespace

Agent::Agent(fusion::Mode mode, uint64_t seed) : mode_(mode) {
  grad::Rng rng(seed);
  fusion::add_encoder_params(ps_, rng, mode);
  if (mode != fusion::Mode::SL) {
    add_mlp_head(ps_, rng, "opi", fusion::kFusedDim, 1);
    add_critic(ps_, rng, "oq1", 1);
    add_critic(ps_, rng, "oq2", 1);
  }
  add_mlp_head(ps_, rng, "ipi", fusion::kFusedDim, 4);
  add_critic(ps_, rng, "iq1", 4);
  add_critic(ps_, rng, "iq2", 4);
}

namespace {

// Encoder forward for a single observation; returns the fused latent.
std::vector<float> encode_one(ParamStore<float>& ps, fusion::Mode mode,
                              const Observation& obs) {
  fusion::ObsBatch b;
  b.append(obs);
  Graph<float> g;
  auto in = fusion::obs_inputs(g, b);
  Var l = fusion::encode_obs(g, ps, mode, in.vis, in.ind, in.thu, in.pro,
                             in.aux);
  return g.val(l);
}

ActResult sample_head(ParamStore<float>& ps, fusion::Mode mode,
                      const Observation& obs, const std::string& head,
                      int dim, grad::Rng& rng, bool deterministic) {
  std::vector<float> latent = encode_one(ps, mode, obs);
  Graph<float> g;
  Var l = g.constant(Shape{1, fusion::kFusedDim}, latent);
  Var mu = actor_mu(g, ps, head, l);
  const auto& mv = g.val(mu);
  const auto& lsp = ps.entries[ps.find(head + ".ls")].value;
  ActResult r;
  r.dim = dim;
  for (int i = 0; i < dim; ++i) {
    double ls = clamp_ls(lsp[i]);
    double xi = deterministic ? 0.0 : rng.normal(0.0, 1.0);
    double z = mv[i] + std::exp(ls) * xi;
    r.u[i] = std::tanh(z);
    r.logp += -0.5 * xi * xi - ls - kLogSqrt2Pi - tanh_correction(z);
  }
  return r;
}

}  // namespace

ActResult Agent::act_outer(const Observation& obs, Rng& rng,
                           bool deterministic) {
  require(mode_ != fusion::Mode::SL, "the SL ablation has no outer loop");
  require(obs.aux[0] == 0.0f && obs.aux[1] == 0.0f,
          "act_outer expects the outer-stage placeholder aux");
  return sample_head(ps_, mode_, obs, "opi", 1, rng, deterministic);
}

ActResult Agent::act_inner(const Observation& obs, const ActionGrid& grid,
                           Rng& rng, bool deterministic) {
  if (mode_ == fusion::Mode::SL) {
    require(grid.x.count == 8 && grid.z.count == 16,
            "SL mode acts on the full-range single-loop grid");
  } else {
    auto want = encode_aux(Stage::Inner, OuterAction{grid.tag});
    require(obs.aux == want,
            "act_inner aux does not encode the grid's granularity");
  }
  return sample_head(ps_, mode_, obs, "ipi", 4, rng, deterministic);
}

InnerAction Agent::inner_from_raw(const std::array<double, 4>& u,
                                  const ActionGrid& grid) {
  InnerAction a;
  a.ix = snap_continuous(u[0], grid.x.count);
  a.iz = snap_continuous(u[1], grid.z.count);
  a.itheta = snap_continuous(u[2], grid.theta.count);
  a.omega = true;  // one-step episodes always close the gripper
  return a;
}

namespace {

struct LoopLoss {
  Var critic, actor;
};

// Critic MSE against the terminal target y = r plus the entropy-regularized
// actor objective. `latent` carries encoder gradients (critic path only);
// the actor path uses `latent_det` and frozen critic weights.
LoopLoss loop_losses(Graph<float>& g, ParamStore<float>& ps,
                     const std::string& pi, const std::string& q1,
                     const std::string& q2, Var latent, Var latent_det,
                     Var action, Var reward, Var noise, int batch, int dim,
                     float alpha) {
  LoopLoss out;
  Var qa = critic_q(g, ps, q1, latent, action, false);
  Var qb = critic_q(g, ps, q2, latent, action, false);
  Var da = g.sub(qa, reward), db = g.sub(qb, reward);
  out.critic = g.mean(g.add(g.mul(da, da), g.mul(db, db)));

  Var mu = actor_mu(g, ps, pi, latent_det);
  Var ls = ls_rows(g, ps, pi, batch, dim);
  Var z = g.add(mu, g.mul(g.exp_(ls), noise));
  Var t = g.mul(g.sub(z, mu), g.exp_(g.neg(ls)));
  Var lp = g.add_scalar(g.sub(g.scale(g.mul(t, t), -0.5f), ls),
                        float(-kLogSqrt2Pi));
  // minus log(1 - tanh(z)^2) per element, stable form
  Var corr = g.scale(
      g.add(g.add_scalar(g.neg(z), float(std::log(2.0))),
            g.neg(g.softplus(g.scale(z, -2.0f)))),
      2.0f);
  lp = g.sub(lp, corr);
  Var lp_sum = g.reshape(g.scale(g.mean_axis(lp, 1), float(dim)),
                         Shape{batch, 1});
  Var a = g.tanh_(z);
  Var qfa = critic_q(g, ps, q1, latent_det, a, true);
  Var qfb = critic_q(g, ps, q2, latent_det, a, true);
  Var qmin = g.minimum(qfa, qfb);
  out.actor = g.mean(g.sub(g.scale(lp_sum, alpha), qmin));
  return out;
}

}  // namespace

LossReport Agent::update(const ReplayBuffer& buffer,
                         const cfg::SacParams& sac, Rng& rng) {
  LossReport rep;
  if (buffer.size() < sac.learning_starts) return rep;
  if (!opt_) opt_.emplace(sac.lr);
  bool outer = mode_ != fusion::Mode::SL;
  int B = std::min(sac.batch_size, buffer.size());
  for (int step = 0; step < sac.gradient_steps; ++step) {
    fusion::ObsBatch batch;
    std::vector<float> a_out, a_in, reward;
    for (int i = 0; i < B; ++i) {
      const Transition& t = buffer.sample(rng);
      batch.append(t.obs);
      Observation inner = t.obs;
      inner.aux = t.inner_aux;
      batch.append(inner);
      a_out.push_back(t.u_out);
      a_in.insert(a_in.end(), t.u_in.begin(), t.u_in.end());
      reward.push_back(t.reward);
    }
    std::vector<float> xi_out(B), xi_in(size_t(B) * 4);
    for (auto& x : xi_out) x = float(rng.normal(0.0, 1.0));
    for (auto& x : xi_in) x = float(rng.normal(0.0, 1.0));

    Graph<float> g;
    auto in = fusion::obs_inputs(g, batch);
    Var lat = fusion::encode_obs(g, ps_, mode_, in.vis, in.ind, in.thu,
                                 in.pro, in.aux);
    // rows alternate outer/inner stages
    Var lat2 = g.reshape(lat, Shape{B, 2, fusion::kFusedDim});
    Var l_out = g.reshape(g.slice(lat2, 1, 0, 1), Shape{B, fusion::kFusedDim});
    Var l_in = g.reshape(g.slice(lat2, 1, 1, 1), Shape{B, fusion::kFusedDim});
    Var l_out_det = g.constant(Shape{B, fusion::kFusedDim}, g.val(l_out));
    Var l_in_det = g.constant(Shape{B, fusion::kFusedDim}, g.val(l_in));
    Var r = g.constant(Shape{B, 1}, reward);

    Var total;
    if (outer) {
      auto lo = loop_losses(g, ps_, "opi", "oq1", "oq2", l_out, l_out_det,
                            g.constant(Shape{B, 1}, a_out), r,
                            g.constant(Shape{B, 1}, xi_out), B, 1,
                            float(sac.alpha));
      auto li = loop_losses(g, ps_, "ipi", "iq1", "iq2", l_in, l_in_det,
                            g.constant(Shape{B, 4}, a_in), r,
                            g.constant(Shape{B, 4}, xi_in), B, 4,
                            float(sac.alpha));
      total = g.add(g.add(lo.critic, lo.actor), g.add(li.critic, li.actor));
      rep.outer_critic += g.val(lo.critic)[0];
      rep.outer_actor += g.val(lo.actor)[0];
      rep.inner_critic += g.val(li.critic)[0];
      rep.inner_actor += g.val(li.actor)[0];
    } else {
      auto li = loop_losses(g, ps_, "ipi", "iq1", "iq2", l_in, l_in_det,
                            g.constant(Shape{B, 4}, a_in), r,
                            g.constant(Shape{B, 4}, xi_in), B, 4,
                            float(sac.alpha));
      total = g.add(li.critic, li.actor);
      rep.inner_critic += g.val(li.critic)[0];
      rep.inner_actor += g.val(li.actor)[0];
    }
    if (!std::isfinite(double(g.val(total)[0])))
      throw RuntimeFailure("SAC update diverged (non-finite loss)");
    ps_.zero_grad();
    g.backward(total);
    g.collect_param_grads(ps_);
    opt_->step(ps_);
  }
  rep.outer_critic /= sac.gradient_steps;
  rep.outer_actor /= sac.gradient_steps;
  rep.inner_critic /= sac.gradient_steps;
  rep.inner_actor /= sac.gradient_steps;
  rep.updated = true;
  return rep;
}

void Agent::save(const std::string& path,
                 const std::string& config_hash) const {
  auto c = ckpt::from_params(ps_, config_hash, fusion::mode_name(mode_));
  ckpt::write_checkpoint(path, c);
}

void Agent::load(const std::string& path, const std::string& config_hash) {
  auto c = ckpt::read_checkpoint(path);
  ckpt::check_compat(c, config_hash, fusion::mode_name(mode_));
  ckpt::to_params(c, ps_);
}

}  // namespace tdom::agent
