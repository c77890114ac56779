#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tdom/checkpoint.hpp"
#include "tdom/config.hpp"
#include "tdom/core.hpp"
#include "tdom/fusion.hpp"

namespace tdom::agent {

using grad::ParamStore;
using grad::Rng;

// One completed episode. Outer and inner stages share the sensor readings;
// only the auxiliary state differs between them.
struct Transition {
  Observation obs;                      // outer stage, aux = [0,0]
  std::array<float, kAuxDim> inner_aux{};
  float u_out = 0.0f;                   // raw squashed outer action
  std::array<float, 4> u_in{};          // raw squashed inner action
  float reward = 0.0f;
  int env_id = 0;
  int episode = 0;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity = 10000) : cap_(capacity) {}

  void push(const Transition& t) {
    if (int(data_.size()) < cap_) {
      data_.push_back(t);
    } else {
      data_[next_] = t;
    }
    next_ = (next_ + 1) % cap_;
  }

  int size() const { return int(data_.size()); }
  int capacity() const { return cap_; }
  const Transition& at(int i) const { return data_[i]; }
  const Transition& sample(Rng& rng) const {
    return data_[rng.uniform_int(0, size() - 1)];
  }

 private:
  int cap_;
  int next_ = 0;
  std::vector<Transition> data_;
};

struct ActResult {
  std::array<double, 4> u{};  // raw action, first `dim` entries valid
  int dim = 0;
  double logp = 0.0;
};

struct LossReport {
  double outer_critic = 0.0, inner_critic = 0.0;
  double outer_actor = 0.0, inner_actor = 0.0;
  bool updated = false;
};

// Hierarchical soft actor-critic over the shared multisensory encoder.
// The outer head picks the action-space granularity, the inner head the
// concrete displacement; both loops see the same binary reward.
class Agent {
 public:
  Agent(fusion::Mode mode, uint64_t seed);

  fusion::Mode mode() const { return mode_; }
  ParamStore<float>& params() { return ps_; }
  const ParamStore<float>& params() const { return ps_; }

  // obs must carry the outer-stage placeholder aux. Fine iff u >= 0.
  ActResult act_outer(const Observation& obs, Rng& rng, bool deterministic);
  static OuterAction outer_from_raw(double u_out) {
    return {u_out >= 0.0 ? Granularity::Fine : Granularity::Coarse};
  }

  // obs aux must encode stage Inner with the grid's granularity (except in
  // SL mode, which has no auxiliary state and uses the full-range grid).
  ActResult act_inner(const Observation& obs, const ActionGrid& grid,
                      Rng& rng, bool deterministic);
  static InnerAction inner_from_raw(const std::array<double, 4>& u,
                                    const ActionGrid& grid);

  LossReport update(const ReplayBuffer& buffer, const cfg::SacParams& sac,
                    Rng& rng);

  void save(const std::string& path, const std::string& config_hash) const;
  void load(const std::string& path, const std::string& config_hash);

 private:
  fusion::Mode mode_;
  ParamStore<float> ps_;
  std::optional<grad::Adam<float>> opt_;
};

}  // namespace tdom::agent
