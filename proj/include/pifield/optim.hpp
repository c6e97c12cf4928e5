#pragma once

#include "pifield/nn.hpp"

namespace pifield {

// Plain SGD; kept for oracle tests and ablations.
class Sgd {
 public:
  Sgd(ParamStore& ps, float lr) : ps_(&ps), lr_(lr) {
    if (lr <= 0.0f) throw ValueError("sgd: lr must be positive");
  }
  void step();

 private:
  ParamStore* ps_;
  float lr_;
};

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.99f;
  float eps = 1e-8f;
};

// Standard bias-corrected Adam. Moment buffers are exposed as named tensors
// so checkpoints capture the full training state and a resumed run is
// bit-identical to an uninterrupted one.
class Adam {
 public:
  Adam(ParamStore& ps, AdamConfig cfg);
  void step();
  long step_count() const { return t_; }

  void state_tensors(std::vector<std::pair<std::string, Tensor>>& out) const;
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  ParamStore* ps_;
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;  // parallel to ps_->items()
};

}  // namespace pifield
