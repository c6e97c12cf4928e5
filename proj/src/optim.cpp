#include "pifield/optim.hpp"

#include <cmath>

namespace pifield {

void Sgd::step() {
  for (auto& [name, p] : ps_->items()) {
    if (!p->has_grad) continue;
    const long n = p->value.numel();
    for (long i = 0; i < n; ++i) p->value[i] -= lr_ * p->grad[i];
  }
}

Adam::Adam(ParamStore& ps, AdamConfig cfg) : ps_(&ps), cfg_(cfg) {
  if (cfg.lr <= 0.0f) throw ValueError("adam: lr must be positive");
  for (const auto& [name, p] : ps.items()) {
    m_.push_back(Tensor::zeros(p->value.shape));
    v_.push_back(Tensor::zeros(p->value.shape));
  }
}

void Adam::step() {
  ++t_;
  const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
  const auto& items = ps_->items();
  for (size_t j = 0; j < items.size(); ++j) {
    const Var& p = items[j].second;
    Tensor& m = m_[j];
    Tensor& v = v_[j];
    const long n = p->value.numel();
    const bool has_g = p->has_grad;
    for (long i = 0; i < n; ++i) {
      const float g = has_g ? p->grad[i] : 0.0f;
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g * g;
      const float mh = m[i] / bc1;
      const float vh = v[i] / bc2;
      p->value[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

void Adam::state_tensors(std::vector<std::pair<std::string, Tensor>>& out) const {
  const auto& items = ps_->items();
  for (size_t j = 0; j < items.size(); ++j) {
    out.emplace_back("opt.m." + items[j].first, m_[j]);
    out.emplace_back("opt.v." + items[j].first, v_[j]);
  }
  out.emplace_back("opt.step", Tensor::scalar(static_cast<float>(t_)));
}

void Adam::load_state(const std::map<std::string, Tensor>& state) {
  const auto& items = ps_->items();
  for (size_t j = 0; j < items.size(); ++j) {
    auto im = state.find("opt.m." + items[j].first);
    auto iv = state.find("opt.v." + items[j].first);
    if (im == state.end() || iv == state.end())
      throw ValueError("optimizer state missing for " + items[j].first);
    if (!(im->second.shape == m_[j].shape) || !(iv->second.shape == v_[j].shape))
      throw ShapeError("optimizer state shape mismatch for " + items[j].first);
    m_[j] = im->second;
    v_[j] = iv->second;
  }
  auto is = state.find("opt.step");
  if (is == state.end()) throw ValueError("optimizer state missing step counter");
  t_ = static_cast<long>(is->second[0]);
}

}  // namespace pifield
