#include "dmd/train/optim.hpp"

#include <cmath>

namespace dmd::train {

Optimizer::Optimizer(const OptimizerConfig& cfg, nn::ParamList<float> params)
    : cfg_(cfg), params_(std::move(params)) {
  if (cfg_.kind != "adam" && cfg_.kind != "sgd") throw ConfigError("optimizer: unknown kind '" + cfg_.kind + "'");
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape());
    if (cfg_.kind == "adam") v_.emplace_back(p->value.shape());
  }
}

void Optimizer::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Optimizer::step(double lr) {
  ++steps_;
  if (cfg_.kind == "sgd") {
    const float mu = static_cast<float>(cfg_.momentum), a = static_cast<float>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      float* m = m_[i].data();
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        m[k] = mu * m[k] + p.grad[k];
        p.value[k] -= a * m[k];
      }
    }
  } else {
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const float a = static_cast<float>(lr / c1), s2 = static_cast<float>(1.0 / std::sqrt(c2));
    const float fb1 = static_cast<float>(b1), fb2 = static_cast<float>(b2), eps = static_cast<float>(cfg_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      float* m = m_[i].data();
      float* v = v_[i].data();
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const float g = p.grad[k];
        m[k] = fb1 * m[k] + (1 - fb1) * g;
        v[k] = fb2 * v[k] + (1 - fb2) * g * g;
        p.value[k] -= a * m[k] / (std::sqrt(v[k]) * s2 + eps);
      }
    }
  }
  zero_grad();
}

std::vector<std::pair<std::string, Tensor<float>*>> Optimizer::state() {
  std::vector<std::pair<std::string, Tensor<float>*>> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("opt.m." + params_[i]->name, &m_[i]);
    if (!v_.empty()) out.emplace_back("opt.v." + params_[i]->name, &v_[i]);
  }
  return out;
}

}  // namespace dmd::train
