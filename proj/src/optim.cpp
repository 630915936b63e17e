#include "petseg/optim.hpp"

#include <cmath>
#include <numbers>

#include "petseg/error.hpp"

namespace petseg {

void OptimConfig::validate() const {
  if (!(lr > 0 && weight_decay >= 0 && period_epochs > 0 && decay > 0 && decay <= 1 && grad_clip_norm > 0)) {
    throw ValidationError("optim: lr, T, decay, clip must be positive, decay <= 1, weight decay >= 0");
  }
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) {
    throw ValidationError("optim: invalid Adam betas/eps");
  }
}

nlohmann::json to_json(const OptimConfig& c) {
  return {{"lr", c.lr},         {"weight_decay", c.weight_decay},     {"period_epochs", c.period_epochs},
          {"decay", c.decay},   {"grad_clip_norm", c.grad_clip_norm}, {"beta1", c.beta1},
          {"beta2", c.beta2},   {"adam_eps", c.adam_eps}};
}

OptimConfig optim_config_from_json(const nlohmann::json& j) { return optim_config_from_json(j, OptimConfig{}); }

OptimConfig optim_config_from_json(const nlohmann::json& j, const OptimConfig& base) {
  OptimConfig c = base;
  for (const auto& [k, v] : j.items()) {
    if (k == "lr") c.lr = v.get<double>();
    else if (k == "weight_decay") c.weight_decay = v.get<double>();
    else if (k == "period_epochs") c.period_epochs = v.get<double>();
    else if (k == "decay") c.decay = v.get<double>();
    else if (k == "grad_clip_norm") c.grad_clip_norm = v.get<double>();
    else if (k == "beta1") c.beta1 = v.get<double>();
    else if (k == "beta2") c.beta2 = v.get<double>();
    else if (k == "adam_eps") c.adam_eps = v.get<double>();
    else throw ValidationError("optim: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

double lr_at(double epoch, const OptimConfig& cfg) {
  if (epoch < 0) throw ValidationError("lr_at: epoch must be >= 0");
  const double period = std::floor(epoch / cfg.period_epochs);
  const double pos = epoch - period * cfg.period_epochs;
  return cfg.lr * std::pow(cfg.decay, period) * 0.5 * (1.0 + std::cos(std::numbers::pi * pos / cfg.period_epochs));
}

double grad_norm(const nn::ParameterList<float>& params) {
  double sq = 0.0;
  for (const auto* p : params) {
    for (float g : p->grad) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const nn::ParameterList<float>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const float scale = static_cast<float>(max_norm / norm * (1.0 - 1e-6));
    for (auto* p : params) {
      for (float& g : p->grad) g *= scale;
    }
  }
  return norm;
}

AdamW::AdamW(nn::ParameterList<float> params, const OptimConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto* p : params_) {
    m_.emplace_back(p->size(), 0.0f);
    v_.emplace_back(p->size(), 0.0f);
  }
}

void AdamW::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double shrink = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = p.grad[j];
      m[j] = static_cast<float>(b1 * m[j] + (1.0 - b1) * g);
      v[j] = static_cast<float>(b2 * v[j] + (1.0 - b2) * g * g);
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.adam_eps);
      p.value[j] = static_cast<float>(p.value[j] * shrink - lr * update);
    }
  }
}

}  // namespace petseg
