#pragma once

#include <vector>

#include "json.hpp"
#include "petseg/layers.hpp"

namespace petseg {

struct OptimConfig {
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double period_epochs = 200.0;
  double decay = 0.9;
  double grad_clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

nlohmann::json to_json(const OptimConfig& c);
OptimConfig optim_config_from_json(const nlohmann::json& j);
// Keys present in `j` override `base`.
OptimConfig optim_config_from_json(const nlohmann::json& j, const OptimConfig& base);

// lr0 * decay^floor(e/T) * (1 + cos(pi * (e mod T) / T)) / 2
double lr_at(double epoch, const OptimConfig& cfg);

// Scales all gradients so their global L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_grad_norm(const nn::ParameterList<float>& params, double max_norm);
double grad_norm(const nn::ParameterList<float>& params);

// Adam with decoupled weight decay: p -= lr * wd * p, then the Adam update.
class AdamW {
 public:
  AdamW(nn::ParameterList<float> params, const OptimConfig& cfg);
  void step(double lr);
  void zero_grad();
  long steps() const { return t_; }

 private:
  nn::ParameterList<float> params_;
  OptimConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  long t_ = 0;
};

}  // namespace petseg
