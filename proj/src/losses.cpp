#include "petseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "petseg/error.hpp"

namespace petseg::loss {

namespace {

template <typename A, typename B>
void require_same_size(const A& a, const B& b, const char* what) {
  if (a.size() != b.size()) throw GeometryError(std::string(what) + ": size mismatch");
}

constexpr double kProbFloor = 1e-7;

}  // namespace

void LossWeights::validate() const {
  if (dice < 0 || ce < 0 || sensitivity < 0) throw ValidationError("loss weights must be non-negative");
  if (!(epsilon > 0)) throw ValidationError("loss epsilon must be positive");
}

template <typename T>
double soft_dice_loss(std::span<const T> prob, std::span<const T> gt, double eps, std::span<T> grad) {
  require_same_size(prob, gt, "soft_dice_loss");
  double inter = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    inter += static_cast<double>(prob[i]) * gt[i];
    sum += static_cast<double>(prob[i]) + gt[i];
  }
  const double num = 2.0 * inter + eps;
  const double den = sum + eps;
  if (!grad.empty()) {
    require_same_size(prob, grad, "soft_dice_loss grad");
    const double den2 = den * den;
    for (std::size_t i = 0; i < prob.size(); ++i) grad[i] = static_cast<T>(-(2.0 * gt[i] * den - num) / den2);
  }
  return 1.0 - num / den;
}

template <typename T>
double sensitivity_loss(std::span<const T> prob, std::span<const T> gt, double eps, std::span<T> grad) {
  require_same_size(prob, gt, "sensitivity_loss");
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    inter += static_cast<double>(prob[i]) * gt[i];
    total += gt[i];
  }
  const double den = total + eps;
  if (!grad.empty()) {
    require_same_size(prob, grad, "sensitivity_loss grad");
    for (std::size_t i = 0; i < prob.size(); ++i) grad[i] = static_cast<T>(-static_cast<double>(gt[i]) / den);
  }
  return 1.0 - (inter + eps) / den;
}

template <typename T>
double cross_entropy_loss(const Tensor<T>& logits, std::span<const T> gt, Tensor<T>* grad) {
  if (logits.channels() != 2) throw GeometryError("cross_entropy_loss: expected 2 logit channels");
  const std::size_t vox = logits.voxels();
  if (gt.size() != vox * static_cast<std::size_t>(logits.batch())) throw GeometryError("cross_entropy_loss: size mismatch");
  const double count = static_cast<double>(gt.size());
  if (grad) *grad = Tensor<T>(logits.batch(), 2, logits.spatial());
  double total = 0.0;
  for (int n = 0; n < logits.batch(); ++n) {
    const T* l0 = logits.channel(n, 0);
    const T* l1 = logits.channel(n, 1);
    const T* g = gt.data() + n * vox;
    for (std::size_t i = 0; i < vox; ++i) {
      const double a = l0[i], b = l1[i];
      const double m = std::max(a, b);
      const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
      const bool fg = g[i] > T(0.5);
      total += lse - (fg ? b : a);
      if (grad) {
        const double p1 = std::exp(b - lse);
        const double p0 = std::exp(a - lse);
        grad->channel(n, 0)[i] = static_cast<T>((p0 - (fg ? 0.0 : 1.0)) / count);
        grad->channel(n, 1)[i] = static_cast<T>((p1 - (fg ? 1.0 : 0.0)) / count);
      }
    }
  }
  return total / count;
}

template <typename T>
double binary_cross_entropy(std::span<const T> prob, std::span<const T> gt, std::span<T> grad) {
  require_same_size(prob, gt, "binary_cross_entropy");
  const double count = static_cast<double>(prob.size());
  double total = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = std::clamp(static_cast<double>(prob[i]), kProbFloor, 1.0 - kProbFloor);
    const double g = gt[i];
    total += -(g * std::log(p) + (1.0 - g) * std::log(1.0 - p));
    if (!grad.empty()) {
      const bool inside = prob[i] > kProbFloor && prob[i] < 1.0 - kProbFloor;
      grad[i] = inside ? static_cast<T>((-(g / p) + (1.0 - g) / (1.0 - p)) / count) : T(0);
    }
  }
  return total / count;
}

template <typename T>
LossBreakdown logit_loss(const Tensor<T>& logits, const Tensor<T>& gt, const LossWeights& weights, Tensor<T>* grad) {
  if (logits.channels() != 2 || gt.channels() != 1 || logits.batch() != gt.batch() ||
      !(logits.spatial() == gt.spatial())) {
    throw GeometryError("combined loss: logits/gt shape mismatch");
  }
  const std::size_t vox = logits.voxels();
  const std::size_t total = vox * static_cast<std::size_t>(logits.batch());
  std::vector<T> prob(total);
  for (int n = 0; n < logits.batch(); ++n) {
    const T* l0 = logits.channel(n, 0);
    const T* l1 = logits.channel(n, 1);
    for (std::size_t i = 0; i < vox; ++i) {
      prob[n * vox + i] = static_cast<T>(1.0 / (1.0 + std::exp(static_cast<double>(l0[i]) - l1[i])));
    }
  }
  std::span<const T> g = gt.values();
  std::vector<T> g_dice, g_sens;
  if (grad) {
    g_dice.resize(total);
    g_sens.resize(total);
  }
  LossBreakdown out;
  out.dice = soft_dice_loss<T>(prob, g, weights.epsilon, g_dice);
  out.sensitivity = sensitivity_loss<T>(prob, g, weights.epsilon, g_sens);
  Tensor<T> g_ce;
  out.ce = cross_entropy_loss<T>(logits, g, grad ? &g_ce : nullptr);
  out.total = weights.combine(out.dice, out.ce, out.sensitivity);
  if (grad) {
    *grad = Tensor<T>(logits.batch(), 2, logits.spatial());
    for (int n = 0; n < logits.batch(); ++n) {
      for (std::size_t i = 0; i < vox; ++i) {
        const std::size_t k = n * vox + i;
        const double p = prob[k];
        const double dp = weights.dice * g_dice[k] + weights.sensitivity * g_sens[k];
        const double dl1 = dp * p * (1.0 - p);
        grad->channel(n, 0)[i] = static_cast<T>(weights.ce * g_ce.channel(n, 0)[i] - dl1);
        grad->channel(n, 1)[i] = static_cast<T>(weights.ce * g_ce.channel(n, 1)[i] + dl1);
      }
    }
  }
  return out;
}

template <typename T>
LossBreakdown probability_loss(std::span<const T> prob, std::span<const T> gt, const LossWeights& weights,
                               std::span<T> grad) {
  LossBreakdown out;
  std::vector<T> gd, gc, gs;
  if (!grad.empty()) {
    gd.resize(prob.size());
    gc.resize(prob.size());
    gs.resize(prob.size());
  }
  out.dice = soft_dice_loss<T>(prob, gt, weights.epsilon, gd);
  out.ce = binary_cross_entropy<T>(prob, gt, gc);
  out.sensitivity = sensitivity_loss<T>(prob, gt, weights.epsilon, gs);
  out.total = weights.combine(out.dice, out.ce, out.sensitivity);
  if (!grad.empty()) {
    for (std::size_t i = 0; i < prob.size(); ++i) {
      grad[i] = static_cast<T>(weights.dice * gd[i] + weights.ce * gc[i] + weights.sensitivity * gs[i]);
    }
  }
  return out;
}

std::vector<double> deep_supervision_weights(int levels) {
  if (levels < 0) throw ValidationError("deep supervision levels must be >= 0");
  std::vector<double> w(static_cast<std::size_t>(levels) + 1);
  double sum = 0.0;
  for (int k = 0; k <= levels; ++k) {
    w[k] = std::ldexp(1.0, -k);
    sum += w[k];
  }
  for (auto& v : w) v /= sum;
  return w;
}

template <typename T>
Tensor<T> downsample_nearest(const Tensor<T>& gt, int factor) {
  if (factor == 1) return gt;
  const Shape3& in = gt.spatial();
  Shape3 out{std::max(1, in.nx / factor), std::max(1, in.ny / factor), std::max(1, in.nz / factor)};
  Tensor<T> r(gt.batch(), gt.channels(), out);
  for (int n = 0; n < gt.batch(); ++n) {
    for (int c = 0; c < gt.channels(); ++c) {
      const T* src = gt.channel(n, c);
      T* dst = r.channel(n, c);
      for (int z = 0; z < out.nz; ++z) {
        for (int y = 0; y < out.ny; ++y) {
          for (int x = 0; x < out.nx; ++x) dst[out.index(x, y, z)] = src[in.index(x * factor, y * factor, z * factor)];
        }
      }
    }
  }
  return r;
}

template <typename T>
LossBreakdown combined_loss(const std::vector<Tensor<T>>& scales, const Tensor<T>& gt, const LossWeights& weights,
                            std::span<const double> scale_weights, std::vector<Tensor<T>>* grads) {
  if (scales.size() != scale_weights.size()) throw ValidationError("combined_loss: one weight per scale required");
  LossBreakdown out;
  if (grads) grads->assign(scales.size(), Tensor<T>());
  for (std::size_t k = 0; k < scales.size(); ++k) {
    const Tensor<T> gt_k = downsample_nearest(gt, 1 << k);
    Tensor<T> g;
    const LossBreakdown part = logit_loss(scales[k], gt_k, weights, grads ? &g : nullptr);
    const double w = scale_weights[k];
    out.total += w * part.total;
    out.dice += w * part.dice;
    out.ce += w * part.ce;
    out.sensitivity += w * part.sensitivity;
    if (grads) {
      for (auto& v : g.values()) v = static_cast<T>(v * w);
      (*grads)[k] = std::move(g);
    }
  }
  return out;
}

double soft_dice_loss(const VolumeGrid& prob, const VolumeGrid& gt, double eps) {
  require_same_geometry(prob.geometry(), gt.geometry(), "soft_dice_loss");
  return soft_dice_loss<float>(prob.values(), gt.values(), eps);
}

double sensitivity_loss(const VolumeGrid& prob, const VolumeGrid& gt, double eps) {
  require_same_geometry(prob.geometry(), gt.geometry(), "sensitivity_loss");
  return sensitivity_loss<float>(prob.values(), gt.values(), eps);
}

#define PETSEG_INSTANTIATE(T)                                                                                       \
  template double soft_dice_loss<T>(std::span<const T>, std::span<const T>, double, std::span<T>);                 \
  template double sensitivity_loss<T>(std::span<const T>, std::span<const T>, double, std::span<T>);               \
  template double cross_entropy_loss<T>(const Tensor<T>&, std::span<const T>, Tensor<T>*);                         \
  template double binary_cross_entropy<T>(std::span<const T>, std::span<const T>, std::span<T>);                   \
  template LossBreakdown logit_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossWeights&, Tensor<T>*);        \
  template LossBreakdown probability_loss<T>(std::span<const T>, std::span<const T>, const LossWeights&,            \
                                             std::span<T>);                                                        \
  template Tensor<T> downsample_nearest<T>(const Tensor<T>&, int);                                                 \
  template LossBreakdown combined_loss<T>(const std::vector<Tensor<T>>&, const Tensor<T>&, const LossWeights&,     \
                                          std::span<const double>, std::vector<Tensor<T>>*);

PETSEG_INSTANTIATE(float)
PETSEG_INSTANTIATE(double)
#undef PETSEG_INSTANTIATE

}  // namespace petseg::loss
