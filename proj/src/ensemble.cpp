#include "petseg/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "petseg/error.hpp"

namespace petseg {

StackingWeights StackingWeights::uniform(int members) {
  if (members < 1) throw ValidationError("stacking weights need at least one member");
  return {std::vector<double>(members, 1.0 / members), 0.0};
}

void StackingWeights::validate() const {
  if (w.empty()) throw ValidationError("stacking weights: empty weight vector");
  for (double x : w) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ValidationError("stacking weights must be finite and non-negative");
  }
  if (!std::isfinite(bias)) throw ValidationError("stacking bias must be finite");
}

double StackingWeights::total() const {
  double s = 0.0;
  for (double x : w) s += x;
  return s;
}

nlohmann::json to_json(const StackingWeights& s) { return {{"w", s.w}, {"bias", s.bias}}; }

StackingWeights stacking_weights_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("stacking weights: expected an object");
  for (const auto& [k, v] : j.items()) {
    if (k != "w" && k != "bias") throw ValidationError("stacking weights: unknown key '" + k + "'");
  }
  StackingWeights s;
  try {
    s.w = j.at("w").get<std::vector<double>>();
    s.bias = j.value("bias", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("stacking weights: ") + e.what());
  }
  s.validate();
  return s;
}

void ensemble_combine(const std::vector<std::span<const float>>& maps, const StackingWeights& weights,
                      std::span<float> out) {
  weights.validate();
  if (maps.size() != weights.w.size()) throw ValidationError("ensemble_combine: map/weight count mismatch");
  for (const auto& m : maps) {
    if (m.size() != out.size()) throw GeometryError("ensemble_combine: map size mismatch");
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = weights.bias;
    for (std::size_t m = 0; m < maps.size(); ++m) v += weights.w[m] * maps[m][i];
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
}

VolumeGrid ensemble_combine(const std::vector<VolumeGrid>& maps, const StackingWeights& weights) {
  if (maps.size() < 2) throw ValidationError("ensemble_combine: need at least 2 maps");
  std::vector<std::span<const float>> spans;
  for (const auto& m : maps) {
    require_same_geometry(maps.front().geometry(), m.geometry(), "ensemble_combine");
    if (m.kind() != VolumeKind::Probability) throw ValidationError("ensemble_combine: inputs must be probability maps");
    spans.push_back(m.values());
  }
  std::vector<float> out(maps.front().size());
  ensemble_combine(spans, weights, out);
  return VolumeGrid(maps.front().geometry(), VolumeKind::Probability, std::move(out));
}

namespace {

// All calibration voxels flattened: member-major probabilities and targets.
struct Flat {
  std::size_t members = 0;
  std::vector<std::vector<double>> p;
  std::vector<double> g;
};

Flat flatten(const std::vector<CalibrationCase>& cases) {
  if (cases.empty()) throw ValidationError("fit_stacking_weights: empty calibration set");
  Flat f;
  f.members = cases.front().member_probs.size();
  if (f.members < 1) throw ValidationError("fit_stacking_weights: no member predictions");
  f.p.resize(f.members);
  for (const auto& c : cases) {
    if (c.member_probs.size() != f.members) throw ValidationError("fit_stacking_weights: member count differs between cases");
    if (!is_mask_kind(c.target.kind())) throw ValidationError("fit_stacking_weights: target must be a mask");
    for (std::size_t m = 0; m < f.members; ++m) {
      require_same_geometry(c.target.geometry(), c.member_probs[m].geometry(), "fit_stacking_weights");
      const auto v = c.member_probs[m].values();
      f.p[m].insert(f.p[m].end(), v.begin(), v.end());
    }
    const auto t = c.target.values();
    f.g.insert(f.g.end(), t.begin(), t.end());
  }
  return f;
}

// Loss and (sub)gradient w.r.t. (w, bias); clamped voxels contribute no gradient.
double evaluate(const Flat& f, const StackingWeights& s, const loss::LossWeights& lw, std::vector<double>* grad) {
  const std::size_t n = f.g.size();
  std::vector<double> q(n), dq(grad ? n : 0);
  for (std::size_t i = 0; i < n; ++i) {
    double v = s.bias;
    for (std::size_t m = 0; m < f.members; ++m) v += s.w[m] * f.p[m][i];
    q[i] = std::clamp(v, 0.0, 1.0);
  }
  const double value =
      loss::probability_loss<double>(q, f.g, lw, grad ? std::span<double>(dq) : std::span<double>{}).total;
  if (grad) {
    grad->assign(f.members + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double v = s.bias;
      for (std::size_t m = 0; m < f.members; ++m) v += s.w[m] * f.p[m][i];
      if (v <= 0.0 || v >= 1.0) continue;
      for (std::size_t m = 0; m < f.members; ++m) (*grad)[m] += dq[i] * f.p[m][i];
      (*grad)[f.members] += dq[i];
    }
  }
  return value;
}

StackingWeights project(StackingWeights s) {
  for (double& x : s.w) x = std::max(0.0, x);
  return s;
}

StackingWeights step(const StackingWeights& s, const std::vector<double>& g, double t) {
  StackingWeights n = s;
  for (std::size_t m = 0; m < s.w.size(); ++m) n.w[m] -= t * g[m];
  n.bias -= t * g[s.w.size()];
  return project(n);
}

// Projected gradient descent with Armijo backtracking.
std::pair<StackingWeights, double> descend(const Flat& f, StackingWeights s, const loss::LossWeights& lw,
                                           const StackingFitOptions& opt) {
  std::vector<double> g;
  double value = evaluate(f, s, lw, &g);
  double t = 1.0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    bool moved = false;
    for (int bt = 0; bt < 40; ++bt) {
      const StackingWeights cand = step(s, g, t);
      double decrease = 0.0;
      for (std::size_t m = 0; m < s.w.size(); ++m) decrease += g[m] * (s.w[m] - cand.w[m]);
      decrease += g.back() * (s.bias - cand.bias);
      const double cv = evaluate(f, cand, lw, nullptr);
      if (cv <= value - 1e-4 * decrease && cv < value) {
        const double gain = value - cv;
        s = cand;
        value = evaluate(f, s, lw, &g);
        moved = gain > opt.tolerance;
        t *= 2.0;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
  return {s, value};
}

}  // namespace

double stacking_loss(const std::vector<CalibrationCase>& cases, const StackingWeights& weights,
                     const loss::LossWeights& lw) {
  weights.validate();
  const Flat f = flatten(cases);
  if (weights.w.size() != f.members) throw ValidationError("stacking_loss: weight count mismatch");
  return evaluate(f, weights, lw, nullptr);
}

StackingFit fit_stacking_weights(const std::vector<CalibrationCase>& cases, const loss::LossWeights& lw,
                                 const StackingFitOptions& options) {
  lw.validate();
  const Flat f = flatten(cases);
  const int members = static_cast<int>(f.members);
  // Selectors first; a later start must improve on the incumbent by more than
  // the tolerance.
  std::vector<StackingWeights> starts;
  StackingFit fit;
  for (int m = 0; m < members; ++m) {
    StackingWeights sel{std::vector<double>(members, 0.0), 0.0};
    sel.w[m] = 1.0;
    fit.member_losses.push_back(evaluate(f, sel, lw, nullptr));
    starts.push_back(sel);
  }
  starts.push_back(StackingWeights::uniform(members));
  fit.loss = std::numeric_limits<double>::infinity();
  for (const auto& s0 : starts) {
    auto [s, v] = descend(f, s0, lw, options);
    if (v < fit.loss - options.tolerance) {
      fit.loss = v;
      fit.weights = s;
    }
  }
  return fit;
}

}  // namespace petseg
