#include "petseg/splits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "petseg/error.hpp"

namespace petseg {

namespace {

struct Unit {
  std::string patient;
  std::vector<std::string> ids;
  StratifyKey key;
};

bool key_less(const Unit& a, const Unit& b) {
  if (a.key.lesion_volume_ml != b.key.lesion_volume_ml) return a.key.lesion_volume_ml < b.key.lesion_volume_ml;
  if (a.key.lesion_count != b.key.lesion_count) return a.key.lesion_count < b.key.lesion_count;
  return a.patient < b.patient;
}


// Sum over folds of the squared deviation of the per-case mean lesion volume
// from the pooled mean.
double imbalance(const std::vector<double>& volume, const std::vector<std::size_t>& cases, double mean) {
  double s = 0.0;
  for (std::size_t f = 0; f < volume.size(); ++f) {
    const double d = volume[f] / static_cast<double>(cases[f]) - mean;
    s += d * d;
  }
  return s;
}

// Greedy pairwise exchanges of equally sized units between folds while the
// imbalance drops. Fold case counts are unchanged.
void refine_by_swaps(const std::vector<Unit>& units, std::vector<std::vector<std::size_t>>& folds) {
  const std::size_t k = folds.size();
  std::vector<double> volume(k, 0.0);
  std::vector<std::size_t> cases(k, 0);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t u : folds[f]) {
      volume[f] += units[u].key.lesion_volume_ml;
      cases[f] += units[u].ids.size();
    }
    total += volume[f];
    n += cases[f];
  }
  const double mean = total / static_cast<double>(n);
  double current = imbalance(volume, cases, mean);
  for (int pass = 0; pass < 100; ++pass) {
    bool improved = false;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) {
        for (std::size_t& ua : folds[a]) {
          for (std::size_t& ub : folds[b]) {
            if (units[ua].ids.size() != units[ub].ids.size()) continue;
            const double delta = units[ub].key.lesion_volume_ml - units[ua].key.lesion_volume_ml;
            if (delta == 0.0) continue;
            volume[a] += delta;
            volume[b] -= delta;
            const double next = imbalance(volume, cases, mean);
            if (next < current - 1e-12 * (1.0 + current)) {
              std::swap(ua, ub);
              current = next;
              improved = true;
            } else {
              volume[a] -= delta;
              volume[b] += delta;
            }
          }
        }
      }
    }
    if (!improved) break;
  }
}

}  // namespace

void SplitPlan::validate() const {
  std::set<std::string> seen;
  auto add = [&](const std::string& id) {
    if (!seen.insert(id).second) throw ValidationError("split plan: id '" + id + "' assigned twice");
  };
  for (const auto& id : test_ids) add(id);
  for (const auto& f : folds) {
    for (const auto& id : f) add(id);
  }
  for (const auto& [id, key] : keys) {
    if (!seen.count(id)) throw ValidationError("split plan: id '" + id + "' not assigned");
  }
  if (!keys.empty() && keys.size() != seen.size()) throw ValidationError("split plan: ids without stratify keys");
}

std::vector<std::string> SplitPlan::all_ids() const {
  std::vector<std::string> out = test_ids;
  for (const auto& f : folds) out.insert(out.end(), f.begin(), f.end());
  return out;
}

nlohmann::json to_json(const SplitPlan& plan) {
  nlohmann::json keys = nlohmann::json::object();
  for (const auto& [id, k] : plan.keys) keys[id] = {{"lesion_volume_ml", k.lesion_volume_ml}, {"lesion_count", k.lesion_count}};
  return {{"seed", plan.seed}, {"test_ids", plan.test_ids}, {"folds", plan.folds}, {"stratify_keys", keys}};
}

SplitPlan split_plan_from_json(const nlohmann::json& j) {
  SplitPlan p;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "seed") p.seed = v.get<std::uint64_t>();
      else if (k == "test_ids") p.test_ids = v.get<std::vector<std::string>>();
      else if (k == "folds") p.folds = v.get<std::vector<std::vector<std::string>>>();
      else if (k == "stratify_keys") {
        for (const auto& [id, kv] : v.items()) {
          p.keys[id] = {kv.at("lesion_volume_ml").get<double>(), kv.at("lesion_count").get<int>()};
        }
      } else {
        throw ValidationError("split plan: unknown key '" + k + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("split plan: ") + e.what());
  }
  p.validate();
  return p;
}

SplitCase split_case(const CaseRecord& rec) {
  return {rec.case_id, rec.patient_id.empty() ? rec.case_id : rec.patient_id, {rec.lesion_volume_ml, rec.lesion_count}};
}

SplitPlan make_stratified_splits(const std::vector<SplitCase>& cases, int k, double test_fraction,
                                 std::uint64_t seed) {
  if (k < 2) throw ValidationError("make_stratified_splits: k must be >= 2");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("make_stratified_splits: test_fraction must be in (0, 1)");
  }
  SplitPlan plan;
  plan.seed = seed;
  std::map<std::string, Unit> by_patient;
  for (const auto& c : cases) {
    if (plan.keys.count(c.case_id)) throw ValidationError("make_stratified_splits: duplicate case id " + c.case_id);
    plan.keys[c.case_id] = c.key;
    const std::string pid = c.patient_id.empty() ? c.case_id : c.patient_id;
    Unit& u = by_patient[pid];
    u.patient = pid;
    u.ids.push_back(c.case_id);
    u.key.lesion_volume_ml += c.key.lesion_volume_ml;
    u.key.lesion_count += c.key.lesion_count;
  }
  std::vector<Unit> units;
  for (auto& [pid, u] : by_patient) units.push_back(std::move(u));
  std::sort(units.begin(), units.end(), key_less);

  const int n_units = static_cast<int>(units.size());
  const int n_test = static_cast<int>(std::lround(test_fraction * n_units));
  if (n_units - n_test < k) {
    throw ValidationError("make_stratified_splits: k=" + std::to_string(k) + " exceeds the " +
                          std::to_string(n_units - n_test) + " development patients");
  }
  std::mt19937_64 rng(seed);

  std::vector<bool> is_test(units.size(), false);
  for (int s = 0; s < n_test; ++s) {
    const int lo = static_cast<int>(static_cast<long>(s) * n_units / n_test);
    const int hi = static_cast<int>(static_cast<long>(s + 1) * n_units / n_test);
    const int pick = lo + static_cast<int>(std::uniform_int_distribution<int>(0, hi - lo - 1)(rng));
    is_test[pick] = true;
  }

  std::vector<Unit> dev;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (is_test[i]) {
      plan.test_ids.insert(plan.test_ids.end(), units[i].ids.begin(), units[i].ids.end());
    } else {
      dev.push_back(units[i]);
    }
  }
  std::reverse(dev.begin(), dev.end());

  plan.folds.assign(k, {});
  const std::size_t n_dev = dev.size();
  double dev_volume = 0.0;
  for (const auto& u : dev) dev_volume += u.key.lesion_volume_ml;
  const double unit_mean = dev_volume / static_cast<double>(n_dev);
  std::vector<std::size_t> cap(k, n_dev / k), count(k, 0);
  std::vector<double> volume(k, 0.0);
  std::vector<std::vector<std::size_t>> fold_units(k);
  for (std::size_t start = 0; start < n_dev; start += k) {
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> used(k, false);
    const std::size_t end = std::min(n_dev, start + k);
    for (std::size_t i = start; i < end; ++i) {
      int best = -1;
      double best_deficit = 0.0;
      for (int f : order) {
        if (used[f] || count[f] >= cap[f]) continue;
        const double deficit = unit_mean * static_cast<double>(cap[f]) - volume[f];
        if (best < 0 || deficit > best_deficit) {
          best = f;
          best_deficit = deficit;
        }
      }
      used[best] = true;
      ++count[best];
      fold_units[best].push_back(i);
      volume[best] += dev[i].key.lesion_volume_ml;
      // The folds holding the largest units take the leftover slots.
      if (start == 0 && i < n_dev % k) ++cap[best];
    }
  }
  refine_by_swaps(dev, fold_units);
  for (int f = 0; f < k; ++f) {
    for (std::size_t u : fold_units[f]) plan.folds[f].insert(plan.folds[f].end(), dev[u].ids.begin(), dev[u].ids.end());
  }
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  std::sort(plan.test_ids.begin(), plan.test_ids.end());
  plan.validate();
  return plan;
}

void FoldScheme::validate(int k) const {
  if (members < 1) throw ValidationError("fold scheme: members must be >= 1");
  if (calibration_folds < 0 || calibration_folds >= k) throw ValidationError("fold scheme: bad calibration fold count");
  const int usable = k - calibration_folds;
  if (train_folds < 1 || train_folds >= usable) {
    throw ValidationError("fold scheme: train_folds must leave at least one validation fold");
  }
}

MemberFolds member_folds(int member, int k, const FoldScheme& scheme) {
  scheme.validate(k);
  if (member < 0 || member >= scheme.members) throw ValidationError("member index out of range");
  const int usable = k - scheme.calibration_folds;
  const int step = std::max(1, usable / scheme.members);
  MemberFolds mf;
  std::vector<bool> train(usable, false);
  for (int j = 0; j < scheme.train_folds; ++j) train[(member * step + j) % usable] = true;
  for (int f = 0; f < usable; ++f) (train[f] ? mf.train : mf.val).push_back(f);
  return mf;
}

std::vector<int> calibration_folds(int k, const FoldScheme& scheme) {
  scheme.validate(k);
  std::vector<int> out;
  for (int f = k - scheme.calibration_folds; f < k; ++f) out.push_back(f);
  return out;
}

std::vector<std::string> ids_in(const SplitPlan& plan, const std::vector<int>& folds) {
  std::vector<std::string> out;
  for (int f : folds) {
    if (f < 0 || f >= static_cast<int>(plan.folds.size())) throw ValidationError("fold index out of range");
    out.insert(out.end(), plan.folds[f].begin(), plan.folds[f].end());
  }
  return out;
}

}  // namespace petseg
