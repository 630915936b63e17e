#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "petseg/case_io.hpp"

namespace petseg {

struct StratifyKey {
  double lesion_volume_ml = 0.0;
  int lesion_count = 0;
};

struct SplitCase {
  std::string case_id;
  std::string patient_id;
  StratifyKey key;
};

struct SplitPlan {
  std::vector<std::string> test_ids;
  std::vector<std::vector<std::string>> folds;
  std::map<std::string, StratifyKey> keys;
  std::uint64_t seed = 0;

  // Every id appears exactly once across test and folds.
  void validate() const;
  std::vector<std::string> all_ids() const;
};

nlohmann::json to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const nlohmann::json& j);

SplitCase split_case(const CaseRecord& rec);

// Patients are the unit of assignment (a patient's studies never straddle two
// splits); a patient's key is the sum over its studies. The test split takes
// one seeded pick from each of round(test_fraction * patients) contiguous
// strata of the (volume, count)-sorted patients. The remainder is walked in
// descending (volume, count) strata of k patients; each stratum gives one
// patient to every fold, the larger patients going to the folds furthest below
// their share of the total lesion volume (ties in seeded order). Exchanges of
// equally sized patients between folds then reduce the spread of the per-fold
// mean lesion volume without changing fold sizes.
SplitPlan make_stratified_splits(const std::vector<SplitCase>& cases, int k, double test_fraction,
                                 std::uint64_t seed);

// Fold usage for ensemble member training. The last `calibration_folds`
// folds are held out from every member and used to fit the stacking weights.
// Member i trains on `train_folds` consecutive usable folds starting at
// i * floor(usable / members) (cyclically) and validates on the rest.
struct MemberFolds {
  std::vector<int> train;
  std::vector<int> val;
};

struct FoldScheme {
  int members = 4;
  int train_folds = 11;
  int calibration_folds = 0;

  void validate(int k) const;
};

MemberFolds member_folds(int member, int k, const FoldScheme& scheme);
std::vector<int> calibration_folds(int k, const FoldScheme& scheme);
std::vector<std::string> ids_in(const SplitPlan& plan, const std::vector<int>& folds);

}  // namespace petseg
