#include "causeway/curriculum.hpp"

#include <algorithm>
#include <limits>

#include "causeway/errors.hpp"

namespace causeway::training {

CurriculumSchedule CurriculumSchedule::default_schedule() {
  CurriculumSchedule s;
  s.stages = {
      {0, 5, 0.0, 0.0, 0.0},            // no sparse branch
      {5, 8, 0.2, 0.34, 0.40},
      {8, 10, 0.4, 0.30, 0.34},
      {10, 15, 0.6, 0.20, 0.30},
      {15, std::numeric_limits<int>::max(), 0.8, 0.20, 0.20},  // fixed 0.20
  };
  return s;
}

double CurriculumSchedule::rho_max(int epoch) const {
  return std::max(tau0 - gamma * static_cast<double>(epoch), rho_min);
}

const CurriculumStage& CurriculumSchedule::stage_for(int epoch) const {
  if (epoch < 0) throw InvalidInputError("curriculum: negative epoch");
  for (const auto& st : stages)
    if (epoch >= st.epoch_begin && epoch < st.epoch_end) return st;
  return stages.back();
}

double curriculum_rho(int epoch, const CurriculumSchedule& sched, Rng& rng, bool* sparse_branch) {
  const auto& st = sched.stage_for(epoch);
  bool sparse = rng.bernoulli(st.sparse_prob);
  if (sparse_branch) *sparse_branch = sparse;
  if (!sparse) return rng.uniform();
  if (!sched.staged_intervals) return rng.uniform(0.0, sched.rho_max(epoch));
  if (st.threshold_lo == st.threshold_hi) return st.threshold_lo;
  // Interval is (lo, hi]; flip the half-open side of the uniform draw.
  return st.threshold_hi - (st.threshold_hi - st.threshold_lo) * rng.uniform();
}

double curriculum_rho(int epoch, const CurriculumSchedule& sched, uint64_t seed) {
  Rng rng(seed);
  return curriculum_rho(epoch, sched, rng);
}

}  // namespace causeway::training
