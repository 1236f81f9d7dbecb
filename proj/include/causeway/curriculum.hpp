#pragma once

#include <cstdint>
#include <vector>

#include "causeway/rng.hpp"

namespace causeway::training {

// Epoch-staged mixture for the prior preservation rate. The non-sparse
// branch draws rho ~ U(0,1); the sparse branch draws from the stage's
// threshold interval (or, in annealed mode, from U(0, rho_max(e)) with
// rho_max(e) = max(tau0 - gamma*e, rho_min)).
struct CurriculumStage {
  int epoch_begin = 0;  // inclusive
  int epoch_end = 0;    // exclusive; INT32_MAX-open for the last stage
  double sparse_prob = 0.0;        // pi(e)
  double threshold_lo = 0.0;       // sparse draw interval (lo, hi]
  double threshold_hi = 0.0;
};

struct CurriculumSchedule {
  double tau0 = 0.5;
  double gamma = 0.01;
  double rho_min = 0.2;
  // When false, the sparse branch uses U(0, rho_max(e)) instead of the
  // stage intervals.
  bool staged_intervals = true;
  std::vector<CurriculumStage> stages;

  static CurriculumSchedule default_schedule();

  double rho_max(int epoch) const;
  const CurriculumStage& stage_for(int epoch) const;
  double sparse_prob(int epoch) const { return stage_for(epoch).sparse_prob; }
};

// Mixture draw of the preservation rate for one training step. The
// optional out-parameter reports which branch fired.
double curriculum_rho(int epoch, const CurriculumSchedule& sched, Rng& rng, bool* sparse_branch = nullptr);
double curriculum_rho(int epoch, const CurriculumSchedule& sched, uint64_t seed);

}  // namespace causeway::training
