#pragma once

#include <string>
#include <vector>

#include "bihyper/search.hpp"

namespace bihyper {

// One measured case inside a verification check.  `ok` is `value cmp bound`;
// a report's overall verdict is recomputable from its cases alone.
struct CheckCase {
  std::string label;
  double value = 0.0;
  double bound = 0.0;
  enum class Cmp { le, lt, ge, gt } cmp = Cmp::le;
  bool ok = false;
};

struct CheckReport {
  std::string check_name;
  bool passed = false;
  std::string note;  // context that does not affect the verdict
  std::vector<CheckCase> details;

  static bool evaluate(double value, CheckCase::Cmp cmp, double bound);
  // Re-derive `passed` from the details table; used by the self-audit tests.
  bool recompute() const;
  std::string to_json() const;
};

// Geometric error bound for the K-term Neumann estimator at w*(alpha):
// for every sampled alpha and K,
//   |estimate_K - exact| <= c_l1_wa * c_l2_w * (1/mu) * (1 - gamma mu)^{K+1},
// with the constants measured on the sampled trajectory region.  Also
// asserts the bound is non-vacuous (some error exceeds 1e-12) and, for
// one-dimensional A where the bound is tight, that the fitted log-error
// slope matches log(1 - gamma mu) within 10%.
CheckReport check_theorem1_bound(const QuadraticBilevel& q, double gamma,
                                 const std::vector<int>& K_range,
                                 const std::vector<RealVector>& alphas);

// With inner iterates pinned at w*(alpha), truncating reverse-mode to the
// last K+1 steps computes exactly the K-term Neumann estimate; checked to
// 1e-10 for each K in K_range.
CheckReport check_corollary2(const QuadraticBilevel& q, double gamma,
                             const std::vector<int>& K_range,
                             const std::vector<RealVector>& alphas);

// The truncated estimate stays a descent direction: its inner product with
// the exact hypergradient is positive whenever the exact one is nonzero, and
// for K >= 30 the normalized product sits in [0.99, 1.01].
CheckReport check_descent(const QuadraticBilevel& q, double gamma, const std::vector<int>& Ks,
                          int n_states, std::uint64_t seed);

// Monte-Carlo mean of the minibatch estimator over n_draws (val, train)
// batch pairs versus the full-batch K-term estimate, per coordinate, at 3
// standard errors.  Batch size 0 keeps the full split; degenerate draws
// (stderr 0) must match exactly.
CheckReport check_unbiasedness(const BilevelProblem& p, const BilevelState& s,
                               const EstimatorSpec& spec, int n_draws, int batch_val,
                               int batch_train, std::uint64_t seed);

// Trailing-window mean of the hypergradient norm is below `threshold` and
// window means are nonincreasing over the final half of the run.  Throws
// ConfigError when the window does not fit the trajectory.
CheckReport check_convergence(const SearchTrajectory& traj, int window, double threshold);

}  // namespace bihyper
