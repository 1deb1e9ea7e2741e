#pragma once

#include "bihyper/problems.hpp"

namespace bihyper {

// Step-size rule for directional central differences: eps = scale / |a|_2,
// so the perturbation |eps * a| has constant length `scale`.
struct EpsilonRule {
  double scale = 0.01;

  // 0 signals "nothing to differentiate" (a == 0).
  double step_for(const RealVector& a) const;
};

// Evaluation counters threaded through the estimator internals.  hvp_count
// counts Hessian-vector products (however they are backed); grad_eval_count
// counts direct L1/L2 gradient evaluations made outside of HVPs.
struct Cost {
  long hvp_count = 0;
  long grad_eval_count = 0;
};

// Full record of a truncated Neumann-series recursion.
struct NeumannAccumulator {
  RealVector v_current;  // V_k after k steps
  RealVector v_sum;      // V_0 + ... + V_k
  int k = 0;
  double gamma = 0.0;
  long hvp_count = 0;  // == k always
};

// Truncated Neumann-series action on v0:
//
//   V_0 = v0,   V_k = (I - gamma H) V_{k-1},   result.v_sum = sum_{k=0}^{K} V_k
//
// with H v = problem.hvp_inner_ww(s, v, train).  gamma * v_sum approximates
// H^{-1} v0 when the spectrum of gamma H sits in (0, 1].  Costs exactly K
// HVPs.  Throws DivergenceError naming the first k whose iterate went
// non-finite.
NeumannAccumulator neumann_accumulate(const BilevelProblem& p, const BilevelState& s,
                                      const RealVector& v0, int K, double gamma,
                                      const Batch& train);

// Convenience wrapper: returns the accumulated sum and adds the HVP count to
// *cost when given.
RealVector neumann_sum_vector(const BilevelProblem& p, const BilevelState& s,
                              const RealVector& v0, int K, double gamma, const Batch& train,
                              Cost* cost);

// a^T d2L1/(dalpha dw) by central differences of dL1/dalpha evaluated at
// w +- eps a (two gradient evaluations, same batch for both).  Exact for
// losses whose alpha-gradient is linear in w.  The caller's state is never
// mutated; a == 0 short-circuits to zero.
RealVector finite_diff_mixed_product(const BilevelProblem& p, const BilevelState& s,
                                     const RealVector& a_vec, const Batch& train,
                                     const EpsilonRule& rule, Cost* cost);

// d2L1/dw2 * v by central differences of grad_w; exact for losses quadratic
// in w.  This is the HVP route for problems without an analytic Hessian.
RealVector hvp_numeric(const BilevelProblem& p, const BilevelState& s, const RealVector& v,
                       const Batch& train, const EpsilonRule& rule, Cost* cost);

}  // namespace bihyper
