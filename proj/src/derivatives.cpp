#include "bihyper/derivatives.hpp"

#include <string>

#include "bihyper/errors.hpp"

namespace bihyper {

double EpsilonRule::step_for(const RealVector& a) const {
  if (scale <= 0.0) throw ContractError("EpsilonRule: scale must be > 0");
  const double n = a.norm();
  return n == 0.0 ? 0.0 : scale / n;
}

NeumannAccumulator neumann_accumulate(const BilevelProblem& p, const BilevelState& s,
                                      const RealVector& v0, int K, double gamma,
                                      const Batch& train) {
  if (K < 0) throw ContractError("neumann_accumulate: K must be >= 0");
  if (gamma <= 0.0) throw ContractError("neumann_accumulate: gamma must be > 0");
  if (v0.size() != p.weight_dim()) {
    throw DimensionError("neumann_accumulate: v0 length mismatch");
  }
  require_finite(v0, "neumann_accumulate: v0");

  NeumannAccumulator acc;
  acc.v_current = v0;
  acc.v_sum = v0;
  acc.gamma = gamma;
  for (int k = 1; k <= K; ++k) {
    acc.v_current -= gamma * p.hvp_inner_ww(s, acc.v_current, train);
    ++acc.hvp_count;
    acc.k = k;
    if (!acc.v_current.allFinite()) {
      throw DivergenceError("neumann_accumulate: series diverged at term k=" +
                            std::to_string(k));
    }
    acc.v_sum += acc.v_current;
  }
  return acc;
}

RealVector neumann_sum_vector(const BilevelProblem& p, const BilevelState& s,
                              const RealVector& v0, int K, double gamma, const Batch& train,
                              Cost* cost) {
  NeumannAccumulator acc = neumann_accumulate(p, s, v0, K, gamma, train);
  if (cost != nullptr) cost->hvp_count += acc.hvp_count;
  return acc.v_sum;
}

RealVector finite_diff_mixed_product(const BilevelProblem& p, const BilevelState& s,
                                     const RealVector& a_vec, const Batch& train,
                                     const EpsilonRule& rule, Cost* cost) {
  if (a_vec.size() != p.weight_dim()) {
    throw DimensionError("finite_diff_mixed_product: direction length mismatch");
  }
  require_finite(a_vec, "finite_diff_mixed_product: direction");
  const double eps = rule.step_for(a_vec);
  if (eps == 0.0) return RealVector::Zero(p.alpha_dim());

  BilevelState probe{s.w + eps * a_vec, s.alpha};
  const RealVector g_plus = p.inner_eval(probe, train).grad_alpha;
  probe.w = s.w - eps * a_vec;
  const RealVector g_minus = p.inner_eval(probe, train).grad_alpha;
  if (cost != nullptr) cost->grad_eval_count += 2;
  return (g_plus - g_minus) / (2.0 * eps);
}

RealVector hvp_numeric(const BilevelProblem& p, const BilevelState& s, const RealVector& v,
                       const Batch& train, const EpsilonRule& rule, Cost* cost) {
  if (v.size() != p.weight_dim()) {
    throw DimensionError("hvp_numeric: vector length mismatch");
  }
  require_finite(v, "hvp_numeric: vector");
  const double eps = rule.step_for(v);
  if (eps == 0.0) return RealVector::Zero(p.weight_dim());

  BilevelState probe{s.w + eps * v, s.alpha};
  const RealVector g_plus = p.inner_eval(probe, train).grad_w;
  probe.w = s.w - eps * v;
  const RealVector g_minus = p.inner_eval(probe, train).grad_w;
  if (cost != nullptr) ++cost->hvp_count;
  return (g_plus - g_minus) / (2.0 * eps);
}

}  // namespace bihyper
