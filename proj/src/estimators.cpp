#include "bihyper/estimators.hpp"

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "bihyper/errors.hpp"

namespace bihyper {

const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::exact_ift: return "exact_ift";
    case EstimatorKind::one_step_unrolled: return "one_step_unrolled";
    case EstimatorKind::t1t2: return "t1t2";
    case EstimatorKind::reverse_mode: return "reverse_mode";
    case EstimatorKind::truncated_reverse: return "truncated_reverse";
    case EstimatorKind::neumann_k: return "neumann_k";
    case EstimatorKind::conjugate_gradient: return "conjugate_gradient";
    case EstimatorKind::stochastic_neumann: return "stochastic_neumann";
  }
  return "?";
}

std::optional<EstimatorKind> estimator_from_string(std::string_view name) {
  for (EstimatorKind k :
       {EstimatorKind::exact_ift, EstimatorKind::one_step_unrolled, EstimatorKind::t1t2,
        EstimatorKind::reverse_mode, EstimatorKind::truncated_reverse, EstimatorKind::neumann_k,
        EstimatorKind::conjugate_gradient, EstimatorKind::stochastic_neumann}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

void EstimatorSpec::validate() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw ConfigError("estimator: gamma must be > 0 and finite");
  }
  if (eps.scale <= 0.0) throw ConfigError("estimator: epsilon scale must be > 0");
  const std::string who = to_string(kind);
  auto want = [&](const std::optional<int>& f, const char* fname, bool needed, int lo) {
    if (needed) {
      if (!f.has_value()) throw ConfigError(who + " requires " + fname);
      if (*f < lo) {
        throw ConfigError(who + ": " + fname + " must be >= " + std::to_string(lo));
      }
    } else if (f.has_value()) {
      throw ConfigError(std::string(fname) + " is not meaningful for " + who);
    }
  };
  switch (kind) {
    case EstimatorKind::exact_ift:
    case EstimatorKind::one_step_unrolled:
    case EstimatorKind::t1t2:
      want(K, "K", false, 0);
      want(T, "T", false, 0);
      want(S, "S", false, 0);
      break;
    case EstimatorKind::reverse_mode:
      want(K, "K", false, 0);
      want(T, "T", true, 1);
      want(S, "S", false, 0);
      break;
    case EstimatorKind::truncated_reverse:
      want(K, "K", true, 0);
      want(T, "T", true, 1);
      want(S, "S", false, 0);
      break;
    case EstimatorKind::neumann_k:
    case EstimatorKind::stochastic_neumann:
      want(K, "K", true, 0);
      want(T, "T", false, 0);
      want(S, "S", false, 0);
      break;
    case EstimatorKind::conjugate_gradient:
      want(K, "K", false, 0);
      want(T, "T", false, 0);
      want(S, "S", true, 1);
      break;
  }
}

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  long ns() const {
    return static_cast<long>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count());
  }
};

void expect_kind(const EstimatorSpec& spec, EstimatorKind k) {
  if (spec.kind != k) {
    throw ContractError(std::string("estimator entry point for ") + to_string(k) +
                        " called with spec.kind == " + to_string(spec.kind));
  }
  spec.validate();
}

// Shipped estimators approximate the mixed second derivative by finite
// differences; only the oracle path (exact_ift) may take the analytic route.
RealVector mixed_fd(const BilevelProblem& p, const BilevelState& s, const RealVector& a,
                    const Batch& train, const EpsilonRule& rule, Cost& cost) {
  return finite_diff_mixed_product(p, s, a, train, rule, &cost);
}

// gamma * lambda_max(A) <= 1 keeps every Neumann iterate non-expanding; the
// gate is only checkable when the Hessian spectrum is known in closed form.
void check_neumann_step(const BilevelProblem& p, double gamma) {
  if (const auto* q = dynamic_cast<const QuadraticBilevel*>(&p)) {
    const double rho = gamma * q->lambda_max();
    if (rho > 1.0 + 1e-12) {
      throw ContractError("neumann estimator: gamma * lambda_max(A) = " + std::to_string(rho) +
                          " exceeds 1; the series is outside its convergent regime");
    }
  }
}

HypergradientEstimate finish(HypergradientEstimate e, const Cost& cost, long peak,
                             const Timer& t) {
  e.hvp_count = cost.hvp_count;
  e.grad_eval_count = cost.grad_eval_count;
  e.stored_vector_peak = peak;
  e.wall_ns = t.ns();
  require_finite(e.grad_alpha, "hypergradient estimate");
  return e;
}

// Shared by neumann_k and stochastic_neumann; the two differ only in which
// batches the caller hands in.
HypergradientEstimate neumann_core(const BilevelProblem& p, const BilevelState& s,
                                   const EstimatorSpec& spec, const EstimateBatches& batches) {
  Timer t;
  Cost cost;
  check_neumann_step(p, spec.gamma);
  const EvalResult outer = p.outer_eval(s, batches.val);
  ++cost.grad_eval_count;
  const RealVector sum =
      neumann_sum_vector(p, s, outer.grad_w, *spec.K, spec.gamma, batches.train, &cost);
  const RealVector m = mixed_fd(p, s, sum, batches.train, spec.eps, cost);
  HypergradientEstimate e;
  e.grad_alpha = outer.grad_alpha - spec.gamma * m;
  // v_current + running sum + HVP result + finite-difference probe.
  return finish(std::move(e), cost, 4, t);
}

// Forward unroll with a stored-iterate window, then a backward adjoint pass.
// retained == T differentiates the whole unroll; retained < T truncates the
// backward pass (and the tape) to the last `retained` steps.
HypergradientEstimate unroll_core(const BilevelProblem& p, const BilevelState& s0,
                                  const EstimatorSpec& spec, const EstimateBatches& batches,
                                  int T, int retained) {
  Timer t;
  Cost cost;
  if (retained < 0 || retained > T) {
    throw ContractError("reverse estimator: retained steps must lie in [0, T]");
  }
  std::vector<RealVector> tape;  // w_{t-1} for each retained step t
  tape.reserve(static_cast<std::size_t>(retained));

  BilevelState cur = s0;
  for (int step = 1; step <= T; ++step) {
    const EvalResult in = p.inner_eval(cur, batches.train);
    ++cost.grad_eval_count;
    if (T - step < retained) tape.push_back(cur.w);
    cur.w -= spec.gamma * in.grad_w;
    if (!cur.w.allFinite()) {
      throw DivergenceError("reverse estimator: inner iteration diverged at step " +
                            std::to_string(step));
    }
  }

  const EvalResult outer = p.outer_eval(cur, batches.val);
  ++cost.grad_eval_count;
  HypergradientEstimate e;
  e.grad_alpha = outer.grad_alpha;
  RealVector q = outer.grad_w;  // adjoint, propagated backwards through the steps
  BilevelState probe{RealVector(), s0.alpha};
  for (int i = retained - 1; i >= 0; --i) {
    probe.w = tape[static_cast<std::size_t>(i)];
    // Step t maps w -> w - gamma dL1/dw, so its alpha-Jacobian is
    // -gamma d2L1/(dalpha dw) evaluated at the stored iterate.
    e.grad_alpha -= spec.gamma * mixed_fd(p, probe, q, batches.train, spec.eps, cost);
    if (i > 0) {
      q -= spec.gamma * p.hvp_inner_ww(probe, q, batches.train);
      ++cost.hvp_count;
      require_finite(q, "reverse estimator adjoint");
    }
  }
  // Tape plus the adjoint and the current iterate.
  return finish(std::move(e), cost, retained + 2, t);
}

}  // namespace

HypergradientEstimate estimate_one_step_unrolled(const BilevelProblem& p, const BilevelState& s,
                                                 const EstimatorSpec& spec,
                                                 const EstimateBatches& batches) {
  expect_kind(spec, EstimatorKind::one_step_unrolled);
  Timer t;
  Cost cost;
  const EvalResult outer = p.outer_eval(s, batches.val);
  ++cost.grad_eval_count;
  const RealVector m = mixed_fd(p, s, outer.grad_w, batches.train, spec.eps, cost);
  HypergradientEstimate e;
  e.grad_alpha = outer.grad_alpha - spec.gamma * m;
  return finish(std::move(e), cost, 3, t);
}

HypergradientEstimate estimate_t1t2(const BilevelProblem& p, const BilevelState& s,
                                    const EstimatorSpec& spec, const EstimateBatches& batches) {
  expect_kind(spec, EstimatorKind::t1t2);
  Timer t;
  Cost cost;
  const EvalResult outer = p.outer_eval(s, batches.val);
  ++cost.grad_eval_count;
  const RealVector m = mixed_fd(p, s, outer.grad_w, batches.train, spec.eps, cost);
  HypergradientEstimate e;
  e.grad_alpha = outer.grad_alpha - m;  // inverse Hessian taken as the identity
  return finish(std::move(e), cost, 3, t);
}

HypergradientEstimate estimate_neumann_k(const BilevelProblem& p, const BilevelState& s,
                                         const EstimatorSpec& spec,
                                         const EstimateBatches& batches) {
  expect_kind(spec, EstimatorKind::neumann_k);
  return neumann_core(p, s, spec, batches);
}

HypergradientEstimate estimate_stochastic_neumann(const BilevelProblem& p,
                                                  const BilevelState& s,
                                                  const EstimatorSpec& spec,
                                                  const EstimateBatches& batches) {
  expect_kind(spec, EstimatorKind::stochastic_neumann);
  return neumann_core(p, s, spec, batches);
}

HypergradientEstimate estimate_reverse_mode(const BilevelProblem& p, const BilevelState& s,
                                            const EstimatorSpec& spec,
                                            const EstimateBatches& batches) {
  expect_kind(spec, EstimatorKind::reverse_mode);
  return unroll_core(p, s, spec, batches, *spec.T, *spec.T);
}

HypergradientEstimate estimate_truncated_reverse(const BilevelProblem& p, const BilevelState& s,
                                                 const EstimatorSpec& spec,
                                                 const EstimateBatches& batches) {
  expect_kind(spec, EstimatorKind::truncated_reverse);
  if (*spec.K > *spec.T) {
    throw ContractError("truncated_reverse: retained steps K exceed the unroll length T");
  }
  return unroll_core(p, s, spec, batches, *spec.T, *spec.K);
}

HypergradientEstimate estimate_exact_ift(const BilevelProblem& p, const BilevelState& s,
                                         const EstimatorSpec& spec,
                                         const EstimateBatches& batches) {
  expect_kind(spec, EstimatorKind::exact_ift);
  Timer t;
  Cost cost;
  const EvalResult outer = p.outer_eval(s, batches.val);
  ++cost.grad_eval_count;
  const int n = p.weight_dim();

  RealMatrix h;
  if (p.has_dense_hessian()) {
    h = p.dense_hessian_ww(s, batches.train);
  } else {
    h.resize(n, n);
    RealVector unit = RealVector::Zero(n);
    for (int j = 0; j < n; ++j) {
      unit[j] = 1.0;
      h.col(j) = p.hvp_inner_ww(s, unit, batches.train);
      ++cost.hvp_count;
      unit[j] = 0.0;
    }
  }
  const RealVector x = dense_solve(RealMatrix(h.transpose()), outer.grad_w);
  const RealVector m = p.has_analytic_mixed()
                           ? p.mixed_product_analytic(s, x)
                           : mixed_fd(p, s, x, batches.train, spec.eps, cost);
  HypergradientEstimate e;
  e.grad_alpha = outer.grad_alpha - m;
  // The dense Hessian dominates: n columns of w-sized storage.
  return finish(std::move(e), cost, n + 2, t);
}

HypergradientEstimate estimate_conjugate_gradient(const BilevelProblem& p,
                                                  const BilevelState& s,
                                                  const EstimatorSpec& spec,
                                                  const EstimateBatches& batches) {
  expect_kind(spec, EstimatorKind::conjugate_gradient);
  Timer t;
  Cost cost;
  const EvalResult outer = p.outer_eval(s, batches.val);
  ++cost.grad_eval_count;
  const RealVector& b = outer.grad_w;
  HypergradientEstimate e;
  if (b.norm() == 0.0) {
    e.grad_alpha = outer.grad_alpha;
    return finish(std::move(e), cost, 2, t);
  }

  RealVector x = RealVector::Zero(p.weight_dim());
  RealVector r = b - p.hvp_inner_ww(s, x, batches.train);  // the initial residual
  ++cost.hvp_count;
  RealVector d = r;
  double rr = r.squaredNorm();
  const double stop = 1e-14 * b.norm();
  for (int it = 0; it < *spec.S && std::sqrt(rr) > stop; ++it) {
    const RealVector hd = p.hvp_inner_ww(s, d, batches.train);
    ++cost.hvp_count;
    const double dhd = d.dot(hd);
    if (dhd <= 1e-14) {
      throw CgBreakdownError("conjugate_gradient: curvature d^T H d = " + std::to_string(dhd) +
                             " at iteration " + std::to_string(it));
    }
    const double step = rr / dhd;
    x += step * d;
    r -= step * hd;
    const double rr_next = r.squaredNorm();
    d = r + (rr_next / rr) * d;
    rr = rr_next;
  }
  const RealVector m = mixed_fd(p, s, x, batches.train, spec.eps, cost);
  e.grad_alpha = outer.grad_alpha - m;
  // x, r, d, Hd, b plus the finite-difference probe.
  return finish(std::move(e), cost, 6, t);
}

HypergradientEstimate estimate_hypergradient(const BilevelProblem& p, const BilevelState& s,
                                             const EstimatorSpec& spec,
                                             const EstimateBatches& batches) {
  spec.validate();
  switch (spec.kind) {
    case EstimatorKind::exact_ift: return estimate_exact_ift(p, s, spec, batches);
    case EstimatorKind::one_step_unrolled:
      return estimate_one_step_unrolled(p, s, spec, batches);
    case EstimatorKind::t1t2: return estimate_t1t2(p, s, spec, batches);
    case EstimatorKind::reverse_mode: return estimate_reverse_mode(p, s, spec, batches);
    case EstimatorKind::truncated_reverse:
      return estimate_truncated_reverse(p, s, spec, batches);
    case EstimatorKind::neumann_k: return estimate_neumann_k(p, s, spec, batches);
    case EstimatorKind::conjugate_gradient:
      return estimate_conjugate_gradient(p, s, spec, batches);
    case EstimatorKind::stochastic_neumann:
      return estimate_stochastic_neumann(p, s, spec, batches);
  }
  throw ContractError("estimate_hypergradient: unknown estimator kind");
}

}  // namespace bihyper
