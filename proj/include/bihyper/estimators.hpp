#pragma once

#include <optional>
#include <string_view>

#include "bihyper/derivatives.hpp"

namespace bihyper {

// The eight ways this library computes (or approximates) the hypergradient
//
//   dL2/dalpha = pL2/palpha + pL2/pw * dw*/dalpha
//
// at a given state.  `exact_ift` is the reference implementation (direct
// Hessian solve); everything else trades accuracy for cheaper linear algebra.
enum class EstimatorKind {
  exact_ift,
  one_step_unrolled,
  t1t2,
  reverse_mode,
  truncated_reverse,
  neumann_k,
  conjugate_gradient,
  stochastic_neumann,
};

const char* to_string(EstimatorKind k);
std::optional<EstimatorKind> estimator_from_string(std::string_view name);

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::neumann_k;
  // Inner-loop step size; also scales the series correction terms.
  double gamma = 0.25;
  // Series terms for neumann_k / stochastic_neumann; retained backward steps
  // for truncated_reverse.
  std::optional<int> K;
  // Unroll length for reverse_mode / truncated_reverse.
  std::optional<int> T;
  // Iterations for conjugate_gradient.
  std::optional<int> S;
  EpsilonRule eps;

  // Field/kind consistency (throws ConfigError): each kind requires exactly
  // its own knobs and rejects the others.
  void validate() const;
};

// Which data the estimator sees: a validation batch for the L2 terms and a
// training batch for every HVP and mixed-derivative evaluation.  Defaults to
// the full splits.
struct EstimateBatches {
  Batch val{Split::val, {}};
  Batch train{Split::train, {}};
};

struct HypergradientEstimate {
  RealVector grad_alpha;
  long hvp_count = 0;
  long grad_eval_count = 0;
  // Peak number of simultaneously-held w-sized vectors (dense Hessians count
  // as weight_dim of them); the memory-cost proxy reported per estimator.
  long stored_vector_peak = 0;
  long wall_ns = 0;
};

// Dispatch on spec.kind.
HypergradientEstimate estimate_hypergradient(const BilevelProblem& p, const BilevelState& s,
                                             const EstimatorSpec& spec,
                                             const EstimateBatches& batches = {});

// Direct solve of the implicit-function correction: assembles the inner
// Hessian (analytically or column-by-column via HVPs) and solves
// H^T x = pL2/pw.  The in-library oracle for problems without a closed form;
// uses the analytic mixed derivative when the problem offers one.
HypergradientEstimate estimate_exact_ift(const BilevelProblem& p, const BilevelState& s,
                                         const EstimatorSpec& spec,
                                         const EstimateBatches& batches = {});

// pL2/palpha - gamma * (pL2/pw)^T p2L1/(palpha pw), everything evaluated at
// the state passed in.  No HVPs.
HypergradientEstimate estimate_one_step_unrolled(const BilevelProblem& p, const BilevelState& s,
                                                 const EstimatorSpec& spec,
                                                 const EstimateBatches& batches = {});

// Like one_step_unrolled but the correction is not scaled by gamma (the
// inverse Hessian is approximated by the identity).
HypergradientEstimate estimate_t1t2(const BilevelProblem& p, const BilevelState& s,
                                    const EstimatorSpec& spec,
                                    const EstimateBatches& batches = {});

// Differentiate through T inner SGD steps from the given state: forward pass
// records the iterates, backward pass propagates the adjoint of pL2/pw
// through each step (one HVP per step) and accumulates the per-step mixed
// contributions.
HypergradientEstimate estimate_reverse_mode(const BilevelProblem& p, const BilevelState& s,
                                            const EstimatorSpec& spec,
                                            const EstimateBatches& batches = {});

// As reverse_mode, but only the last K steps of the unroll keep their
// iterates and contribute to the backward pass; memory grows with K, not T.
HypergradientEstimate estimate_truncated_reverse(const BilevelProblem& p, const BilevelState& s,
                                                 const EstimatorSpec& spec,
                                                 const EstimateBatches& batches = {});

// K-term Neumann-series approximation of the inverse-Hessian correction:
// constant memory, exactly K HVPs, geometric error decay.
HypergradientEstimate estimate_neumann_k(const BilevelProblem& p, const BilevelState& s,
                                         const EstimatorSpec& spec,
                                         const EstimateBatches& batches = {});

// S iterations of conjugate gradient on H x = pL2/pw using only HVPs.
HypergradientEstimate estimate_conjugate_gradient(const BilevelProblem& p,
                                                  const BilevelState& s,
                                                  const EstimatorSpec& spec,
                                                  const EstimateBatches& batches = {});

// Minibatch form of neumann_k: the L2 terms come from the val batch i, and
// every HVP and both mixed-product evaluations reuse the single train batch
// j.  With full-split batches this is bitwise identical to neumann_k.
HypergradientEstimate estimate_stochastic_neumann(const BilevelProblem& p,
                                                  const BilevelState& s,
                                                  const EstimatorSpec& spec,
                                                  const EstimateBatches& batches = {});

}  // namespace bihyper
