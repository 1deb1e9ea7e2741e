#pragma once

// Slow, independent reference implementations the tests measure the library
// against.  Everything here is deliberate brute force: plain loops, fixed
// steps, no shared code with the implementation under test.

#include <functional>
#include <random>

#include "bihyper/problems.hpp"

namespace oracles {

using bihyper::Batch;
using bihyper::BilevelProblem;
using bihyper::BilevelState;
using bihyper::RealMatrix;
using bihyper::RealVector;

// Central-difference gradient of a scalar function.
inline RealVector fd_gradient(const std::function<double(const RealVector&)>& f,
                              const RealVector& x, double eps = 1e-5) {
  RealVector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    RealVector xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    g[i] = (f(xp) - f(xm)) / (2.0 * eps);
  }
  return g;
}

// Dense mixed block J[i][j] = d^2 L1 / (dw_i dalpha_j) by perturbing one w
// coordinate at a time and differencing the alpha-gradient.
inline RealMatrix fd_mixed_jacobian(const BilevelProblem& p, const BilevelState& s,
                                    const Batch& train, double eps = 1e-5) {
  RealMatrix J(p.weight_dim(), p.alpha_dim());
  for (int i = 0; i < p.weight_dim(); ++i) {
    BilevelState sp = s, sm = s;
    sp.w[i] += eps;
    sm.w[i] -= eps;
    const RealVector gp = p.inner_eval(sp, train).grad_alpha;
    const RealVector gm = p.inner_eval(sm, train).grad_alpha;
    for (int j = 0; j < p.alpha_dim(); ++j) J(i, j) = (gp[j] - gm[j]) / (2.0 * eps);
  }
  return J;
}

// Dense inner Hessian by differencing grad_w one coordinate at a time.
inline RealMatrix fd_hessian_ww(const BilevelProblem& p, const BilevelState& s,
                                const Batch& train, double eps = 1e-5) {
  RealMatrix H(p.weight_dim(), p.weight_dim());
  for (int i = 0; i < p.weight_dim(); ++i) {
    BilevelState sp = s, sm = s;
    sp.w[i] += eps;
    sm.w[i] -= eps;
    const RealVector gp = p.inner_eval(sp, train).grad_w;
    const RealVector gm = p.inner_eval(sm, train).grad_w;
    for (int j = 0; j < p.weight_dim(); ++j) H(i, j) = (gp[j] - gm[j]) / (2.0 * eps);
  }
  return H;
}

// Hypergradient of the reduced objective alpha -> L2(w_star(alpha), alpha) by
// central differences; the caller supplies the inner solver.
inline RealVector fd_reduced_hypergradient(
    const std::function<RealVector(const RealVector&)>& inner_solve,
    const std::function<double(const BilevelState&)>& outer_loss, const RealVector& alpha,
    double eps = 1e-5) {
  return fd_gradient(
      [&](const RealVector& a) {
        return outer_loss(BilevelState{inner_solve(a), a});
      },
      alpha, eps);
}

// Seeded Gaussian state generator shared by the hygiene sweeps.
inline BilevelState random_state(const BilevelProblem& p, std::mt19937_64& rng,
                                 double w_scale = 0.5, double alpha_scale = 0.5) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  BilevelState s;
  s.w.resize(p.weight_dim());
  for (int i = 0; i < p.weight_dim(); ++i) s.w[i] = w_scale * gauss(rng);
  s.alpha.resize(p.alpha_dim());
  for (int i = 0; i < p.alpha_dim(); ++i) s.alpha[i] = alpha_scale * gauss(rng);
  return s;
}

}  // namespace oracles
