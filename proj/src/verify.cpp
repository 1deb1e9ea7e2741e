#include "bihyper/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <limits>
#include <random>
#include <utility>

#include "bihyper/errors.hpp"

namespace bihyper {

namespace {

const char* cmp_name(CheckCase::Cmp c) {
  switch (c) {
    case CheckCase::Cmp::le: return "le";
    case CheckCase::Cmp::lt: return "lt";
    case CheckCase::Cmp::ge: return "ge";
    case CheckCase::Cmp::gt: return "gt";
  }
  return "?";
}

CheckCase make_case(std::string label, double value, double bound, CheckCase::Cmp cmp) {
  CheckCase c;
  c.label = std::move(label);
  c.value = value;
  c.bound = bound;
  c.cmp = cmp;
  c.ok = CheckReport::evaluate(value, cmp, bound);
  return c;
}

void seal(CheckReport& r) {
  r.passed = !r.details.empty() &&
             std::all_of(r.details.begin(), r.details.end(),
                         [](const CheckCase& c) { return c.ok; });
}

// Tolerance for comparisons meant to hold with equality in exact arithmetic.
double slacked(double bound) { return bound * (1.0 + 1e-9) + 1e-12; }

}  // namespace

bool CheckReport::evaluate(double value, CheckCase::Cmp cmp, double bound) {
  switch (cmp) {
    case CheckCase::Cmp::le: return value <= bound;
    case CheckCase::Cmp::lt: return value < bound;
    case CheckCase::Cmp::ge: return value >= bound;
    case CheckCase::Cmp::gt: return value > bound;
  }
  return false;
}

bool CheckReport::recompute() const {
  if (details.empty()) return false;
  for (const CheckCase& c : details) {
    if (!evaluate(c.value, c.cmp, c.bound)) return false;
  }
  return true;
}

std::string CheckReport::to_json() const {
  nlohmann::json j;
  j["check"] = check_name;
  j["passed"] = passed;
  if (!note.empty()) j["note"] = note;
  j["cases"] = nlohmann::json::array();
  for (const CheckCase& c : details) {
    j["cases"].push_back({{"label", c.label},
                          {"value", c.value},
                          {"bound", c.bound},
                          {"cmp", cmp_name(c.cmp)},
                          {"ok", c.ok}});
  }
  return j.dump(2);
}

CheckReport check_theorem1_bound(const QuadraticBilevel& q, double gamma,
                                 const std::vector<int>& K_range,
                                 const std::vector<RealVector>& alphas) {
  if (alphas.empty()) throw ContractError("check_theorem1_bound: no alpha samples");
  if (K_range.empty()) throw ContractError("check_theorem1_bound: empty K range");
  CheckReport rep;
  rep.check_name = "theorem1_bound";

  std::vector<RealVector> region;
  region.reserve(alphas.size());
  for (const RealVector& a : alphas) region.push_back(q.inner_closed_form(a));
  const TheoryConstants tc = q.theory_constants(region);
  const double rho = 1.0 - gamma * tc.mu;
  if (rho < 0.0) {
    throw ContractError("check_theorem1_bound: gamma * mu > 1 is outside the bound's regime");
  }

  EstimatorSpec spec;
  spec.kind = EstimatorKind::neumann_k;
  spec.gamma = gamma;

  double max_err = 0.0;
  std::vector<std::pair<int, double>> scalar_errs;  // (K, error) for the slope fit
  for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
    const RealVector& alpha = alphas[ai];
    const BilevelState state{q.inner_closed_form(alpha), alpha};
    const RealVector exact = q.oracle_exact_hypergradient(alpha);
    for (int K : K_range) {
      spec.K = K;
      const HypergradientEstimate est = estimate_neumann_k(q, state, spec);
      const double err = (est.grad_alpha - exact).norm();
      const double bound =
          tc.c_l1_wa * tc.c_l2_w * (1.0 / tc.mu) * std::pow(rho, K + 1);
      rep.details.push_back(make_case("alpha[" + std::to_string(ai) + "] K=" +
                                          std::to_string(K) + " error within bound",
                                      err, slacked(bound), CheckCase::Cmp::le));
      max_err = std::max(max_err, err);
      if (q.weight_dim() == 1 && ai == 0) scalar_errs.emplace_back(K, err);
    }
  }
  // The bound must actually bite somewhere, otherwise the check is vacuous.
  rep.details.push_back(
      make_case("max error non-vacuous", max_err, 1e-12, CheckCase::Cmp::gt));

  // On a 1-dim instance the bound is an equality, so log-error decays with
  // slope exactly log(1 - gamma mu).
  if (rho > 0.0 && scalar_errs.size() >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (const auto& [K, err] : scalar_errs) {
      if (err <= 0.0) continue;
      const double x = K, y = std::log(err);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      ++n;
    }
    if (n >= 2) {
      const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
      const double target = std::log(rho);
      rep.details.push_back(make_case("log-error slope deviation",
                                      std::abs(slope - target), 0.1 * std::abs(target),
                                      CheckCase::Cmp::le));
    }
  }
  seal(rep);
  return rep;
}

CheckReport check_corollary2(const QuadraticBilevel& q, double gamma,
                             const std::vector<int>& K_range,
                             const std::vector<RealVector>& alphas) {
  if (K_range.empty()) throw ContractError("check_corollary2: empty K range");
  if (alphas.empty()) throw ContractError("check_corollary2: no alpha samples");
  CheckReport rep;
  rep.check_name = "corollary2_equivalence";
  rep.note = "inner iterates pinned at w*(alpha): truncating the backward pass to K+1 "
             "steps reproduces the K-term series estimate";

  for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
    const RealVector& alpha = alphas[ai];
    const BilevelState state{q.inner_closed_form(alpha), alpha};
    for (int K : K_range) {
      if (K < 0) throw ContractError("check_corollary2: K must be >= 0");
      EstimatorSpec sn;
      sn.kind = EstimatorKind::neumann_k;
      sn.gamma = gamma;
      sn.K = K;
      EstimatorSpec st;
      st.kind = EstimatorKind::truncated_reverse;
      st.gamma = gamma;
      st.K = K + 1;  // retained steps
      st.T = K + 2;  // any T >= retained works; the fixed point does not move
      const RealVector a = estimate_neumann_k(q, state, sn).grad_alpha;
      const RealVector b = estimate_truncated_reverse(q, state, st).grad_alpha;
      rep.details.push_back(make_case("alpha[" + std::to_string(ai) + "] K=" +
                                          std::to_string(K) + " series == truncated reverse",
                                      (a - b).lpNorm<Eigen::Infinity>(), 1e-10,
                                      CheckCase::Cmp::le));
    }
  }
  seal(rep);
  return rep;
}

CheckReport check_descent(const QuadraticBilevel& q, double gamma, const std::vector<int>& Ks,
                          int n_states, std::uint64_t seed) {
  if (n_states < 1) throw ContractError("check_descent: n_states must be >= 1");
  if (Ks.empty()) throw ContractError("check_descent: no K values");
  CheckReport rep;
  rep.check_name = "descent_direction";

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  EstimatorSpec spec;
  spec.kind = EstimatorKind::neumann_k;
  spec.gamma = gamma;

  int usable = 0;
  double min_normalized = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_states; ++i) {
    RealVector alpha(q.alpha_dim());
    for (int j = 0; j < q.alpha_dim(); ++j) alpha[j] = gauss(rng);
    const RealVector exact = q.oracle_exact_hypergradient(alpha);
    if (exact.norm() <= 1e-8) continue;  // direction undefined, skip
    ++usable;
    const BilevelState state{q.inner_closed_form(alpha), alpha};
    for (int K : Ks) {
      spec.K = K;
      const RealVector est = estimate_neumann_k(q, state, spec).grad_alpha;
      const double normalized = est.dot(exact) / exact.squaredNorm();
      min_normalized = std::min(min_normalized, normalized);
      if (K >= 30) {
        rep.details.push_back(make_case("state " + std::to_string(i) + " K=" +
                                            std::to_string(K) + " normalized product lower",
                                        normalized, 0.99, CheckCase::Cmp::ge));
        rep.details.push_back(make_case("state " + std::to_string(i) + " K=" +
                                            std::to_string(K) + " normalized product upper",
                                        normalized, 1.01, CheckCase::Cmp::le));
      }
    }
  }
  rep.details.push_back(make_case("min normalized inner product positive", min_normalized,
                                  0.0, CheckCase::Cmp::gt));
  rep.details.push_back(make_case("usable sampled states", usable, n_states / 2.0,
                                  CheckCase::Cmp::ge));
  seal(rep);
  return rep;
}

CheckReport check_unbiasedness(const BilevelProblem& p, const BilevelState& s,
                               const EstimatorSpec& spec, int n_draws, int batch_val,
                               int batch_train, std::uint64_t seed) {
  if (spec.kind != EstimatorKind::stochastic_neumann) {
    throw ContractError("check_unbiasedness: spec must be stochastic_neumann");
  }
  if (n_draws < 2) throw ContractError("check_unbiasedness: need at least 2 draws");
  spec.validate();
  CheckReport rep;
  rep.check_name = "stochastic_unbiasedness";

  // Independent route for the baseline: full-batch K-term series estimator.
  EstimatorSpec full_spec = spec;
  full_spec.kind = EstimatorKind::neumann_k;
  const RealVector full = estimate_neumann_k(p, s, full_spec).grad_alpha;
  const int m = p.alpha_dim();
  RealVector sum = RealVector::Zero(m), sumsq = RealVector::Zero(m);
  std::mt19937_64 rng(seed);
  for (int d = 0; d < n_draws; ++d) {
    EstimateBatches eb;  // batch size 0 keeps the full split
    if (batch_val > 0) {
      eb.val = sample_minibatch(Split::val, p.split_size(Split::val), batch_val, rng);
    }
    if (batch_train > 0) {
      eb.train = sample_minibatch(Split::train, p.split_size(Split::train), batch_train, rng);
    }
    const RealVector g = estimate_stochastic_neumann(p, s, spec, eb).grad_alpha;
    sum += g;
    sumsq += g.cwiseProduct(g);
  }

  double worst_z = 0.0;
  for (int c = 0; c < m; ++c) {
    const double mean = sum[c] / n_draws;
    const double var =
        std::max(0.0, (sumsq[c] - n_draws * mean * mean) / (n_draws - 1));
    const double stderr_c = std::sqrt(var / n_draws);
    const double diff = std::abs(mean - full[c]);
    if (stderr_c == 0.0) {
      // Degenerate sampling (batch == split): the mean must match exactly.
      rep.details.push_back(make_case("coord " + std::to_string(c) + " exact match",
                                      diff, 1e-12, CheckCase::Cmp::le));
    } else {
      const double z = diff / stderr_c;
      worst_z = std::max(worst_z, z);
      rep.details.push_back(make_case("coord " + std::to_string(c) + " z-score", z, 3.0,
                                      CheckCase::Cmp::le));
    }
  }
  rep.note = "worst |z| = " + std::to_string(worst_z) + " over " + std::to_string(n_draws) +
             " draws";
  seal(rep);
  return rep;
}

CheckReport check_convergence(const SearchTrajectory& traj, int window, double threshold) {
  if (window < 1) throw ConfigError("check_convergence: window must be >= 1");
  const int rounds = static_cast<int>(traj.rounds.size());
  if (window > rounds) {
    throw ConfigError("check_convergence: window " + std::to_string(window) +
                      " exceeds the " + std::to_string(rounds) + " recorded rounds");
  }
  if (!(threshold > 0.0)) throw ConfigError("check_convergence: threshold must be > 0");
  CheckReport rep;
  rep.check_name = "convergence";
  if (traj.problem == "toynas") {
    rep.note = "nonconvex mixture weights: outside the hypotheses of the geometric-decay "
               "analysis, reported as an empirical observation";
  }

  auto window_mean = [&](int lo, int hi) {  // [lo, hi)
    double acc = 0.0;
    for (int i = lo; i < hi; ++i) acc += traj.rounds[static_cast<std::size_t>(i)].hyper_norm;
    return acc / (hi - lo);
  };

  rep.details.push_back(make_case("trailing window mean hyper_norm",
                                  window_mean(rounds - window, rounds), threshold,
                                  CheckCase::Cmp::le));

  // Window means over the final half must not increase (1% plateau slack).
  const int half_start = rounds / 2;
  double prev = -1.0;
  int idx = 0;
  for (int lo = half_start; lo + window <= rounds; lo += window, ++idx) {
    const double mean = window_mean(lo, lo + window);
    if (prev >= 0.0) {
      rep.details.push_back(make_case("window " + std::to_string(idx) +
                                          " mean nonincreasing",
                                      mean, prev * 1.01 + 1e-15, CheckCase::Cmp::le));
    }
    prev = mean;
  }
  seal(rep);
  return rep;
}

}  // namespace bihyper
