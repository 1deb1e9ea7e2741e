#include "bihyper/search.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <numbers>

#include "bihyper/errors.hpp"

namespace bihyper {

void SearchConfig::validate() const {
  if (rounds < 1) throw ConfigError("search: rounds must be >= 1");
  if (T < 1) throw ConfigError("search: T must be >= 1");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("search: gamma must be > 0");
  if (gamma_alpha < 0.0 || !std::isfinite(gamma_alpha)) {
    throw ConfigError("search: gamma_alpha must be >= 0");
  }
  if (gamma_alpha_floor < 0.0 || gamma_alpha_floor > gamma_alpha) {
    throw ConfigError("search: gamma_alpha_floor must lie in [0, gamma_alpha]");
  }
  if (batch_train < 0 || batch_val < 0) throw ConfigError("search: batch sizes must be >= 0");
  if (w_init_scale < 0.0) throw ConfigError("search: w_init_scale must be >= 0");
  if (converge_window < 1) throw ConfigError("search: converge_window must be >= 1");
  if (!(converge_tol > 0.0)) throw ConfigError("search: converge_tol must be > 0");
}

double SearchConfig::gamma_alpha_at(int round) const {
  if (schedule == Schedule::constant) return gamma_alpha;
  const double frac = rounds > 1 ? static_cast<double>(round) / (rounds - 1) : 1.0;
  return gamma_alpha_floor +
         0.5 * (gamma_alpha - gamma_alpha_floor) * (1.0 + std::cos(std::numbers::pi * frac));
}

void inner_descend(const BilevelProblem& p, BilevelState& state, int T, double gamma,
                   const std::function<Batch()>& next_batch) {
  if (T < 0) throw ContractError("inner_descend: T must be >= 0");
  if (!(gamma > 0.0)) throw ContractError("inner_descend: gamma must be > 0");
  for (int t = 0; t < T; ++t) {
    const Batch b = next_batch();
    state.w -= gamma * p.inner_eval(state, b).grad_w;
    if (!state.w.allFinite()) {
      throw DivergenceError("inner_descend: iterate diverged at step " + std::to_string(t + 1));
    }
  }
}

HypergradientEstimate algorithm1_round(const BilevelProblem& p, BilevelState& state,
                                       const EstimatorSpec& spec, const SearchConfig& cfg,
                                       double gamma_alpha_now, std::mt19937_64& rng) {
  const int n_train = p.split_size(Split::train);
  const int n_val = p.split_size(Split::val);
  const bool mb_train = cfg.batch_train > 0 && n_train > 0;
  const bool mb_val = cfg.batch_val > 0 && n_val > 0;
  auto next_train = [&]() {
    return mb_train ? sample_minibatch(Split::train, n_train, cfg.batch_train, rng)
                    : full_batch(Split::train);
  };

  inner_descend(p, state, cfg.T, cfg.gamma, next_train);

  EstimateBatches eb;
  eb.val = mb_val ? sample_minibatch(Split::val, n_val, cfg.batch_val, rng)
                  : full_batch(Split::val);
  eb.train = next_train();  // the estimator's training batch j
  const HypergradientEstimate est = estimate_hypergradient(p, state, spec, eb);

  state.alpha -= gamma_alpha_now * est.grad_alpha;
  if (!state.alpha.allFinite()) {
    throw DivergenceError("algorithm1_round: alpha update went non-finite");
  }
  return est;
}

SearchTrajectory run_search(const BilevelProblem& p, EstimatorSpec spec, SearchConfig cfg) {
  cfg.validate();
  // The reverse-mode family unrolls the same inner loop the search runs, so
  // its T defaults to the search's T.
  if ((spec.kind == EstimatorKind::reverse_mode ||
       spec.kind == EstimatorKind::truncated_reverse) &&
      !spec.T.has_value()) {
    spec.T = cfg.T;
  }
  spec.validate();

  const QuadraticBilevel* quad = dynamic_cast<const QuadraticBilevel*>(&p);
  if (cfg.record_oracle && quad == nullptr) {
    throw ConfigError("record_oracle requires a problem with a closed-form hypergradient");
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  BilevelState state;
  state.w = RealVector(p.weight_dim());
  for (int i = 0; i < p.weight_dim(); ++i) state.w[i] = cfg.w_init_scale * gauss(rng);
  state.alpha = RealVector::Zero(p.alpha_dim());

  SearchTrajectory traj;
  traj.problem = p.name();
  traj.estimator = to_string(spec.kind);
  traj.rounds.reserve(static_cast<std::size_t>(cfg.rounds));

  long hvp_cum = 0;
  int below_tol_streak = 0;
  for (int r = 0; r < cfg.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const RealVector alpha_pre = state.alpha;
    HypergradientEstimate est;
    try {
      est = algorithm1_round(p, state, spec, cfg, cfg.gamma_alpha_at(r), rng);
    } catch (const DivergenceError& e) {
      traj.final_state = state;
      throw SearchDiverged(std::string(e.what()) + " (round " + std::to_string(r) + ")",
                           std::move(traj), r);
    }
    traj.inner_step_count += cfg.T;
    traj.outer_step_count += 1;
    hvp_cum += est.hvp_count;

    RoundRecord rec;
    rec.round = r;
    rec.inner_loss = p.inner_loss(state, full_batch(Split::train));
    rec.outer_loss = p.outer_loss(state, full_batch(Split::val));
    rec.hyper_norm = est.grad_alpha.norm();
    if (cfg.record_oracle) {
      rec.hyper_oracle_err =
          (est.grad_alpha - quad->oracle_exact_hypergradient(alpha_pre)).norm();
    }
    rec.hvp_count_cum = hvp_cum;
    rec.stored_vector_peak = est.stored_vector_peak;
    rec.alpha_hash = hash_alpha(state.alpha);
    rec.wall_ns = static_cast<long>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                        std::chrono::steady_clock::now() - t0)
                                        .count());
    traj.rounds.push_back(rec);

    below_tol_streak = rec.hyper_norm < cfg.converge_tol ? below_tol_streak + 1 : 0;
    if (below_tol_streak >= cfg.converge_window) traj.converged = true;
  }
  traj.final_state = std::move(state);
  return traj;
}

std::vector<int> discretize_argmax(const RealVector& alpha,
                                   const std::vector<int>& group_sizes) {
  require_finite(alpha, "discretize_argmax: alpha");
  int total = 0;
  for (int g : group_sizes) {
    if (g < 1) throw ContractError("discretize_argmax: group sizes must be >= 1");
    total += g;
  }
  if (total != alpha.size()) {
    throw DimensionError("discretize_argmax: group sizes cover " + std::to_string(total) +
                         " entries, alpha has " + std::to_string(alpha.size()));
  }
  std::vector<int> picks;
  picks.reserve(group_sizes.size());
  int off = 0;
  for (int g : group_sizes) {
    int best = 0;
    for (int i = 1; i < g; ++i) {
      // strict > keeps the lowest index on ties
      if (alpha[off + i] > alpha[off + best]) best = i;
    }
    picks.push_back(best);
    off += g;
  }
  return picks;
}

std::uint64_t hash_alpha(const RealVector& alpha) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
  const auto* bytes = reinterpret_cast<const unsigned char*>(alpha.data());
  const std::size_t n = static_cast<std::size_t>(alpha.size()) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace bihyper
