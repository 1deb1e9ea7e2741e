#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bihyper/errors.hpp"
#include "bihyper/estimators.hpp"

namespace bihyper {

struct SearchConfig {
  int rounds = 100;
  int T = 4;                 // inner SGD steps per round
  double gamma = 0.25;       // inner step size, shared with the estimator
  double gamma_alpha = 0.1;  // outer step size
  enum class Schedule { constant, cosine };
  Schedule schedule = Schedule::constant;
  double gamma_alpha_floor = 0.0;  // cosine decays to this value
  std::uint64_t seed = 1;
  int batch_train = 0;  // minibatch sizes; 0 means the full split
  int batch_val = 0;
  // Record per-round distance to the closed-form hypergradient (quadratic
  // problems only).
  bool record_oracle = false;
  double w_init_scale = 0.1;  // w starts at seeded Gaussian noise, alpha at zero
  int converge_window = 5;    // consecutive rounds below tol flip the flag
  double converge_tol = 1e-5;

  void validate() const;
  double gamma_alpha_at(int round) const;
};

struct RoundRecord {
  int round = 0;
  double inner_loss = 0.0;
  double outer_loss = 0.0;
  double hyper_norm = 0.0;
  // Set when record_oracle is on: |estimate - closed form| at this round.
  std::optional<double> hyper_oracle_err;
  long hvp_count_cum = 0;
  long stored_vector_peak = 0;
  long wall_ns = 0;
  std::uint64_t alpha_hash = 0;
};

struct SearchTrajectory {
  std::string problem;
  std::string estimator;
  std::vector<RoundRecord> rounds;
  BilevelState final_state;
  bool converged = false;
  long inner_step_count = 0;
  long outer_step_count = 0;
};

// Thrown when a round produces a non-finite iterate; carries whatever part
// of the trajectory completed, for post-mortems.
struct SearchDiverged : DivergenceError {
  SearchDiverged(const std::string& msg, SearchTrajectory partial_, int round_)
      : DivergenceError(msg), partial(std::move(partial_)), round(round_) {}
  SearchTrajectory partial;
  int round = 0;
};

// T plain SGD steps w <- w - gamma dL1/dw, mutating the state in place.
// next_batch supplies the training batch for each step.
void inner_descend(const BilevelProblem& p, BilevelState& state, int T, double gamma,
                   const std::function<Batch()>& next_batch);

// One outer round: inner descent, a single hypergradient estimate at the new
// state, then the alpha update.  Returns the estimate for logging.
HypergradientEstimate algorithm1_round(const BilevelProblem& p, BilevelState& state,
                                       const EstimatorSpec& spec, const SearchConfig& cfg,
                                       double gamma_alpha_now, std::mt19937_64& rng);

// The full outer loop.  alpha starts at zero, w at seeded Gaussian noise.
// Per-round losses are recorded on the full splits so trajectories are
// comparable across batch modes.
SearchTrajectory run_search(const BilevelProblem& p, EstimatorSpec spec, SearchConfig cfg);

// Highest-weight entry per group, ties resolved to the lowest index within
// the group.  group_sizes partitions alpha; {4,4,4} for the toy supernet.
std::vector<int> discretize_argmax(const RealVector& alpha,
                                   const std::vector<int>& group_sizes);

// FNV-1a over the raw bytes; used to fingerprint alpha snapshots in logs.
std::uint64_t hash_alpha(const RealVector& alpha);

}  // namespace bihyper
