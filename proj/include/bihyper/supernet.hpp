#pragma once

#include <array>
#include <cstdint>

#include "bihyper/problems.hpp"

namespace bihyper {

// A miniature differentiable-architecture-search problem.  Three nodes
// (input X0, hidden X1, output X2) are wired by edges (0,1), (0,2), (1,2);
// each edge mixes four candidate operations with softmax weights over its
// four logits:
//
//   op 0: zero        x -> 0
//   op 1: identity    x -> x
//   op 2: linear      x -> W x
//   op 3: tanh_linear x -> tanh(W x)
//
// Features are 4-dimensional.  Ops 2 and 3 each own a 4x4 weight matrix, so
// w has 3 edges * 2 parametric ops * 16 = 96 entries and alpha has
// 3 edges * 4 ops = 12 logits.  Targets come from a fixed "teacher" that uses
// exactly one op per edge, plus Gaussian observation noise; both losses are
// mean squared error over their split.
class ToySupernet final : public BilevelProblem {
 public:
  static constexpr int kFeatureDim = 4;
  static constexpr int kNumEdges = 3;
  static constexpr int kNumOps = 4;
  // Source node of each edge, in edge order (0,1), (0,2), (1,2).
  static constexpr std::array<int, kNumEdges> kEdgeSrc = {0, 0, 1};

  struct Options {
    std::uint64_t dataset_seed = 7;
    int n_samples = 512;  // split in half: first train, then val
    double noise_sigma = 0.01;
    // Teacher op per edge: tanh on the hidden path, linear skip and readout.
    std::array<int, kNumEdges> teacher_ops = {3, 2, 2};
    // Optional direct penalty lambda/2 |alpha|^2 added to L2, so the outer
    // loss can depend on alpha through more than the mixture weights.
    double alpha_l2 = 0.0;
  };

  ToySupernet() : ToySupernet(Options{}) {}
  explicit ToySupernet(Options opt);

  const std::string& name() const override { return name_; }
  int weight_dim() const override { return kWeightDim; }
  int alpha_dim() const override { return kNumEdges * kNumOps; }
  int split_size(Split s) const override;

  EvalResult inner_eval(const BilevelState& s, const Batch& b) const override;
  EvalResult outer_eval(const BilevelState& s, const Batch& b) const override;
  // Central differences of grad_w; the supernet has no cheap analytic Hessian.
  RealVector hvp_inner_ww(const BilevelState& s, const RealVector& v,
                          const Batch& b) const override;

  // --- discrete-architecture utilities -----------------------------------

  struct RankedArch {
    std::array<int, kNumEdges> ops;
    double val_loss;
  };

  // Train every one of the 4^3 discrete architectures standalone (full-batch
  // gradient descent, `budget` steps, shared seeded init) and return them
  // sorted by final validation loss, best first.  budget must be >= 500.
  std::vector<RankedArch> enumerate_and_rank(int budget, double lr,
                                             std::uint64_t init_seed) const;

  // Validation loss of a single discrete architecture after standalone
  // training; the op-selection path of enumerate_and_rank.
  double discrete_val_loss(const std::array<int, kNumEdges>& arch, int budget, double lr,
                           std::uint64_t init_seed) const;

  const std::array<int, kNumEdges>& teacher_ops() const { return opt_.teacher_ops; }
  const Options& options() const { return opt_; }
  // Targets for one split, one row per sample (used by closed-form checks).
  const Eigen::MatrixXd& targets(Split s) const;

 private:
  static constexpr int kWeightDim = kNumEdges * 2 * kFeatureDim * kFeatureDim;

  Options opt_;
  std::string name_ = "toynas";
  // Sample columns: inputs_ is kFeatureDim x n, one column per sample.
  Eigen::MatrixXd inputs_train_, inputs_val_;
  Eigen::MatrixXd targets_train_, targets_val_;  // kFeatureDim x n
  Eigen::MatrixXd targets_rows_train_, targets_rows_val_;

  std::vector<int> resolve(const Batch& b, Split expected) const;
  const Eigen::MatrixXd& inputs(Split s) const;
  const Eigen::MatrixXd& targets_cols(Split s) const;
};

}  // namespace bihyper
