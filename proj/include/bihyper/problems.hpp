#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "bihyper/numerics.hpp"

namespace bihyper {

// A bilevel problem couples a training loss L1(w, alpha) with a validation
// loss L2(w, alpha).  The inner variable w is trained on L1; the outer
// variable alpha is tuned against L2.  weight_dim / alpha_dim are fixed per
// problem instance.

enum class Split { train, val };

// A view onto one split of a problem's dataset.  Empty `indices` means the
// whole split.  Indices must be sorted, unique and in-bounds for problems
// that carry data; dataset-free problems ignore the contents entirely.
struct Batch {
  Split source = Split::train;
  std::vector<int> indices;

  bool full() const { return indices.empty(); }
};

Batch full_batch(Split s);

// Draw `batch_size` distinct indices uniformly without replacement, returned
// sorted ascending.  batch_size == split_size returns the full split.
Batch sample_minibatch(Split s, int split_size, int batch_size, std::mt19937_64& rng);

struct BilevelState {
  RealVector w;
  RealVector alpha;
};

struct EvalResult {
  double loss = 0.0;
  RealVector grad_w;
  RealVector grad_alpha;
};

class BilevelProblem {
 public:
  virtual ~BilevelProblem() = default;

  virtual const std::string& name() const = 0;
  virtual int weight_dim() const = 0;
  virtual int alpha_dim() const = 0;
  // Number of samples in a split; 0 for problems without data.
  virtual int split_size(Split s) const = 0;

  // L1 with both partials, averaged over the batch.  Batch source must be
  // `train` (or the problem must be dataset-free).
  virtual EvalResult inner_eval(const BilevelState& s, const Batch& b) const = 0;
  // L2 with both partials; batch source must be `val`.
  virtual EvalResult outer_eval(const BilevelState& s, const Batch& b) const = 0;

  // d2L1/dw2 * v on the given batch.  Analytic for the quadratic and ridge
  // problems; central differences of grad_w otherwise (see derivatives).
  virtual RealVector hvp_inner_ww(const BilevelState& s, const RealVector& v,
                                  const Batch& b) const = 0;

  // v^T d2L1/(dalpha dw), the exact mixed second derivative contracted with a
  // w-sized vector.  Only the quadratic family implements this; it backs the
  // oracle paths.  Everything else throws NotAvailableError and callers fall
  // back to finite differences.
  virtual RealVector mixed_product_analytic(const BilevelState& s, const RealVector& v) const;
  virtual bool has_analytic_mixed() const { return false; }

  // Dense d2L1/dw2 for direct solves (exact-IFT).  Problems without a cheap
  // closed form return false and the caller assembles columns via HVPs.
  virtual bool has_dense_hessian() const { return false; }
  virtual RealMatrix dense_hessian_ww(const BilevelState& s, const Batch& b) const;

  // Convenience wrappers.
  double inner_loss(const BilevelState& s, const Batch& b) const { return inner_eval(s, b).loss; }
  double outer_loss(const BilevelState& s, const Batch& b) const { return outer_eval(s, b).loss; }

 protected:
  // Dimension and finiteness checks shared by all implementations.
  void check_state(const BilevelState& s) const;
};

// Expand a batch into explicit indices, validating source, bounds and
// ordering.  Shared by the dataset-backed problems.
std::vector<int> resolve_batch_indices(const Batch& b, Split expected, int split_size,
                                       const std::string& who);

// Constants appearing in the geometric error bound for truncated inverse
// approximations: mu is the smallest Hessian eigenvalue of L1, c_l1_wa bounds
// the mixed second derivative, c_l2_w bounds |dL2/dw| over a trajectory
// region.
struct TheoryConstants {
  double mu = 0.0;
  double c_l1_wa = 0.0;
  double c_l2_w = 0.0;
};

// ---------------------------------------------------------------------------
// Quadratic bilevel problem, the analytic workhorse:
//
//   L1(w, alpha) = 1/2 w^T A w - w^T B alpha
//   L2(w, alpha) = 1/2 |w - c|^2 + lambda/2 |alpha|^2
//
// A is SPD, so the inner problem has the unique solution w*(alpha) =
// A^{-1} B alpha and every estimator quantity has a closed form.
class QuadraticBilevel final : public BilevelProblem {
 public:
  QuadraticBilevel(RealMatrix A, RealMatrix B, RealVector c, double lambda);

  const std::string& name() const override { return name_; }
  int weight_dim() const override { return static_cast<int>(A_.rows()); }
  int alpha_dim() const override { return static_cast<int>(B_.cols()); }
  int split_size(Split) const override { return 0; }

  EvalResult inner_eval(const BilevelState& s, const Batch& b) const override;
  EvalResult outer_eval(const BilevelState& s, const Batch& b) const override;
  RealVector hvp_inner_ww(const BilevelState& s, const RealVector& v,
                          const Batch& b) const override;

  RealVector mixed_product_analytic(const BilevelState& s, const RealVector& v) const override;
  bool has_analytic_mixed() const override { return true; }
  bool has_dense_hessian() const override { return true; }
  RealMatrix dense_hessian_ww(const BilevelState& s, const Batch& b) const override;

  // Inner minimizer w*(alpha) = A^{-1} B alpha.
  RealVector inner_closed_form(const RealVector& alpha) const;
  // Gradient of alpha -> L2(w*(alpha), alpha); the reference value every
  // estimator is measured against.
  RealVector oracle_exact_hypergradient(const RealVector& alpha) const;
  // mu = lambda_min(A); c_l1_wa = sigma_max(B); c_l2_w = max |w - c| over the
  // supplied region of w points.
  TheoryConstants theory_constants(const std::vector<RealVector>& region) const;

  double lambda_min() const { return lambda_min_; }
  double lambda_max() const { return lambda_max_; }
  const RealMatrix& A() const { return A_; }
  const RealMatrix& B() const { return B_; }
  const RealVector& c() const { return c_; }
  double lambda() const { return lambda_; }

  void set_name(std::string n) { name_ = std::move(n); }

 private:
  RealMatrix A_, B_;
  RealVector c_;
  double lambda_;
  double lambda_min_ = 0.0, lambda_max_ = 0.0;
  std::string name_ = "quadratic";
};

// ---------------------------------------------------------------------------
// Ridge regression with per-feature penalties tuned on a validation split:
//
//   L1(w, alpha) = |X_tr w - y_tr|^2 / (2 N_tr) + 1/2 sum_f exp(alpha_f) w_f^2
//   L2(w, alpha) = |X_val w - y_val|^2 / (2 N_val)
//
// alpha lives in log-space; exponents are clamped to [-20, 20] for stability.
class RidgeHyperopt final : public BilevelProblem {
 public:
  RidgeHyperopt(RealMatrix X_train, RealVector y_train, RealMatrix X_val, RealVector y_val);

  const std::string& name() const override { return name_; }
  int weight_dim() const override { return static_cast<int>(X_train_.cols()); }
  int alpha_dim() const override { return static_cast<int>(X_train_.cols()); }
  int split_size(Split s) const override;

  EvalResult inner_eval(const BilevelState& s, const Batch& b) const override;
  EvalResult outer_eval(const BilevelState& s, const Batch& b) const override;
  RealVector hvp_inner_ww(const BilevelState& s, const RealVector& v,
                          const Batch& b) const override;
  bool has_dense_hessian() const override { return true; }
  RealMatrix dense_hessian_ww(const BilevelState& s, const Batch& b) const override;

  void set_name(std::string n) { name_ = std::move(n); }

 private:
  RealMatrix X_train_, X_val_;
  RealVector y_train_, y_val_;
  std::string name_ = "ridge";

  std::vector<int> resolve(const Batch& b, Split expected) const;
};

// ---------------------------------------------------------------------------
// Presets used across tests and the command line:
//   quad-scalar  A=[[2]], B=[[1]], c=[1], lambda=0
//   quad-10d     seeded 10-dim SPD instance, 3 outer variables
//   ridge-20f    seeded 20-feature ridge problem
//   toynas       the toy architecture-search supernet (see supernet.hpp)
std::shared_ptr<BilevelProblem> make_preset(const std::string& name);
std::shared_ptr<QuadraticBilevel> make_quad_scalar();
std::shared_ptr<QuadraticBilevel> make_quad_10d();
std::shared_ptr<RidgeHyperopt> make_ridge_20f();

}  // namespace bihyper
