#include "bihyper/problems.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bihyper/errors.hpp"
#include "bihyper/supernet.hpp"

namespace bihyper {

Batch full_batch(Split s) { return Batch{s, {}}; }

Batch sample_minibatch(Split s, int split_size, int batch_size, std::mt19937_64& rng) {
  if (split_size <= 0) throw ContractError("sample_minibatch: split has no data");
  if (batch_size < 1 || batch_size > split_size) {
    throw ContractError("sample_minibatch: batch size " + std::to_string(batch_size) +
                        " outside [1, " + std::to_string(split_size) + "]");
  }
  std::vector<int> idx(static_cast<std::size_t>(split_size));
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first batch_size slots end up a uniform draw
  // without replacement.
  for (int i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<int> pick(i, split_size - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(batch_size));
  std::sort(idx.begin(), idx.end());
  return Batch{s, std::move(idx)};
}

RealVector BilevelProblem::mixed_product_analytic(const BilevelState&, const RealVector&) const {
  throw NotAvailableError(name() + ": no analytic mixed derivative; use finite differences");
}

RealMatrix BilevelProblem::dense_hessian_ww(const BilevelState&, const Batch&) const {
  throw NotAvailableError(name() + ": no dense Hessian; assemble via HVPs");
}

void BilevelProblem::check_state(const BilevelState& s) const {
  if (s.w.size() != weight_dim()) {
    throw DimensionError(name() + ": state w has length " + std::to_string(s.w.size()) +
                         ", expected " + std::to_string(weight_dim()));
  }
  if (s.alpha.size() != alpha_dim()) {
    throw DimensionError(name() + ": state alpha has length " + std::to_string(s.alpha.size()) +
                         ", expected " + std::to_string(alpha_dim()));
  }
  require_finite(s.w, "state w");
  require_finite(s.alpha, "state alpha");
}

std::vector<int> resolve_batch_indices(const Batch& b, Split expected, int split_size,
                                       const std::string& who) {
  if (b.source != expected) {
    throw ContractError(who + ": batch drawn from the wrong split");
  }
  if (b.full()) {
    std::vector<int> all(static_cast<std::size_t>(split_size));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  int prev = -1;
  for (int i : b.indices) {
    if (i < 0 || i >= split_size) throw ContractError(who + ": batch index out of bounds");
    if (i <= prev) throw ContractError(who + ": batch indices must be sorted and unique");
    prev = i;
  }
  return b.indices;
}

namespace {

constexpr double kAlphaClamp = 20.0;

double clamped_exp(double a) { return std::exp(std::clamp(a, -kAlphaClamp, kAlphaClamp)); }

}  // namespace

// --- QuadraticBilevel -------------------------------------------------------

QuadraticBilevel::QuadraticBilevel(RealMatrix A, RealMatrix B, RealVector c, double lambda)
    : A_(std::move(A)), B_(std::move(B)), c_(std::move(c)), lambda_(lambda) {
  require_finite(A_, "quadratic: A");
  require_finite(B_, "quadratic: B");
  require_finite(c_, "quadratic: c");
  require_finite(lambda_, "quadratic: lambda");
  if (A_.rows() != A_.cols()) throw DimensionError("quadratic: A must be square");
  if (B_.rows() != A_.rows()) throw DimensionError("quadratic: B must have as many rows as A");
  if (c_.size() != A_.rows()) throw DimensionError("quadratic: c must match the order of A");
  if (lambda_ < 0.0) throw ContractError("quadratic: lambda must be >= 0");

  const double scale = std::max(1.0, A_.cwiseAbs().maxCoeff());
  if ((A_ - RealMatrix(A_.transpose())).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw ContractError("quadratic: A must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(A_)};
  lambda_min_ = es.eigenvalues().minCoeff();
  lambda_max_ = es.eigenvalues().maxCoeff();
  Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(A_)};
  if (llt.info() != Eigen::Success || lambda_min_ <= 0.0) {
    throw ContractError("quadratic: A must be positive definite");
  }
}

EvalResult QuadraticBilevel::inner_eval(const BilevelState& s, const Batch&) const {
  check_state(s);
  EvalResult r;
  const RealVector Ba = B_ * s.alpha;
  r.loss = 0.5 * s.w.dot(A_ * s.w) - s.w.dot(Ba);
  r.grad_w = A_ * s.w - Ba;
  r.grad_alpha = -B_.transpose() * s.w;
  return r;
}

EvalResult QuadraticBilevel::outer_eval(const BilevelState& s, const Batch&) const {
  check_state(s);
  EvalResult r;
  const RealVector d = s.w - c_;
  r.loss = 0.5 * d.squaredNorm() + 0.5 * lambda_ * s.alpha.squaredNorm();
  r.grad_w = d;
  r.grad_alpha = lambda_ * s.alpha;
  return r;
}

RealVector QuadraticBilevel::hvp_inner_ww(const BilevelState& s, const RealVector& v,
                                          const Batch&) const {
  check_state(s);
  if (v.size() != A_.rows()) throw DimensionError("quadratic hvp: vector length mismatch");
  return A_ * v;
}

RealVector QuadraticBilevel::mixed_product_analytic(const BilevelState& s,
                                                    const RealVector& v) const {
  check_state(s);
  if (v.size() != A_.rows()) throw DimensionError("quadratic mixed product: length mismatch");
  // d2L1/(dalpha dw) = -B, so v^T d2L1/(dalpha dw) = -B^T v.
  return -B_.transpose() * v;
}

RealMatrix QuadraticBilevel::dense_hessian_ww(const BilevelState& s, const Batch&) const {
  check_state(s);
  return A_;
}

RealVector QuadraticBilevel::inner_closed_form(const RealVector& alpha) const {
  if (alpha.size() != alpha_dim()) throw DimensionError("inner_closed_form: alpha length");
  require_finite(alpha, "inner_closed_form: alpha");
  return dense_solve(A_, B_ * alpha);
}

RealVector QuadraticBilevel::oracle_exact_hypergradient(const RealVector& alpha) const {
  const RealVector wstar = inner_closed_form(alpha);
  // d/dalpha [ L2(w*(alpha), alpha) ] with dw*/dalpha = A^{-1} B.
  return lambda_ * alpha + B_.transpose() * dense_solve(A_, wstar - c_);
}

TheoryConstants QuadraticBilevel::theory_constants(const std::vector<RealVector>& region) const {
  if (region.empty()) throw ContractError("theory_constants: empty trajectory region");
  TheoryConstants k;
  k.mu = lambda_min_;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(B_)};
  k.c_l1_wa = svd.singularValues().maxCoeff();
  double worst = 0.0;
  for (const RealVector& w : region) {
    if (w.size() != weight_dim()) throw DimensionError("theory_constants: region point length");
    worst = std::max(worst, (w - c_).norm());
  }
  k.c_l2_w = worst;
  return k;
}

// --- RidgeHyperopt ----------------------------------------------------------

RidgeHyperopt::RidgeHyperopt(RealMatrix X_train, RealVector y_train, RealMatrix X_val,
                             RealVector y_val)
    : X_train_(std::move(X_train)),
      X_val_(std::move(X_val)),
      y_train_(std::move(y_train)),
      y_val_(std::move(y_val)) {
  require_finite(X_train_, "ridge: X_train");
  require_finite(X_val_, "ridge: X_val");
  require_finite(y_train_, "ridge: y_train");
  require_finite(y_val_, "ridge: y_val");
  if (X_train_.cols() != X_val_.cols()) throw DimensionError("ridge: feature count mismatch");
  if (X_train_.rows() != y_train_.size()) throw DimensionError("ridge: train target length");
  if (X_val_.rows() != y_val_.size()) throw DimensionError("ridge: val target length");
  if (X_train_.rows() == 0 || X_val_.rows() == 0) throw DimensionError("ridge: empty split");
}

int RidgeHyperopt::split_size(Split s) const {
  return static_cast<int>(s == Split::train ? X_train_.rows() : X_val_.rows());
}

std::vector<int> RidgeHyperopt::resolve(const Batch& b, Split expected) const {
  return resolve_batch_indices(b, expected, split_size(expected), name());
}

EvalResult RidgeHyperopt::inner_eval(const BilevelState& s, const Batch& b) const {
  check_state(s);
  const std::vector<int> idx = resolve(b, Split::train);
  const double k = static_cast<double>(idx.size());
  EvalResult r;
  r.loss = 0.0;
  r.grad_w = RealVector::Zero(weight_dim());
  for (int i : idx) {
    const double resid = X_train_.row(i).dot(s.w) - y_train_[i];
    r.loss += 0.5 * resid * resid;
    r.grad_w += resid * X_train_.row(i).transpose();
  }
  r.loss /= k;
  r.grad_w /= k;
  r.grad_alpha = RealVector(alpha_dim());
  for (int f = 0; f < alpha_dim(); ++f) {
    const double e = clamped_exp(s.alpha[f]);
    r.loss += 0.5 * e * s.w[f] * s.w[f];
    r.grad_w[f] += e * s.w[f];
    r.grad_alpha[f] = 0.5 * e * s.w[f] * s.w[f];
  }
  return r;
}

EvalResult RidgeHyperopt::outer_eval(const BilevelState& s, const Batch& b) const {
  check_state(s);
  const std::vector<int> idx = resolve(b, Split::val);
  const double k = static_cast<double>(idx.size());
  EvalResult r;
  r.loss = 0.0;
  r.grad_w = RealVector::Zero(weight_dim());
  for (int i : idx) {
    const double resid = X_val_.row(i).dot(s.w) - y_val_[i];
    r.loss += 0.5 * resid * resid;
    r.grad_w += resid * X_val_.row(i).transpose();
  }
  r.loss /= k;
  r.grad_w /= k;
  r.grad_alpha = RealVector::Zero(alpha_dim());
  return r;
}

RealVector RidgeHyperopt::hvp_inner_ww(const BilevelState& s, const RealVector& v,
                                       const Batch& b) const {
  check_state(s);
  if (v.size() != weight_dim()) throw DimensionError("ridge hvp: vector length mismatch");
  const std::vector<int> idx = resolve(b, Split::train);
  const double k = static_cast<double>(idx.size());
  RealVector out = RealVector::Zero(weight_dim());
  for (int i : idx) {
    out += X_train_.row(i).dot(v) * X_train_.row(i).transpose();
  }
  out /= k;
  for (int f = 0; f < weight_dim(); ++f) out[f] += clamped_exp(s.alpha[f]) * v[f];
  return out;
}

RealMatrix RidgeHyperopt::dense_hessian_ww(const BilevelState& s, const Batch& b) const {
  check_state(s);
  const std::vector<int> idx = resolve(b, Split::train);
  const double k = static_cast<double>(idx.size());
  RealMatrix h = RealMatrix::Zero(weight_dim(), weight_dim());
  for (int i : idx) {
    h += X_train_.row(i).transpose() * X_train_.row(i);
  }
  h /= k;
  for (int f = 0; f < weight_dim(); ++f) h(f, f) += clamped_exp(s.alpha[f]);
  return h;
}

// --- presets ----------------------------------------------------------------

std::shared_ptr<QuadraticBilevel> make_quad_scalar() {
  auto p = std::make_shared<QuadraticBilevel>(make_matrix({{2.0}}), make_matrix({{1.0}}),
                                              make_vector({1.0}), 0.0);
  p->set_name("quad-scalar");
  return p;
}

std::shared_ptr<QuadraticBilevel> make_quad_10d() {
  const int n = 10, m = 3;
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = gauss(rng);
  Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  // Spectrum in [1, 3]: with the default step size 0.25 the inner map is a
  // contraction with factor at most 0.75.
  Eigen::VectorXd eig = Eigen::VectorXd::LinSpaced(n, 1.0, 3.0);
  Eigen::MatrixXd a = q * eig.asDiagonal() * q.transpose();
  a = 0.5 * (a + a.transpose());

  RealMatrix A = a;
  RealMatrix B(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) B(i, j) = 0.5 * gauss(rng);
  RealVector c(n);
  for (int i = 0; i < n; ++i) c[i] = gauss(rng);

  auto p = std::make_shared<QuadraticBilevel>(std::move(A), std::move(B), std::move(c), 0.5);
  p->set_name("quad-10d");
  return p;
}

std::shared_ptr<RidgeHyperopt> make_ridge_20f() {
  const int f = 20, n_train = 100, n_val = 100;
  std::mt19937_64 rng(4242);
  std::normal_distribution<double> gauss(0.0, 1.0);
  RealVector w_true(f);
  for (int j = 0; j < f; ++j) {
    // Half the features are irrelevant, so per-feature penalties have
    // something to discover.
    w_true[j] = (j % 2 == 0) ? gauss(rng) : 0.0;
  }
  auto draw_split = [&](int n, RealMatrix& X, RealVector& y) {
    X.resize(n, f);
    y.resize(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < f; ++j) X(i, j) = gauss(rng);
      y[i] = X.row(i).dot(w_true) + 0.1 * gauss(rng);
    }
  };
  RealMatrix X_tr, X_va;
  RealVector y_tr, y_va;
  draw_split(n_train, X_tr, y_tr);
  draw_split(n_val, X_va, y_va);
  auto p = std::make_shared<RidgeHyperopt>(std::move(X_tr), std::move(y_tr), std::move(X_va),
                                           std::move(y_va));
  p->set_name("ridge-20f");
  return p;
}

std::shared_ptr<BilevelProblem> make_preset(const std::string& name) {
  if (name == "quad-scalar") return make_quad_scalar();
  if (name == "quad-10d") return make_quad_10d();
  if (name == "ridge-20f") return make_ridge_20f();
  if (name == "toynas") return std::make_shared<ToySupernet>();
  throw ConfigError("unknown problem preset '" + name +
                    "' (valid: quad-scalar, quad-10d, ridge-20f, toynas)");
}

}  // namespace bihyper
