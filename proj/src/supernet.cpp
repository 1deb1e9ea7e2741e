#include "bihyper/supernet.hpp"

#include <cmath>
#include <string>

#include "bihyper/derivatives.hpp"
#include "bihyper/errors.hpp"

namespace bihyper {

namespace {

constexpr int kF = ToySupernet::kFeatureDim;
using Mat4 = Eigen::Matrix<double, kF, kF, Eigen::RowMajor>;
using Cols = Eigen::MatrixXd;  // kF x batch, one sample per column
using Vec4 = Eigen::Vector4d;

// Offset of the 4x4 weight block for (edge, op); only ops 2 (linear) and
// 3 (tanh_linear) carry weights.
int w_offset(int edge, int op) { return edge * 2 * kF * kF + (op - 2) * kF * kF; }

Eigen::Map<const Mat4> wmap(const RealVector& w, int edge, int op) {
  return Eigen::Map<const Mat4>(w.data() + w_offset(edge, op));
}

Eigen::Map<Mat4> wmap_mut(RealVector& w, int edge, int op) {
  return Eigen::Map<Mat4>(w.data() + w_offset(edge, op));
}

Cols apply_op(int op, const Mat4& w, const Cols& s) {
  switch (op) {
    case 0: return Cols::Zero(kF, s.cols());
    case 1: return s;
    case 2: return w * s;
    case 3: return ((w * s).array().tanh()).matrix();
  }
  throw ContractError("supernet: op index out of range");
}

struct EdgeCache {
  Cols lin;  // W2 * S
  Cols th;   // tanh(W3 * S)
};

// Mixture forward for one edge; all four candidate outputs are needed later
// for the alpha gradient, so caches are always filled.
Cols edge_forward(const RealVector& w, int e, const Vec4& a, const Cols& s, EdgeCache& cache) {
  cache.lin = wmap(w, e, 2) * s;
  cache.th = ((wmap(w, e, 3) * s).array().tanh()).matrix();
  return a[1] * s + a[2] * cache.lin + a[3] * cache.th;
}

// Backward through one edge.  g is dLoss/d(edge output).  grad_mix receives
// dLoss/da_o; ds (optional) receives dLoss/dS.
void edge_backward(const RealVector& w, int e, const Vec4& a, const Cols& s, const Cols& g,
                   const EdgeCache& cache, RealVector& grad_w, Vec4& grad_mix, Cols* ds) {
  grad_mix[0] = 0.0;
  grad_mix[1] = (g.array() * s.array()).sum();
  grad_mix[2] = (g.array() * cache.lin.array()).sum();
  grad_mix[3] = (g.array() * cache.th.array()).sum();

  const Cols g_pre = (g.array() * (1.0 - cache.th.array().square())).matrix();
  wmap_mut(grad_w, e, 2).noalias() += a[2] * (g * s.transpose());
  wmap_mut(grad_w, e, 3).noalias() += a[3] * (g_pre * s.transpose());
  if (ds != nullptr) {
    ds->noalias() = a[1] * g;
    ds->noalias() += a[2] * (wmap(w, e, 2).transpose() * g);
    ds->noalias() += a[3] * (wmap(w, e, 3).transpose() * g_pre);
  }
}

// Full mixture forward/backward.  Returns the mean squared error
// |X2 - Y|^2 / (2 N); grad_w and grad_mix are filled when requested.
double eval_mixture(const RealVector& w, const std::array<Vec4, 3>& mix, const Cols& x,
                    const Cols& y, RealVector* grad_w, std::array<Vec4, 3>* grad_mix) {
  const double n = static_cast<double>(x.cols());
  EdgeCache c01, c02, c12;
  const Cols x1 = edge_forward(w, 0, mix[0], x, c01);
  Cols x2 = edge_forward(w, 1, mix[1], x, c02);
  x2 += edge_forward(w, 2, mix[2], x1, c12);
  const Cols resid = x2 - y;
  const double loss = resid.squaredNorm() / (2.0 * n);
  if (grad_w == nullptr) return loss;

  grad_w->setZero();
  const Cols g2 = resid / n;
  Cols g1;
  edge_backward(w, 2, mix[2], x1, g2, c12, *grad_w, (*grad_mix)[2], &g1);
  edge_backward(w, 1, mix[1], x, g2, c02, *grad_w, (*grad_mix)[1], nullptr);
  edge_backward(w, 0, mix[0], x, g1, c01, *grad_w, (*grad_mix)[0], nullptr);
  return loss;
}

// Single discrete op per edge: forward plus (optionally) weight gradients.
double eval_discrete(const RealVector& w, const std::array<int, 3>& arch, const Cols& x,
                     const Cols& y, RealVector* grad_w) {
  const double n = static_cast<double>(x.cols());
  std::array<Cols, 3> pre;  // pre-activation for tanh edges
  auto fwd = [&](int e, const Cols& s) -> Cols {
    const int op = arch[static_cast<std::size_t>(e)];
    if (op == 3) {
      pre[static_cast<std::size_t>(e)] = wmap(w, e, 3) * s;
      return pre[static_cast<std::size_t>(e)].array().tanh().matrix();
    }
    return apply_op(op, wmap(w, e, 2), s);  // weight unused for ops 0 and 1
  };
  const Cols x1 = fwd(0, x);
  Cols x2 = fwd(1, x);
  x2 += fwd(2, x1);
  const Cols resid = x2 - y;
  const double loss = resid.squaredNorm() / (2.0 * n);
  if (grad_w == nullptr) return loss;

  grad_w->setZero();
  const Cols g2 = resid / n;
  auto bwd = [&](int e, const Cols& s, const Cols& g, Cols* ds) {
    const int op = arch[static_cast<std::size_t>(e)];
    switch (op) {
      case 0:
        if (ds) ds->setZero(kF, s.cols());
        return;
      case 1:
        if (ds) *ds = g;
        return;
      case 2:
        wmap_mut(*grad_w, e, 2).noalias() += g * s.transpose();
        if (ds) ds->noalias() = wmap(w, e, 2).transpose() * g;
        return;
      case 3: {
        const Cols th = pre[static_cast<std::size_t>(e)].array().tanh().matrix();
        const Cols g_pre = (g.array() * (1.0 - th.array().square())).matrix();
        wmap_mut(*grad_w, e, 3).noalias() += g_pre * s.transpose();
        if (ds) ds->noalias() = wmap(w, e, 3).transpose() * g_pre;
        return;
      }
    }
    throw ContractError("supernet: op index out of range");
  };
  Cols g1;
  bwd(2, x1, g2, &g1);
  bwd(1, x, g2, nullptr);
  bwd(0, x, g1, nullptr);
  return loss;
}

RealVector init_weights(std::uint64_t seed, int dim, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  RealVector w(dim);
  for (int i = 0; i < dim; ++i) w[i] = scale * gauss(rng);
  return w;
}

}  // namespace

ToySupernet::ToySupernet(Options opt) : opt_(opt) {
  if (opt_.n_samples < 2 || opt_.n_samples % 2 != 0) {
    throw ContractError("supernet: n_samples must be even and >= 2");
  }
  if (opt_.noise_sigma < 0.0) throw ContractError("supernet: noise_sigma must be >= 0");
  if (opt_.alpha_l2 < 0.0) throw ContractError("supernet: alpha_l2 must be >= 0");
  for (int op : opt_.teacher_ops) {
    if (op < 0 || op >= kNumOps) throw ContractError("supernet: teacher op out of range");
  }

  std::mt19937_64 rng(opt_.dataset_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // Teacher weights are drawn for every edge regardless of which ops the
  // teacher uses, so the sample stream does not depend on teacher_ops.
  // Scales keep the tanh edge's pre-activations around unit size: saturated
  // teachers are not recoverable by gradient descent, linear ones make ops 2
  // and 3 indistinguishable.  The last edge's map is kept large so that the
  // identity op (bounded by the tanh outputs feeding it) cannot mimic it.
  std::array<Mat4, kNumEdges> wt;
  const std::array<double, kNumEdges> teacher_scale = {0.45, 0.5, 2.0};
  for (int e = 0; e < kNumEdges; ++e) {
    for (int i = 0; i < kF; ++i)
      for (int j = 0; j < kF; ++j) wt[static_cast<std::size_t>(e)](i, j) = teacher_scale[static_cast<std::size_t>(e)] * gauss(rng);
  }

  const int n = opt_.n_samples;
  Cols x(kF, n);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < kF; ++r) x(r, i) = gauss(rng);

  const Cols x1t = apply_op(opt_.teacher_ops[0], wt[0], x);
  Cols x2t = apply_op(opt_.teacher_ops[1], wt[1], x);
  x2t += apply_op(opt_.teacher_ops[2], wt[2], x1t);

  Cols y = x2t;
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < kF; ++r) y(r, i) += opt_.noise_sigma * gauss(rng);

  const int half = n / 2;
  inputs_train_ = x.leftCols(half);
  inputs_val_ = x.rightCols(half);
  targets_train_ = y.leftCols(half);
  targets_val_ = y.rightCols(half);
  targets_rows_train_ = targets_train_.transpose();
  targets_rows_val_ = targets_val_.transpose();
}

int ToySupernet::split_size(Split s) const {
  return static_cast<int>(s == Split::train ? inputs_train_.cols() : inputs_val_.cols());
}

const Eigen::MatrixXd& ToySupernet::inputs(Split s) const {
  return s == Split::train ? inputs_train_ : inputs_val_;
}

const Eigen::MatrixXd& ToySupernet::targets_cols(Split s) const {
  return s == Split::train ? targets_train_ : targets_val_;
}

const Eigen::MatrixXd& ToySupernet::targets(Split s) const {
  return s == Split::train ? targets_rows_train_ : targets_rows_val_;
}

std::vector<int> ToySupernet::resolve(const Batch& b, Split expected) const {
  return resolve_batch_indices(b, expected, split_size(expected), name());
}

namespace {

// Shared by inner_eval and outer_eval: mixture loss plus both gradients on
// one split of the data.
EvalResult mixture_eval(const ToySupernet& net, const BilevelState& s, const Cols& x_all,
                        const Cols& y_all, const std::vector<int>& idx) {
  const int k = static_cast<int>(idx.size());
  Cols x(kF, k), y(kF, k);
  for (int j = 0; j < k; ++j) {
    x.col(j) = x_all.col(idx[static_cast<std::size_t>(j)]);
    y.col(j) = y_all.col(idx[static_cast<std::size_t>(j)]);
  }
  std::array<Vec4, 3> mix;
  for (int e = 0; e < ToySupernet::kNumEdges; ++e) {
    mix[static_cast<std::size_t>(e)] = softmax(s.alpha.segment(4 * e, 4));
  }
  EvalResult r;
  r.grad_w = RealVector::Zero(net.weight_dim());
  std::array<Vec4, 3> grad_mix;
  r.loss = eval_mixture(s.w, mix, x, y, &r.grad_w, &grad_mix);
  r.grad_alpha = RealVector(net.alpha_dim());
  for (int e = 0; e < ToySupernet::kNumEdges; ++e) {
    const Vec4& a = mix[static_cast<std::size_t>(e)];
    const Vec4& gm = grad_mix[static_cast<std::size_t>(e)];
    const double avg = a.dot(gm);
    for (int o = 0; o < ToySupernet::kNumOps; ++o) {
      r.grad_alpha[4 * e + o] = a[o] * (gm[o] - avg);  // softmax Jacobian
    }
  }
  return r;
}

}  // namespace

EvalResult ToySupernet::inner_eval(const BilevelState& s, const Batch& b) const {
  check_state(s);
  return mixture_eval(*this, s, inputs_train_, targets_train_, resolve(b, Split::train));
}

EvalResult ToySupernet::outer_eval(const BilevelState& s, const Batch& b) const {
  check_state(s);
  EvalResult r = mixture_eval(*this, s, inputs_val_, targets_val_, resolve(b, Split::val));
  if (opt_.alpha_l2 > 0.0) {
    r.loss += 0.5 * opt_.alpha_l2 * s.alpha.squaredNorm();
    r.grad_alpha += opt_.alpha_l2 * s.alpha;
  }
  return r;
}

RealVector ToySupernet::hvp_inner_ww(const BilevelState& s, const RealVector& v,
                                     const Batch& b) const {
  check_state(s);
  if (v.size() != weight_dim()) throw DimensionError("supernet hvp: vector length mismatch");
  return hvp_numeric(*this, s, v, b, EpsilonRule{}, nullptr);
}

double ToySupernet::discrete_val_loss(const std::array<int, kNumEdges>& arch, int budget,
                                      double lr, std::uint64_t init_seed) const {
  if (budget < 500) throw ContractError("supernet: standalone training budget must be >= 500");
  if (lr <= 0.0) throw ContractError("supernet: standalone lr must be > 0");
  for (int op : arch) {
    if (op < 0 || op >= kNumOps) throw ContractError("supernet: arch op out of range");
  }
  RealVector w = init_weights(init_seed, kWeightDim, 0.1);
  RealVector g(kWeightDim);
  for (int step = 0; step < budget; ++step) {
    eval_discrete(w, arch, inputs_train_, targets_train_, &g);
    w -= lr * g;
    if (!w.allFinite()) {
      throw DivergenceError("supernet: standalone training diverged at step " +
                            std::to_string(step));
    }
  }
  return eval_discrete(w, arch, inputs_val_, targets_val_, nullptr);
}

std::vector<ToySupernet::RankedArch> ToySupernet::enumerate_and_rank(
    int budget, double lr, std::uint64_t init_seed) const {
  std::vector<RankedArch> out;
  out.reserve(kNumOps * kNumOps * kNumOps);
  for (int o0 = 0; o0 < kNumOps; ++o0) {
    for (int o1 = 0; o1 < kNumOps; ++o1) {
      for (int o2 = 0; o2 < kNumOps; ++o2) {
        const std::array<int, kNumEdges> arch = {o0, o1, o2};
        out.push_back(RankedArch{arch, discrete_val_loss(arch, budget, lr, init_seed)});
      }
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedArch& a, const RankedArch& b) { return a.val_loss < b.val_loss; });
  return out;
}

}  // namespace bihyper
