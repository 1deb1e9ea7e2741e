#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>
#include <random>

#include "bihyper/errors.hpp"
#include "bihyper/problems.hpp"
#include "bihyper/supernet.hpp"
#include "support/oracles.hpp"

using namespace bihyper;

namespace {

QuadraticBilevel scalar_quad() {
  return QuadraticBilevel(make_matrix({{2}}), make_matrix({{1}}), make_vector({1}), 0.0);
}

// Central-FD hygiene over `n_states` random states: both losses, both
// gradients each.
void check_gradient_hygiene(const BilevelProblem& p, int n_states, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Batch tr = full_batch(Split::train);
  const Batch va = full_batch(Split::val);
  for (int k = 0; k < n_states; ++k) {
    const BilevelState s = oracles::random_state(p, rng);
    for (const bool inner : {true, false}) {
      const Batch& b = inner ? tr : va;
      const EvalResult r = inner ? p.inner_eval(s, b) : p.outer_eval(s, b);
      const RealVector gw = oracles::fd_gradient(
          [&](const RealVector& w) {
            const BilevelState probe{w, s.alpha};
            return inner ? p.inner_eval(probe, b).loss : p.outer_eval(probe, b).loss;
          },
          s.w);
      const RealVector ga = oracles::fd_gradient(
          [&](const RealVector& a) {
            const BilevelState probe{s.w, a};
            return inner ? p.inner_eval(probe, b).loss : p.outer_eval(probe, b).loss;
          },
          s.alpha);
      const double tol_w = 1e-6 * (1.0 + r.grad_w.norm());
      const double tol_a = 1e-6 * (1.0 + r.grad_alpha.norm());
      REQUIRE((r.grad_w - gw).cwiseAbs().maxCoeff() <= tol_w);
      REQUIRE((r.grad_alpha - ga).cwiseAbs().maxCoeff() <= tol_a);
    }
  }
}

}  // namespace

TEST_CASE("scalar quadratic closed forms") {
  const QuadraticBilevel q = scalar_quad();
  const BilevelState s{make_vector({0.5}), make_vector({1.0})};
  const EvalResult in = q.inner_eval(s, full_batch(Split::train));
  CHECK(in.loss == doctest::Approx(-0.25).epsilon(1e-14));
  CHECK(in.grad_w[0] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(in.grad_alpha[0] == doctest::Approx(-0.5).epsilon(1e-14));

  const EvalResult out = q.outer_eval(s, full_batch(Split::val));
  CHECK(out.loss == doctest::Approx(0.125).epsilon(1e-14));
  CHECK(out.grad_w[0] == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(out.grad_alpha[0] == 0.0);

  CHECK(q.inner_closed_form(make_vector({1.0}))[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(q.inner_closed_form(make_vector({0.0}))[0] == 0.0);
  CHECK(q.oracle_exact_hypergradient(make_vector({1.0}))[0] ==
        doctest::Approx(-0.25).epsilon(1e-12));
}

TEST_CASE("quadratic alpha regularizer feeds the direct outer path") {
  QuadraticBilevel q(make_matrix({{2}}), make_matrix({{1}}), make_vector({1}), 2.0);
  const BilevelState s{make_vector({0.5}), make_vector({3.0})};
  CHECK(q.outer_eval(s, full_batch(Split::val)).grad_alpha[0] ==
        doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("quadratic construction contracts") {
  CHECK_THROWS_AS(QuadraticBilevel(make_matrix({{1, 2}, {0, 1}}), make_matrix({{1}, {1}}),
                                   make_vector({0, 0}), 0.0),
                  ContractError);  // asymmetric
  CHECK_THROWS_AS(QuadraticBilevel(make_matrix({{-1}}), make_matrix({{1}}), make_vector({0}),
                                   0.0),
                  ContractError);  // not positive definite
  CHECK_THROWS_AS(QuadraticBilevel(make_matrix({{1, 0}, {0, 1}}), make_matrix({{1}}),
                                   make_vector({0, 0}), 0.0),
                  DimensionError);  // B rows != n
}

TEST_CASE("quadratic hvp and mixed product") {
  const QuadraticBilevel q = scalar_quad();
  const BilevelState s{make_vector({0.3}), make_vector({1.0})};
  CHECK(q.hvp_inner_ww(s, make_vector({-0.5}), full_batch(Split::train))[0] ==
        doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(q.mixed_product_analytic(s, make_vector({-0.5}))[0] ==
        doctest::Approx(0.5).epsilon(1e-14));

  QuadraticBilevel d(make_matrix({{1, 0}, {0, 3}}), make_matrix({{1, 0}, {0, 3}}),
                     make_vector({0, 0}), 0.0);
  const BilevelState s2{make_vector({0, 0}), make_vector({0, 0})};
  const RealVector m = d.mixed_product_analytic(s2, make_vector({1, 1}));
  CHECK(m[0] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(m[1] == doctest::Approx(-3.0).epsilon(1e-14));

  RealVector zero = RealVector::Zero(2);
  CHECK(d.hvp_inner_ww(s2, zero, full_batch(Split::train)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(d.mixed_product_analytic(s2, zero).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("inner gradient vanishes at the closed-form minimizer") {
  const auto q = std::dynamic_pointer_cast<QuadraticBilevel>(make_preset("quad-10d"));
  std::mt19937_64 rng(8);
  std::normal_distribution<double> gauss;
  for (int rep = 0; rep < 5; ++rep) {
    RealVector alpha(q->alpha_dim());
    for (int i = 0; i < q->alpha_dim(); ++i) alpha[i] = gauss(rng);
    const RealVector wstar = q->inner_closed_form(alpha);
    CHECK((matvec(q->A(), wstar) - matvec(q->B(), alpha)).norm() <= 1e-10);
    const BilevelState s{wstar, alpha};
    CHECK(q->inner_eval(s, full_batch(Split::train)).grad_w.norm() <= 1e-10);
  }
}

TEST_CASE("oracle hypergradient matches finite differences of the reduced objective") {
  const auto q = std::dynamic_pointer_cast<QuadraticBilevel>(make_preset("quad-10d"));
  std::mt19937_64 rng(21);
  std::normal_distribution<double> gauss;
  RealVector alpha(q->alpha_dim());
  for (int i = 0; i < q->alpha_dim(); ++i) alpha[i] = gauss(rng);
  const RealVector fd = oracles::fd_reduced_hypergradient(
      [&](const RealVector& a) { return q->inner_closed_form(a); },
      [&](const BilevelState& s) { return q->outer_eval(s, full_batch(Split::val)).loss; },
      alpha);
  CHECK((q->oracle_exact_hypergradient(alpha) - fd).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("theory constants") {
  const QuadraticBilevel q = scalar_quad();
  const TheoryConstants tc = q.theory_constants({make_vector({0.5})});
  CHECK(tc.mu == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(tc.c_l1_wa == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tc.c_l2_w == doctest::Approx(0.5).epsilon(1e-12));

  QuadraticBilevel d(make_matrix({{1, 0}, {0, 4}}), make_matrix({{1}, {1}}),
                     make_vector({0, 0}), 0.0);
  CHECK(d.lambda_min() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.lambda_max() == doctest::Approx(4.0).epsilon(1e-12));
  CHECK_THROWS_AS(d.theory_constants({}), ContractError);
}

TEST_CASE("problems without analytic structure say so") {
  const auto ridge = make_preset("ridge-20f");
  CHECK_FALSE(ridge->has_analytic_mixed());
  BilevelState s;
  s.w = RealVector::Zero(ridge->weight_dim());
  s.alpha = RealVector::Zero(ridge->alpha_dim());
  CHECK_THROWS_AS(ridge->mixed_product_analytic(s, RealVector::Zero(ridge->weight_dim())),
                  NotAvailableError);
  const ToySupernet net;
  CHECK_FALSE(net.has_dense_hessian());
  CHECK_THROWS_AS(net.dense_hessian_ww(BilevelState{RealVector::Zero(96), RealVector::Zero(12)},
                                       full_batch(Split::train)),
                  NotAvailableError);
}

TEST_CASE("batch source contract") {
  // Dataset-backed problems reject batches drawn from the wrong split.
  const auto ridge = make_preset("ridge-20f");
  std::mt19937_64 rng(5);
  const BilevelState s = oracles::random_state(*ridge, rng);
  CHECK_THROWS_AS(ridge->inner_eval(s, full_batch(Split::val)), ContractError);
  CHECK_THROWS_AS(ridge->outer_eval(s, full_batch(Split::train)), ContractError);

  // Quadratics carry no dataset; the batch argument is inert by contract.
  const QuadraticBilevel q = scalar_quad();
  const BilevelState qs{make_vector({0.5}), make_vector({1.0})};
  CHECK(q.inner_eval(qs, full_batch(Split::val)).loss ==
        q.inner_eval(qs, full_batch(Split::train)).loss);
}

TEST_CASE("state dimension contract") {
  const QuadraticBilevel q = scalar_quad();
  CHECK_THROWS_AS(q.inner_eval(BilevelState{make_vector({1, 2}), make_vector({1})},
                               full_batch(Split::train)),
                  DimensionError);
  BilevelState bad{make_vector({1}), make_vector({1})};
  bad.w[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(q.inner_eval(bad, full_batch(Split::train)), NumericError);
}

TEST_CASE("ridge gradients and hvp match finite differences") {
  const auto ridge = make_preset("ridge-20f");
  check_gradient_hygiene(*ridge, 6, 17);

  std::mt19937_64 rng(23);
  const BilevelState s = oracles::random_state(*ridge, rng);
  RealVector v(ridge->weight_dim());
  std::normal_distribution<double> gauss;
  for (int i = 0; i < v.size(); ++i) v[i] = gauss(rng);
  const RealVector hv = ridge->hvp_inner_ww(s, v, full_batch(Split::train));
  const RealMatrix H = oracles::fd_hessian_ww(*ridge, s, full_batch(Split::train));
  CHECK((hv - H * v).cwiseAbs().maxCoeff() <= 1e-5 * (1.0 + hv.norm()));
}

TEST_CASE("ridge alpha clamp keeps evaluations finite") {
  const auto ridge = make_preset("ridge-20f");
  BilevelState s;
  s.w = RealVector::Constant(ridge->weight_dim(), 0.5);
  s.alpha = RealVector::Constant(ridge->alpha_dim(), 500.0);  // exp would overflow unclamped
  CHECK_NOTHROW(ridge->inner_eval(s, full_batch(Split::train)));
  s.alpha = RealVector::Constant(ridge->alpha_dim(), -500.0);
  CHECK_NOTHROW(ridge->inner_eval(s, full_batch(Split::train)));
}

TEST_CASE("sample_minibatch contracts and determinism") {
  std::mt19937_64 rng(5);
  const Batch b = sample_minibatch(Split::train, 100, 10, rng);
  CHECK(b.source == Split::train);
  CHECK(b.indices.size() == 10);
  for (std::size_t i = 1; i < b.indices.size(); ++i) {
    CHECK(b.indices[i - 1] < b.indices[i]);  // sorted, unique
  }
  for (int idx : b.indices) {
    CHECK(idx >= 0);
    CHECK(idx < 100);
  }

  std::mt19937_64 rng2(5);
  const Batch b2 = sample_minibatch(Split::train, 100, 10, rng2);
  CHECK(b.indices == b2.indices);
  const Batch b3 = sample_minibatch(Split::train, 100, 10, rng2);
  CHECK(b2.indices != b3.indices);  // stream advanced

  const Batch full = sample_minibatch(Split::val, 6, 6, rng);
  CHECK(full.indices == std::vector<int>{0, 1, 2, 3, 4, 5});

  CHECK_THROWS_AS(sample_minibatch(Split::train, 10, 0, rng), ContractError);
  CHECK_THROWS_AS(sample_minibatch(Split::train, 10, 11, rng), ContractError);
  CHECK_THROWS_AS(sample_minibatch(Split::train, 0, 1, rng), ContractError);
}

TEST_CASE("presets resolve and unknown names fail") {
  CHECK(make_preset("quad-scalar")->weight_dim() == 1);
  CHECK(make_preset("quad-10d")->weight_dim() == 10);
  CHECK(make_preset("ridge-20f")->alpha_dim() == 20);
  CHECK(make_preset("toynas")->weight_dim() == 96);
  CHECK_THROWS_AS(make_preset("nosuch"), ConfigError);
  try {
    make_preset("nosuch");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("quad-scalar") != std::string::npos);
  }
}

TEST_CASE("toynas dataset is reproducible and split 256/256") {
  const ToySupernet a, b;
  CHECK(a.split_size(Split::train) == 256);
  CHECK(a.split_size(Split::val) == 256);
  CHECK(a.alpha_dim() == 12);
  CHECK((a.targets(Split::train) - b.targets(Split::train)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.targets(Split::val) - b.targets(Split::val)).cwiseAbs().maxCoeff() == 0.0);

  ToySupernet::Options other;
  other.dataset_seed = 8;
  const ToySupernet c(other);
  CHECK((a.targets(Split::val) - c.targets(Split::val)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("toynas gradients match finite differences") {
  const ToySupernet net;
  check_gradient_hygiene(net, 4, 29);
}

TEST_CASE("toynas minibatch gradients match finite differences") {
  const ToySupernet net;
  std::mt19937_64 rng(31);
  const BilevelState s = oracles::random_state(net, rng);
  const Batch b = sample_minibatch(Split::train, net.split_size(Split::train), 32, rng);
  const EvalResult r = net.inner_eval(s, b);
  const RealVector gw = oracles::fd_gradient(
      [&](const RealVector& w) { return net.inner_eval(BilevelState{w, s.alpha}, b).loss; },
      s.w);
  CHECK((r.grad_w - gw).cwiseAbs().maxCoeff() <= 1e-6 * (1.0 + r.grad_w.norm()));
}

TEST_CASE("toynas softmax structure") {
  const ToySupernet net;
  std::mt19937_64 rng(37);
  const BilevelState s = oracles::random_state(net, rng);

  // Per-edge logit shifts do not change the loss (softmax shift invariance).
  BilevelState shifted = s;
  shifted.alpha.segment(0, 4).array() += 3.5;
  shifted.alpha.segment(8, 4).array() -= 1.25;
  const double base = net.inner_eval(s, full_batch(Split::train)).loss;
  const double moved = net.inner_eval(shifted, full_batch(Split::train)).loss;
  CHECK(moved == doctest::Approx(base).epsilon(1e-12));

  // The alpha gradient of each edge block sums to zero: softmax directions
  // are tangent to the simplex.
  const RealVector ga = net.inner_eval(s, full_batch(Split::train)).grad_alpha;
  for (int e = 0; e < 3; ++e) {
    CHECK(ga.segment(4 * e, 4).sum() == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("toynas hvp matches a dense finite-difference Hessian") {
  const ToySupernet net;
  std::mt19937_64 rng(41);
  const BilevelState s = oracles::random_state(net, rng, 0.3, 0.3);
  RealVector v(net.weight_dim());
  std::normal_distribution<double> gauss;
  for (int i = 0; i < v.size(); ++i) v[i] = gauss(rng);
  const Batch b = full_batch(Split::train);
  const RealVector hv = net.hvp_inner_ww(s, v, b);
  const RealMatrix H = oracles::fd_hessian_ww(net, s, b);
  // Both sides are finite differences with different step rules; allow the
  // truncation error of the directional one.
  CHECK((hv - H * v).cwiseAbs().maxCoeff() <= 5e-4 * (1.0 + hv.cwiseAbs().maxCoeff()));
}

TEST_CASE("toynas enumeration ranks the teacher first") {
  const ToySupernet net;
  const auto ranked = net.enumerate_and_rank(800, 0.3, 42);
  REQUIRE(ranked.size() == 64);
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    CHECK(ranked[i - 1].val_loss <= ranked[i].val_loss);
  }
  CHECK(ranked.front().ops == net.teacher_ops());

  // The all-zero architecture predicts 0, so its loss is the target energy.
  const double zero_loss = net.discrete_val_loss({0, 0, 0}, 800, 0.3, 42);
  const double energy = net.targets(Split::val).squaredNorm() / (2.0 * 256.0);
  CHECK(zero_loss == doctest::Approx(energy).epsilon(1e-10));

  CHECK_THROWS_AS(net.enumerate_and_rank(100, 0.3, 42), ContractError);  // budget too small
}
