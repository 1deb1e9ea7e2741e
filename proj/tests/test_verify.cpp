#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>
#include <random>

#include "bihyper/errors.hpp"
#include "bihyper/problems.hpp"
#include "bihyper/search.hpp"
#include "bihyper/supernet.hpp"
#include "bihyper/verify.hpp"

using namespace bihyper;

namespace {

std::vector<RealVector> scalar_alphas() {
  return {make_vector({1.0}), make_vector({2.0}), make_vector({-1.5})};
}

std::vector<RealVector> seeded_alphas(const QuadraticBilevel& q, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<RealVector> out;
  for (int i = 0; i < n; ++i) {
    RealVector a(q.alpha_dim());
    for (int j = 0; j < a.size(); ++j) a[j] = gauss(rng);
    out.push_back(std::move(a));
  }
  return out;
}

const CheckCase* find_case(const CheckReport& rep, const std::string& needle) {
  for (const CheckCase& c : rep.details) {
    if (c.label.find(needle) != std::string::npos) return &c;
  }
  return nullptr;
}

}  // namespace

TEST_CASE("case evaluation covers all four comparisons") {
  CHECK(CheckReport::evaluate(1.0, CheckCase::Cmp::le, 1.0));
  CHECK_FALSE(CheckReport::evaluate(1.0 + 1e-9, CheckCase::Cmp::le, 1.0));
  CHECK(CheckReport::evaluate(0.5, CheckCase::Cmp::lt, 1.0));
  CHECK_FALSE(CheckReport::evaluate(1.0, CheckCase::Cmp::lt, 1.0));
  CHECK(CheckReport::evaluate(1.0, CheckCase::Cmp::ge, 1.0));
  CHECK(CheckReport::evaluate(2.0, CheckCase::Cmp::gt, 1.0));
  CHECK_FALSE(CheckReport::evaluate(1.0, CheckCase::Cmp::gt, 1.0));
}

TEST_CASE("reports are self-auditing") {
  CheckReport rep;
  rep.check_name = "toy";
  rep.details.push_back(CheckCase{"a", 0.5, 1.0, CheckCase::Cmp::le, true});
  rep.details.push_back(CheckCase{"b", 2.0, 1.0, CheckCase::Cmp::gt, true});
  rep.passed = true;
  CHECK(rep.recompute());
  rep.details[1].value = 0.5;  // tamper: the stored ok no longer matches
  CHECK_FALSE(rep.recompute());
  CHECK(rep.details[1].ok);  // flag untouched; recompute judged the numbers
}

TEST_CASE("report json carries every case") {
  CheckReport rep;
  rep.check_name = "demo";
  rep.passed = true;
  rep.note = "two cases";
  rep.details.push_back(CheckCase{"first", 0.1, 0.2, CheckCase::Cmp::le, true});
  rep.details.push_back(CheckCase{"second", 3.0, 2.0, CheckCase::Cmp::ge, true});
  const nlohmann::json j = nlohmann::json::parse(rep.to_json());
  CHECK(j.at("check") == "demo");
  CHECK(j.at("passed") == true);
  CHECK(j.at("note") == "two cases");
  REQUIRE(j.at("cases").size() == 2);
  CHECK(j.at("cases")[0].at("label") == "first");
  CHECK(j.at("cases")[1].at("cmp") == "ge");
  CHECK(j.at("cases")[0].at("value") == doctest::Approx(0.1));
}

TEST_CASE("geometric bound holds on the scalar quadratic and is tight") {
  const auto q = make_quad_scalar();
  const std::vector<int> Ks{0, 1, 2, 3, 4, 5, 6, 7, 8};
  const CheckReport rep = check_theorem1_bound(*q, 0.25, Ks, scalar_alphas());
  CHECK(rep.passed);
  CHECK(rep.recompute());

  // The region constant is shared by every alpha in the run, so equality is
  // visible when the region is a single minimizer: error = bound =
  // 1 * 0.5 * (1/2) * 0.5^2 = 0.0625 at alpha = 1, K = 1.
  const CheckReport solo = check_theorem1_bound(*q, 0.25, Ks, {make_vector({1.0})});
  const CheckCase* tight = find_case(solo, "alpha[0] K=1 ");
  REQUIRE(tight != nullptr);
  CHECK(tight->value == doctest::Approx(0.0625).epsilon(1e-10));
  CHECK(tight->bound == doctest::Approx(0.0625).epsilon(1e-9));

  const CheckCase* slope = find_case(rep, "slope");
  REQUIRE(slope != nullptr);
  CHECK(slope->ok);

  const CheckCase* vac = find_case(rep, "non-vacuous");
  REQUIRE(vac != nullptr);
  CHECK(vac->cmp == CheckCase::Cmp::gt);
}

TEST_CASE("geometric bound holds on the 10-dimensional instance") {
  const auto q = make_quad_10d();
  const CheckReport rep =
      check_theorem1_bound(*q, 0.25, {0, 2, 4, 8}, seeded_alphas(*q, 3, 7));
  CHECK(rep.passed);
  CHECK(rep.recompute());
}

TEST_CASE("boundary step size zeroes both error and bound") {
  // gamma mu = 1: the series terminates and the bound is identically zero,
  // so the raw check's non-vacuity case fails while every bound case holds.
  QuadraticBilevel q(make_matrix({{4}}), make_matrix({{1}}), make_vector({1}), 0.0);
  const CheckReport rep = check_theorem1_bound(q, 0.25, {1, 2, 3}, scalar_alphas());
  CHECK_FALSE(rep.passed);
  for (const CheckCase& c : rep.details) {
    if (c.label.find("non-vacuous") != std::string::npos) {
      CHECK_FALSE(c.ok);
    } else if (c.label.find("within bound") != std::string::npos) {
      CHECK(c.ok);
      CHECK(c.value <= 1e-12);
    }
  }
}

TEST_CASE("outside the contraction regime the bound check refuses to run") {
  QuadraticBilevel q(make_matrix({{8}}), make_matrix({{1}}), make_vector({1}), 0.0);
  CHECK_THROWS_AS(check_theorem1_bound(q, 0.25, {0, 1}, scalar_alphas()), ContractError);
}

TEST_CASE("truncated reverse equals the neumann series at the fixed point") {
  const auto qs = make_quad_scalar();
  const CheckReport a = check_corollary2(*qs, 0.25, {0, 1, 2, 3, 4, 5}, scalar_alphas());
  CHECK(a.passed);
  CHECK(a.recompute());
  CHECK(a.details.size() == 3 * 6);

  const auto q10 = make_quad_10d();
  const CheckReport b = check_corollary2(*q10, 0.25, {0, 1, 2, 3}, seeded_alphas(*q10, 2, 11));
  CHECK(b.passed);
}

TEST_CASE("truncated estimates remain descent directions") {
  const auto q10 = make_quad_10d();
  const CheckReport rep = check_descent(*q10, 0.25, {0, 1, 3, 30}, 60, 99);
  CHECK(rep.passed);
  CHECK(rep.recompute());
  const CheckCase* usable = find_case(rep, "usable");
  REQUIRE(usable != nullptr);
  CHECK(usable->value >= 30.0);
  const CheckCase* positive = find_case(rep, "positive");
  REQUIRE(positive != nullptr);
  CHECK(positive->value > 0.0);
}

TEST_CASE("minibatch estimator matches its full-batch mean within three sigma") {
  const ToySupernet net;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss;
  BilevelState s;
  s.w = RealVector(net.weight_dim());
  for (int i = 0; i < s.w.size(); ++i) s.w[i] = 0.1 * gauss(rng);
  s.alpha = RealVector(net.alpha_dim());
  for (int i = 0; i < s.alpha.size(); ++i) s.alpha[i] = 0.3 * gauss(rng);

  EstimatorSpec spec;
  spec.kind = EstimatorKind::stochastic_neumann;
  spec.K = 2;
  const CheckReport rep = check_unbiasedness(net, s, spec, 60, 64, 64, 2024);
  CHECK(rep.passed);
  CHECK(rep.recompute());
  CHECK(rep.note.find("|z|") != std::string::npos);
}

TEST_CASE("degenerate full-batch draws must match the baseline exactly") {
  const auto q10 = make_quad_10d();
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss;
  RealVector alpha(q10->alpha_dim());
  for (int i = 0; i < alpha.size(); ++i) alpha[i] = gauss(rng);
  const BilevelState s{q10->inner_closed_form(alpha), alpha};
  EstimatorSpec spec;
  spec.kind = EstimatorKind::stochastic_neumann;
  spec.K = 3;
  // Batch size 0: every draw sees the full split, variance collapses to 0.
  const CheckReport rep = check_unbiasedness(*q10, s, spec, 16, 0, 0, 77);
  CHECK(rep.passed);
}

TEST_CASE("unbiasedness check rejects misuse") {
  const auto q10 = make_quad_10d();
  const BilevelState s{RealVector::Zero(10), RealVector::Zero(3)};
  EstimatorSpec wrong;
  wrong.kind = EstimatorKind::neumann_k;
  wrong.K = 1;
  CHECK_THROWS_AS(check_unbiasedness(*q10, s, wrong, 16, 0, 0, 1), ContractError);
  EstimatorSpec sn;
  sn.kind = EstimatorKind::stochastic_neumann;
  sn.K = 1;
  CHECK_THROWS_AS(check_unbiasedness(*q10, s, sn, 1, 0, 0, 1), ContractError);
}

TEST_CASE("convergence check accepts a well-tuned run") {
  const auto q = make_preset("quad-scalar");
  EstimatorSpec spec;
  spec.kind = EstimatorKind::neumann_k;
  spec.K = 3;
  SearchConfig cfg;
  cfg.rounds = 500;
  cfg.T = 10;
  cfg.gamma = 0.25;
  cfg.gamma_alpha = 0.1;
  cfg.converge_tol = 1e-4;
  const SearchTrajectory traj = run_search(*q, spec, cfg);
  const CheckReport rep = check_convergence(traj, 20, 1e-4);
  CHECK(rep.passed);
  CHECK(rep.recompute());

  CHECK_THROWS_AS(check_convergence(traj, 501, 1e-4), ConfigError);
  CHECK_THROWS_AS(check_convergence(traj, 0, 1e-4), ConfigError);

  // The same trajectory against an absurd threshold fails cleanly.
  CHECK_FALSE(check_convergence(traj, 20, 1e-12).passed);
}

TEST_CASE("convergence check flags a growing trajectory") {
  SearchTrajectory synth;
  synth.problem = "synthetic";
  synth.estimator = "none";
  for (int r = 0; r < 40; ++r) {
    RoundRecord rec;
    rec.round = r;
    rec.hyper_norm = 0.01 * (r + 1);  // strictly increasing
    synth.rounds.push_back(rec);
  }
  const CheckReport rep = check_convergence(synth, 5, 1e-4);
  CHECK_FALSE(rep.passed);
  CHECK_FALSE(rep.recompute());
}

TEST_CASE("supernet convergence reports are annotated as out of scope of the theory") {
  const auto net = make_preset("toynas");
  EstimatorSpec spec;
  spec.kind = EstimatorKind::stochastic_neumann;
  spec.K = 1;
  SearchConfig cfg;
  cfg.rounds = 12;
  cfg.T = 1;
  cfg.gamma = 0.2;
  cfg.gamma_alpha = 0.3;
  cfg.batch_train = 32;
  cfg.batch_val = 32;
  cfg.seed = 4;
  const SearchTrajectory traj = run_search(*net, spec, cfg);
  const CheckReport rep = check_convergence(traj, 4, 1e9);
  CHECK(rep.note.find("outside") != std::string::npos);
}
