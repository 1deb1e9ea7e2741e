#include "bihyper/runner.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <random>
#include <thread>

#include "bihyper/errors.hpp"
#include "bihyper/numerics.hpp"
#include "bihyper/supernet.hpp"
#include "bihyper/verify.hpp"

namespace bihyper {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

bool kind_takes_K(EstimatorKind k) {
  return k == EstimatorKind::neumann_k || k == EstimatorKind::stochastic_neumann ||
         k == EstimatorKind::truncated_reverse;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed: " + path.string());
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else if (c == '\n') out += ' ';
    else out += c;
  }
  out += '"';
  return out;
}

json round_to_json(const RoundRecord& rec) {
  json j{{"round", rec.round},
         {"inner_loss", rec.inner_loss},
         {"outer_loss", rec.outer_loss},
         {"hyper_norm", rec.hyper_norm},
         {"hvp_count_cum", rec.hvp_count_cum},
         {"stored_vector_peak", rec.stored_vector_peak},
         {"alpha_hash", rec.alpha_hash},
         {"wall_ns", rec.wall_ns}};
  if (rec.hyper_oracle_err) j["hyper_oracle_err"] = *rec.hyper_oracle_err;
  return j;
}

json trajectory_to_json(const std::string& run_id, const RunInstance& inst,
                        const BilevelProblem& problem, const SearchTrajectory& traj) {
  json j;
  j["run_id"] = run_id;
  j["problem"] = traj.problem;
  j["estimator"] = traj.estimator;
  if (inst.spec.K && kind_takes_K(inst.spec.kind)) j["K"] = *inst.spec.K;
  j["T"] = inst.search.T;
  if (inst.spec.S) j["S"] = *inst.spec.S;
  j["gamma"] = inst.search.gamma;
  j["gamma_alpha"] = inst.search.gamma_alpha;
  j["seed"] = inst.search.seed;
  j["converged"] = traj.converged;
  j["inner_step_count"] = traj.inner_step_count;
  j["outer_step_count"] = traj.outer_step_count;
  j["final_alpha"] = std::vector<double>(
      traj.final_state.alpha.data(),
      traj.final_state.alpha.data() + traj.final_state.alpha.size());
  if (const auto* net = dynamic_cast<const ToySupernet*>(&problem)) {
    const std::vector<int> arch = discretize_argmax(
        traj.final_state.alpha, std::vector<int>(ToySupernet::kNumEdges, ToySupernet::kNumOps));
    j["architecture"] = arch;
    j["teacher_match"] =
        std::equal(arch.begin(), arch.end(), net->teacher_ops().begin());
  }
  j["rounds"] = json::array();
  for (const RoundRecord& rec : traj.rounds) j["rounds"].push_back(round_to_json(rec));
  return j;
}

std::vector<ResultRow> trajectory_rows(const std::string& run_id, const RunInstance& inst,
                                       const std::string& problem_name,
                                       const SearchTrajectory& traj) {
  std::vector<ResultRow> rows;
  rows.reserve(traj.rounds.size());
  for (const RoundRecord& rec : traj.rounds) {
    ResultRow r;
    r.run_id = run_id;
    r.problem = problem_name;
    r.estimator = to_string(inst.spec.kind);
    if (kind_takes_K(inst.spec.kind)) r.K = inst.spec.K;
    r.T = inst.search.T;
    r.S = inst.spec.S;
    r.gamma = inst.search.gamma;
    r.gamma_alpha = inst.search.gamma_alpha;
    r.seed = inst.search.seed;
    r.round = rec.round;
    r.inner_loss = rec.inner_loss;
    r.outer_loss = rec.outer_loss;
    r.hyper_norm = rec.hyper_norm;
    r.hyper_oracle_err = rec.hyper_oracle_err;
    r.hvp_count_cum = rec.hvp_count_cum;
    r.stored_vector_peak = rec.stored_vector_peak;
    r.wall_ns = rec.wall_ns;
    rows.push_back(std::move(r));
  }
  return rows;
}

struct RunOutput {
  std::vector<ResultRow> rows;
  json traj;
  bool has_traj = false;
  bool failed = false;
  std::string stage;
  std::string message;
};

void apply_seed_override(RunConfig& cfg, const RunnerOptions& opt) {
  if (opt.seed_override) {
    cfg.search.seed = *opt.seed_override;
    cfg.sweep.seed.clear();
  }
}

void print_axis_summaries(const RunConfig& cfg, const std::vector<RunInstance>& plan,
                          const std::vector<RunOutput>& outs) {
  struct Axis {
    const char* name;
    bool swept;
    std::function<std::string(const RunInstance&)> label;
  };
  const std::vector<Axis> axes = {
      {"T", !cfg.sweep.T.empty(),
       [](const RunInstance& i) { return std::to_string(i.search.T); }},
      {"K", !cfg.sweep.K.empty(),
       [](const RunInstance& i) { return i.spec.K ? std::to_string(*i.spec.K) : "-"; }},
      {"gamma", !cfg.sweep.gamma.empty(),
       [](const RunInstance& i) { return format_double(i.search.gamma); }},
      {"gamma_alpha", !cfg.sweep.gamma_alpha.empty(),
       [](const RunInstance& i) { return format_double(i.search.gamma_alpha); }},
      {"seed", !cfg.sweep.seed.empty(),
       [](const RunInstance& i) { return std::to_string(i.search.seed); }},
  };
  for (const Axis& axis : axes) {
    if (!axis.swept) continue;
    std::vector<std::string> order;
    std::vector<std::pair<double, std::string>> best;  // parallel to order
    for (std::size_t i = 0; i < plan.size(); ++i) {
      if (outs[i].failed || outs[i].rows.empty()) continue;
      const std::string label = axis.label(plan[i]);
      const double final_outer = outs[i].rows.back().outer_loss;
      auto it = std::find(order.begin(), order.end(), label);
      if (it == order.end()) {
        order.push_back(label);
        best.emplace_back(final_outer, plan[i].run_id);
      } else {
        auto& slot = best[static_cast<std::size_t>(it - order.begin())];
        if (final_outer < slot.first) slot = {final_outer, plan[i].run_id};
      }
    }
    std::cout << "best final outer_loss by " << axis.name << ":\n";
    for (std::size_t i = 0; i < order.size(); ++i) {
      std::cout << "  " << axis.name << "=" << order[i] << " -> "
                << format_double(best[i].first) << " (" << best[i].second << ")\n";
    }
  }
}

// ---------------------------------------------------------------------------
// verify suite builders

std::vector<RealVector> seeded_alphas(int dim, int count, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<RealVector> out;
  for (int i = 0; i < count; ++i) {
    RealVector a(dim);
    for (int j = 0; j < dim; ++j) a[j] = scale * gauss(rng);
    out.push_back(std::move(a));
  }
  return out;
}

BilevelState seeded_state(const BilevelProblem& p, std::uint64_t seed, double w_scale,
                          double alpha_scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  BilevelState s;
  s.w.resize(p.weight_dim());
  for (int i = 0; i < p.weight_dim(); ++i) s.w[i] = w_scale * gauss(rng);
  s.alpha.resize(p.alpha_dim());
  for (int i = 0; i < p.alpha_dim(); ++i) s.alpha[i] = alpha_scale * gauss(rng);
  return s;
}

std::vector<int> k_iota(int lo, int hi) {
  std::vector<int> v;
  for (int k = lo; k <= hi; ++k) v.push_back(k);
  return v;
}

double bound_ratio(const CheckReport& rep) {
  double worst = 0.0;
  for (const CheckCase& c : rep.details) {
    if (c.cmp == CheckCase::Cmp::le && c.bound > 0.0) {
      worst = std::max(worst, c.value / c.bound);
    }
  }
  return worst;
}

std::vector<CheckReport> build_theorem1() {
  std::vector<CheckReport> reps;
  {
    const auto q = std::dynamic_pointer_cast<QuadraticBilevel>(make_preset("quad-scalar"));
    std::vector<RealVector> alphas = {make_vector({1.0}), make_vector({2.0}),
                                      make_vector({-1.5})};
    CheckReport r = check_theorem1_bound(*q, 0.25, k_iota(0, 8), alphas);
    r.check_name = "theorem1_bound_quad_scalar";
    r.note = "max error/bound ratio = " + format_double(bound_ratio(r));
    reps.push_back(std::move(r));
  }
  {
    const auto q = std::dynamic_pointer_cast<QuadraticBilevel>(make_preset("quad-10d"));
    CheckReport r = check_theorem1_bound(*q, 0.25, k_iota(0, 8),
                                         seeded_alphas(q->alpha_dim(), 3, 7, 1.0));
    r.check_name = "theorem1_bound_quad_10d";
    r.note = "max error/bound ratio = " + format_double(bound_ratio(r));
    reps.push_back(std::move(r));
  }
  {
    // gamma * mu == 1: the one-step inverse is exact and the bound collapses
    // to zero.
    QuadraticBilevel q(make_matrix({{4.0}}), make_matrix({{1.0}}), make_vector({1.0}), 0.0);
    q.set_name("quad-mu4");
    CheckReport r =
        check_theorem1_bound(q, 0.25, k_iota(0, 2), {make_vector({1.0})});
    // The zero-bound instance has zero error everywhere; drop the
    // non-vacuity demand, which belongs to the generic instances above.
    for (CheckCase& c : r.details) {
      if (c.label == "max error non-vacuous") {
        c.label = "zero-bound instance has zero error";
        c.cmp = CheckCase::Cmp::le;
        c.bound = 1e-12;
        c.ok = CheckReport::evaluate(c.value, c.cmp, c.bound);
      }
    }
    r.passed = r.recompute();
    r.check_name = "theorem1_bound_boundary_gamma_mu_1";
    reps.push_back(std::move(r));
  }
  return reps;
}

std::vector<CheckReport> build_corollary2() {
  std::vector<CheckReport> reps;
  {
    const auto q = std::dynamic_pointer_cast<QuadraticBilevel>(make_preset("quad-scalar"));
    CheckReport r = check_corollary2(*q, 0.25, k_iota(0, 5),
                                     {make_vector({1.0}), make_vector({0.5})});
    r.check_name = "corollary2_quad_scalar";
    reps.push_back(std::move(r));
  }
  {
    const auto q = std::dynamic_pointer_cast<QuadraticBilevel>(make_preset("quad-10d"));
    CheckReport r =
        check_corollary2(*q, 0.25, k_iota(0, 5), seeded_alphas(q->alpha_dim(), 2, 21, 1.0));
    r.check_name = "corollary2_quad_10d";
    reps.push_back(std::move(r));
  }
  return reps;
}

std::vector<CheckReport> build_descent() {
  std::vector<CheckReport> reps;
  {
    const auto q = std::dynamic_pointer_cast<QuadraticBilevel>(make_preset("quad-10d"));
    CheckReport r = check_descent(*q, 0.25, {0, 1, 3, 30}, 100, 99);
    r.check_name = "descent_quad_10d";
    reps.push_back(std::move(r));
  }
  {
    const auto q = std::dynamic_pointer_cast<QuadraticBilevel>(make_preset("quad-scalar"));
    CheckReport r = check_descent(*q, 0.25, {0, 1, 3, 30}, 25, 3);
    r.check_name = "descent_quad_scalar";
    reps.push_back(std::move(r));
  }
  return reps;
}

std::vector<CheckReport> build_unbiasedness() {
  std::vector<CheckReport> reps;
  EstimatorSpec spec;
  spec.kind = EstimatorKind::stochastic_neumann;
  spec.gamma = 0.25;
  spec.K = 2;
  {
    const ToySupernet net;
    const BilevelState s = seeded_state(net, 11, 0.1, 0.3);
    CheckReport r = check_unbiasedness(net, s, spec, 200, 32, 32, 2024);
    r.check_name = "unbiasedness_toynas";
    reps.push_back(std::move(r));
  }
  {
    // Batch-independent losses: every draw equals the full-batch value, so
    // the check degenerates to exact equality.
    const auto q = make_preset("quad-10d");
    BilevelState s;
    s.alpha = seeded_alphas(q->alpha_dim(), 1, 31, 1.0)[0];
    s.w = std::dynamic_pointer_cast<QuadraticBilevel>(q)->inner_closed_form(s.alpha);
    CheckReport r = check_unbiasedness(*q, s, spec, 16, 0, 0, 77);
    r.check_name = "unbiasedness_quadratic_degenerate";
    reps.push_back(std::move(r));
  }
  return reps;
}

std::vector<CheckReport> build_convergence() {
  std::vector<CheckReport> reps;
  const auto q = make_preset("quad-scalar");
  EstimatorSpec spec;
  spec.kind = EstimatorKind::neumann_k;
  spec.gamma = 0.25;
  spec.K = 3;
  SearchConfig cfg;
  cfg.rounds = 500;
  cfg.T = 10;
  cfg.gamma = 0.25;
  cfg.gamma_alpha = 0.1;
  cfg.seed = 1;
  cfg.record_oracle = true;

  const SearchTrajectory good = run_search(*q, spec, cfg);
  CheckReport r_good = check_convergence(good, 20, 1e-4);
  r_good.check_name = "convergence_small_step";
  r_good.details.push_back({"converged flag set", good.converged ? 1.0 : 0.0, 1.0,
                            CheckCase::Cmp::ge,
                            CheckReport::evaluate(good.converged ? 1.0 : 0.0,
                                                  CheckCase::Cmp::ge, 1.0)});
  r_good.passed = r_good.recompute();
  reps.push_back(std::move(r_good));

  // The over-large outer step must be flagged, demonstrating the step-size
  // sensitivity the convergence analysis predicts.
  SearchConfig bad_cfg = cfg;
  bad_cfg.gamma_alpha = 10.0;
  bad_cfg.rounds = 120;
  SearchTrajectory bad;
  bool bad_diverged_hard = false;
  try {
    bad = run_search(*q, spec, bad_cfg);
  } catch (const SearchDiverged& e) {
    bad = e.partial;
    bad_diverged_hard = true;
  }
  CheckReport meta;
  meta.check_name = "convergence_large_step_expected_fail";
  meta.note = "gamma_alpha=10 run must NOT satisfy the convergence check";
  bool bad_passed = false;
  double bad_trailing = std::numeric_limits<double>::infinity();
  if (!bad_diverged_hard && !bad.rounds.empty()) {
    const CheckReport bad_rep = check_convergence(bad, 20, 1e-4);
    bad_passed = bad_rep.passed;
    double acc = 0.0;
    const std::size_t n = bad.rounds.size();
    for (std::size_t i = n - 20; i < n; ++i) acc += bad.rounds[i].hyper_norm;
    bad_trailing = acc / 20.0;
  }
  auto push = [&meta](const std::string& label, double value, CheckCase::Cmp cmp,
                      double bound) {
    meta.details.push_back(
        {label, value, bound, cmp, CheckReport::evaluate(value, cmp, bound)});
  };
  push("large-step run fails the convergence check (0 = failed)", bad_passed ? 1.0 : 0.0,
       CheckCase::Cmp::le, 0.0);
  push("large-step trailing mean exceeds threshold", bad_trailing, CheckCase::Cmp::gt, 1e-4);
  push("large-step converged flag clear", bad.converged ? 1.0 : 0.0, CheckCase::Cmp::le, 0.0);
  meta.passed = meta.recompute();
  reps.push_back(std::move(meta));
  return reps;
}

std::vector<CheckReport> build_equivalences() {
  CheckReport rep;
  rep.check_name = "estimator_equivalences";
  auto push = [&rep](const std::string& label, double value, double bound) {
    rep.details.push_back(
        {label, value, bound, CheckCase::Cmp::le,
         CheckReport::evaluate(value, CheckCase::Cmp::le, bound)});
  };

  const auto scalar = std::dynamic_pointer_cast<QuadraticBilevel>(make_preset("quad-scalar"));
  const auto tend = std::dynamic_pointer_cast<QuadraticBilevel>(make_preset("quad-10d"));

  for (const auto& q : {scalar, tend}) {
    const RealVector alpha =
        q->alpha_dim() == 1 ? make_vector({1.0}) : seeded_alphas(q->alpha_dim(), 1, 5, 1.0)[0];
    const BilevelState s{q->inner_closed_form(alpha), alpha};
    const std::string tag = q->name() + " ";

    EstimatorSpec nk0{EstimatorKind::neumann_k, 0.25, 0, {}, {}, {}};
    EstimatorSpec os{EstimatorKind::one_step_unrolled, 0.25, {}, {}, {}, {}};
    push(tag + "neumann(K=0) == one_step_unrolled",
         (estimate_neumann_k(*q, s, nk0).grad_alpha -
          estimate_one_step_unrolled(*q, s, os).grad_alpha)
             .lpNorm<Eigen::Infinity>(),
         1e-12);

    EstimatorSpec nk2{EstimatorKind::neumann_k, 0.25, 2, {}, {}, {}};
    EstimatorSpec sn2{EstimatorKind::stochastic_neumann, 0.25, 2, {}, {}, {}};
    push(tag + "stochastic_neumann(full batches) == neumann_k, exactly",
         (estimate_stochastic_neumann(*q, s, sn2).grad_alpha -
          estimate_neumann_k(*q, s, nk2).grad_alpha)
             .lpNorm<Eigen::Infinity>(),
         0.0);

    EstimatorSpec cg{EstimatorKind::conjugate_gradient, 0.25, {}, {}, q->weight_dim(), {}};
    EstimatorSpec ift{EstimatorKind::exact_ift, 0.25, {}, {}, {}, {}};
    const RealVector g_cg = estimate_conjugate_gradient(*q, s, cg).grad_alpha;
    const RealVector g_ift = estimate_exact_ift(*q, s, ift).grad_alpha;
    push(tag + "cg(S=dim) == exact_ift", (g_cg - g_ift).lpNorm<Eigen::Infinity>(), 1e-8);
    push(tag + "exact_ift == closed-form oracle",
         (g_ift - q->oracle_exact_hypergradient(alpha)).lpNorm<Eigen::Infinity>(), 1e-8);
  }

  {
    const RealVector alpha = make_vector({1.0});
    const BilevelState s{scalar->inner_closed_form(alpha), alpha};
    EstimatorSpec rv{EstimatorKind::reverse_mode, 0.25, {}, 200, {}, {}};
    push("quad-scalar reverse_mode(T=200) == oracle",
         (estimate_reverse_mode(*scalar, s, rv).grad_alpha -
          scalar->oracle_exact_hypergradient(alpha))
             .lpNorm<Eigen::Infinity>(),
         1e-8);

    EstimatorSpec t1t2{EstimatorKind::t1t2, 0.25, {}, {}, {}, {}};
    EstimatorSpec os1{EstimatorKind::one_step_unrolled, 1.0, {}, {}, {}, {}};
    push("quad-scalar t1t2 == one_step_unrolled with gamma=1",
         (estimate_t1t2(*scalar, s, t1t2).grad_alpha -
          estimate_one_step_unrolled(*scalar, s, os1).grad_alpha)
             .lpNorm<Eigen::Infinity>(),
         1e-12);

    const BilevelState s0{make_vector({0.2}), alpha};
    EstimatorSpec full{EstimatorKind::reverse_mode, 0.25, {}, 6, {}, {}};
    EstimatorSpec trunc{EstimatorKind::truncated_reverse, 0.25, 6, 6, {}, {}};
    push("quad-scalar truncated(retained=T) == reverse_mode(T)",
         (estimate_truncated_reverse(*scalar, s0, trunc).grad_alpha -
          estimate_reverse_mode(*scalar, s0, full).grad_alpha)
             .lpNorm<Eigen::Infinity>(),
         1e-12);
  }

  {
    // The bitwise full-batch degeneracy must also hold on a problem whose
    // losses genuinely depend on the batch.
    const ToySupernet net;
    const BilevelState s = seeded_state(net, 17, 0.1, 0.3);
    EstimatorSpec nk2{EstimatorKind::neumann_k, 0.25, 2, {}, {}, {}};
    EstimatorSpec sn2{EstimatorKind::stochastic_neumann, 0.25, 2, {}, {}, {}};
    push("toynas stochastic_neumann(full batches) == neumann_k, exactly",
         (estimate_stochastic_neumann(net, s, sn2).grad_alpha -
          estimate_neumann_k(net, s, nk2).grad_alpha)
             .lpNorm<Eigen::Infinity>(),
         0.0);
  }

  rep.passed = rep.recompute();
  return {rep};
}

struct Suite {
  const char* name;
  std::vector<CheckReport> (*build)();
};

const Suite kSuites[] = {
    {"theorem1", build_theorem1},       {"corollary2", build_corollary2},
    {"descent", build_descent},         {"unbiasedness", build_unbiasedness},
    {"convergence", build_convergence}, {"equivalences", build_equivalences},
};

}  // namespace

int run_bench(RunConfig cfg, const RunnerOptions& opt) {
  if (opt.require_sweep && !cfg.sweep.any()) {
    throw ConfigError("sweep: the config defines no sweep.* axes (use bench for single runs)");
  }
  apply_seed_override(cfg, opt);
  const auto problem = cfg.make_problem();
  const std::vector<RunInstance> plan = expand_sweep(cfg);
  const bool want_csv = opt.format != OutputFormat::json;
  const bool want_json = opt.format != OutputFormat::csv;

  std::vector<RunOutput> outs(plan.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= plan.size()) return;
      RunOutput& out = outs[i];
      try {
        const SearchTrajectory traj = run_search(*problem, plan[i].spec, plan[i].search);
        out.rows = trajectory_rows(plan[i].run_id, plan[i], problem->name(), traj);
        if (want_json) {
          out.traj = trajectory_to_json(plan[i].run_id, plan[i], *problem, traj);
          out.has_traj = true;
        }
      } catch (const SearchDiverged& e) {
        out.rows = trajectory_rows(plan[i].run_id, plan[i], problem->name(), e.partial);
        out.failed = true;
        out.stage = "search";
        out.message = e.what();
      } catch (const Error& e) {
        out.failed = true;
        out.stage = "setup";
        out.message = e.what();
      } catch (const std::exception& e) {
        out.failed = true;
        out.stage = "internal";
        out.message = e.what();
      }
    }
  };
  const int jobs = std::max(1, opt.jobs);
  std::vector<std::thread> pool;
  for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& th : pool) th.join();

  fs::create_directories(opt.out_dir);
  if (want_csv) {
    std::string csv = result_csv_header() + "\n";
    for (const RunOutput& out : outs)
      for (const ResultRow& r : out.rows) csv += to_csv_line(r) + "\n";
    write_file(fs::path(opt.out_dir) / "results.csv", csv);
  }
  if (want_json) {
    json arr = json::array();
    for (const RunOutput& out : outs)
      if (out.has_traj) arr.push_back(out.traj);
    write_file(fs::path(opt.out_dir) / "trajectories.json", arr.dump(2) + "\n");
  }
  std::string errors_csv = "run_id,stage,message\n";
  std::size_t failures = 0;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    if (!outs[i].failed) continue;
    ++failures;
    errors_csv += plan[i].run_id + "," + outs[i].stage + "," +
                  csv_escape(outs[i].message) + "\n";
  }
  write_file(fs::path(opt.out_dir) / "errors.csv", errors_csv);

  std::cout << "executed " << plan.size() << " run(s), " << failures << " failed; output in "
            << opt.out_dir << "\n";
  print_axis_summaries(cfg, plan, outs);
  return failures == 0 ? 0 : 1;
}

int run_single_search(RunConfig cfg, const RunnerOptions& opt) {
  if (cfg.sweep.any()) {
    throw ConfigError("search: the config defines sweep.* axes; use bench or sweep");
  }
  apply_seed_override(cfg, opt);
  const auto problem = cfg.make_problem();
  const RunInstance inst = expand_sweep(cfg).front();
  const bool want_csv = opt.format != OutputFormat::json;
  const bool want_json = opt.format != OutputFormat::csv;

  SearchTrajectory traj;
  bool failed = false;
  std::string message;
  try {
    traj = run_search(*problem, inst.spec, inst.search);
  } catch (const SearchDiverged& e) {
    traj = e.partial;
    failed = true;
    message = e.what();
  }

  fs::create_directories(opt.out_dir);
  if (want_csv) {
    std::string csv = result_csv_header() + "\n";
    for (const ResultRow& r : trajectory_rows(inst.run_id, inst, problem->name(), traj))
      csv += to_csv_line(r) + "\n";
    write_file(fs::path(opt.out_dir) / "results.csv", csv);
  }
  if (want_json) {
    write_file(fs::path(opt.out_dir) / "trajectory.json",
               trajectory_to_json(inst.run_id, inst, *problem, traj).dump(2) + "\n");
  }

  std::cout << "problem=" << problem->name() << " estimator=" << to_string(inst.spec.kind)
            << " rounds=" << traj.rounds.size() << " converged="
            << (traj.converged ? "true" : "false") << "\n";
  if (!traj.rounds.empty()) {
    const RoundRecord& last = traj.rounds.back();
    std::cout << "final inner_loss=" << format_double(last.inner_loss)
              << " outer_loss=" << format_double(last.outer_loss)
              << " hyper_norm=" << format_double(last.hyper_norm) << "\n";
  }
  if (const auto* net = dynamic_cast<const ToySupernet*>(problem.get())) {
    const std::vector<int> arch = discretize_argmax(
        traj.final_state.alpha, std::vector<int>(ToySupernet::kNumEdges, ToySupernet::kNumOps));
    std::cout << "architecture:";
    for (int op : arch) std::cout << " " << op;
    std::cout << (std::equal(arch.begin(), arch.end(), net->teacher_ops().begin())
                      ? " (matches teacher)"
                      : " (differs from teacher)")
              << "\n";
  }
  if (failed) {
    std::cout << "run diverged: " << message << "\n";
    return 1;
  }
  return 0;
}

int run_verify(const std::vector<std::string>& selection, const std::string& out_dir) {
  std::vector<std::string> chosen;
  auto add = [&chosen](const std::string& name) {
    if (std::find(chosen.begin(), chosen.end(), name) == chosen.end()) chosen.push_back(name);
  };
  std::string valid;
  for (const Suite& s : kSuites) {
    if (!valid.empty()) valid += ", ";
    valid += s.name;
  }
  for (const std::string& sel : selection.empty() ? std::vector<std::string>{"all"}
                                                  : selection) {
    if (sel == "all") {
      for (const Suite& s : kSuites) add(s.name);
      continue;
    }
    const bool known = std::any_of(std::begin(kSuites), std::end(kSuites),
                                   [&](const Suite& s) { return sel == s.name; });
    if (!known) {
      throw ConfigError("unknown check '" + sel + "' (valid: " + valid + ", all)");
    }
    add(sel);
  }

  fs::create_directories(out_dir);
  bool all_passed = true;
  for (const std::string& name : chosen) {
    const Suite& suite = *std::find_if(std::begin(kSuites), std::end(kSuites),
                                       [&](const Suite& s) { return name == s.name; });
    const std::vector<CheckReport> reports = suite.build();
    json arr = json::array();
    for (const CheckReport& rep : reports) {
      arr.push_back(json::parse(rep.to_json()));
      std::cout << (rep.passed ? "[PASS] " : "[FAIL] ") << rep.check_name << " ("
                << rep.details.size() << " cases)";
      if (!rep.note.empty()) std::cout << " -- " << rep.note;
      std::cout << "\n";
      all_passed = all_passed && rep.passed;
    }
    write_file(fs::path(out_dir) / (name + ".json"), arr.dump(2) + "\n");
  }
  std::cout << (all_passed ? "verify: all checks passed\n" : "verify: FAILURES present\n");
  return all_passed ? 0 : 1;
}

}  // namespace bihyper
