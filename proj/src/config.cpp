#include "bihyper/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bihyper/errors.hpp"

namespace bihyper {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& raw, const char* what) {
  const std::string v = trim(raw);
  T out{};
  const char* first = v.data();
  const char* last = v.data() + v.size();
  const auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc{} || res.ptr != last || v.empty()) {
    throw ConfigError(std::string("invalid ") + what + " '" + v + "'");
  }
  return out;
}

int parse_int(const std::string& v) { return parse_number<int>(v, "integer"); }
double parse_real(const std::string& v) { return parse_number<double>(v, "number"); }
std::uint64_t parse_u64(const std::string& v) { return parse_number<std::uint64_t>(v, "seed"); }

bool parse_bool(const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid flag '" + v + "' (use true/false)");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& raw, F&& one) {
  std::vector<T> out;
  for (const std::string& part : split(raw, ',')) out.push_back(one(part));
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

RealVector parse_vector(const std::string& raw) {
  const auto vals = parse_list<double>(raw, parse_real);
  RealVector v(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v[static_cast<Eigen::Index>(i)] = vals[i];
  return v;
}

// Rows separated by ';', entries by ','; e.g. "2,0;0,3".
RealMatrix parse_matrix(const std::string& raw) {
  const auto rows = split(raw, ';');
  if (rows.empty()) throw ConfigError("empty matrix");
  std::vector<std::vector<double>> data;
  for (const std::string& row : rows) {
    data.push_back(parse_list<double>(row, parse_real));
    if (data.back().size() != data.front().size()) {
      throw ConfigError("ragged matrix rows");
    }
  }
  RealMatrix m(static_cast<Eigen::Index>(data.size()),
               static_cast<Eigen::Index>(data.front().size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = data[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

std::string valid_kind_list() {
  static const EstimatorKind all[] = {
      EstimatorKind::exact_ift,       EstimatorKind::one_step_unrolled,
      EstimatorKind::t1t2,            EstimatorKind::reverse_mode,
      EstimatorKind::truncated_reverse, EstimatorKind::neumann_k,
      EstimatorKind::conjugate_gradient, EstimatorKind::stochastic_neumann,
  };
  std::string out;
  for (EstimatorKind k : all) {
    if (!out.empty()) out += ", ";
    out += to_string(k);
  }
  return out;
}

bool kind_takes_K(EstimatorKind k) {
  return k == EstimatorKind::neumann_k || k == EstimatorKind::stochastic_neumann ||
         k == EstimatorKind::truncated_reverse;
}

bool is_reverse_family(EstimatorKind k) {
  return k == EstimatorKind::reverse_mode || k == EstimatorKind::truncated_reverse;
}

struct ParseState {
  RunConfig cfg;
  bool saw_estimator = false;
  std::vector<std::string> errors;
};

void apply_key(ParseState& st, const std::string& key, const std::string& value) {
  RunConfig& c = st.cfg;
  if (key == "problem") {
    c.problem = trim(value);
    if (c.problem.empty()) throw ConfigError("problem name is empty");
  } else if (key == "problem.A") {
    c.inline_A = parse_matrix(value);
  } else if (key == "problem.B") {
    c.inline_B = parse_matrix(value);
  } else if (key == "problem.c") {
    c.inline_c = parse_vector(value);
  } else if (key == "problem.lambda") {
    c.inline_lambda = parse_real(value);
  } else if (key == "search.estimator") {
    const auto k = estimator_from_string(trim(value));
    if (!k) {
      throw ConfigError("unknown estimator '" + trim(value) + "' (valid: " +
                        valid_kind_list() + ")");
    }
    c.estimator.kind = *k;
    st.saw_estimator = true;
  } else if (key == "search.K") {
    c.estimator.K = parse_int(value);
  } else if (key == "search.S") {
    c.estimator.S = parse_int(value);
  } else if (key == "search.T") {
    c.search.T = parse_int(value);
  } else if (key == "search.gamma") {
    c.search.gamma = parse_real(value);
    c.estimator.gamma = c.search.gamma;
  } else if (key == "search.gamma_alpha") {
    c.search.gamma_alpha = parse_real(value);
  } else if (key == "search.gamma_alpha_floor") {
    c.search.gamma_alpha_floor = parse_real(value);
  } else if (key == "search.schedule") {
    const std::string v = trim(value);
    if (v == "constant") {
      c.search.schedule = SearchConfig::Schedule::constant;
    } else if (v == "cosine") {
      c.search.schedule = SearchConfig::Schedule::cosine;
    } else {
      throw ConfigError("unknown schedule '" + v + "' (valid: constant, cosine)");
    }
  } else if (key == "search.rounds") {
    c.search.rounds = parse_int(value);
  } else if (key == "search.seed") {
    c.search.seed = parse_u64(value);
  } else if (key == "search.batch_train") {
    c.search.batch_train = parse_int(value);
  } else if (key == "search.batch_val") {
    c.search.batch_val = parse_int(value);
  } else if (key == "search.w_init_scale") {
    c.search.w_init_scale = parse_real(value);
  } else if (key == "search.converge_window") {
    c.search.converge_window = parse_int(value);
  } else if (key == "search.converge_tol") {
    c.search.converge_tol = parse_real(value);
  } else if (key == "search.epsilon_scale") {
    c.estimator.eps.scale = parse_real(value);
  } else if (key == "search.record_oracle") {
    c.record_oracle = parse_bool(value);
  } else if (key == "sweep.T") {
    c.sweep.T = parse_list<int>(value, parse_int);
  } else if (key == "sweep.K") {
    c.sweep.K = parse_list<int>(value, parse_int);
  } else if (key == "sweep.gamma") {
    c.sweep.gamma = parse_list<double>(value, parse_real);
  } else if (key == "sweep.gamma_alpha") {
    c.sweep.gamma_alpha = parse_list<double>(value, parse_real);
  } else if (key == "sweep.seed") {
    c.sweep.seed = parse_list<std::uint64_t>(value, parse_u64);
  } else if (key == "output") {
    c.out_dir = trim(value);
    if (c.out_dir.empty()) throw ConfigError("output directory is empty");
  } else if (key == "format") {
    const std::string v = trim(value);
    if (v == "csv") {
      c.format = OutputFormat::csv;
    } else if (v == "json") {
      c.format = OutputFormat::json;
    } else if (v == "both") {
      c.format = OutputFormat::both;
    } else {
      throw ConfigError("unknown format '" + v + "' (valid: csv, json, both)");
    }
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

void validate_semantics(ParseState& st) {
  RunConfig& c = st.cfg;
  auto err = [&](const std::string& m) { st.errors.push_back(m); };

  if (c.problem.empty()) {
    err("problem is required");
    return;  // everything else depends on it
  }
  const bool inline_piece =
      c.inline_A || c.inline_B || c.inline_c || c.inline_lambda.has_value();
  if (c.problem == "quad-inline") {
    if (!(c.inline_A && c.inline_B && c.inline_c && c.inline_lambda.has_value())) {
      err("quad-inline requires problem.A, problem.B, problem.c and problem.lambda");
    }
  } else if (inline_piece) {
    err("problem.A/B/c/lambda only apply to problem=quad-inline");
  }
  if (!st.saw_estimator) err("search.estimator is required");
  if (!c.sweep.K.empty() && !kind_takes_K(c.estimator.kind)) {
    err(std::string("sweep.K: K is not meaningful for ") + to_string(c.estimator.kind));
  }
  if (c.record_oracle.value_or(false) && !c.is_quadratic()) {
    err("search.record_oracle requires a quadratic problem");
  }
  const std::size_t n = c.sweep.product_size();
  if (n > 100000) {
    err("sweep product size " + std::to_string(n) + " exceeds the 100000-run guard");
  }
  if (!st.errors.empty()) return;

  // Validate one representative instance so kind/field mismatches and range
  // violations surface at parse time, not mid-sweep.
  try {
    RunConfig probe = c;
    if (!probe.sweep.T.empty()) probe.search.T = probe.sweep.T.front();
    if (!probe.sweep.K.empty()) probe.estimator.K = probe.sweep.K.front();
    if (!probe.sweep.gamma.empty()) {
      probe.search.gamma = probe.sweep.gamma.front();
      probe.estimator.gamma = probe.search.gamma;
    }
    if (!probe.sweep.gamma_alpha.empty()) {
      probe.search.gamma_alpha = probe.sweep.gamma_alpha.front();
    }
    if (!probe.sweep.seed.empty()) probe.search.seed = probe.sweep.seed.front();
    if (is_reverse_family(probe.estimator.kind) && !probe.estimator.T) {
      probe.estimator.T = probe.search.T;
    }
    probe.estimator.validate();
    probe.search.validate();
  } catch (const Error& e) {
    err(e.what());
  }
}

}  // namespace

bool SweepAxes::any() const {
  return !T.empty() || !K.empty() || !gamma.empty() || !gamma_alpha.empty() || !seed.empty();
}

std::size_t SweepAxes::product_size() const {
  auto dim = [](std::size_t n) { return n == 0 ? std::size_t{1} : n; };
  return dim(T.size()) * dim(K.size()) * dim(gamma.size()) * dim(gamma_alpha.size()) *
         dim(seed.size());
}

std::string to_string(OutputFormat f) {
  switch (f) {
    case OutputFormat::csv: return "csv";
    case OutputFormat::json: return "json";
    case OutputFormat::both: return "both";
  }
  return "?";
}

bool RunConfig::is_quadratic() const {
  return problem == "quad-scalar" || problem == "quad-10d" || problem == "quad-inline";
}

std::shared_ptr<BilevelProblem> RunConfig::make_problem() const {
  if (problem == "quad-inline") {
    auto q = std::make_shared<QuadraticBilevel>(*inline_A, *inline_B, *inline_c,
                                                *inline_lambda);
    q->set_name("quad-inline");
    return q;
  }
  return make_preset(problem);
}

std::vector<RunInstance> expand_sweep(const RunConfig& cfg) {
  auto ints = [](const std::vector<int>& axis, int base) {
    return axis.empty() ? std::vector<int>{base} : axis;
  };
  auto reals = [](const std::vector<double>& axis, double base) {
    return axis.empty() ? std::vector<double>{base} : axis;
  };
  const std::vector<int> Ts = ints(cfg.sweep.T, cfg.search.T);
  // K may legitimately be absent (estimators that do not take it).
  std::vector<std::optional<int>> Ks;
  if (cfg.sweep.K.empty()) {
    Ks.push_back(cfg.estimator.K);
  } else {
    for (int k : cfg.sweep.K) Ks.emplace_back(k);
  }
  const std::vector<double> gammas = reals(cfg.sweep.gamma, cfg.search.gamma);
  const std::vector<double> gas = reals(cfg.sweep.gamma_alpha, cfg.search.gamma_alpha);
  const std::vector<std::uint64_t> seeds =
      cfg.sweep.seed.empty() ? std::vector<std::uint64_t>{cfg.search.seed} : cfg.sweep.seed;

  std::vector<RunInstance> plan;
  plan.reserve(Ts.size() * Ks.size() * gammas.size() * gas.size() * seeds.size());
  std::size_t idx = 0;
  for (int T : Ts) {
    for (const auto& K : Ks) {
      for (double g : gammas) {
        for (double ga : gas) {
          for (std::uint64_t seed : seeds) {
            RunInstance inst;
            char buf[16];
            std::snprintf(buf, sizeof buf, "r%06zu", idx++);
            inst.run_id = buf;
            inst.spec = cfg.estimator;
            inst.search = cfg.search;
            inst.search.T = T;
            inst.spec.K = K;
            inst.search.gamma = g;
            inst.spec.gamma = g;
            inst.search.gamma_alpha = ga;
            inst.search.seed = seed;
            inst.search.record_oracle = cfg.record_oracle.value_or(cfg.is_quadratic());
            if (is_reverse_family(inst.spec.kind) && !inst.spec.T) {
              inst.spec.T = inst.search.T;
            }
            inst.spec.validate();
            inst.search.validate();
            plan.push_back(std::move(inst));
          }
        }
      }
    }
  }
  return plan;
}

RunConfig parse_config(const std::string& text) {
  ParseState st;
  int lineno = 0;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    try {
      if (eq == std::string::npos) throw ConfigError("expected key=value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = line.substr(eq + 1);
      if (key.empty()) throw ConfigError("expected key=value");
      apply_key(st, key, value);
    } catch (const Error& e) {
      st.errors.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (st.errors.empty()) validate_semantics(st);
  if (!st.errors.empty()) {
    std::string joined = "config invalid:";
    for (const std::string& e : st.errors) joined += "\n  " + e;
    throw ConfigError(joined);
  }
  return st.cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string result_csv_header() {
  return "run_id,problem,estimator,K,T,S,gamma,gamma_alpha,seed,round,inner_loss,"
         "outer_loss,hyper_norm,hyper_oracle_err,hvp_count_cum,stored_vector_peak,wall_ns";
}

std::string to_csv_line(const ResultRow& r) {
  auto opt_int = [](const std::optional<int>& v) {
    return v ? std::to_string(*v) : std::string();
  };
  std::string out;
  out += r.run_id;
  out += ',';
  out += r.problem;
  out += ',';
  out += r.estimator;
  out += ',';
  out += opt_int(r.K);
  out += ',';
  out += opt_int(r.T);
  out += ',';
  out += opt_int(r.S);
  out += ',';
  out += format_double(r.gamma);
  out += ',';
  out += format_double(r.gamma_alpha);
  out += ',';
  out += std::to_string(r.seed);
  out += ',';
  out += std::to_string(r.round);
  out += ',';
  out += format_double(r.inner_loss);
  out += ',';
  out += format_double(r.outer_loss);
  out += ',';
  out += format_double(r.hyper_norm);
  out += ',';
  out += r.hyper_oracle_err ? format_double(*r.hyper_oracle_err) : std::string();
  out += ',';
  out += std::to_string(r.hvp_count_cum);
  out += ',';
  out += std::to_string(r.stored_vector_peak);
  out += ',';
  out += std::to_string(r.wall_ns);
  return out;
}

}  // namespace bihyper
