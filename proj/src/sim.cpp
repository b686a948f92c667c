#include "cbfsos/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <thread>

namespace cbfsos {

namespace {

std::span<const double> view(const Eigen::VectorXd& x) { return {x.data(), static_cast<std::size_t>(x.size())}; }

std::vector<double> to_std(const Eigen::VectorXd& x) { return {x.data(), x.data() + x.size()}; }

bool all_finite(const Eigen::VectorXd& x) { return x.allFinite(); }

// Disturbance map and dh/dx * map as flat evaluators.
struct DisturbanceEval {
  const DisturbanceModel* model = nullptr;
  std::vector<FlatPolynomial> map;  // row-major n x w
  std::vector<FlatPolynomial> map_h;
  int n = 0;
  int w = 0;

  DisturbanceEval(const DisturbanceModel& d, const Polynomial& h) : model(&d), n(d.map.rows()), w(d.map.cols()) {
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < w; ++c) map.emplace_back(d.map(r, c));
    }
    for (const auto& p : lie_derivative(d.map, h)) map_h.emplace_back(p);
  }

  Eigen::VectorXd term(double t, const Eigen::VectorXd& x) const {
    Eigen::VectorXd mh(w);
    for (int c = 0; c < w; ++c) mh(c) = map_h[static_cast<std::size_t>(c)](view(x));
    const Eigen::VectorXd wv = model->sample(t, mh);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < w; ++c) out(r) += map[static_cast<std::size_t>(r * w + c)](view(x)) * wv(c);
    }
    return out;
  }
};

}  // namespace

std::string to_string(DisturbanceSignal s) {
  switch (s) {
    case DisturbanceSignal::kWorstCase:
      return "worst_case";
    case DisturbanceSignal::kSinusoidal:
      return "sinusoidal";
    case DisturbanceSignal::kRandom:
      return "random";
  }
  return "worst_case";
}

DisturbanceSignal disturbance_signal_from_string(const std::string& s) {
  if (s == "worst_case") return DisturbanceSignal::kWorstCase;
  if (s == "sinusoidal") return DisturbanceSignal::kSinusoidal;
  if (s == "random") return DisturbanceSignal::kRandom;
  throw SimError("unknown disturbance signal: " + s);
}

void DisturbanceModel::validate(int n) const {
  if (map.rows() != n || map.cols() < 1) throw SimError("disturbance map must be n x w with w >= 1");
  if (map.nvars() != n) throw SimError("disturbance map variable count does not match the state");
  if (!(bound >= 0.0) || !std::isfinite(bound)) throw SimError("disturbance bound must be finite and >= 0");
  if (signal == DisturbanceSignal::kRandom && !(hold > 0.0)) throw SimError("random disturbance hold must be > 0");
  if (!std::isfinite(frequency)) throw SimError("disturbance frequency must be finite");
}

Eigen::VectorXd DisturbanceModel::sample(double t, const Eigen::VectorXd& map_h) const {
  const int w = static_cast<int>(map_h.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(w);
  if (bound == 0.0) return out;
  switch (signal) {
    case DisturbanceSignal::kWorstCase: {
      // Opposes the gradient of h along the map.
      const double norm = map_h.norm();
      if (norm > 0.0) out = -bound * map_h / norm;
      break;
    }
    case DisturbanceSignal::kSinusoidal: {
      const double scale = bound / std::sqrt(static_cast<double>(w));
      for (int i = 0; i < w; ++i) {
        out(i) = scale * std::sin(frequency * t + 2.0 * std::numbers::pi * i / w);
      }
      break;
    }
    case DisturbanceSignal::kRandom: {
      const auto k = static_cast<std::uint64_t>(std::floor(t / hold));
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
      std::mt19937_64 rng(seq);
      std::normal_distribution<double> nd;
      std::uniform_real_distribution<double> ud;
      for (int i = 0; i < w; ++i) out(i) = nd(rng);
      const double norm = out.norm();
      const double radius = bound * std::pow(ud(rng), 1.0 / w);
      out = norm > 0.0 ? Eigen::VectorXd(out * (radius / norm)) : Eigen::VectorXd::Zero(w);
      break;
    }
  }
  return out;
}

void SimConfig::validate(int n) const {
  if (static_cast<int>(x0.size()) != n) throw SimError("x0 length does not match the model dimension");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw SimError("dt must be positive");
  if (!(T >= 0.0) || !std::isfinite(T)) throw SimError("horizon must be finite and >= 0");
  if (method != "rk4") throw SimError("unsupported integration method: " + method);
  if (origin_radius < 0.0 || converge_radius < 0.0) throw SimError("radii must be >= 0");
  for (double v : x0) {
    if (!std::isfinite(v)) throw SimError("x0 must be finite");
  }
  if (disturbance) disturbance->validate(n);
}

Trajectory integrate_closed_loop(const SystemModel& model, const SimConfig& cfg) {
  return integrate_closed_loop(FilterEvaluator(model), cfg);
}

Trajectory integrate_closed_loop(const FilterEvaluator& eval, const SimConfig& cfg) {
  const SystemModel& model = eval.model();
  cfg.validate(model.n);
  std::optional<DisturbanceEval> dist;
  if (cfg.disturbance) dist.emplace(*cfg.disturbance, model.h);

  Trajectory trj;
  auto derivative = [&](double t, const Eigen::VectorXd& x, FilterOutput* out) {
    FilterOutput f = eval.solve(view(x));
    Eigen::VectorXd dx = eval.vector_field(view(x), f.u_prime);
    if (dist) dx += dist->term(t, x);
    if (out) *out = std::move(f);
    return dx;
  };
  auto record = [&](double t, const Eigen::VectorXd& x, const FilterOutput& f) {
    const FilterTerms terms = eval.terms(view(x));
    trj.times.push_back(t);
    trj.states.push_back(x);
    trj.u_total.push_back(f.u_total);
    trj.u_prime.push_back(f.u_prime);
    trj.delta.push_back(f.delta);
    trj.h.push_back(terms.h);
    trj.V.push_back(terms.V);
    trj.region.push_back(f.region);
  };

  const auto steps = static_cast<long>(std::floor(cfg.T / cfg.dt + 1e-9));
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(cfg.x0.data(), model.n);
  FilterOutput f0;
  Eigen::VectorXd k1;
  try {
    k1 = derivative(0.0, x, &f0);
  } catch (const SingularSystemError& e) {
    throw SimError(std::string("filter failed at x0: ") + e.what());
  } catch (const PartitionError& e) {
    throw SimError(std::string("filter failed at x0: ") + e.what());
  }
  record(0.0, x, f0);

  for (long i = 0; i < steps; ++i) {
    if (cfg.origin_radius > 0.0 && x.norm() <= cfg.origin_radius) break;
    const double t = static_cast<double>(i) * cfg.dt;
    const double h = cfg.dt;
    try {
      const Eigen::VectorXd k2 = derivative(t + 0.5 * h, x + 0.5 * h * k1, nullptr);
      const Eigen::VectorXd k3 = derivative(t + 0.5 * h, x + 0.5 * h * k2, nullptr);
      const Eigen::VectorXd k4 = derivative(t + h, x + h * k3, nullptr);
      const Eigen::VectorXd next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!all_finite(next)) throw SimError("non-finite state at t = " + format_double(t + h));
      x = next;
      const double t_next = static_cast<double>(i + 1) * cfg.dt;
      k1 = derivative(t_next, x, &f0);
      record(t_next, x, f0);
    } catch (const SingularSystemError& e) {
      trj.error = std::string("filter failed: ") + e.what();
      break;
    } catch (const PartitionError& e) {
      trj.error = std::string("filter failed: ") + e.what();
      break;
    }
  }
  return trj;
}

SimReport analyze(const Trajectory& trj, const SystemModel& model, const SimConfig& cfg) {
  return analyze(trj, FilterEvaluator(model), cfg);
}

SimReport analyze(const Trajectory& trj, const FilterEvaluator& eval, const SimConfig& cfg) {
  if (trj.size() == 0) throw SimError("analyze: empty trajectory");
  SimReport rep;
  rep.error = trj.error;
  rep.min_h = *std::min_element(trj.h.begin(), trj.h.end());
  if (trj.h.front() >= 0.0) {
    for (std::size_t k = 0; k < trj.size(); ++k) {
      if (trj.h[k] < -cfg.tol_h) {
        rep.safety_violated = true;
        rep.first_violation_time = trj.times[k];
        break;
      }
    }
  }
  rep.final_norm = trj.states.back().norm();
  rep.converged = !trj.error && rep.final_norm <= cfg.converge_radius;
  for (const RegionTag r : trj.region) ++rep.region_counts[to_string(r)];

  // A detection is one stretch of |xdot| < equilibrium_speed lasting at least
  // equilibrium_window.
  std::optional<std::size_t> run_start;
  bool reported = false;
  for (std::size_t k = 0; k < trj.size(); ++k) {
    const double speed = eval.vector_field(view(trj.states[k]), trj.u_prime[k]).norm();
    if (speed >= cfg.equilibrium_speed) {
      run_start.reset();
      reported = false;
      continue;
    }
    if (!run_start) run_start = k;
    if (!reported && trj.times[k] - trj.times[*run_start] >= cfg.equilibrium_window - 1e-12) {
      EquilibriumDetection e;
      e.state = to_std(trj.states[k]);
      e.time = trj.times[k];
      e.at_origin = trj.states[k].norm() <= cfg.converge_radius;
      rep.equilibria.push_back(std::move(e));
      reported = true;
    }
  }
  return rep;
}

namespace {

// Half-widths of the bounding box of {x'Px <= eta} when V = x'Px with P > 0.
std::optional<Eigen::VectorXd> quadratic_box(const Polynomial& V, double eta) {
  const int n = V.nvars();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [m, c] : V.terms()) {
    if (m.degree() != 2) return std::nullopt;
    std::vector<int> idx;
    for (int i = 0; i < n; ++i) {
      for (int e = 0; e < m[i]; ++e) idx.push_back(i);
    }
    if (idx[0] == idx[1]) {
      P(idx[0], idx[0]) += c;
    } else {
      P(idx[0], idx[1]) += 0.5 * c;
      P(idx[1], idx[0]) += 0.5 * c;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Eigen::MatrixXd Pinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  return (eta * Pinv.diagonal()).cwiseSqrt();
}

}  // namespace

MonteCarloResult roa_monte_carlo(const SystemModel& model, double eta, int N, const SimConfig& cfg,
                                 const MonteCarloOptions& options) {
  if (N < 1) throw SimError("roa_monte_carlo: N must be >= 1");
  if (!(eta > 0.0)) throw SimError("roa_monte_carlo: no states to sample, eta must be > 0");
  const int n = model.n;
  Eigen::VectorXd half(n);
  if (options.half_width) {
    half.setConstant(*options.half_width);
  } else {
    const auto box = quadratic_box(model.V, eta);
    if (!box) throw SimError("roa_monte_carlo: V is not a positive definite quadratic form; give a half-width");
    half = *box;
  }

  const FlatPolynomial V(model.V);
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  MonteCarloResult res;
  std::vector<std::vector<double>> starts;
  std::vector<double> x(static_cast<std::size_t>(n));
  while (static_cast<int>(starts.size()) < N) {
    if (res.proposals >= options.max_proposals) {
      throw SimError("roa_monte_carlo: sampling failed after " + std::to_string(res.proposals) + " proposals");
    }
    ++res.proposals;
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = half(i) * ud(rng);
    if (V(x) <= eta) starts.push_back(x);
  }

  const FilterEvaluator eval(model);
  res.runs.resize(static_cast<std::size_t>(N));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int i = next++; i < N; i = next++) {
      SimConfig c = cfg;
      c.x0 = starts[static_cast<std::size_t>(i)];
      MonteCarloRun& run = res.runs[static_cast<std::size_t>(i)];
      run.x0 = c.x0;
      try {
        const Trajectory trj = integrate_closed_loop(eval, c);
        const SimReport rep = analyze(trj, eval, c);
        run.converged = rep.converged;
        run.final_norm = rep.final_norm;
        run.min_h = rep.min_h;
        run.error = rep.error;
      } catch (const SimError& e) {
        run.error = e.what();
      }
    }
  };
  int workers = options.workers > 0 ? options.workers : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, N);
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  int ok = 0;
  for (int i = 0; i < N; ++i) {
    if (res.runs[static_cast<std::size_t>(i)].converged) {
      ++ok;
    } else {
      res.counterexamples.push_back(i);
    }
  }
  res.fraction_converged = static_cast<double>(ok) / N;
  return res;
}

std::string format_double(double v) {
  char buf[40];
  // -0 prints as 0.
  std::snprintf(buf, sizeof buf, "%.17g", v == 0.0 ? 0.0 : v);
  return buf;
}

void write_csv(std::ostream& os, const Trajectory& trj) {
  const int n = trj.size() > 0 ? static_cast<int>(trj.states.front().size()) : 0;
  const int m = trj.size() > 0 ? static_cast<int>(trj.u_total.front().size()) : 0;
  os << "t";
  for (int i = 1; i <= n; ++i) os << ",x" << i;
  for (int i = 1; i <= m; ++i) os << ",u" << i;
  for (int i = 1; i <= m; ++i) os << ",uprime" << i;
  os << ",delta,h,V,region\n";
  for (std::size_t k = 0; k < trj.size(); ++k) {
    os << format_double(trj.times[k]);
    for (int i = 0; i < n; ++i) os << ',' << format_double(trj.states[k](i));
    for (int i = 0; i < m; ++i) os << ',' << format_double(trj.u_total[k](i));
    for (int i = 0; i < m; ++i) os << ',' << format_double(trj.u_prime[k](i));
    os << ',' << format_double(trj.delta[k]) << ',' << format_double(trj.h[k]) << ',' << format_double(trj.V[k])
       << ',' << to_string(trj.region[k]) << '\n';
  }
}

namespace {

nlohmann::json to_json(const PolyMatrix& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < M.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < M.cols(); ++c) row.push_back(cbfsos::to_json(M(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

PolyMatrix poly_matrix_from_json(const nlohmann::json& j, int n) {
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty()) {
    throw SimError("disturbance map must be a non-empty array of rows");
  }
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  std::vector<Polynomial> entries;
  for (const auto& row : j) {
    if (!row.is_array() || static_cast<int>(row.size()) != cols) throw SimError("disturbance map rows differ in length");
    for (const auto& e : row) entries.push_back(polynomial_from_json(e, n));
  }
  return PolyMatrix(rows, cols, std::move(entries));
}

}  // namespace

nlohmann::json to_json(const SimConfig& cfg) {
  nlohmann::json j = {{"x0", cfg.x0},
                      {"T", cfg.T},
                      {"dt", cfg.dt},
                      {"method", cfg.method},
                      {"origin_radius", cfg.origin_radius},
                      {"converge_radius", cfg.converge_radius},
                      {"equilibrium_speed", cfg.equilibrium_speed},
                      {"equilibrium_window", cfg.equilibrium_window},
                      {"tol_h", cfg.tol_h}};
  if (cfg.disturbance) {
    const auto& d = *cfg.disturbance;
    j["disturbance"] = {{"map", to_json(d.map)},       {"bound", d.bound}, {"signal", to_string(d.signal)},
                        {"frequency", d.frequency}, {"hold", d.hold},   {"seed", d.seed}};
  }
  return j;
}

SimConfig sim_config_from_json(const nlohmann::json& j, int n) {
  SimConfig cfg;
  try {
    if (j.contains("x0")) cfg.x0 = j.at("x0").get<std::vector<double>>();
    cfg.T = j.value("T", cfg.T);
    cfg.dt = j.value("dt", cfg.dt);
    cfg.method = j.value("method", cfg.method);
    cfg.origin_radius = j.value("origin_radius", cfg.origin_radius);
    cfg.converge_radius = j.value("converge_radius", cfg.converge_radius);
    cfg.equilibrium_speed = j.value("equilibrium_speed", cfg.equilibrium_speed);
    cfg.equilibrium_window = j.value("equilibrium_window", cfg.equilibrium_window);
    cfg.tol_h = j.value("tol_h", cfg.tol_h);
    if (j.contains("disturbance") && !j.at("disturbance").is_null()) {
      const auto& jd = j.at("disturbance");
      DisturbanceModel d;
      d.map = poly_matrix_from_json(jd.at("map"), n);
      d.bound = jd.value("bound", 0.0);
      d.signal = disturbance_signal_from_string(jd.value("signal", std::string("worst_case")));
      d.frequency = jd.value("frequency", d.frequency);
      d.hold = jd.value("hold", d.hold);
      d.seed = jd.value("seed", d.seed);
      cfg.disturbance = std::move(d);
    }
  } catch (const nlohmann::json::exception& e) {
    throw SimError(std::string("bad simulation config: ") + e.what());
  }
  return cfg;
}

nlohmann::json to_json(const SimReport& r) {
  nlohmann::json eq = nlohmann::json::array();
  for (const auto& e : r.equilibria) eq.push_back({{"state", e.state}, {"time", e.time}, {"at_origin", e.at_origin}});
  nlohmann::json j = {{"min_h", r.min_h},
                      {"final_norm", r.final_norm},
                      {"converged", r.converged},
                      {"safety_violated", r.safety_violated},
                      {"first_violation_time", nullptr},
                      {"equilibria", eq},
                      {"region_counts", r.region_counts},
                      {"error", nullptr}};
  if (r.first_violation_time) j["first_violation_time"] = *r.first_violation_time;
  if (r.error) j["error"] = *r.error;
  return j;
}

nlohmann::json to_json(const MonteCarloResult& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json jr = {{"x0", run.x0},
                         {"converged", run.converged},
                         {"final_norm", run.final_norm},
                         {"min_h", run.min_h},
                         {"error", nullptr}};
    if (run.error) jr["error"] = *run.error;
    runs.push_back(std::move(jr));
  }
  return {{"fraction_converged", r.fraction_converged},
          {"proposals", r.proposals},
          {"counterexamples", r.counterexamples},
          {"runs", runs}};
}

}  // namespace cbfsos
