#include "cli.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "cbfsos/cbf_qp.hpp"
#include "cbfsos/sim.hpp"
#include "cbfsos/sos.hpp"
#include "cbfsos/synthesis.hpp"

namespace cbfsos::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A stage check failed; carries the stage name.
class PropertyViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string default_model(const std::string& name) { return std::string(CBFSOS_MODEL_DIR) + "/" + name; }

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError(what + ": cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) throw InputError(what + ": empty list");
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

// Flag, then config key, then default.
struct Resolver {
  const Options& opt;
  json cfg = json::object();
  fs::path cfg_dir;
  std::vector<std::string> inputs;

  explicit Resolver(const Options& o) : opt(o) {
    if (opt.config) {
      cfg = read_json_file(*opt.config);
      if (!cfg.is_object()) throw InputError("config must be a JSON object");
      cfg_dir = fs::path(*opt.config).parent_path();
      inputs.push_back(*opt.config);
    }
  }

  template <class T>
  T get(const std::optional<T>& flag, const char* key, T fallback) const {
    if (flag) return *flag;
    if (cfg.contains(key)) {
      try {
        return cfg.at(key).get<T>();
      } catch (const json::exception& e) {
        throw InputError(std::string("config key ") + key + ": " + e.what());
      }
    }
    return fallback;
  }

  std::string model_path(const std::string& fallback) const {
    if (opt.model) return *opt.model;
    if (cfg.contains("model")) {
      const fs::path p = cfg.at("model").get<std::string>();
      return p.is_absolute() ? p.string() : (cfg_dir / p).string();
    }
    return default_model(fallback);
  }

  json sim_section() const { return cfg.contains("sim") ? cfg.at("sim") : json::object(); }
};

SystemModel load_model_with_overrides(Resolver& r, const std::string& fallback) {
  const std::string path = r.model_path(fallback);
  r.inputs.push_back(path);
  SystemModel model = load_model(path);
  if (const auto v = r.get<std::string>(r.opt.variant, "variant", ""); !v.empty()) model.variant = variant_from_string(v);
  model.p = r.get<double>(r.opt.p, "p", model.p);
  model.validate();
  return model;
}

DegreeBudget resolve_budget(const Resolver& r, DegreeBudget b) {
  b.deg_lambda = r.get<int>(r.opt.deg_lambda, "deg_lambda", b.deg_lambda);
  b.deg_lambda1 = r.get<int>(r.opt.deg_lambda1, "deg_lambda1", b.deg_lambda1);
  b.deg_lambda2 = r.get<int>(r.opt.deg_lambda2, "deg_lambda2", b.deg_lambda2);
  b.validate();
  return b;
}

// Output directory with its manifest. Files are recorded in write order.
class OutputDir {
 public:
  explicit OutputDir(const std::string& path) : root_(path) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    const fs::path probe = root_ / ".write_probe";
    std::ofstream test(probe);
    if (ec || !test) throw InputError("output directory " + path + " is not writable");
    test.close();
    fs::remove(probe, ec);
  }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(root_ / name, std::ios::binary);
    if (!out) throw InputError("cannot write " + (root_ / name).string());
    out << content;
    if (!out) throw InputError("cannot write " + (root_ / name).string());
    files_.push_back(name);
  }

  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  void manifest(const std::string& command, const json& config, const std::vector<std::string>& inputs,
                double wall_clock) {
    json in = json::array();
    for (const auto& p : inputs) in.push_back({{"path", p}, {"sha256", sha256_file(p)}});
    json out = json::array();
    for (const auto& f : files_) out.push_back({{"path", f}, {"sha256", sha256_file(root_ / f)}});
    const json m = {{"command", command},  {"config", config},          {"inputs", in},
                    {"outputs", out},       {"tool_version", kToolVersion}, {"wall_clock_seconds", wall_clock}};
    std::ofstream f(root_ / "manifest.json", std::ios::binary);
    if (!f) throw InputError("cannot write manifest");
    f << m.dump(2) << "\n";
  }

 private:
  fs::path root_;
  std::vector<std::string> files_;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

// Maps exceptions onto the exit-code contract.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const PropertyViolation& e) {
    err << "property violation: " << e.what() << "\n";
    return kPropertyViolation;
  } catch (const std::invalid_argument& e) {
    err << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const json::exception& e) {
    err << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  }
}

SimConfig resolve_sim(const Resolver& r, const SystemModel& model, SimConfig base) {
  SimConfig cfg = base;
  const json section = r.sim_section();
  if (!section.empty()) {
    try {
      cfg = sim_config_from_json(section, model.n);
    } catch (const SimError& e) {
      throw InputError(e.what());
    }
    if (!section.contains("T")) cfg.T = base.T;
  }
  if (r.opt.dt) cfg.dt = *r.opt.dt;
  if (r.opt.horizon) cfg.T = *r.opt.horizon;
  if (r.opt.x0) cfg.x0 = *r.opt.x0;
  if (r.opt.seed && cfg.disturbance) cfg.disturbance->seed = *r.opt.seed;
  return cfg;
}

void validate_sim(const SimConfig& cfg, int n) {
  try {
    cfg.validate(n);
  } catch (const SimError& e) {
    throw InputError(e.what());
  }
}

// Grid over [lo, hi]^n with the given step; the first coordinate varies slowest.
std::vector<std::vector<double>> grid_states(const std::vector<double>& range, int n) {
  if (range.size() != 3 || !(range[2] > 0.0) || range[1] < range[0]) throw InputError("--grid expects lo,hi,step with step > 0");
  const long k = std::lround(std::floor((range[1] - range[0]) / range[2] + 1e-9)) + 1;
  if (std::pow(static_cast<double>(k), n) > 1e7) throw InputError("--grid has too many points");
  std::vector<std::vector<double>> out;
  std::vector<long> idx(static_cast<std::size_t>(n), 0);
  while (true) {
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = range[0] + static_cast<double>(idx[static_cast<std::size_t>(i)]) * range[2];
    out.push_back(std::move(x));
    int d = n - 1;
    while (d >= 0 && ++idx[static_cast<std::size_t>(d)] == k) idx[static_cast<std::size_t>(d--)] = 0;
    if (d < 0) break;
  }
  return out;
}

json budget_config(const DegreeBudget& b) {
  return {{"deg_lambda", b.deg_lambda}, {"deg_lambda1", b.deg_lambda1}, {"deg_lambda2", b.deg_lambda2}, {"deg_h", b.deg_h}};
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

int cmd_filter_eval(const Options& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    const Stopwatch clock;
    Resolver r(opt);
    const SystemModel model = load_model_with_overrides(r, "example_vi.json");
    std::vector<std::vector<double>> states = opt.states;
    if (opt.grid) {
      const auto g = grid_states(*opt.grid, model.n);
      states.insert(states.end(), g.begin(), g.end());
    }
    if (states.empty()) throw InputError("filter-eval needs --state or --grid");
    for (const auto& x : states) {
      if (static_cast<int>(x.size()) != model.n) throw InputError("state length does not match the model dimension");
    }
    std::optional<OutputDir> dir;
    if (opt.out) dir.emplace(*opt.out);

    const FilterEvaluator eval(model);
    std::ostringstream csv;
    for (int i = 1; i <= model.n; ++i) csv << "x" << i << ",";
    csv << "region";
    for (int i = 1; i <= model.m; ++i) csv << ",uprime" << i;
    csv << ",delta,objective\n";
    std::vector<std::vector<double>> singular;
    for (const auto& x : states) {
      try {
        const FilterOutput f = eval.solve(x);
        csv << join(x) << "," << to_string(f.region);
        for (int i = 0; i < model.m; ++i) csv << "," << format_double(f.u_prime(i));
        csv << "," << format_double(f.delta) << "," << format_double(f.objective) << "\n";
      } catch (const SingularSystemError&) {
        singular.push_back(x);
      }
    }
    if (dir) {
      dir->write("filter_eval.csv", csv.str());
      json config = {{"model", r.model_path("example_vi.json")}, {"variant", to_string(model.variant)}, {"p", model.p},
                     {"states", states.size()}};
      if (opt.grid) config["grid"] = *opt.grid;
      dir->manifest("filter-eval", config, r.inputs, clock.seconds());
    } else {
      out << csv.str();
    }
    if (!singular.empty()) {
      err << "filter singular at " << singular.size() << " state(s):\n";
      for (const auto& x : singular) err << "  " << join(x) << "\n";
      return kNumericalFailure;
    }
    return kOk;
  });
}

int cmd_simulate(const Options& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    const Stopwatch clock;
    Resolver r(opt);
    const SystemModel model = load_model_with_overrides(r, "example_vi_stabilized.json");
    SimConfig base;
    base.x0 = {};
    const SimConfig cfg = resolve_sim(r, model, base);
    if (cfg.x0.empty()) throw InputError("simulate needs --x0 or sim.x0 in the config");
    validate_sim(cfg, model.n);
    std::optional<OutputDir> dir;
    if (opt.out) dir.emplace(*opt.out);

    const Trajectory trj = integrate_closed_loop(model, cfg);
    const SimReport rep = analyze(trj, model, cfg);
    const json report = to_json(rep);
    if (dir) {
      std::ostringstream csv;
      write_csv(csv, trj);
      dir->write("trajectory.csv", csv.str());
      dir->write_json("report.json", report);
      json config = {{"model", r.model_path("example_vi_stabilized.json")},
                     {"variant", to_string(model.variant)},
                     {"p", model.p},
                     {"sim", to_json(cfg)}};
      dir->manifest("simulate", config, r.inputs, clock.seconds());
    }
    out << report.dump(2) << "\n";
    if (trj.error) {
      err << *trj.error << "\n";
      return kNumericalFailure;
    }
    if (rep.safety_violated) {
      err << "safety violated at t = " << format_double(*rep.first_violation_time) << "\n";
      return kPropertyViolation;
    }
    return kOk;
  });
}

int cmd_reproduce_example(const Options& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    const Stopwatch clock;
    Resolver r(opt);
    const SystemModel model = load_model_with_overrides(r, "example_vi.json");
    DegreeBudget poly_budget;
    poly_budget.deg_lambda = 2;
    poly_budget.deg_lambda1 = 3;
    poly_budget.deg_lambda2 = 0;
    poly_budget = resolve_budget(r, poly_budget);
    DegreeBudget const_budget = poly_budget;
    const_budget.deg_lambda = 0;
    const double radius = r.get<double>(opt.ball_radius, "ball_radius", 10.0);
    if (!(radius > 0.0)) throw InputError("--ball-radius must be positive");
    const DomainBall ball = DomainBall::of(radius);
    SynthesisOptions so;
    so.eps = r.get<double>(opt.eps, "eps", 1e-3);
    SimConfig sim_base;
    sim_base.T = 20.0;
    SimConfig sim = resolve_sim(r, model, sim_base);
    sim.x0.assign(static_cast<std::size_t>(model.n), 0.0);
    validate_sim(sim, model.n);
    const std::vector<double> grid_range = r.get<std::vector<double>>(std::nullopt, "start_grid", {-3.0, 3.0, 1.5});
    const auto starts = grid_states(grid_range, model.n);
    OutputDir dir(opt.out.value_or("reproduction"));

    auto verified = [&](const RobustCbfResult& res) {
      return res.certified && res.certificate && verify_certificate(*res.certificate, so.tol_identity, so.tol_eig).pass;
    };
    // (1) constant multiplier baseline, (2) polynomial multiplier.
    SynthesisOptions const_opts = so;
    const_opts.seed_constant = false;
    const RobustCbfResult rc = margin_fixed_h(model, model.h, const_budget, ball, const_opts);
    dir.write_json("margin_const.json", to_json(rc));
    if (!verified(rc)) throw PropertyViolation("stage margin_const: certificate did not verify (" + rc.status + ")");
    const RobustCbfResult rp = margin_fixed_h(model, model.h, poly_budget, ball, so);
    dir.write_json("margin_poly.json", to_json(rp));
    if (!verified(rp)) throw PropertyViolation("stage margin_poly: certificate did not verify (" + rp.status + ")");
    const bool dominance = rp.eta >= rc.eta - 1e-6;

    // (3) the synthesized multiplier as a CBF on the ball.
    SystemModel tuned = model;
    tuned.lambda = rp.lambda;
    tuned.validate();
    dir.write_json("model_poly_lambda.json", to_json(tuned));
    const CbfValidityReport vr = verify_cbf(tuned, poly_budget, ball, so);
    dir.write_json("verify_cbf.json", to_json(vr));

    // (4) closed loop from the start grid.
    const FilterEvaluator eval(tuned);
    json reports = json::array();
    std::ostringstream table;
    for (int i = 1; i <= model.n; ++i) table << "x0_" << i << ",";
    table << "min_h,final_norm,converged,safety_violated\n";
    bool safe = true;
    for (const auto& x0 : starts) {
      double r2 = 0.0;
      for (double v : x0) r2 += v * v;
      if (tuned.h(x0) < 0.0 || r2 > radius * radius) continue;
      SimConfig c = sim;
      c.x0 = x0;
      const SimReport rep = analyze(integrate_closed_loop(eval, c), eval, c);
      safe = safe && !rep.safety_violated && !rep.error;
      json jr = to_json(rep);
      jr["x0"] = x0;
      reports.push_back(std::move(jr));
      table << join(x0) << "," << format_double(rep.min_h) << "," << format_double(rep.final_norm) << ","
            << (rep.converged ? 1 : 0) << "," << (rep.safety_violated ? 1 : 0) << "\n";
    }
    dir.write("simulations.csv", table.str());

    const json comparison = {{"eta_const", rc.eta},
                             {"eta_poly", rp.eta},
                             {"published_eta_const", 4.9},
                             {"published_eta_poly", 9.9},
                             {"ball_radius", radius},
                             {"eps", so.eps},
                             {"dominance", dominance},
                             {"certificates",
                              {{"margin_const", {{"file", "margin_const.json"}, {"verified", true}}},
                               {"margin_poly", {{"file", "margin_poly.json"}, {"verified", true}}},
                               {"verify_cbf", {{"file", "verify_cbf.json"}, {"valid", vr.valid}}}}},
                             {"lambda_poly", to_json(rp.lambda)},
                             {"sim_reports", reports}};
    dir.write_json("comparison.json", comparison);
    json config = {{"model", r.model_path("example_vi.json")},
                   {"ball_radius", radius},
                   {"eps", so.eps},
                   {"budget", budget_config(poly_budget)},
                   {"sim", to_json(sim)},
                   {"start_grid", grid_range}};
    dir.manifest("reproduce-example", config, r.inputs, clock.seconds());

    out << "eta_const " << format_double(rc.eta) << "\neta_poly " << format_double(rp.eta) << "\n";
    if (!dominance) throw PropertyViolation("stage dominance: eta_poly < eta_const - 1e-6");
    if (!vr.valid) throw PropertyViolation("stage verify_cbf: " + vr.message);
    if (!safe) throw PropertyViolation("stage simulation: safety violated or filter failed");
    return kOk;
  });
}

int cmd_roa(const Options& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    const Stopwatch clock;
    Resolver r(opt);
    const SystemModel model = load_model_with_overrides(r, "example_vi_stabilized.json");
    DegreeBudget budget;
    budget.deg_lambda = 2;
    budget.deg_lambda1 = 0;
    budget.deg_lambda2 = 0;
    budget = resolve_budget(r, budget);
    const double radius = r.get<double>(opt.ball_radius, "ball_radius", 6.0);
    const DomainBall ball = radius > 0.0 ? DomainBall::of(radius) : DomainBall::global();
    SynthesisOptions so;
    so.eps = r.get<double>(opt.eps, "eps", 1e-3);
    so.max_rounds = r.get<int>(opt.max_rounds, "max_rounds", so.max_rounds);
    const int samples = r.get<int>(opt.samples, "samples", 100);
    const double scale = r.get<double>(opt.eta_scale, "eta_scale", 1.0);
    MonteCarloOptions mc;
    mc.seed = r.get<std::uint64_t>(opt.seed, "seed", 1);
    SimConfig sim_base;
    sim_base.T = 50.0;
    SimConfig sim = resolve_sim(r, model, sim_base);
    sim.x0.assign(static_cast<std::size_t>(model.n), 0.0);
    validate_sim(sim, model.n);
    if (samples < 1) throw InputError("--samples must be >= 1");
    if (!(scale > 0.0)) throw InputError("--eta-scale must be positive");
    OutputDir dir(opt.out.value_or("roa"));

    const RoaResult roa = estimate_roa(model, budget, ball, so);
    json result = {{"roa", to_json(roa)}};
    if (!roa.certified) {
      dir.write_json("roa.json", result);
      throw std::runtime_error("estimate_roa: " + roa.status + " " + roa.message);
    }
    const bool cert_ok = verify_certificate(*roa.certificate, so.tol_identity, so.tol_eig).pass;
    const MonteCarloResult mcr = roa_monte_carlo(model, scale * roa.eta, samples, sim, mc);
    double min_h = std::numeric_limits<double>::infinity();
    for (const auto& run : mcr.runs) min_h = std::min(min_h, run.min_h);
    result["certificate_verified"] = cert_ok;
    result["eta_scale"] = scale;
    result["monte_carlo"] = to_json(mcr);
    result["min_h"] = min_h;
    dir.write_json("roa.json", result);
    json config = {{"model", r.model_path("example_vi_stabilized.json")},
                   {"ball_radius", radius},
                   {"eps", so.eps},
                   {"budget", budget_config(budget)},
                   {"samples", samples},
                   {"seed", mc.seed},
                   {"eta_scale", scale},
                   {"sim", to_json(sim)}};
    dir.manifest("roa", config, r.inputs, clock.seconds());
    out << "eta " << format_double(roa.eta) << "\nfraction_converged " << format_double(mcr.fraction_converged)
        << "\nmin_h " << format_double(min_h) << "\n";
    if (!cert_ok) throw PropertyViolation("stage estimate_roa: certificate did not verify");
    // Scaled runs are negative controls and only report.
    if (scale == 1.0 && (mcr.fraction_converged < 1.0 || min_h < -sim.tol_h)) {
      throw PropertyViolation("stage monte_carlo: a run from the certified set failed");
    }
    return kOk;
  });
}

int cmd_robust_cbf(const Options& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    const Stopwatch clock;
    Resolver r(opt);
    const SystemModel model = load_model_with_overrides(r, "example_vi.json");
    const DegreeBudget budget = resolve_budget(r, DegreeBudget{});
    const double radius = r.get<double>(opt.ball_radius, "ball_radius", 10.0);
    const DomainBall ball = radius > 0.0 ? DomainBall::of(radius) : DomainBall::global();
    SynthesisOptions so;
    so.eps = r.get<double>(opt.eps, "eps", 1e-3);
    so.max_rounds = r.get<int>(opt.max_rounds, "max_rounds", so.max_rounds);
    std::optional<Polynomial> c;
    std::optional<std::string> c_path = opt.containment;
    if (!c_path && r.cfg.contains("containment")) c_path = (r.cfg_dir / r.cfg.at("containment").get<std::string>()).string();
    if (c_path) {
      r.inputs.push_back(*c_path);
      try {
        c = polynomial_from_json(read_json_file(*c_path), model.n);
      } catch (const json::exception& e) {
        throw InputError(*c_path + ": " + e.what());
      }
    }
    OutputDir dir(opt.out.value_or("robust_cbf"));
    const RobustCbfResult res = search_robust_cbf(model, c, budget, ball, model.h, so);
    dir.write_json("robust_cbf.json", to_json(res));
    json config = {{"model", r.model_path("example_vi.json")},
                   {"ball_radius", radius},
                   {"eps", so.eps},
                   {"max_rounds", so.max_rounds},
                   {"budget", budget_config(budget)},
                   {"containment", c_path ? json(*c_path) : json(nullptr)}};
    dir.manifest("robust-cbf", config, r.inputs, clock.seconds());
    out << "eta " << format_double(res.eta) << "\nrounds " << res.rounds << "\n";
    if (!res.certified) throw std::runtime_error("search_robust_cbf: " + res.status);
    if (!verify_certificate(*res.certificate, so.tol_identity, so.tol_eig).pass) {
      throw PropertyViolation("stage search_robust_cbf: certificate did not verify");
    }
    return kOk;
  });
}

int cmd_verify_cert(const Options& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    const Stopwatch clock;
    if (!opt.cert) throw InputError("verify-cert needs --cert");
    json j = read_json_file(*opt.cert);
    // Result files carry the certificate under "certificate".
    if (j.is_object() && j.contains("certificate")) j = j.at("certificate");
    GramCertificate cert;
    try {
      cert = certificate_from_json(j);
    } catch (const json::exception& e) {
      throw InputError(*opt.cert + ": " + e.what());
    }
    const VerificationReport rep = verify_certificate(cert);
    const json jr = to_json(rep);
    if (opt.out) {
      OutputDir dir(*opt.out);
      dir.write_json("verification.json", jr);
      dir.manifest("verify-cert", {{"cert", *opt.cert}}, {*opt.cert}, clock.seconds());
    }
    out << jr.dump(2) << "\n";
    return rep.pass ? kOk : kPropertyViolation;
  });
}

namespace {

template <class T>
void add_opt(CLI::App* app, const std::string& name, std::optional<T>& target, const std::string& desc) {
  app->add_option_function<T>(name, [&target](const T& v) { target = v; }, desc);
}

void add_common(CLI::App* app, Options& o) {
  add_opt(app, "--model", o.model, "model JSON file");
  add_opt(app, "--out", o.out, "output directory");
  add_opt(app, "--config", o.config, "JSON config; flags override its keys");
  add_opt(app, "--variant", o.variant, "ames, tan or modified");
  add_opt(app, "--p", o.p, "CLF slack penalty");
}

void add_synthesis(CLI::App* app, Options& o) {
  add_opt(app, "--ball-radius", o.ball_radius, "domain ball radius (0 for global)");
  add_opt(app, "--deg-lambda", o.deg_lambda, "degree of lambda");
  add_opt(app, "--deg-lambda1", o.deg_lambda1, "degree of lambda1");
  add_opt(app, "--deg-lambda2", o.deg_lambda2, "degree of lambda2");
  add_opt(app, "--eps", o.eps, "lower bound on lambda");
}

void add_sim(CLI::App* app, Options& o) {
  add_opt(app, "--dt", o.dt, "integration step");
  add_opt(app, "--horizon", o.horizon, "simulation horizon in seconds");
  add_opt(app, "--seed", o.seed, "random seed");
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Modified-CBF safety filters and SOS synthesis"};
  app.require_subcommand(1);
  Options o;
  std::vector<std::string> states;
  std::optional<std::string> grid;
  std::optional<std::string> x0;

  auto* fe = app.add_subcommand("filter-eval", "evaluate the closed-form filter at states");
  add_common(fe, o);
  fe->add_option("--state", states, "comma-separated state, repeatable");
  add_opt(fe, "--grid", grid, "lo,hi,step grid over every coordinate");

  auto* sim = app.add_subcommand("simulate", "closed-loop simulation");
  add_common(sim, o);
  add_sim(sim, o);
  add_opt(sim, "--x0", x0, "comma-separated initial state");

  auto* rep = app.add_subcommand("reproduce-example", "margin comparison, verification and simulations");
  add_common(rep, o);
  add_synthesis(rep, o);
  add_sim(rep, o);

  auto* roa = app.add_subcommand("roa", "region of attraction estimate with a Monte Carlo check");
  add_common(roa, o);
  add_synthesis(roa, o);
  add_sim(roa, o);
  add_opt(roa, "--samples", o.samples, "Monte Carlo sample count");
  add_opt(roa, "--eta-scale", o.eta_scale, "sample from V <= scale * eta");
  add_opt(roa, "--max-rounds", o.max_rounds, "alternation half-steps");

  auto* rob = app.add_subcommand("robust-cbf", "alternating search for a robust CBF");
  add_common(rob, o);
  add_synthesis(rob, o);
  add_opt(rob, "--containment", o.containment, "JSON polynomial c(x) for S inside {c >= 0}");
  add_opt(rob, "--max-rounds", o.max_rounds, "alternation half-steps");

  auto* vc = app.add_subcommand("verify-cert", "check a Gram certificate");
  add_opt(vc, "--cert", o.cert, "certificate or result JSON file");
  add_opt(vc, "--out", o.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }
  try {
    for (const auto& s : states) o.states.push_back(parse_list(s, "--state"));
    if (grid) o.grid = parse_list(*grid, "--grid");
    if (x0) o.x0 = parse_list(*x0, "--x0");
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kInputError;
  }

  if (fe->parsed()) return cmd_filter_eval(o, out, err);
  if (sim->parsed()) return cmd_simulate(o, out, err);
  if (rep->parsed()) return cmd_reproduce_example(o, out, err);
  if (roa->parsed()) return cmd_roa(o, out, err);
  if (rob->parsed()) return cmd_robust_cbf(o, out, err);
  return cmd_verify_cert(o, out, err);
}

}  // namespace cbfsos::cli
