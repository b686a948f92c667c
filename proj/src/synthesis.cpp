#include "cbfsos/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cbfsos {

void DegreeBudget::validate() const {
  if (deg_lambda < 0 || deg_lambda1 < 0 || deg_lambda2 < 0 || deg_h < 0) {
    throw std::invalid_argument("degree budget entries must be nonnegative");
  }
}

Polynomial ball_polynomial(int nvars, double radius) {
  Polynomial out = Polynomial::constant(nvars, radius * radius);
  for (int i = 0; i < nvars; ++i) {
    const Polynomial xi = Polynomial::variable(nvars, i);
    out -= xi * xi;
  }
  return out;
}

namespace {

double gaussian_moment(const Monomial& m) {
  double r = 1.0;
  for (int e : m.exponents()) {
    if (e % 2 != 0) return 0.0;
    for (int k = e - 1; k > 1; k -= 2) r *= k;
  }
  return r;
}

int even_ceil(int d) { return d % 2 == 0 ? d : d + 1; }

std::vector<Polynomial> ball_region(int n, const DomainBall& ball) {
  if (!ball.present()) return {};
  return {ball_polynomial(n, *ball.radius)};
}

struct PendingCondition {
  std::string name;
  DecisionPoly p0;
  std::vector<Polynomial> region;
};

// p0 >= 0 on the region, through the S-procedure with multiplier degrees
// chosen so every term stays within the even cover of deg p0.
PendingCondition add_condition(SosProgram& prog, const DecisionPoly& p0, const std::vector<Polynomial>& region,
                               const std::string& name) {
  if (region.empty()) {
    prog.add_sos(p0, name);
    return {name, p0, region};
  }
  std::vector<int> degrees;
  const int top = even_ceil(std::max(p0.degree(), 0));
  for (const auto& r : region) degrees.push_back(std::max(0, even_ceil(top - r.degree())));
  prog.s_procedure(p0, region, degrees, name);
  return {name, p0, region};
}

std::vector<CertifiedCondition> substitute(const std::vector<PendingCondition>& pending, const GramCertificate& cert) {
  std::vector<CertifiedCondition> out;
  for (const auto& p : pending) out.push_back({p.name, p.p0.substitute(cert.values), p.region});
  return out;
}

struct Solved {
  bool ok = false;
  std::string status;
  std::string message;
  GramCertificate cert;
  double objective = 0.0;
};

Solved solve_and_verify(const SosProgram& prog, const SynthesisOptions& opt) {
  Solved s;
  const SosResult r = solve_sos(prog, opt.sos);
  if (!r.certificate) {
    s.status = to_string(r.status);
    s.message = r.message;
    return s;
  }
  const VerificationReport v = verify_certificate(*r.certificate, opt.tol_identity, opt.tol_eig);
  if (!v.pass) {
    s.status = "unverified";
    s.message = v.reason;
    return s;
  }
  s.ok = true;
  s.status = "certified";
  s.cert = *r.certificate;
  s.objective = r.objective;
  s.message = r.message;
  return s;
}

DecisionPoly lambda_variable(SosProgram& prog, int degree, const SynthesisOptions& opt,
                             std::vector<PendingCondition>& pending) {
  if (degree % 2 != 0) throw DegreeError("lambda degree must be even, got " + std::to_string(degree));
  const DecisionPoly lam = prog.sos_poly(degree, "lambda") + AffineExpr(opt.eps);
  pending.push_back({"lambda_positive", lam - AffineExpr(opt.eps), {}});
  if (opt.lambda_mean_cap) prog.add_nonnegative(AffineExpr(*opt.lambda_mean_cap) - gaussian_mean(lam));
  return lam;
}

// lambda - eps in Sigma for a lambda fixed by an earlier round, so every
// certificate carries its own positivity proof.
void fixed_lambda_condition(SosProgram& prog, const Polynomial& lambda, const SynthesisOptions& opt,
                            std::vector<PendingCondition>& pending) {
  pending.push_back(add_condition(prog, DecisionPoly(lambda - opt.eps), {}, "lambda_positive"));
}

bool improved(double candidate, double best, double rel) {
  return candidate > best + rel * std::max(1.0, std::abs(best));
}

// One step of the robust-CBF alternation.
struct BarrierStep {
  Solved solved;
  double eta = 0.0;
  Polynomial h;
  Polynomial lambda;
  PolyVector lambda1;
  Polynomial lambda2;
  std::vector<CertifiedCondition> conditions;
};

BarrierStep barrier_fixed_h(const SystemModel& model, const Polynomial& h, int deg_lambda, const DegreeBudget& budget,
                            const DomainBall& ball, const std::optional<Polynomial>& c, const SynthesisOptions& opt) {
  SosProgram prog(model.n);
  std::vector<PendingCondition> pending;
  const DecisionPoly lam = lambda_variable(prog, deg_lambda, opt, pending);
  std::vector<DecisionPoly> l1;
  for (int j = 0; j < model.m; ++j) {
    l1.push_back(prog.decision_poly(budget.deg_lambda1, Parity::kAll, "lambda1_" + std::to_string(j + 1)));
  }
  const CoeffVar eta = prog.new_var("eta");
  const PolyVector Lgh = lie_derivative(model.g, h);
  DecisionPoly p0 = DecisionPoly(lie_derivative(model.f, h)) + lam * DecisionPoly(h) - AffineExpr::var(eta);
  for (int j = 0; j < model.m; ++j) p0 += l1[static_cast<std::size_t>(j)] * DecisionPoly(Lgh[static_cast<std::size_t>(j)]);
  pending.push_back(add_condition(prog, p0, ball_region(model.n, ball), "margin"));
  std::optional<DecisionPoly> l2;
  if (c) {
    l2 = prog.sos_poly(budget.deg_lambda2, "lambda2");
    pending.push_back(add_condition(prog, DecisionPoly(*c) - *l2 * DecisionPoly(h), {}, "containment"));
  }
  prog.set_objective(AffineExpr::var(eta), ObjectiveSense::kMaximize);

  BarrierStep step;
  step.solved = solve_and_verify(prog, opt);
  step.h = h;
  if (!step.solved.ok) return step;
  const auto& vals = step.solved.cert.values;
  step.eta = step.solved.objective;
  step.lambda = lam.substitute(vals);
  for (const auto& p : l1) step.lambda1.push_back(p.substitute(vals));
  step.lambda2 = l2 ? l2->substitute(vals) : Polynomial(model.n);
  step.conditions = substitute(pending, step.solved.cert);
  return step;
}

BarrierStep barrier_fixed_multipliers(const SystemModel& model, const BarrierStep& from, const DegreeBudget& budget,
                                      const DomainBall& ball, const std::optional<Polynomial>& c, double h0,
                                      const SynthesisOptions& opt) {
  SosProgram prog(model.n);
  std::vector<PendingCondition> pending;
  fixed_lambda_condition(prog, from.lambda, opt, pending);
  const DecisionPoly hd = prog.decision_poly(budget.deg_h, Parity::kAll, "h");
  prog.add_equality(hd.coeff(Monomial::one(model.n)) - AffineExpr(h0));
  const CoeffVar eta = prog.new_var("eta");
  const std::vector<DecisionPoly> Lgh = lie_derivative(model.g, hd);
  DecisionPoly p0 = lie_derivative(model.f, hd) + DecisionPoly(from.lambda) * hd - AffineExpr::var(eta);
  for (int j = 0; j < model.m; ++j) {
    p0 += DecisionPoly(from.lambda1[static_cast<std::size_t>(j)]) * Lgh[static_cast<std::size_t>(j)];
  }
  pending.push_back(add_condition(prog, p0, ball_region(model.n, ball), "margin"));
  if (c) pending.push_back(add_condition(prog, DecisionPoly(*c) - DecisionPoly(from.lambda2) * hd, {}, "containment"));
  prog.set_objective(AffineExpr::var(eta), ObjectiveSense::kMaximize);

  BarrierStep step;
  step.solved = solve_and_verify(prog, opt);
  if (!step.solved.ok) return step;
  step.eta = step.solved.objective;
  step.h = hd.substitute(step.solved.cert.values);
  step.lambda = from.lambda;
  step.lambda1 = from.lambda1;
  step.lambda2 = from.lambda2;
  step.conditions = substitute(pending, step.solved.cert);
  return step;
}

RobustCbfResult to_result(const BarrierStep& s, bool has_containment) {
  RobustCbfResult r;
  r.certified = s.solved.ok;
  r.status = s.solved.status;
  r.message = s.solved.message;
  r.h = s.h;
  r.has_containment = has_containment;
  if (!s.solved.ok) return r;
  r.eta = s.eta;
  r.lambda = s.lambda;
  r.lambda1 = s.lambda1;
  r.lambda2 = s.lambda2;
  r.certificate = s.solved.cert;
  r.conditions = s.conditions;
  r.history = {s.eta};
  return r;
}

}  // namespace

double gaussian_mean(const Polynomial& p) {
  double s = 0.0;
  for (const auto& [m, c] : p.terms()) s += c * gaussian_moment(m);
  return s;
}

AffineExpr gaussian_mean(const DecisionPoly& p) {
  AffineExpr s;
  for (const auto& [m, c] : p.terms()) {
    const double w = gaussian_moment(m);
    if (w != 0.0) s += c * w;
  }
  return s;
}

SamplingReport check_condition(const CertifiedCondition& cond, double half_width, int samples, std::uint64_t seed) {
  return sample_minimum(cond.expression, cond.region, half_width, samples, seed);
}

RobustCbfResult margin_fixed_h(const SystemModel& model, const Polynomial& h, const DegreeBudget& budget,
                               const DomainBall& ball, const SynthesisOptions& options) {
  model.validate();
  budget.validate();
  if (options.eps <= 0.0) throw std::invalid_argument("margin_fixed_h: eps must be positive");
  const BarrierStep poly = barrier_fixed_h(model, h, budget.deg_lambda, budget, ball, std::nullopt, options);
  if (!options.seed_constant || budget.deg_lambda == 0) return to_result(poly, false);
  // Constant lambda is a member of every even-degree family; keep it when the
  // richer program lands below it.
  const BarrierStep constant = barrier_fixed_h(model, h, 0, budget, ball, std::nullopt, options);
  if (constant.solved.ok && (!poly.solved.ok || constant.eta > poly.eta)) {
    RobustCbfResult r = to_result(constant, false);
    r.message = "constant-lambda certificate retained";
    return r;
  }
  return to_result(poly, false);
}

RobustCbfResult search_robust_cbf(const SystemModel& model, const std::optional<Polynomial>& c,
                                  const DegreeBudget& budget, const DomainBall& ball, const Polynomial& init_h,
                                  const SynthesisOptions& options) {
  model.validate();
  budget.validate();
  BarrierStep best = barrier_fixed_h(model, init_h, budget.deg_lambda, budget, ball, c, options);
  if (!best.solved.ok) {
    throw SynthesisError("init_h not a certifiable CBF at this budget (" + best.solved.status + ")");
  }
  std::vector<double> history{best.eta};
  const double h0 = init_h.coeff(Monomial::one(model.n));
  int rounds = 0;
  bool step_b = true;
  while (rounds < options.max_rounds) {
    ++rounds;
    const BarrierStep cand = step_b ? barrier_fixed_multipliers(model, best, budget, ball, c, h0, options)
                                    : barrier_fixed_h(model, best.h, budget.deg_lambda, budget, ball, c, options);
    step_b = !step_b;
    const bool accept = cand.solved.ok && cand.eta > best.eta;
    const bool significant = cand.solved.ok && improved(cand.eta, best.eta, options.rel_improvement);
    if (accept) best = cand;
    history.push_back(best.eta);
    if (!significant) break;
  }
  RobustCbfResult r = to_result(best, c.has_value());
  r.rounds = rounds;
  r.history = history;
  return r;
}

// ---------------------------------------------------------------------------
// ROA

namespace {

struct RoaData {
  Polynomial Lfh;  // L_{f'} h
  Polynomial FV;
  Polynomial b1sq;
  Polynomial b2sq;
  Polynomial c12;
  double inv_p = 1.0;
};

// A = F_V |b1|^2 - F_lambda (b2 . b1), B = F_V (b1 . b2) - F_lambda (1/p + |b2|^2).
std::pair<DecisionPoly, DecisionPoly> roa_ab(const RoaData& d, const DecisionPoly& F_lambda) {
  DecisionPoly A = DecisionPoly(d.FV * d.b1sq) - F_lambda * DecisionPoly(d.c12);
  DecisionPoly B = DecisionPoly(d.FV * d.c12) - F_lambda * DecisionPoly(d.b2sq + d.inv_p);
  return {A, B};
}

struct RoaStep {
  Solved solved;
  double eta = 0.0;
  Polynomial lambda;
  Polynomial lambda1;
  Polynomial lambda2;
  std::vector<CertifiedCondition> conditions;
};

void add_sphere_exclusion(SosProgram& prog, const SystemModel& model, const DomainBall& ball, const CoeffVar& eta,
                          std::vector<PendingCondition>& pending) {
  if (!ball.present()) return;
  const DecisionPoly p0 = DecisionPoly(model.V) - AffineExpr::var(eta);
  pending.push_back(add_condition(prog, p0, {-ball_polynomial(model.n, *ball.radius)}, "sublevel_in_ball"));
}

RoaStep roa_fixed_lambda(const SystemModel& model, const RoaData& d, const Polynomial& lambda,
                         const DegreeBudget& budget, const DomainBall& ball, const SynthesisOptions& opt) {
  SosProgram prog(model.n);
  std::vector<PendingCondition> pending;
  fixed_lambda_condition(prog, lambda, opt, pending);
  const auto [A, B] = roa_ab(d, DecisionPoly(d.Lfh + lambda * model.h));
  const DecisionPoly l1 = prog.sos_poly(budget.deg_lambda1, "lambda1");
  const DecisionPoly l2 = prog.sos_poly(budget.deg_lambda2, "lambda2");
  const CoeffVar eta = prog.new_var("eta");
  const DecisionPoly p0 = DecisionPoly(model.V) - AffineExpr::var(eta) - l1 * A - l2 * B;
  pending.push_back(add_condition(prog, p0, ball_region(model.n, ball), "roa"));
  add_sphere_exclusion(prog, model, ball, eta, pending);
  prog.set_objective(AffineExpr::var(eta), ObjectiveSense::kMaximize);

  RoaStep step;
  step.solved = solve_and_verify(prog, opt);
  step.lambda = lambda;
  if (!step.solved.ok) return step;
  const auto& vals = step.solved.cert.values;
  step.eta = step.solved.objective;
  step.lambda1 = l1.substitute(vals);
  step.lambda2 = l2.substitute(vals);
  step.conditions = substitute(pending, step.solved.cert);
  return step;
}

RoaStep roa_fixed_multipliers(const SystemModel& model, const RoaData& d, const RoaStep& from,
                              const DegreeBudget& budget, const DomainBall& ball, const SynthesisOptions& opt) {
  SosProgram prog(model.n);
  std::vector<PendingCondition> pending;
  const DecisionPoly lam = lambda_variable(prog, budget.deg_lambda, opt, pending);
  const auto [A, B] = roa_ab(d, DecisionPoly(d.Lfh) + lam * DecisionPoly(model.h));
  const CoeffVar eta = prog.new_var("eta");
  const DecisionPoly p0 =
      DecisionPoly(model.V) - AffineExpr::var(eta) - DecisionPoly(from.lambda1) * A - DecisionPoly(from.lambda2) * B;
  pending.push_back(add_condition(prog, p0, ball_region(model.n, ball), "roa"));
  add_sphere_exclusion(prog, model, ball, eta, pending);
  prog.set_objective(AffineExpr::var(eta), ObjectiveSense::kMaximize);

  RoaStep step;
  step.solved = solve_and_verify(prog, opt);
  if (!step.solved.ok) return step;
  step.eta = step.solved.objective;
  step.lambda = lam.substitute(step.solved.cert.values);
  step.lambda1 = from.lambda1;
  step.lambda2 = from.lambda2;
  step.conditions = substitute(pending, step.solved.cert);
  return step;
}

bool clf_precondition_holds(const SystemModel& model, const DomainBall& ball, const SynthesisOptions& opt) {
  SosProgram prog(model.n);
  add_condition(prog, DecisionPoly(-model.F_V()), ball_region(model.n, ball), "clf");
  return solve_and_verify(prog, opt).ok;
}

}  // namespace

RoaResult estimate_roa(const SystemModel& model, const DegreeBudget& budget, const DomainBall& ball,
                       const SynthesisOptions& options) {
  model.validate();
  budget.validate();
  if (model.variant != Variant::kModified) throw std::invalid_argument("estimate_roa: requires the modified variant");
  if (budget.deg_lambda1 % 2 != 0 || budget.deg_lambda2 % 2 != 0) {
    throw DegreeError("estimate_roa: lambda1 and lambda2 are SOS multipliers and need even degree");
  }
  RoaResult r;
  if (!clf_precondition_holds(model, ball, options)) {
    r.warnings.push_back("u_nom does not certify the CLF condition -(L_f' V + gamma V) in Sigma on the domain");
  }

  RoaData d;
  d.Lfh = lie_derivative(model.closed_loop_drift(), model.h);
  d.FV = model.F_V();
  const PolyVector b1 = model.b1();
  const PolyVector b2 = model.b2();
  d.b1sq = dot(b1, b1);
  d.b2sq = dot(b2, b2);
  d.c12 = dot(b2, b1);
  d.inv_p = 1.0 / model.p;

  RoaStep best = roa_fixed_lambda(model, d, Polynomial::constant(model.n, 1.0), budget, ball, options);
  if (!best.solved.ok) {
    r.status = best.solved.status;
    r.eta = 0.0;
    r.message = "constant-lambda round infeasible (" + best.solved.status + "): " + best.solved.message;
    return r;
  }
  r.eta_round_a = best.eta;
  std::vector<double> history{best.eta};
  int rounds = 0;
  bool step_b = true;
  while (rounds < options.max_rounds) {
    ++rounds;
    const RoaStep cand = step_b ? roa_fixed_multipliers(model, d, best, budget, ball, options)
                                : roa_fixed_lambda(model, d, best.lambda, budget, ball, options);
    step_b = !step_b;
    const bool accept = cand.solved.ok && cand.eta > best.eta;
    const bool significant = cand.solved.ok && improved(cand.eta, best.eta, options.rel_improvement);
    if (accept) best = cand;
    history.push_back(best.eta);
    if (!significant) break;
  }
  r.certified = true;
  r.status = "certified";
  r.eta = best.eta;
  r.lambda = best.lambda;
  r.lambda1 = best.lambda1;
  r.lambda2 = best.lambda2;
  r.certificate = best.solved.cert;
  r.conditions = best.conditions;
  r.rounds = rounds;
  r.history = history;
  r.message = best.solved.message;
  return r;
}

// ---------------------------------------------------------------------------
// Validity checks

namespace {

struct Projector {
  std::vector<FlatPolynomial> lgh;
  std::vector<std::vector<FlatPolynomial>> jac;  // jac[j][i] = d Lgh_j / d x_i

  Projector(const PolyVector& Lgh, int n) {
    for (const auto& p : Lgh) {
      lgh.emplace_back(p);
      std::vector<FlatPolynomial> row;
      for (int i = 0; i < n; ++i) row.emplace_back(partial_derivative(p, i));
      jac.push_back(std::move(row));
    }
  }

  // Gauss-Newton onto {Lgh = 0}; false if it does not reach 1e-8.
  bool project(std::vector<double>& x) const {
    const auto m = static_cast<Eigen::Index>(lgh.size());
    const auto n = static_cast<Eigen::Index>(x.size());
    for (int it = 0; it < 50; ++it) {
      Eigen::VectorXd r(m);
      for (Eigen::Index j = 0; j < m; ++j) r(j) = lgh[static_cast<std::size_t>(j)](x);
      if (m == 0 || r.cwiseAbs().maxCoeff() <= 1e-8) return true;
      Eigen::MatrixXd J(m, n);
      for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) J(j, i) = jac[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)](x);
      }
      const Eigen::VectorXd step = J.completeOrthogonalDecomposition().solve(r);
      if (!step.allFinite() || step.norm() == 0.0) return false;
      for (Eigen::Index i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] -= step(i);
    }
    return false;
  }
};

bool in_domain(const std::vector<double>& x, const DomainBall& ball, double half_width) {
  if (ball.present()) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s <= *ball.radius * *ball.radius;
  }
  return std::all_of(x.begin(), x.end(), [&](double v) { return std::abs(v) <= half_width; });
}

}  // namespace

CbfValidityReport verify_cbf(const SystemModel& model, const DegreeBudget& budget, const DomainBall& ball,
                             const SynthesisOptions& options) {
  model.validate();
  budget.validate();
  CbfValidityReport rep;
  const Polynomial Lfh = lie_derivative(model.f, model.h);
  const PolyVector Lgh = lie_derivative(model.g, model.h);
  const Polynomial phi = Lfh + model.lambda * model.h;

  {
    SosProgram prog(model.n);
    std::vector<PendingCondition> pending;
    std::vector<DecisionPoly> l1;
    DecisionPoly p0(phi);
    for (int j = 0; j < model.m; ++j) {
      l1.push_back(prog.decision_poly(budget.deg_lambda1, Parity::kAll, "lambda1_" + std::to_string(j + 1)));
      p0 += l1.back() * DecisionPoly(Lgh[static_cast<std::size_t>(j)]);
    }
    pending.push_back(add_condition(prog, p0, ball_region(model.n, ball), "cbf"));
    const Solved s = solve_and_verify(prog, options);
    rep.sos_certified = s.ok;
    if (s.ok) {
      rep.certificate = s.cert;
      rep.conditions = substitute(pending, s.cert);
      for (const auto& p : l1) rep.lambda1.push_back(p.substitute(s.cert.values));
    } else {
      rep.message = "no SOS certificate (" + s.status + ")";
    }
  }

  // Sampling on {L_g h = 0}.
  const double width = ball.present() ? *ball.radius : options.sampling_half_width;
  const int per_axis = std::max(2, static_cast<int>(std::floor(std::pow(4e4, 1.0 / model.n))));
  const Projector proj(Lgh, model.n);
  const FlatPolynomial fphi(phi);
  std::vector<FlatPolynomial> fgrad;
  for (const auto& gp : gradient(phi)) fgrad.emplace_back(gp);

  std::vector<Witness> found;
  long long total = 1;
  for (int i = 0; i < model.n; ++i) total *= per_axis;
  for (long long k = 0; k < total; ++k) {
    long long rem = k;
    std::vector<double> x(static_cast<std::size_t>(model.n));
    for (int i = 0; i < model.n; ++i) {
      const long long a = rem % per_axis;
      rem /= per_axis;
      x[static_cast<std::size_t>(i)] = -width + 2.0 * width * static_cast<double>(a) / (per_axis - 1);
    }
    if (!proj.project(x) || !in_domain(x, ball, width)) continue;
    ++rep.projected_points;
    found.push_back({x, fphi(x)});
  }
  std::sort(found.begin(), found.end(), [](const Witness& a, const Witness& b) { return a.value < b.value; });

  // Local refinement of the five smallest values: projected gradient descent
  // with backtracking, staying on {L_g h = 0} and in the domain.
  const std::size_t refine = std::min<std::size_t>(5, found.size());
  for (std::size_t w = 0; w < refine; ++w) {
    std::vector<double> x = found[w].state;
    double val = found[w].value;
    double alpha = 1e-2;
    for (int it = 0; it < 200 && alpha > 1e-12; ++it) {
      std::vector<double> y = x;
      for (int i = 0; i < model.n; ++i) y[static_cast<std::size_t>(i)] -= alpha * fgrad[static_cast<std::size_t>(i)](x);
      if (proj.project(y) && in_domain(y, ball, width) && fphi(y) < val) {
        x = y;
        val = fphi(y);
        alpha *= 2.0;
      } else {
        alpha *= 0.5;
      }
    }
    found[w] = {x, val};
  }
  std::sort(found.begin(), found.end(), [](const Witness& a, const Witness& b) { return a.value < b.value; });
  if (!found.empty()) rep.sampled_min = found.front().value;
  for (const auto& w : found) {
    if (w.value >= -1e-9 || rep.witnesses.size() >= 10) break;
    rep.witnesses.push_back(w);
  }
  rep.valid = rep.sos_certified && rep.witnesses.empty();
  if (!rep.witnesses.empty()) {
    std::ostringstream os;
    os << rep.witnesses.size() << " violating states on L_g h = 0, smallest L_f h + lambda h = " << rep.sampled_min;
    rep.message = rep.message.empty() ? os.str() : rep.message + "; " + os.str();
  }
  return rep;
}

CbcReport cbc_check(const SystemModel& model, const PolyVector& u_poly, const DegreeBudget& budget,
                    const DomainBall& ball, const SynthesisOptions& options) {
  model.validate();
  budget.validate();
  if (static_cast<int>(u_poly.size()) != model.m) throw DimensionError("cbc_check: u_poly needs one entry per input");
  if (budget.deg_lambda % 2 != 0) throw DegreeError("cbc_check: lambda degree must be even");
  const Polynomial Lfh = lie_derivative(model.f, model.h);
  const PolyVector Lgh = lie_derivative(model.g, model.h);
  SosProgram prog(model.n);
  std::vector<PendingCondition> pending;
  const DecisionPoly lam = prog.sos_poly(budget.deg_lambda, "lambda");
  pending.push_back({"lambda_nonnegative", lam, {}});
  const DecisionPoly p0 = DecisionPoly(Lfh + dot(Lgh, u_poly)) + lam * DecisionPoly(model.h);
  pending.push_back(add_condition(prog, p0, ball_region(model.n, ball), "cbc"));
  const Solved s = solve_and_verify(prog, options);
  CbcReport rep;
  rep.pass = s.ok;
  rep.message = s.ok ? "certified" : "no certificate (" + s.status + ")";
  if (s.ok) {
    rep.lambda = lam.substitute(s.cert.values);
    rep.certificate = s.cert;
    rep.conditions = substitute(pending, s.cert);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json polys_json(const PolyVector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : v) out.push_back(to_json(p));
  return out;
}

nlohmann::json conditions_json(const std::vector<CertifiedCondition>& cs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : cs) out.push_back(to_json(c));
  return out;
}

nlohmann::json optional_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const DegreeBudget& b) {
  return {{"deg_lambda", b.deg_lambda}, {"deg_lambda1", b.deg_lambda1}, {"deg_lambda2", b.deg_lambda2}, {"deg_h", b.deg_h}};
}

nlohmann::json to_json(const DomainBall& b) {
  return {{"radius", b.present() ? nlohmann::json(*b.radius) : nlohmann::json(nullptr)}};
}

nlohmann::json to_json(const CertifiedCondition& c) {
  return {{"name", c.name}, {"expression", to_json(c.expression)}, {"region", polys_json(c.region)}};
}

nlohmann::json to_json(const RobustCbfResult& r) {
  nlohmann::json j = {{"certified", r.certified},
                      {"status", r.status},
                      {"eta", optional_number(r.eta)},
                      {"h", to_json(r.h)},
                      {"rounds", r.rounds},
                      {"history", r.history},
                      {"message", r.message}};
  if (r.certified) {
    j["lambda"] = to_json(r.lambda);
    j["lambda1"] = polys_json(r.lambda1);
    if (r.has_containment) j["lambda2"] = to_json(r.lambda2);
    j["certificate"] = to_json(*r.certificate);
    j["conditions"] = conditions_json(r.conditions);
  }
  return j;
}

nlohmann::json to_json(const RoaResult& r) {
  nlohmann::json j = {{"certified", r.certified}, {"status", r.status},     {"eta", r.eta},
                      {"eta_round_a", r.eta_round_a}, {"rounds", r.rounds}, {"history", r.history},
                      {"warnings", r.warnings},   {"message", r.message}};
  if (r.certified) {
    j["lambda"] = to_json(r.lambda);
    j["lambda1"] = to_json(r.lambda1);
    j["lambda2"] = to_json(r.lambda2);
    j["certificate"] = to_json(*r.certificate);
    j["conditions"] = conditions_json(r.conditions);
  }
  return j;
}

nlohmann::json to_json(const CbfValidityReport& r) {
  nlohmann::json w = nlohmann::json::array();
  for (const auto& x : r.witnesses) w.push_back({{"state", x.state}, {"value", x.value}});
  nlohmann::json j = {{"valid", r.valid},
                      {"sos_certified", r.sos_certified},
                      {"projected_points", r.projected_points},
                      {"sampled_min", optional_number(r.sampled_min)},
                      {"witnesses", w},
                      {"message", r.message}};
  if (r.sos_certified) {
    j["lambda1"] = polys_json(r.lambda1);
    j["certificate"] = to_json(*r.certificate);
    j["conditions"] = conditions_json(r.conditions);
  }
  return j;
}

nlohmann::json to_json(const CbcReport& r) {
  nlohmann::json j = {{"pass", r.pass}, {"message", r.message}};
  if (r.pass) {
    j["lambda"] = to_json(r.lambda);
    j["certificate"] = to_json(*r.certificate);
    j["conditions"] = conditions_json(r.conditions);
  }
  return j;
}

}  // namespace cbfsos
