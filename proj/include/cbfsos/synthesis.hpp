#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cbfsos/cbf_qp.hpp"
#include "cbfsos/poly.hpp"
#include "cbfsos/sos.hpp"
#include "json.hpp"

namespace cbfsos {

struct DegreeBudget {
  int deg_lambda = 2;
  int deg_lambda1 = 3;
  int deg_lambda2 = 0;
  int deg_h = 2;
  void validate() const;
};

/// Optional domain restriction {x : R^2 - |x|^2 >= 0}.
struct DomainBall {
  std::optional<double> radius;
  bool present() const { return radius.has_value(); }
  static DomainBall global() { return {}; }
  static DomainBall of(double r) { return {r}; }
};

/// R^2 - |x|^2.
Polynomial ball_polynomial(int nvars, double radius);

struct SynthesisOptions {
  double eps = 1e-3;
  // Normalization E[lambda] <= cap under x ~ N(0, I). Without it the margin
  // grows with the scale of lambda. nullopt disables the cap.
  std::optional<double> lambda_mean_cap = 1.0;
  int max_rounds = 20;
  double rel_improvement = 1e-4;
  // margin_fixed_h also solves the constant-lambda program and keeps the
  // better of the two certificates.
  bool seed_constant = true;
  SosSolveOptions sos;
  double tol_identity = 1e-6;
  double tol_eig = 1e-7;
  // Box half-width for sampling when no ball is given.
  double sampling_half_width = 10.0;
};

/// A certified statement "expression >= 0 wherever every region polynomial
/// is >= 0", kept with substituted values so it can be re-checked by sampling.
struct CertifiedCondition {
  std::string name;
  Polynomial expression;
  std::vector<Polynomial> region;
};

/// Minimum of the condition expression over random points of its region.
SamplingReport check_condition(const CertifiedCondition& cond, double half_width, int samples, std::uint64_t seed);

/// E[p(x)] for x ~ N(0, I).
double gaussian_mean(const Polynomial& p);
AffineExpr gaussian_mean(const DecisionPoly& p);

struct RobustCbfResult {
  bool certified = false;
  std::string status;
  double eta = std::numeric_limits<double>::quiet_NaN();
  Polynomial h;
  Polynomial lambda;
  PolyVector lambda1;  // one per input channel
  Polynomial lambda2;  // zero unless a containment set was given
  bool has_containment = false;
  std::optional<GramCertificate> certificate;
  std::vector<CertifiedCondition> conditions;
  int rounds = 0;
  std::vector<double> history;
  std::string message;
};

struct RoaResult {
  bool certified = false;
  std::string status;
  double eta = 0.0;
  Polynomial lambda;
  Polynomial lambda1;
  Polynomial lambda2;
  std::optional<GramCertificate> certificate;
  std::vector<CertifiedCondition> conditions;
  int rounds = 0;
  std::vector<double> history;
  // Eta after the first constant-lambda round.
  double eta_round_a = 0.0;
  std::vector<std::string> warnings;
  std::string message;
};

/// max eta s.t. lambda - eps in Sigma, L_f h + lambda h - eta + lambda1 . L_g h
/// in Sigma (on the ball when given), with lambda1 free.
RobustCbfResult margin_fixed_h(const SystemModel& model, const Polynomial& h, const DegreeBudget& budget,
                               const DomainBall& ball, const SynthesisOptions& options = {});

class SynthesisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Alternates (A) fixed h, solve (lambda, lambda1, lambda2, eta) and
/// (B) fixed multipliers, solve (h, eta) with h(0) pinned to init_h(0).
/// max_rounds counts half-steps after the initial round A. Throws
/// SynthesisError when round A fails at init_h.
RobustCbfResult search_robust_cbf(const SystemModel& model, const std::optional<Polynomial>& c,
                                  const DegreeBudget& budget, const DomainBall& ball, const Polynomial& init_h,
                                  const SynthesisOptions& options = {});

/// ROA estimate R_eta = {V <= eta}. Alternates (A) fixed lambda, solve
/// (lambda1, lambda2, eta) and (B) fixed (lambda1, lambda2), solve
/// (lambda, eta). On a ball, R_eta is additionally kept inside it.
RoaResult estimate_roa(const SystemModel& model, const DegreeBudget& budget, const DomainBall& ball,
                       const SynthesisOptions& options = {});

struct Witness {
  std::vector<double> state;
  double value = 0.0;
};

struct CbfValidityReport {
  bool valid = false;
  bool sos_certified = false;
  std::optional<GramCertificate> certificate;
  std::vector<CertifiedCondition> conditions;
  PolyVector lambda1;
  // Sampling over {|L_g h| <= 1e-8}: points reached and smallest
  // L_f h + lambda h seen, plus violating states.
  int projected_points = 0;
  double sampled_min = std::numeric_limits<double>::infinity();
  std::vector<Witness> witnesses;
  std::string message;
};

/// Checks the model's (h, lambda) pair: SOS search for a free lambda1 of
/// degree budget.deg_lambda1, then sampling on the L_g h = 0 set.
CbfValidityReport verify_cbf(const SystemModel& model, const DegreeBudget& budget, const DomainBall& ball,
                             const SynthesisOptions& options = {});

struct CbcReport {
  bool pass = false;
  Polynomial lambda;
  std::optional<GramCertificate> certificate;
  std::vector<CertifiedCondition> conditions;
  std::string message;
};

/// Searches lambda in Sigma of degree budget.deg_lambda with
/// L_f h + L_g h u + lambda h in Sigma (on the ball when given).
CbcReport cbc_check(const SystemModel& model, const PolyVector& u_poly, const DegreeBudget& budget,
                    const DomainBall& ball, const SynthesisOptions& options = {});

nlohmann::json to_json(const DegreeBudget& b);
nlohmann::json to_json(const DomainBall& b);
nlohmann::json to_json(const CertifiedCondition& c);
nlohmann::json to_json(const RobustCbfResult& r);
nlohmann::json to_json(const RoaResult& r);
nlohmann::json to_json(const CbfValidityReport& r);
nlohmann::json to_json(const CbcReport& r);

}  // namespace cbfsos
