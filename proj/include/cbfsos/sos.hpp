#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cbfsos/poly.hpp"
#include "cbfsos/sdp.hpp"
#include "json.hpp"

namespace cbfsos {

/// Thrown when a product would make a decision polynomial bilinear in the
/// coefficient variables.
class BilinearError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown when an S-procedure degree budget leaves an odd leading degree or
/// a basis cannot be inferred.
class DegreeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CoeffVar {
  int id = 0;
  std::string description;
};

/// constant + sum_k weight_k * m_k
class AffineExpr {
 public:
  AffineExpr() = default;
  AffineExpr(double constant) : constant_(constant) {}  // NOLINT(google-explicit-constructor)
  static AffineExpr var(const CoeffVar& v, double weight = 1.0);

  double constant() const { return constant_; }
  const std::map<int, double>& terms() const { return terms_; }
  bool has_vars() const { return !terms_.empty(); }
  bool is_zero() const { return constant_ == 0.0 && terms_.empty(); }
  double evaluate(const std::map<int, double>& values) const;

  AffineExpr& operator+=(const AffineExpr& other);
  AffineExpr& operator-=(const AffineExpr& other);
  AffineExpr& operator*=(double s);
  friend AffineExpr operator+(AffineExpr a, const AffineExpr& b) { return a += b; }
  friend AffineExpr operator-(AffineExpr a, const AffineExpr& b) { return a -= b; }
  friend AffineExpr operator*(AffineExpr a, double s) { return a *= s; }
  friend AffineExpr operator*(double s, AffineExpr a) { return a *= s; }
  friend AffineExpr operator-(AffineExpr a) { return a *= -1.0; }
  bool operator==(const AffineExpr& other) const = default;

 private:
  double constant_ = 0.0;
  std::map<int, double> terms_;
};

/// Polynomial whose coefficients are affine in the coefficient variables.
class DecisionPoly {
 public:
  using TermMap = std::map<Monomial, AffineExpr, GradedLexLess>;

  explicit DecisionPoly(int nvars = 0) : nvars_(nvars) {}
  DecisionPoly(const Polynomial& p);  // NOLINT(google-explicit-constructor)
  DecisionPoly(int nvars, TermMap terms);

  int nvars() const { return nvars_; }
  const TermMap& terms() const { return terms_; }
  int degree() const;
  bool has_vars() const;
  AffineExpr coeff(const Monomial& m) const;
  std::vector<Monomial> support() const;

  /// Replaces every coefficient variable by its value.
  Polynomial substitute(const std::map<int, double>& values) const;

  DecisionPoly& operator+=(const DecisionPoly& other);
  DecisionPoly& operator-=(const DecisionPoly& other);
  DecisionPoly& operator*=(double s);
  friend DecisionPoly operator+(DecisionPoly a, const DecisionPoly& b) { return a += b; }
  friend DecisionPoly operator-(DecisionPoly a, const DecisionPoly& b) { return a -= b; }
  friend DecisionPoly operator*(DecisionPoly a, double s) { return a *= s; }
  friend DecisionPoly operator*(double s, DecisionPoly a) { return a *= s; }
  friend DecisionPoly operator-(DecisionPoly a) { return a *= -1.0; }
  /// Throws BilinearError when both factors carry coefficient variables.
  friend DecisionPoly operator*(const DecisionPoly& a, const DecisionPoly& b);
  friend DecisionPoly operator+(DecisionPoly a, const AffineExpr& c);
  friend DecisionPoly operator-(DecisionPoly a, const AffineExpr& c) { return std::move(a) + (-c); }

 private:
  void add_term(const Monomial& m, const AffineExpr& c);

  int nvars_ = 0;
  TermMap terms_;
};

DecisionPoly partial_derivative(const DecisionPoly& p, int index);
DecisionPoly lie_derivative(const PolyVector& field, const DecisionPoly& p);
std::vector<DecisionPoly> lie_derivative(const PolyMatrix& field, const DecisionPoly& p);

enum class Parity { kAll, kEven };

struct SosConstraint {
  std::string name;
  DecisionPoly expression;
  // expression - floor must be SOS; floor = 0 is plain membership.
  double floor = 0.0;
  std::vector<Monomial> basis;
};

struct ScalarConstraint {
  AffineExpr expr;
  bool equality = false;  // expr == 0, otherwise expr >= 0
};

/// Region description used for S-procedure bookkeeping and sampling checks:
/// expression p0 must be nonnegative wherever every region polynomial is.
struct SProcedure {
  int constraint = -1;
  DecisionPoly p0;
  std::vector<Polynomial> region;
  std::vector<DecisionPoly> multipliers;
};

class SosProgram {
 public:
  explicit SosProgram(int nvars) : nvars_(nvars) {}

  int nvars() const { return nvars_; }
  const std::vector<CoeffVar>& vars() const { return vars_; }
  const std::vector<SosConstraint>& constraints() const { return constraints_; }
  const std::vector<ScalarConstraint>& scalar_constraints() const { return scalars_; }
  const AffineExpr& objective() const { return objective_; }
  ObjectiveSense sense() const { return sense_; }
  bool has_objective() const { return objective_.has_vars(); }

  CoeffVar new_var(std::string description);
  /// Free polynomial with one coefficient variable per basis monomial of
  /// degree <= degree (even degrees only for Parity::kEven).
  DecisionPoly decision_poly(int degree, Parity parity = Parity::kAll, const std::string& name = "p");
  /// Free polynomial of even degree constrained to be SOS.
  DecisionPoly sos_poly(int degree, const std::string& name = "s");

  /// Adds expression - floor in Sigma[x]. The Gram basis is inferred from the
  /// expression support. Returns the constraint index.
  int add_sos(const DecisionPoly& expression, const std::string& name, double floor = 0.0);
  /// Same with a caller-chosen Gram basis (no pruning).
  int add_sos_with_basis(const DecisionPoly& expression, std::vector<Monomial> basis, const std::string& name,
                         double floor = 0.0);
  void add_equality(const AffineExpr& expr);
  void add_nonnegative(const AffineExpr& expr);
  void set_objective(const AffineExpr& expr, ObjectiveSense sense);

  /// p0 - sum_i s_i p_i in Sigma[x] with fresh SOS multipliers s_i of the
  /// given (even) degrees. Throws DegreeError when the leading degree of the
  /// residual expression is odd.
  SProcedure s_procedure(const DecisionPoly& p0, const std::vector<Polynomial>& region,
                         const std::vector<int>& multiplier_degrees, const std::string& name);

 private:
  int nvars_;
  std::vector<CoeffVar> vars_;
  std::vector<SosConstraint> constraints_;
  std::vector<ScalarConstraint> scalars_;
  AffineExpr objective_;
  ObjectiveSense sense_ = ObjectiveSense::kMinimize;
};

/// Gram basis for an expression: monomials of degree <= ceil(deg/2) kept by
/// the Newton bounding-box test and iterative zero-diagonal pruning.
std::vector<Monomial> gram_basis(const DecisionPoly& expression);

struct CompileOptions {
  // Replace the objective with "maximize t" where each Gram matrix is
  // X_k + t I, 0 <= t <= 1. Used to pull certificates into the interior.
  bool interior_margin = false;
};

SdpInstance compile(const SosProgram& prog, const CompileOptions& options = {});

struct GramBlock {
  std::string name;
  std::vector<Monomial> basis;
  Eigen::MatrixXd gram;
  // Substituted expression minus its floor.
  Polynomial expression;
  double residual = 0.0;
  double min_eig = 0.0;
};

struct GramCertificate {
  int nvars = 0;
  std::map<int, double> values;
  std::vector<GramBlock> blocks;
  double max_residual = 0.0;
  double min_eig = 0.0;
};

/// Certificate from a solution of compile(prog, options). Returns nullopt
/// unless the solver status is optimal.
std::optional<GramCertificate> recover(const SosProgram& prog, const SdpSolution& sol,
                                       const CompileOptions& options = {});

struct VerificationReport {
  bool pass = false;
  double residual = 0.0;
  double min_eig = 0.0;
  std::string reason;
};

/// Recomputes z'Qz with polynomial arithmetic and each Gram spectrum with an
/// independent Jacobi iteration.
VerificationReport verify_certificate(const GramCertificate& cert, double tol_identity = 1e-6, double tol_eig = 1e-7);

/// Smallest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
double jacobi_min_eigenvalue(const Eigen::MatrixXd& A);

/// Polynomial z'Qz for a Gram matrix over the given basis.
Polynomial gram_polynomial(const std::vector<Monomial>& basis, const Eigen::MatrixXd& Q);

inline SdpSettings interior_point_settings() {
  SdpSettings s;
  s.method = SdpMethod::kInteriorPoint;
  return s;
}

struct SosSolveOptions {
  SdpSettings sdp = interior_point_settings();
  bool polish = true;
  // Weight of a trace penalty on every Gram block. S-procedure multipliers
  // leave the optimal face unbounded (e.g. sigma grows along L_g h^2), which
  // removes the dual interior; the penalty bounds it. The weight is raised
  // tenfold up to twice if the solver does not converge. Interior point only.
  double gram_trace_weight = 1e-7;
  // The polished solve fixes the objective at optimum - backoff with
  // backoff = max(abs_backoff, rel_backoff * max(1, |optimum|)).
  double abs_backoff = 1e-6;
  double rel_backoff = 1e-4;
};

struct SosResult {
  SdpStatus status = SdpStatus::kMaxIter;
  std::optional<GramCertificate> certificate;
  // Objective at the returned certificate, and the unpolished optimum.
  double objective = 0.0;
  double optimal_objective = 0.0;
  int iterations = 0;
  std::string message;
};

SosResult solve_sos(const SosProgram& prog, const SosSolveOptions& options = {});

struct SamplingReport {
  int samples = 0;
  int proposals = 0;
  double min_value = 0.0;
  std::vector<double> argmin;
};

/// Rejection-samples points of the box [-half_width, half_width]^n at which
/// every region polynomial is nonnegative and records the minimum of p.
SamplingReport sample_minimum(const Polynomial& p, const std::vector<Polynomial>& region, double half_width,
                              int samples, std::uint64_t seed);

nlohmann::json to_json(const AffineExpr& e);
nlohmann::json to_json(const DecisionPoly& p);
nlohmann::json to_json(const SosProgram& prog);
nlohmann::json to_json(const GramCertificate& cert);
GramCertificate certificate_from_json(const nlohmann::json& j);
nlohmann::json to_json(const VerificationReport& r);

}  // namespace cbfsos
