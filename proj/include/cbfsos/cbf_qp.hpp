#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cbfsos/poly.hpp"
#include "json.hpp"

namespace cbfsos {

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The 2x2 system of the doubly active region is singular or too badly
/// conditioned to solve without regularization.
class SingularSystemError : public std::runtime_error {
 public:
  SingularSystemError(const std::string& what, std::vector<double> state)
      : std::runtime_error(what), state_(std::move(state)) {}
  const std::vector<double>& state() const { return state_; }

 private:
  std::vector<double> state_;
};

/// No region predicate (or more than one) holds at a state.
class PartitionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Variant { kAmes, kTan, kModified };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// Control-affine plant xdot = f + g u with the CLF/CBF data of one filter.
struct SystemModel {
  int n = 0;
  int m = 0;
  PolyVector f;
  PolyMatrix g;
  PolyVector u_nom;
  Polynomial V;
  double gamma_c = 1.0;
  Polynomial h;
  Polynomial lambda;
  double p = 1.0;
  Variant variant = Variant::kModified;
  // Use gamma_c * h instead of gamma_c * V in F_V.
  bool fv_uses_h_arg = false;

  /// Throws ModelError on shape problems, f(0) != 0, V(0) != 0, V not
  /// positive on a sample cloud, nonpositive gamma_c or p, nonconstant
  /// lambda for the tan variant, nonzero u_nom for the ames variant.
  void validate() const;

  /// f' = f + g u_nom (f for the ames variant).
  PolyVector closed_loop_drift() const;
  /// L_{f'}h + lambda h as a polynomial.
  Polynomial F_lambda() const;
  /// L_{f'}V + gamma_c V (or gamma_c h) as a polynomial.
  Polynomial F_V() const;
  PolyVector b1() const;
  PolyVector b2() const;
};

struct FilterTerms {
  double F_lambda = 0.0;
  double F_V = 0.0;
  Eigen::VectorXd b1;
  Eigen::VectorXd b2;
  double h = 0.0;
  double V = 0.0;
};

enum class RegionTag { kClfbarCbfbar, kClfbarCbf1, kClfbarCbf2, kClfCbfbar, kClfCbf1, kClfCbf2 };

std::string to_string(RegionTag r);
RegionTag region_from_string(const std::string& s);

struct FilterOutput {
  Eigen::VectorXd u_prime;
  double delta = 0.0;
  RegionTag region = RegionTag::kClfbarCbfbar;
  Eigen::VectorXd u_total;
  double objective = 0.0;
};

/// Number of region predicates that hold, evaluated exactly as written.
int count_regions(const FilterTerms& t, double p);
/// The unique region; throws PartitionError if zero or several hold.
RegionTag classify_region(const FilterTerms& t, double p);
/// Closed-form minimizer from precomputed terms. u_total is left empty.
FilterOutput solve_from_terms(const FilterTerms& t, double p, std::span<const double> x);

/// Precompiled evaluator; cheap to call in inner loops and safe to share.
class FilterEvaluator {
 public:
  explicit FilterEvaluator(const SystemModel& model);

  const SystemModel& model() const { return model_; }
  FilterTerms terms(std::span<const double> x) const;
  FilterOutput solve(std::span<const double> x) const;
  Eigen::VectorXd u_nom(std::span<const double> x) const;
  /// f'(x) + g(x) u for a given input u.
  Eigen::VectorXd vector_field(std::span<const double> x, const Eigen::VectorXd& u) const;
  Eigen::MatrixXd g(std::span<const double> x) const;

 private:
  SystemModel model_;
  std::vector<FlatPolynomial> drift_;  // f'
  std::vector<FlatPolynomial> g_;      // row-major n x m
  std::vector<FlatPolynomial> u_nom_;
  FlatPolynomial F_lambda_;
  FlatPolynomial F_V_;
  std::vector<FlatPolynomial> b1_;
  std::vector<FlatPolynomial> b2_;
  FlatPolynomial h_;
  FlatPolynomial V_;
};

FilterTerms eval_terms(const SystemModel& model, std::span<const double> x);
FilterOutput solve_filter(const SystemModel& model, std::span<const double> x);

/// Independent active-set solution of the two-constraint QP in (u', delta).
FilterOutput qp_oracle(const FilterTerms& t, double p);
FilterOutput qp_oracle(const SystemModel& model, std::span<const double> x);

// {"n", "m", "f": [poly], "g": [[poly]] (n rows of m), "u_nom": [poly],
//  "V", "gamma_c", "h", "lambda", "p", "variant", "fv_uses_h_arg"}
nlohmann::json to_json(const SystemModel& model);
SystemModel model_from_json(const nlohmann::json& j);
SystemModel load_model(const std::string& path);

}  // namespace cbfsos
