#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace cbfsos {

/// Raised when operands disagree on the number of variables or on a
/// vector/matrix shape.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Exponent vector x1^e1 ... xn^en.
class Monomial {
 public:
  Monomial() = default;
  explicit Monomial(std::vector<int> exponents);

  static Monomial one(int nvars);
  static Monomial variable(int nvars, int index, int power = 1);

  int nvars() const { return static_cast<int>(exponents_.size()); }
  int degree() const { return degree_; }
  int operator[](int i) const { return exponents_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& exponents() const { return exponents_; }

  Monomial operator*(const Monomial& other) const;
  bool operator==(const Monomial& other) const { return exponents_ == other.exponents_; }

  std::string to_string() const;

 private:
  std::vector<int> exponents_;
  int degree_ = 0;
};

/// Graded-lexicographic order: lower total degree first; within a degree,
/// larger powers of earlier variables first (1, x1, x2, x1^2, x1x2, x2^2, ...).
struct GradedLexLess {
  bool operator()(const Monomial& a, const Monomial& b) const;
};

/// Sparse real multivariate polynomial. Stored terms never carry an exact
/// zero coefficient; iteration follows GradedLexLess.
class Polynomial {
 public:
  using TermMap = std::map<Monomial, double, GradedLexLess>;

  explicit Polynomial(int nvars = 0) : nvars_(nvars) {}
  Polynomial(int nvars, TermMap terms);

  static Polynomial constant(int nvars, double value);
  static Polynomial variable(int nvars, int index);
  static Polynomial monomial(const Monomial& m, double coeff = 1.0);

  int nvars() const { return nvars_; }
  const TermMap& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  std::size_t size() const { return terms_.size(); }
  /// -1 for the zero polynomial.
  int degree() const;
  double coeff(const Monomial& m) const;
  bool is_constant() const;

  double operator()(std::span<const double> x) const;

  Polynomial& operator+=(const Polynomial& other);
  Polynomial& operator-=(const Polynomial& other);
  Polynomial& operator*=(double s);

  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(const Polynomial& a, const Polynomial& b);
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }
  friend Polynomial operator*(double s, Polynomial a) { return a *= s; }
  friend Polynomial operator-(Polynomial a) { return a *= -1.0; }

  friend Polynomial operator+(Polynomial a, double c);
  friend Polynomial operator-(Polynomial a, double c) { return std::move(a) + (-c); }
  friend Polynomial operator+(double c, Polynomial a) { return std::move(a) + c; }
  friend Polynomial operator-(double c, Polynomial a) { return -std::move(a) + c; }

  bool operator==(const Polynomial& other) const = default;

  std::string to_string() const;

 private:
  void add_term(const Monomial& m, double c);

  int nvars_ = 0;
  TermMap terms_;
};

using PolyVector = std::vector<Polynomial>;

/// Row-major rectangular matrix of polynomials sharing one variable count.
class PolyMatrix {
 public:
  PolyMatrix() = default;
  PolyMatrix(int rows, int cols, int nvars);
  PolyMatrix(int rows, int cols, std::vector<Polynomial> entries);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int nvars() const { return nvars_; }
  const Polynomial& operator()(int r, int c) const;
  Polynomial& operator()(int r, int c);
  PolyVector col(int c) const;

  /// this * v, where v has cols() entries.
  PolyVector apply(const PolyVector& v) const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  int nvars_ = 0;
  std::vector<Polynomial> entries_;
};

double evaluate(const Polynomial& p, std::span<const double> x);
std::vector<double> evaluate(const PolyVector& v, std::span<const double> x);

Polynomial partial_derivative(const Polynomial& p, int index);
PolyVector gradient(const Polynomial& p);

/// sum_i dp/dx_i * field_i
Polynomial lie_derivative(const PolyVector& field, const Polynomial& p);
/// Row vector dp/dx * G, one entry per column of G.
PolyVector lie_derivative(const PolyMatrix& field, const Polynomial& p);

/// Drops terms with |coeff| <= tol. Never applied implicitly.
Polynomial truncate(const Polynomial& p, double tol);

/// All monomials of total degree <= degree in graded-lex order.
std::vector<Monomial> monomial_basis(int nvars, int degree, bool include_constant = true);

/// Dot product of two equally sized polynomial vectors.
Polynomial dot(const PolyVector& a, const PolyVector& b);
PolyVector add(const PolyVector& a, const PolyVector& b);

/// Fast evaluator with a flattened exponent table, for inner loops.
class FlatPolynomial {
 public:
  FlatPolynomial() = default;
  explicit FlatPolynomial(const Polynomial& p);

  int nvars() const { return nvars_; }
  double operator()(std::span<const double> x) const;

 private:
  int nvars_ = 0;
  int max_power_ = 0;
  std::vector<int> exponents_;  // size() * nvars_
  std::vector<double> coeffs_;
};

// JSON literal: [{"exponents": [e1, ..., en], "coeff": c}, ...]
nlohmann::json to_json(const Polynomial& p);
Polynomial polynomial_from_json(const nlohmann::json& j, int nvars);
nlohmann::json to_json(const Monomial& m);
Monomial monomial_from_json(const nlohmann::json& j);

}  // namespace cbfsos
