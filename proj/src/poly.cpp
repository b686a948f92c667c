#include "cbfsos/poly.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cbfsos {

namespace {

void require_same_nvars(int a, int b, const char* what) {
  if (a != b) {
    std::ostringstream os;
    os << what << ": variable count mismatch (" << a << " vs " << b << ")";
    throw DimensionError(os.str());
  }
}

// Enumerates exponent vectors of exactly `degree` in graded-lex order
// (earlier variables take the larger share first).
void exponents_of_degree(int nvars, int degree, std::vector<int>& current, int index,
                         std::vector<Monomial>& out) {
  if (index == nvars - 1) {
    current[static_cast<std::size_t>(index)] = degree;
    out.emplace_back(current);
    return;
  }
  for (int e = degree; e >= 0; --e) {
    current[static_cast<std::size_t>(index)] = e;
    exponents_of_degree(nvars, degree - e, current, index + 1, out);
  }
}

}  // namespace

Monomial::Monomial(std::vector<int> exponents) : exponents_(std::move(exponents)) {
  for (int e : exponents_) {
    if (e < 0) throw std::invalid_argument("Monomial: negative exponent");
  }
  degree_ = std::accumulate(exponents_.begin(), exponents_.end(), 0);
}

Monomial Monomial::one(int nvars) { return Monomial(std::vector<int>(static_cast<std::size_t>(nvars), 0)); }

Monomial Monomial::variable(int nvars, int index, int power) {
  if (index < 0 || index >= nvars) throw DimensionError("Monomial::variable: index out of range");
  std::vector<int> e(static_cast<std::size_t>(nvars), 0);
  e[static_cast<std::size_t>(index)] = power;
  return Monomial(std::move(e));
}

Monomial Monomial::operator*(const Monomial& other) const {
  require_same_nvars(nvars(), other.nvars(), "Monomial::operator*");
  std::vector<int> e(exponents_);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] += other.exponents_[i];
  return Monomial(std::move(e));
}

std::string Monomial::to_string() const {
  std::ostringstream os;
  bool first = true;
  for (int i = 0; i < nvars(); ++i) {
    const int e = (*this)[i];
    if (e == 0) continue;
    if (!first) os << '*';
    os << 'x' << (i + 1);
    if (e > 1) os << '^' << e;
    first = false;
  }
  if (first) os << '1';
  return os.str();
}

bool GradedLexLess::operator()(const Monomial& a, const Monomial& b) const {
  if (a.degree() != b.degree()) return a.degree() < b.degree();
  // Within a degree the monomial with the larger leading exponent sorts first.
  return std::lexicographical_compare(b.exponents().begin(), b.exponents().end(),
                                      a.exponents().begin(), a.exponents().end());
}

Polynomial::Polynomial(int nvars, TermMap terms) : nvars_(nvars) {
  for (auto& [m, c] : terms) {
    require_same_nvars(nvars_, m.nvars(), "Polynomial");
    if (c != 0.0) terms_.emplace(m, c);
  }
}

Polynomial Polynomial::constant(int nvars, double value) {
  Polynomial p(nvars);
  p.add_term(Monomial::one(nvars), value);
  return p;
}

Polynomial Polynomial::variable(int nvars, int index) {
  Polynomial p(nvars);
  p.add_term(Monomial::variable(nvars, index), 1.0);
  return p;
}

Polynomial Polynomial::monomial(const Monomial& m, double coeff) {
  Polynomial p(m.nvars());
  p.add_term(m, coeff);
  return p;
}

int Polynomial::degree() const {
  if (terms_.empty()) return -1;
  return terms_.rbegin()->first.degree();
}

double Polynomial::coeff(const Monomial& m) const {
  auto it = terms_.find(m);
  return it == terms_.end() ? 0.0 : it->second;
}

bool Polynomial::is_constant() const { return degree() <= 0; }

void Polynomial::add_term(const Monomial& m, double c) {
  if (c == 0.0) return;
  auto [it, inserted] = terms_.emplace(m, c);
  if (!inserted) {
    it->second += c;
    if (it->second == 0.0) terms_.erase(it);
  }
}

double Polynomial::operator()(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != nvars_) throw DimensionError("evaluate: state length does not match nvars");
  double sum = 0.0;
  for (const auto& [m, c] : terms_) {
    double term = c;
    for (int i = 0; i < nvars_; ++i) {
      for (int k = 0; k < m[i]; ++k) term *= x[static_cast<std::size_t>(i)];
    }
    sum += term;
  }
  return sum;
}

Polynomial& Polynomial::operator+=(const Polynomial& other) {
  require_same_nvars(nvars_, other.nvars_, "Polynomial::operator+");
  for (const auto& [m, c] : other.terms_) add_term(m, c);
  return *this;
}

Polynomial& Polynomial::operator-=(const Polynomial& other) {
  require_same_nvars(nvars_, other.nvars_, "Polynomial::operator-");
  for (const auto& [m, c] : other.terms_) add_term(m, -c);
  return *this;
}

Polynomial& Polynomial::operator*=(double s) {
  if (s == 0.0) {
    terms_.clear();
    return *this;
  }
  for (auto it = terms_.begin(); it != terms_.end();) {
    it->second *= s;
    if (it->second == 0.0) {
      it = terms_.erase(it);
    } else {
      ++it;
    }
  }
  return *this;
}

Polynomial operator*(const Polynomial& a, const Polynomial& b) {
  require_same_nvars(a.nvars_, b.nvars_, "Polynomial::operator*");
  Polynomial r(a.nvars_);
  for (const auto& [ma, ca] : a.terms_) {
    for (const auto& [mb, cb] : b.terms_) r.add_term(ma * mb, ca * cb);
  }
  return r;
}

Polynomial operator+(Polynomial a, double c) {
  a.add_term(Monomial::one(a.nvars_), c);
  return a;
}

std::string Polynomial::to_string() const {
  if (terms_.empty()) return "0";
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (const auto& [m, c] : terms_) {
    if (!first) os << (c < 0 ? " - " : " + ");
    else if (c < 0) os << '-';
    os << std::abs(c);
    if (m.degree() > 0) os << '*' << m.to_string();
    first = false;
  }
  return os.str();
}

PolyMatrix::PolyMatrix(int rows, int cols, int nvars)
    : rows_(rows), cols_(cols), nvars_(nvars),
      entries_(static_cast<std::size_t>(rows * cols), Polynomial(nvars)) {}

PolyMatrix::PolyMatrix(int rows, int cols, std::vector<Polynomial> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
  if (static_cast<int>(entries_.size()) != rows * cols) throw DimensionError("PolyMatrix: entry count does not match shape");
  nvars_ = entries_.empty() ? 0 : entries_.front().nvars();
  for (const auto& p : entries_) require_same_nvars(nvars_, p.nvars(), "PolyMatrix");
}

const Polynomial& PolyMatrix::operator()(int r, int c) const {
  return entries_.at(static_cast<std::size_t>(r * cols_ + c));
}

Polynomial& PolyMatrix::operator()(int r, int c) { return entries_.at(static_cast<std::size_t>(r * cols_ + c)); }

PolyVector PolyMatrix::col(int c) const {
  PolyVector out;
  out.reserve(static_cast<std::size_t>(rows_));
  for (int r = 0; r < rows_; ++r) out.push_back((*this)(r, c));
  return out;
}

PolyVector PolyMatrix::apply(const PolyVector& v) const {
  if (static_cast<int>(v.size()) != cols_) throw DimensionError("PolyMatrix::apply: vector length mismatch");
  PolyVector out(static_cast<std::size_t>(rows_), Polynomial(nvars_));
  for (int r = 0; r < rows_; ++r) {
    for (int c = 0; c < cols_; ++c) out[static_cast<std::size_t>(r)] += (*this)(r, c) * v[static_cast<std::size_t>(c)];
  }
  return out;
}

double evaluate(const Polynomial& p, std::span<const double> x) { return p(x); }

std::vector<double> evaluate(const PolyVector& v, std::span<const double> x) {
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& p : v) out.push_back(p(x));
  return out;
}

Polynomial partial_derivative(const Polynomial& p, int index) {
  if (index < 0 || index >= p.nvars()) throw DimensionError("partial_derivative: index out of range");
  Polynomial::TermMap terms;
  for (const auto& [m, c] : p.terms()) {
    const int e = m[index];
    if (e == 0) continue;
    std::vector<int> ex = m.exponents();
    ex[static_cast<std::size_t>(index)] -= 1;
    terms[Monomial(std::move(ex))] += c * e;
  }
  return Polynomial(p.nvars(), std::move(terms));
}

PolyVector gradient(const Polynomial& p) {
  PolyVector g;
  for (int i = 0; i < p.nvars(); ++i) g.push_back(partial_derivative(p, i));
  return g;
}

Polynomial lie_derivative(const PolyVector& field, const Polynomial& p) {
  if (static_cast<int>(field.size()) != p.nvars()) throw DimensionError("lie_derivative: field length must equal nvars");
  Polynomial out(p.nvars());
  for (int i = 0; i < p.nvars(); ++i) {
    require_same_nvars(p.nvars(), field[static_cast<std::size_t>(i)].nvars(), "lie_derivative");
    out += partial_derivative(p, i) * field[static_cast<std::size_t>(i)];
  }
  return out;
}

PolyVector lie_derivative(const PolyMatrix& field, const Polynomial& p) {
  if (field.rows() != p.nvars()) throw DimensionError("lie_derivative: field rows must equal nvars");
  PolyVector out;
  for (int c = 0; c < field.cols(); ++c) out.push_back(lie_derivative(field.col(c), p));
  return out;
}

Polynomial truncate(const Polynomial& p, double tol) {
  Polynomial::TermMap terms;
  for (const auto& [m, c] : p.terms()) {
    if (std::abs(c) > tol) terms.emplace(m, c);
  }
  return Polynomial(p.nvars(), std::move(terms));
}

std::vector<Monomial> monomial_basis(int nvars, int degree, bool include_constant) {
  if (degree < 0) throw std::invalid_argument("monomial_basis: negative degree");
  std::vector<Monomial> out;
  if (nvars == 0) {
    if (include_constant) out.emplace_back(std::vector<int>{});
    return out;
  }
  std::vector<int> current(static_cast<std::size_t>(nvars), 0);
  for (int d = include_constant ? 0 : 1; d <= degree; ++d) exponents_of_degree(nvars, d, current, 0, out);
  return out;
}

Polynomial dot(const PolyVector& a, const PolyVector& b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  if (a.empty()) throw DimensionError("dot: empty vectors");
  Polynomial out(a.front().nvars());
  for (std::size_t i = 0; i < a.size(); ++i) out += a[i] * b[i];
  return out;
}

PolyVector add(const PolyVector& a, const PolyVector& b) {
  if (a.size() != b.size()) throw DimensionError("add: length mismatch");
  PolyVector out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(a[i] + b[i]);
  return out;
}

FlatPolynomial::FlatPolynomial(const Polynomial& p) : nvars_(p.nvars()) {
  for (const auto& [m, c] : p.terms()) {
    for (int i = 0; i < nvars_; ++i) {
      exponents_.push_back(m[i]);
      max_power_ = std::max(max_power_, m[i]);
    }
    coeffs_.push_back(c);
  }
}

double FlatPolynomial::operator()(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != nvars_) throw DimensionError("FlatPolynomial: state length does not match nvars");
  // Power table laid out as pow[i * (max_power + 1) + k] = x_i^k.
  constexpr int kStackPowers = 64;
  const int stride = max_power_ + 1;
  double stack_buf[kStackPowers];
  std::vector<double> heap_buf;
  double* pw = stack_buf;
  if (nvars_ * stride > kStackPowers) {
    heap_buf.resize(static_cast<std::size_t>(nvars_ * stride));
    pw = heap_buf.data();
  }
  for (int i = 0; i < nvars_; ++i) {
    double v = 1.0;
    for (int k = 0; k < stride; ++k) {
      pw[i * stride + k] = v;
      v *= x[static_cast<std::size_t>(i)];
    }
  }
  double sum = 0.0;
  const int* e = exponents_.data();
  for (double c : coeffs_) {
    double term = c;
    for (int i = 0; i < nvars_; ++i) term *= pw[i * stride + e[i]];
    e += nvars_;
    sum += term;
  }
  return sum;
}

nlohmann::json to_json(const Monomial& m) { return m.exponents(); }

Monomial monomial_from_json(const nlohmann::json& j) { return Monomial(j.get<std::vector<int>>()); }

nlohmann::json to_json(const Polynomial& p) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [m, c] : p.terms()) arr.push_back({{"exponents", m.exponents()}, {"coeff", c}});
  return arr;
}

Polynomial polynomial_from_json(const nlohmann::json& j, int nvars) {
  if (!j.is_array()) throw std::invalid_argument("polynomial literal must be an array of terms");
  Polynomial::TermMap terms;
  for (const auto& t : j) {
    Monomial m(t.at("exponents").get<std::vector<int>>());
    if (m.nvars() != nvars) throw DimensionError("polynomial literal: exponent vector length does not match nvars");
    terms[m] += t.at("coeff").get<double>();
  }
  return Polynomial(nvars, std::move(terms));
}

}  // namespace cbfsos
