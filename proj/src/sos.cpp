#include "cbfsos/sos.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

namespace cbfsos {

// ---------------------------------------------------------------------------
// AffineExpr

AffineExpr AffineExpr::var(const CoeffVar& v, double weight) {
  AffineExpr e;
  if (weight != 0.0) e.terms_[v.id] = weight;
  return e;
}

double AffineExpr::evaluate(const std::map<int, double>& values) const {
  double s = constant_;
  for (const auto& [id, w] : terms_) {
    auto it = values.find(id);
    if (it == values.end()) throw std::out_of_range("AffineExpr::evaluate: missing value for variable " + std::to_string(id));
    s += w * it->second;
  }
  return s;
}

AffineExpr& AffineExpr::operator+=(const AffineExpr& other) {
  constant_ += other.constant_;
  for (const auto& [id, w] : other.terms_) {
    auto [it, inserted] = terms_.emplace(id, w);
    if (!inserted) {
      it->second += w;
      if (it->second == 0.0) terms_.erase(it);
    }
  }
  return *this;
}

AffineExpr& AffineExpr::operator-=(const AffineExpr& other) { return *this += -1.0 * other; }

AffineExpr& AffineExpr::operator*=(double s) {
  constant_ *= s;
  if (s == 0.0) {
    terms_.clear();
    return *this;
  }
  for (auto& [id, w] : terms_) w *= s;
  return *this;
}

// ---------------------------------------------------------------------------
// DecisionPoly

DecisionPoly::DecisionPoly(const Polynomial& p) : nvars_(p.nvars()) {
  for (const auto& [m, c] : p.terms()) terms_.emplace(m, AffineExpr(c));
}

DecisionPoly::DecisionPoly(int nvars, TermMap terms) : nvars_(nvars) {
  for (auto& [m, c] : terms) {
    if (m.nvars() != nvars_) throw DimensionError("DecisionPoly: exponent length does not match nvars");
    if (!c.is_zero()) terms_.emplace(m, std::move(c));
  }
}

int DecisionPoly::degree() const { return terms_.empty() ? -1 : terms_.rbegin()->first.degree(); }

bool DecisionPoly::has_vars() const {
  return std::any_of(terms_.begin(), terms_.end(), [](const auto& t) { return t.second.has_vars(); });
}

AffineExpr DecisionPoly::coeff(const Monomial& m) const {
  auto it = terms_.find(m);
  return it == terms_.end() ? AffineExpr() : it->second;
}

std::vector<Monomial> DecisionPoly::support() const {
  std::vector<Monomial> out;
  for (const auto& [m, c] : terms_) out.push_back(m);
  return out;
}

Polynomial DecisionPoly::substitute(const std::map<int, double>& values) const {
  Polynomial::TermMap terms;
  for (const auto& [m, c] : terms_) {
    const double v = c.evaluate(values);
    if (v != 0.0) terms.emplace(m, v);
  }
  return Polynomial(nvars_, std::move(terms));
}

void DecisionPoly::add_term(const Monomial& m, const AffineExpr& c) {
  if (c.is_zero()) return;
  auto [it, inserted] = terms_.emplace(m, c);
  if (!inserted) {
    it->second += c;
    if (it->second.is_zero()) terms_.erase(it);
  }
}

DecisionPoly& DecisionPoly::operator+=(const DecisionPoly& other) {
  if (nvars_ != other.nvars_) throw DimensionError("DecisionPoly::operator+: variable count mismatch");
  for (const auto& [m, c] : other.terms_) add_term(m, c);
  return *this;
}

DecisionPoly& DecisionPoly::operator-=(const DecisionPoly& other) {
  if (nvars_ != other.nvars_) throw DimensionError("DecisionPoly::operator-: variable count mismatch");
  for (const auto& [m, c] : other.terms_) add_term(m, -c);
  return *this;
}

DecisionPoly& DecisionPoly::operator*=(double s) {
  for (auto it = terms_.begin(); it != terms_.end();) {
    it->second *= s;
    if (it->second.is_zero()) {
      it = terms_.erase(it);
    } else {
      ++it;
    }
  }
  return *this;
}

DecisionPoly operator*(const DecisionPoly& a, const DecisionPoly& b) {
  if (a.nvars_ != b.nvars_) throw DimensionError("DecisionPoly::operator*: variable count mismatch");
  const bool av = a.has_vars();
  const bool bv = b.has_vars();
  if (av && bv) {
    throw BilinearError("product of two polynomials that both carry decision variables is bilinear");
  }
  // One side has plain numeric coefficients.
  const DecisionPoly& num = av ? b : a;
  const DecisionPoly& dec = av ? a : b;
  DecisionPoly r(a.nvars_);
  for (const auto& [mn, cn] : num.terms_) {
    for (const auto& [md, cd] : dec.terms_) r.add_term(mn * md, cn.constant() * cd);
  }
  return r;
}

DecisionPoly operator+(DecisionPoly a, const AffineExpr& c) {
  a.add_term(Monomial::one(a.nvars_), c);
  return a;
}

DecisionPoly partial_derivative(const DecisionPoly& p, int index) {
  if (index < 0 || index >= p.nvars()) throw DimensionError("partial_derivative: index out of range");
  DecisionPoly::TermMap terms;
  for (const auto& [m, c] : p.terms()) {
    const int e = m[index];
    if (e == 0) continue;
    std::vector<int> ex = m.exponents();
    ex[static_cast<std::size_t>(index)] -= 1;
    terms[Monomial(std::move(ex))] += static_cast<double>(e) * c;
  }
  return DecisionPoly(p.nvars(), std::move(terms));
}

DecisionPoly lie_derivative(const PolyVector& field, const DecisionPoly& p) {
  if (static_cast<int>(field.size()) != p.nvars()) throw DimensionError("lie_derivative: field length must equal nvars");
  DecisionPoly out(p.nvars());
  for (int i = 0; i < p.nvars(); ++i) out += partial_derivative(p, i) * DecisionPoly(field[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<DecisionPoly> lie_derivative(const PolyMatrix& field, const DecisionPoly& p) {
  if (field.rows() != p.nvars()) throw DimensionError("lie_derivative: field rows must equal nvars");
  std::vector<DecisionPoly> out;
  for (int c = 0; c < field.cols(); ++c) out.push_back(lie_derivative(field.col(c), p));
  return out;
}

// ---------------------------------------------------------------------------
// SosProgram

CoeffVar SosProgram::new_var(std::string description) {
  CoeffVar v{static_cast<int>(vars_.size()), std::move(description)};
  vars_.push_back(v);
  return v;
}

DecisionPoly SosProgram::decision_poly(int degree, Parity parity, const std::string& name) {
  if (degree < 0) throw std::invalid_argument("decision_poly: negative degree");
  DecisionPoly::TermMap terms;
  for (const auto& m : monomial_basis(nvars_, degree)) {
    if (parity == Parity::kEven && m.degree() % 2 != 0) continue;
    terms.emplace(m, AffineExpr::var(new_var(name + "[" + m.to_string() + "]")));
  }
  return DecisionPoly(nvars_, std::move(terms));
}

DecisionPoly SosProgram::sos_poly(int degree, const std::string& name) {
  if (degree < 0 || degree % 2 != 0) throw DegreeError("sos_poly: SOS multipliers need an even degree, got " + std::to_string(degree));
  DecisionPoly p = decision_poly(degree, Parity::kAll, name);
  add_sos(p, name);
  return p;
}

int SosProgram::add_sos(const DecisionPoly& expression, const std::string& name, double floor) {
  if (expression.nvars() != nvars_) throw DimensionError("add_sos: variable count mismatch");
  SosConstraint c;
  c.name = name;
  c.expression = expression;
  c.floor = floor;
  c.basis = gram_basis(expression - AffineExpr(floor));
  constraints_.push_back(std::move(c));
  return static_cast<int>(constraints_.size()) - 1;
}

int SosProgram::add_sos_with_basis(const DecisionPoly& expression, std::vector<Monomial> basis, const std::string& name,
                                   double floor) {
  if (expression.nvars() != nvars_) throw DimensionError("add_sos: variable count mismatch");
  for (const auto& m : basis) {
    if (m.nvars() != nvars_) throw DimensionError("add_sos: basis monomial has wrong length");
  }
  constraints_.push_back({name, expression, floor, std::move(basis)});
  return static_cast<int>(constraints_.size()) - 1;
}

void SosProgram::add_equality(const AffineExpr& expr) { scalars_.push_back({expr, true}); }

void SosProgram::add_nonnegative(const AffineExpr& expr) { scalars_.push_back({expr, false}); }

void SosProgram::set_objective(const AffineExpr& expr, ObjectiveSense sense) {
  objective_ = expr;
  sense_ = sense;
}

SProcedure SosProgram::s_procedure(const DecisionPoly& p0, const std::vector<Polynomial>& region,
                                   const std::vector<int>& multiplier_degrees, const std::string& name) {
  if (region.size() != multiplier_degrees.size()) {
    throw std::invalid_argument("s_procedure: one multiplier degree per region polynomial is required");
  }
  if (p0.nvars() != nvars_) throw DimensionError("s_procedure: variable count mismatch");
  for (const auto& r : region) {
    if (r.nvars() != nvars_) throw DimensionError("s_procedure: variable count mismatch");
  }
  // Leading degree check before any variable is allocated.
  int top = p0.degree();
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (multiplier_degrees[i] < 0 || multiplier_degrees[i] % 2 != 0) {
      throw DegreeError("s_procedure: multiplier degree must be even and nonnegative, got " + std::to_string(multiplier_degrees[i]));
    }
    if (!region[i].is_zero()) top = std::max(top, multiplier_degrees[i] + region[i].degree());
  }
  if (top % 2 != 0) {
    std::ostringstream os;
    os << "s_procedure '" << name << "': the residual expression has odd leading degree " << top
       << "; it cannot be SOS. Adjust the multiplier degrees so the highest-degree term is even";
    throw DegreeError(os.str());
  }
  SProcedure out;
  out.p0 = p0;
  out.region = region;
  DecisionPoly expr = p0;
  for (std::size_t i = 0; i < region.size(); ++i) {
    DecisionPoly s = sos_poly(multiplier_degrees[i], name + ".s" + std::to_string(i + 1));
    expr -= s * DecisionPoly(region[i]);
    out.multipliers.push_back(std::move(s));
  }
  out.constraint = add_sos(expr, name);
  return out;
}

// ---------------------------------------------------------------------------
// Gram basis

std::vector<Monomial> gram_basis(const DecisionPoly& expression) {
  const auto support = expression.support();
  if (support.empty()) return {};
  const int n = expression.nvars();
  std::vector<int> max_e(static_cast<std::size_t>(n), 0);
  std::vector<int> min_e(static_cast<std::size_t>(n), std::numeric_limits<int>::max());
  int max_deg = 0;
  int min_deg = std::numeric_limits<int>::max();
  for (const auto& m : support) {
    for (int i = 0; i < n; ++i) {
      max_e[static_cast<std::size_t>(i)] = std::max(max_e[static_cast<std::size_t>(i)], m[i]);
      min_e[static_cast<std::size_t>(i)] = std::min(min_e[static_cast<std::size_t>(i)], m[i]);
    }
    max_deg = std::max(max_deg, m.degree());
    min_deg = std::min(min_deg, m.degree());
  }
  std::vector<Monomial> basis;
  for (const auto& a : monomial_basis(n, (max_deg + 1) / 2)) {
    bool keep = 2 * a.degree() <= max_deg && 2 * a.degree() >= min_deg;
    for (int i = 0; keep && i < n; ++i) {
      keep = 2 * a[i] <= max_e[static_cast<std::size_t>(i)] && 2 * a[i] >= min_e[static_cast<std::size_t>(i)];
    }
    if (keep) basis.push_back(a);
  }

  // A diagonal entry whose square monomial is absent from the expression and
  // not reachable by any other pair is forced to zero, so the whole row is.
  const std::set<Monomial, GradedLexLess> supp(support.begin(), support.end());
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<Monomial> kept;
    for (std::size_t k = 0; k < basis.size(); ++k) {
      const Monomial sq = basis[k] * basis[k];
      bool needed = supp.count(sq) > 0;
      for (std::size_t i = 0; !needed && i < basis.size(); ++i) {
        for (std::size_t j = i + 1; !needed && j < basis.size(); ++j) needed = basis[i] * basis[j] == sq;
      }
      if (needed) {
        kept.push_back(basis[k]);
      } else {
        changed = true;
      }
    }
    basis = std::move(kept);
  }
  return basis;
}

// ---------------------------------------------------------------------------
// Compilation

namespace {

struct CompiledLayout {
  std::vector<int> block_of;  // per SOS constraint, -1 if its basis is empty
  int free_block = -1;        // decision variables
  int diag_block = -1;        // inequality slacks, then t and its slack
  int nvars_free = 0;
  int margin_index = -1;  // t
  int margin_slack = -1;
  int diag_size = 0;
};

CompiledLayout make_layout(const SosProgram& prog, const CompileOptions& options) {
  CompiledLayout lay;
  int next = 0;
  for (const auto& c : prog.constraints()) lay.block_of.push_back(c.basis.empty() ? -1 : next++);
  lay.nvars_free = static_cast<int>(prog.vars().size());
  if (lay.nvars_free > 0) lay.free_block = next++;
  for (const auto& s : prog.scalar_constraints()) lay.diag_size += s.equality ? 0 : 1;
  if (options.interior_margin) {
    lay.margin_index = lay.diag_size;
    lay.margin_slack = lay.diag_size + 1;
    lay.diag_size += 2;
  }
  if (lay.diag_size > 0) lay.diag_block = next;
  return lay;
}

void append_affine(const AffineExpr& e, double sign, const CompiledLayout& lay, SdpRow& row) {
  for (const auto& [id, w] : e.terms()) row.entries.push_back({lay.free_block, id, id, sign * w});
}

}  // namespace

SdpInstance compile(const SosProgram& prog, const CompileOptions& options) {
  // Every variable must be referenced somewhere.
  std::vector<bool> used(prog.vars().size(), false);
  auto mark = [&](const AffineExpr& e) {
    for (const auto& [id, w] : e.terms()) used[static_cast<std::size_t>(id)] = true;
  };
  for (const auto& c : prog.constraints()) {
    for (const auto& [m, e] : c.expression.terms()) mark(e);
  }
  for (const auto& s : prog.scalar_constraints()) mark(s.expr);
  mark(prog.objective());
  for (std::size_t k = 0; k < used.size(); ++k) {
    if (!used[k]) throw std::invalid_argument("compile: variable '" + prog.vars()[k].description + "' is not referenced");
  }

  const CompiledLayout lay = make_layout(prog, options);
  SdpInstance inst;
  inst.sense = prog.sense();
  for (std::size_t k = 0; k < prog.constraints().size(); ++k) {
    if (lay.block_of[k] < 0) continue;
    const int sz = static_cast<int>(prog.constraints()[k].basis.size());
    inst.blocks.push_back({sz, BlockKind::kPsd, Eigen::MatrixXd::Zero(sz, sz)});
  }
  if (lay.free_block >= 0) {
    inst.blocks.push_back({lay.nvars_free, BlockKind::kFree, Eigen::MatrixXd::Zero(lay.nvars_free, lay.nvars_free)});
  }
  if (lay.diag_block >= 0) {
    inst.blocks.push_back({lay.diag_size, BlockKind::kNonnegDiagonal, Eigen::MatrixXd::Zero(lay.diag_size, lay.diag_size)});
  }

  for (std::size_t k = 0; k < prog.constraints().size(); ++k) {
    const auto& c = prog.constraints()[k];
    const int blk = lay.block_of[k];
    const auto& z = c.basis;
    if (z.empty() && c.expression.degree() >= 0 && !(c.expression - AffineExpr(c.floor)).terms().empty()) {
      throw DegreeError("compile: no Gram basis can be inferred for constraint '" + c.name + "'");
    }

    std::map<Monomial, SdpRow, GradedLexLess> rows;
    for (int j = 0; j < static_cast<int>(z.size()); ++j) {
      for (int i = 0; i <= j; ++i) {
        rows[z[static_cast<std::size_t>(i)] * z[static_cast<std::size_t>(j)]].entries.push_back({blk, i, j, 1.0});
      }
      if (options.interior_margin) {
        const Monomial sq = z[static_cast<std::size_t>(j)] * z[static_cast<std::size_t>(j)];
        rows[sq].entries.push_back({lay.diag_block, lay.margin_index, lay.margin_index, 1.0});
      }
    }
    DecisionPoly target = c.expression - AffineExpr(c.floor);
    for (const auto& [m, e] : target.terms()) {
      SdpRow& row = rows[m];
      append_affine(e, -1.0, lay, row);
      row.rhs += e.constant();
    }
    for (auto& [m, row] : rows) {
      // Merge duplicate margin entries accumulated from repeated squares.
      std::map<std::tuple<int, int, int>, double> merged;
      std::vector<std::tuple<int, int, int>> order;
      for (const auto& e : row.entries) {
        const auto key = std::make_tuple(e.block, e.i, e.j);
        if (merged.find(key) == merged.end()) order.push_back(key);
        merged[key] += e.value;
      }
      SdpRow out;
      out.rhs = row.rhs;
      for (const auto& key : order) {
        const double v = merged[key];
        if (v != 0.0) out.entries.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), v});
      }
      if (out.entries.empty() && out.rhs == 0.0) continue;
      inst.rows.push_back(std::move(out));
    }
  }

  int slack = 0;
  for (const auto& s : prog.scalar_constraints()) {
    SdpRow row;
    append_affine(s.expr, 1.0, lay, row);
    if (!s.equality) {
      row.entries.push_back({lay.diag_block, slack, slack, -1.0});
      ++slack;
    }
    row.rhs = -s.expr.constant();
    inst.rows.push_back(std::move(row));
  }

  if (options.interior_margin) {
    SdpRow row;
    row.entries.push_back({lay.diag_block, lay.margin_index, lay.margin_index, 1.0});
    row.entries.push_back({lay.diag_block, lay.margin_slack, lay.margin_slack, 1.0});
    row.rhs = 1.0;
    inst.rows.push_back(std::move(row));
    inst.sense = ObjectiveSense::kMaximize;
    inst.blocks[static_cast<std::size_t>(lay.diag_block)].cost(lay.margin_index, lay.margin_index) = 1.0;
  } else if (prog.has_objective()) {
    auto& C = inst.blocks[static_cast<std::size_t>(lay.free_block)].cost;
    for (const auto& [id, w] : prog.objective().terms()) C(id, id) += w;
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Recovery and verification

Polynomial gram_polynomial(const std::vector<Monomial>& basis, const Eigen::MatrixXd& Q) {
  if (Q.rows() != static_cast<Eigen::Index>(basis.size()) || Q.cols() != Q.rows()) {
    throw DimensionError("gram_polynomial: Gram size does not match basis");
  }
  const int nvars = basis.empty() ? 0 : basis.front().nvars();
  Polynomial out(nvars);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    for (std::size_t j = 0; j < basis.size(); ++j) {
      const double q = Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (q != 0.0) out += Polynomial::monomial(basis[i] * basis[j], q);
    }
  }
  return out;
}

double jacobi_min_eigenvalue(const Eigen::MatrixXd& input) {
  const int n = static_cast<int>(input.rows());
  if (n == 0) return 0.0;
  if (input.cols() != n) throw DimensionError("jacobi_min_eigenvalue: matrix is not square");
  std::vector<double> a(static_cast<std::size_t>(n * n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a[static_cast<std::size_t>(i * n + j)] = 0.5 * (input(i, j) + input(j, i));
  }
  auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i * n + j)]; };
  double norm = 0.0;
  for (double v : a) norm += v * v;
  norm = std::sqrt(norm);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    }
    if (std::sqrt(off) <= 1e-16 * std::max(norm, 1e-300)) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p);
          const double akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k);
          const double aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  double lo = at(0, 0);
  for (int i = 1; i < n; ++i) lo = std::min(lo, at(i, i));
  return lo;
}

namespace {

double max_coeff_abs(const Polynomial& p) {
  double worst = 0.0;
  for (const auto& [m, c] : p.terms()) worst = std::max(worst, std::abs(c));
  return worst;
}

void summarize(GramCertificate& cert) {
  cert.max_residual = 0.0;
  cert.min_eig = std::numeric_limits<double>::infinity();
  for (const auto& b : cert.blocks) {
    cert.max_residual = std::max(cert.max_residual, b.residual);
    cert.min_eig = std::min(cert.min_eig, b.min_eig);
  }
  if (cert.blocks.empty()) cert.min_eig = 0.0;
}

}  // namespace

std::optional<GramCertificate> recover(const SosProgram& prog, const SdpSolution& sol, const CompileOptions& options) {
  if (sol.status != SdpStatus::kOptimal) return std::nullopt;
  const CompiledLayout lay = make_layout(prog, options);
  GramCertificate cert;
  cert.nvars = prog.nvars();
  const Eigen::MatrixXd* diag = lay.diag_block >= 0 ? &sol.X.at(static_cast<std::size_t>(lay.diag_block)) : nullptr;
  if (lay.free_block >= 0) {
    const Eigen::MatrixXd& F = sol.X.at(static_cast<std::size_t>(lay.free_block));
    for (int id = 0; id < lay.nvars_free; ++id) cert.values[id] = F(id, id);
  }
  const double t = options.interior_margin ? (*diag)(lay.margin_index, lay.margin_index) : 0.0;

  for (std::size_t k = 0; k < prog.constraints().size(); ++k) {
    const auto& c = prog.constraints()[k];
    GramBlock b;
    b.name = c.name;
    b.basis = c.basis;
    const int sz = static_cast<int>(c.basis.size());
    if (lay.block_of[k] >= 0) {
      const Eigen::MatrixXd& X = sol.X.at(static_cast<std::size_t>(lay.block_of[k]));
      b.gram = 0.5 * (X + X.transpose()) + t * Eigen::MatrixXd::Identity(sz, sz);
    } else {
      b.gram = Eigen::MatrixXd::Zero(0, 0);
    }
    b.expression = c.expression.substitute(cert.values) - c.floor;
    b.residual = max_coeff_abs(b.expression - (b.basis.empty() ? Polynomial(prog.nvars()) : gram_polynomial(b.basis, b.gram)));
    b.min_eig = jacobi_min_eigenvalue(b.gram);
    cert.blocks.push_back(std::move(b));
  }
  summarize(cert);
  return cert;
}

VerificationReport verify_certificate(const GramCertificate& cert, double tol_identity, double tol_eig) {
  VerificationReport r;
  r.min_eig = std::numeric_limits<double>::infinity();
  std::string worst_block;
  for (const auto& b : cert.blocks) {
    const Polynomial rebuilt = b.basis.empty() ? Polynomial(b.expression.nvars()) : gram_polynomial(b.basis, b.gram);
    const double res = max_coeff_abs(b.expression - rebuilt);
    const double eig = jacobi_min_eigenvalue(b.gram);
    if (res > r.residual) {
      r.residual = res;
      worst_block = b.name;
    }
    r.min_eig = std::min(r.min_eig, eig);
  }
  if (cert.blocks.empty()) r.min_eig = 0.0;
  std::ostringstream os;
  if (r.residual > tol_identity) os << "identity residual " << r.residual << " exceeds " << tol_identity << " (block '" << worst_block << "')";
  if (r.min_eig < -tol_eig) {
    if (os.tellp() > 0) os << "; ";
    os << "Gram min eigenvalue " << r.min_eig << " below " << -tol_eig;
  }
  r.reason = os.str();
  r.pass = r.reason.empty();
  return r;
}

namespace {

// Adds weight * tr(X_k) to the cost of every PSD block, against the sense.
SdpInstance with_trace_penalty(SdpInstance inst, double weight) {
  const double sign = inst.sense == ObjectiveSense::kMaximize ? -1.0 : 1.0;
  for (auto& b : inst.blocks) {
    if (b.kind != BlockKind::kPsd) continue;
    if (b.cost.size() == 0) b.cost = Eigen::MatrixXd::Zero(b.size, b.size);
    b.cost.diagonal().array() += sign * weight;
  }
  return inst;
}

SdpSolution solve_penalized(const SdpInstance& inst, const SosSolveOptions& options) {
  double weight = options.sdp.method == SdpMethod::kInteriorPoint ? options.gram_trace_weight : 0.0;
  SdpSolution sol = solve(weight > 0.0 ? with_trace_penalty(inst, weight) : inst, options.sdp);
  for (int k = 0; k < 2 && weight > 0.0 && sol.status == SdpStatus::kMaxIter; ++k) {
    weight *= 10.0;
    sol = solve(with_trace_penalty(inst, weight), options.sdp);
  }
  return sol;
}

}  // namespace

SosResult solve_sos(const SosProgram& prog, const SosSolveOptions& options) {
  SosResult res;
  CompileOptions plain;
  CompileOptions interior;
  interior.interior_margin = true;

  if (!prog.has_objective()) {
    const CompileOptions& opts = options.polish ? interior : plain;
    const SdpSolution sol = solve_penalized(compile(prog, opts), options);
    res.status = sol.status;
    res.iterations = sol.iterations;
    res.message = sol.message;
    res.certificate = recover(prog, sol, opts);
    return res;
  }

  const SdpSolution sol = solve_penalized(compile(prog, plain), options);
  res.status = sol.status;
  res.iterations = sol.iterations;
  res.message = sol.message;
  if (sol.status != SdpStatus::kOptimal) return res;
  res.certificate = recover(prog, sol, plain);
  res.optimal_objective = prog.objective().evaluate(res.certificate->values);
  res.objective = res.optimal_objective;
  if (!options.polish) return res;

  const double opt = res.optimal_objective;
  const double backoff = std::max(options.abs_backoff, options.rel_backoff * std::max(1.0, std::abs(opt)));
  SosProgram fixed = prog;
  if (prog.sense() == ObjectiveSense::kMaximize) {
    fixed.add_nonnegative(prog.objective() - AffineExpr(opt - backoff));
  } else {
    fixed.add_nonnegative(AffineExpr(opt + backoff) - prog.objective());
  }
  const SdpSolution pol = solve_penalized(compile(fixed, interior), options);
  res.iterations += pol.iterations;
  if (pol.status != SdpStatus::kOptimal) {
    res.message = "polish step failed (" + pol.message + "); returning the unpolished certificate";
    return res;
  }
  auto polished = recover(fixed, pol, interior);
  // The extra scalar constraint adds no Gram block, so the block list matches.
  res.certificate = std::move(polished);
  res.objective = prog.objective().evaluate(res.certificate->values);
  return res;
}

SamplingReport sample_minimum(const Polynomial& p, const std::vector<Polynomial>& region, double half_width,
                              int samples, std::uint64_t seed) {
  SamplingReport r;
  r.min_value = std::numeric_limits<double>::infinity();
  const int n = p.nvars();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-half_width, half_width);
  const FlatPolynomial fp(p);
  std::vector<FlatPolynomial> fr;
  for (const auto& q : region) fr.emplace_back(q);
  std::vector<double> x(static_cast<std::size_t>(n));
  const long long limit = 1000LL * std::max(samples, 1);
  while (r.samples < samples && r.proposals < limit) {
    for (auto& xi : x) xi = dist(rng);
    ++r.proposals;
    bool inside = true;
    for (const auto& q : fr) {
      if (q(x) < 0.0) {
        inside = false;
        break;
      }
    }
    if (!inside) continue;
    ++r.samples;
    const double v = fp(x);
    if (v < r.min_value) {
      r.min_value = v;
      r.argmin = x;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const AffineExpr& e) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& [id, w] : e.terms()) terms.push_back({id, w});
  return {{"constant", e.constant()}, {"terms", terms}};
}

nlohmann::json to_json(const DecisionPoly& p) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [m, c] : p.terms()) {
    nlohmann::json t = to_json(c);
    t["exponents"] = m.exponents();
    arr.push_back(t);
  }
  return arr;
}

nlohmann::json to_json(const SosProgram& prog) {
  nlohmann::json j;
  j["nvars"] = prog.nvars();
  j["variables"] = nlohmann::json::array();
  for (const auto& v : prog.vars()) j["variables"].push_back({{"id", v.id}, {"description", v.description}});
  j["objective"] = to_json(prog.objective());
  j["objective"]["sense"] = prog.sense() == ObjectiveSense::kMaximize ? "max" : "min";
  j["constraints"] = nlohmann::json::array();
  for (const auto& c : prog.constraints()) {
    nlohmann::json basis = nlohmann::json::array();
    for (const auto& m : c.basis) basis.push_back(m.exponents());
    j["constraints"].push_back({{"name", c.name},
                                {"kind", c.floor == 0.0 ? "sos" : "sos_with_floor"},
                                {"floor", c.floor},
                                {"basis", basis},
                                {"expression", to_json(c.expression)}});
  }
  j["scalar_constraints"] = nlohmann::json::array();
  for (const auto& s : prog.scalar_constraints()) {
    nlohmann::json e = to_json(s.expr);
    e["relation"] = s.equality ? "eq" : "ge";
    j["scalar_constraints"].push_back(e);
  }
  return j;
}

nlohmann::json to_json(const GramCertificate& cert) {
  nlohmann::json j;
  j["nvars"] = cert.nvars;
  j["values"] = nlohmann::json::array();
  for (const auto& [id, v] : cert.values) j["values"].push_back({id, v});
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : cert.blocks) {
    nlohmann::json basis = nlohmann::json::array();
    for (const auto& m : b.basis) basis.push_back(m.exponents());
    std::vector<double> gram;
    for (Eigen::Index r = 0; r < b.gram.rows(); ++r) {
      for (Eigen::Index c = 0; c < b.gram.cols(); ++c) gram.push_back(b.gram(r, c));
    }
    j["blocks"].push_back({{"name", b.name},
                           {"basis", basis},
                           {"gram", gram},
                           {"expression", to_json(b.expression)},
                           {"residual", b.residual},
                           {"min_eig", b.min_eig}});
  }
  j["max_residual"] = cert.max_residual;
  j["min_eig"] = cert.min_eig;
  return j;
}

GramCertificate certificate_from_json(const nlohmann::json& j) {
  GramCertificate cert;
  cert.nvars = j.at("nvars").get<int>();
  if (j.contains("values")) {
    for (const auto& v : j.at("values")) cert.values[v.at(0).get<int>()] = v.at(1).get<double>();
  }
  for (const auto& jb : j.at("blocks")) {
    GramBlock b;
    b.name = jb.value("name", "");
    for (const auto& m : jb.at("basis")) {
      b.basis.emplace_back(m.get<std::vector<int>>());
      if (b.basis.back().nvars() != cert.nvars) throw DimensionError("certificate: basis monomial has wrong length");
    }
    const auto gram = jb.at("gram").get<std::vector<double>>();
    const auto sz = static_cast<Eigen::Index>(b.basis.size());
    if (static_cast<Eigen::Index>(gram.size()) != sz * sz) throw DimensionError("certificate: Gram size does not match basis");
    b.gram.resize(sz, sz);
    for (Eigen::Index r = 0; r < sz; ++r) {
      for (Eigen::Index c = 0; c < sz; ++c) b.gram(r, c) = gram[static_cast<std::size_t>(r * sz + c)];
    }
    b.expression = polynomial_from_json(jb.at("expression"), cert.nvars);
    b.residual = jb.value("residual", 0.0);
    b.min_eig = jb.value("min_eig", 0.0);
    cert.blocks.push_back(std::move(b));
  }
  summarize(cert);
  return cert;
}

nlohmann::json to_json(const VerificationReport& r) {
  return {{"pass", r.pass}, {"residual", r.residual}, {"min_eig", r.min_eig}, {"reason", r.reason}};
}

}  // namespace cbfsos
