#include "cbfsos/cbf_qp.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace cbfsos {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kAmes:
      return "ames";
    case Variant::kTan:
      return "tan";
    case Variant::kModified:
      return "modified";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& s) {
  if (s == "ames") return Variant::kAmes;
  if (s == "tan") return Variant::kTan;
  if (s == "modified") return Variant::kModified;
  throw ModelError("unknown variant '" + s + "' (expected ames, tan or modified)");
}

std::string to_string(RegionTag r) {
  switch (r) {
    case RegionTag::kClfbarCbfbar:
      return "clfbar_cbfbar";
    case RegionTag::kClfbarCbf1:
      return "clfbar_cbf1";
    case RegionTag::kClfbarCbf2:
      return "clfbar_cbf2";
    case RegionTag::kClfCbfbar:
      return "clf_cbfbar";
    case RegionTag::kClfCbf1:
      return "clf_cbf1";
    case RegionTag::kClfCbf2:
      return "clf_cbf2";
  }
  return "unknown";
}

RegionTag region_from_string(const std::string& s) {
  for (RegionTag r : {RegionTag::kClfbarCbfbar, RegionTag::kClfbarCbf1, RegionTag::kClfbarCbf2, RegionTag::kClfCbfbar,
                      RegionTag::kClfCbf1, RegionTag::kClfCbf2}) {
    if (to_string(r) == s) return r;
  }
  throw std::invalid_argument("unknown region tag '" + s + "'");
}

// ---------------------------------------------------------------------------
// SystemModel

void SystemModel::validate() const {
  if (n <= 0 || m <= 0) throw ModelError("model: n and m must be positive");
  if (static_cast<int>(f.size()) != n) throw ModelError("model: f must have n entries");
  if (g.rows() != n || g.cols() != m) throw ModelError("model: g must be n x m");
  if (static_cast<int>(u_nom.size()) != m) throw ModelError("model: u_nom must have m entries");
  auto check_nvars = [&](const Polynomial& q, const char* what) {
    if (q.nvars() != n) throw ModelError(std::string("model: ") + what + " has the wrong number of variables");
  };
  for (const auto& q : f) check_nvars(q, "f");
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < m; ++c) check_nvars(g(r, c), "g");
  }
  for (const auto& q : u_nom) check_nvars(q, "u_nom");
  check_nvars(V, "V");
  check_nvars(h, "h");
  check_nvars(lambda, "lambda");
  if (!(gamma_c > 0.0)) throw ModelError("model: gamma_c must be positive");
  if (!(p > 0.0)) throw ModelError("model: p must be positive");

  const std::vector<double> origin(static_cast<std::size_t>(n), 0.0);
  for (const auto& q : f) {
    if (std::abs(q(origin)) > 1e-12) throw ModelError("model: f(0) must vanish");
  }
  if (std::abs(V(origin)) > 1e-12) throw ModelError("model: V(0) must vanish");
  std::mt19937_64 rng(0);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int k = 0; k < 256; ++k) {
    double norm2 = 0.0;
    for (auto& xi : x) {
      xi = dist(rng);
      norm2 += xi * xi;
    }
    if (norm2 < 1e-6) continue;
    if (!(V(x) > 0.0)) throw ModelError("model: V is not positive on the sample cloud");
  }
  if (variant == Variant::kTan && !lambda.is_constant()) throw ModelError("model: variant tan needs a constant lambda");
  if (variant == Variant::kAmes) {
    for (const auto& q : u_nom) {
      if (!q.is_zero()) throw ModelError("model: variant ames needs u_nom = 0");
    }
  }
}

PolyVector SystemModel::closed_loop_drift() const {
  if (variant == Variant::kAmes) return f;
  return add(f, g.apply(u_nom));
}

Polynomial SystemModel::F_lambda() const { return lie_derivative(closed_loop_drift(), h) + lambda * h; }

Polynomial SystemModel::F_V() const { return lie_derivative(closed_loop_drift(), V) + gamma_c * (fv_uses_h_arg ? h : V); }

PolyVector SystemModel::b1() const { return lie_derivative(g, h); }

PolyVector SystemModel::b2() const { return lie_derivative(g, V); }

// ---------------------------------------------------------------------------
// Regions and the closed form

namespace {

struct Predicates {
  bool p[6];
};

Predicates predicates(const FilterTerms& t, double p) {
  const double FV = t.F_V;
  const double Fl = t.F_lambda;
  const double b1sq = t.b1.squaredNorm();
  const double b2sq = t.b2.squaredNorm();
  const double c = t.b2.dot(t.b1);
  const bool b1_zero = b1sq == 0.0;
  Predicates out{};
  out.p[0] = FV < 0 && Fl > 0;
  out.p[1] = FV < 0 && Fl == 0 && b1_zero;
  out.p[2] = Fl <= 0 && FV * b1sq < Fl * c;
  out.p[3] = FV >= 0 && FV * c < Fl * (1.0 / p + b2sq);
  out.p[4] = FV >= 0 && Fl == 0 && b1_zero;
  out.p[5] = FV * b1sq >= Fl * c && FV * c >= Fl * (1.0 / p + b2sq) && !b1_zero;
  return out;
}

}  // namespace

int count_regions(const FilterTerms& t, double p) {
  const Predicates pr = predicates(t, p);
  int count = 0;
  for (bool b : pr.p) count += b ? 1 : 0;
  return count;
}

RegionTag classify_region(const FilterTerms& t, double p) {
  const Predicates pr = predicates(t, p);
  int found = -1;
  int count = 0;
  for (int k = 0; k < 6; ++k) {
    if (pr.p[k]) {
      if (found < 0) found = k;
      ++count;
    }
  }
  if (count != 1) {
    std::ostringstream os;
    os.precision(17);
    os << "region partition violated: " << count << " predicates hold (F_V=" << t.F_V << ", F_lambda=" << t.F_lambda
       << ", |b1|^2=" << t.b1.squaredNorm() << ")";
    throw PartitionError(os.str());
  }
  return static_cast<RegionTag>(found);
}

FilterOutput solve_from_terms(const FilterTerms& t, double p, std::span<const double> x) {
  FilterOutput out;
  out.region = classify_region(t, p);
  const Eigen::Index m = t.b1.size();
  const double b1sq = t.b1.squaredNorm();
  const double b2sq = t.b2.squaredNorm();
  switch (out.region) {
    case RegionTag::kClfbarCbfbar:
    case RegionTag::kClfbarCbf1:
      out.u_prime = Eigen::VectorXd::Zero(m);
      break;
    case RegionTag::kClfbarCbf2:
      out.u_prime = -t.F_lambda * t.b1 / b1sq;
      break;
    case RegionTag::kClfCbfbar:
    case RegionTag::kClfCbf1:
      out.u_prime = -t.F_V * t.b2 / (1.0 / p + b2sq);
      break;
    case RegionTag::kClfCbf2: {
      const double c = t.b2.dot(t.b1);
      Eigen::Matrix2d M;
      M << 1.0 / p + b2sq, -c, -c, b1sq;
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(M, Eigen::EigenvaluesOnly);
      const double lo = es.eigenvalues().cwiseAbs().minCoeff();
      const double hi = es.eigenvalues().cwiseAbs().maxCoeff();
      if (!(lo > 0.0) || hi / lo > 1e12) {
        std::ostringstream os;
        os << "doubly active QP system is singular or ill-conditioned (condition " << (lo > 0.0 ? hi / lo : INFINITY) << ")";
        throw SingularSystemError(os.str(), std::vector<double>(x.begin(), x.end()));
      }
      const Eigen::Vector2d v = M.inverse() * Eigen::Vector2d(t.F_V, -t.F_lambda);
      out.u_prime = -v(0) * t.b2 + v(1) * t.b1;
      break;
    }
  }
  out.delta = std::max(0.0, t.F_V + t.b2.dot(out.u_prime));
  out.objective = out.u_prime.squaredNorm() + p * out.delta * out.delta;
  return out;
}

// ---------------------------------------------------------------------------
// Evaluator

FilterEvaluator::FilterEvaluator(const SystemModel& model) : model_(model) {
  model_.validate();
  for (const auto& q : model_.closed_loop_drift()) drift_.emplace_back(q);
  for (int r = 0; r < model_.n; ++r) {
    for (int c = 0; c < model_.m; ++c) g_.emplace_back(model_.g(r, c));
  }
  for (const auto& q : model_.u_nom) u_nom_.emplace_back(q);
  F_lambda_ = FlatPolynomial(model_.F_lambda());
  F_V_ = FlatPolynomial(model_.F_V());
  for (const auto& q : model_.b1()) b1_.emplace_back(q);
  for (const auto& q : model_.b2()) b2_.emplace_back(q);
  h_ = FlatPolynomial(model_.h);
  V_ = FlatPolynomial(model_.V);
}

FilterTerms FilterEvaluator::terms(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != model_.n) throw DimensionError("filter: state length does not match n");
  FilterTerms t;
  t.F_lambda = F_lambda_(x);
  t.F_V = F_V_(x);
  t.b1.resize(model_.m);
  t.b2.resize(model_.m);
  for (int k = 0; k < model_.m; ++k) {
    t.b1(k) = b1_[static_cast<std::size_t>(k)](x);
    t.b2(k) = b2_[static_cast<std::size_t>(k)](x);
  }
  t.h = h_(x);
  t.V = V_(x);
  return t;
}

Eigen::VectorXd FilterEvaluator::u_nom(std::span<const double> x) const {
  Eigen::VectorXd u(model_.m);
  for (int k = 0; k < model_.m; ++k) u(k) = u_nom_[static_cast<std::size_t>(k)](x);
  return u;
}

Eigen::MatrixXd FilterEvaluator::g(std::span<const double> x) const {
  Eigen::MatrixXd G(model_.n, model_.m);
  for (int r = 0; r < model_.n; ++r) {
    for (int c = 0; c < model_.m; ++c) G(r, c) = g_[static_cast<std::size_t>(r * model_.m + c)](x);
  }
  return G;
}

Eigen::VectorXd FilterEvaluator::vector_field(std::span<const double> x, const Eigen::VectorXd& u) const {
  Eigen::VectorXd dx(model_.n);
  for (int r = 0; r < model_.n; ++r) dx(r) = drift_[static_cast<std::size_t>(r)](x);
  return dx + g(x) * u;
}

FilterOutput FilterEvaluator::solve(std::span<const double> x) const {
  FilterOutput out = solve_from_terms(terms(x), model_.p, x);
  out.u_total = model_.variant == Variant::kAmes ? out.u_prime : Eigen::VectorXd(u_nom(x) + out.u_prime);
  return out;
}

FilterTerms eval_terms(const SystemModel& model, std::span<const double> x) { return FilterEvaluator(model).terms(x); }

FilterOutput solve_filter(const SystemModel& model, std::span<const double> x) { return FilterEvaluator(model).solve(x); }

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json poly_list(const PolyVector& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& q : v) a.push_back(to_json(q));
  return a;
}

}  // namespace

nlohmann::json to_json(const SystemModel& model) {
  nlohmann::json j;
  j["n"] = model.n;
  j["m"] = model.m;
  j["f"] = poly_list(model.f);
  nlohmann::json g = nlohmann::json::array();
  for (int r = 0; r < model.g.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < model.g.cols(); ++c) row.push_back(to_json(model.g(r, c)));
    g.push_back(row);
  }
  j["g"] = g;
  j["u_nom"] = poly_list(model.u_nom);
  j["V"] = to_json(model.V);
  j["gamma_c"] = model.gamma_c;
  j["h"] = to_json(model.h);
  j["lambda"] = to_json(model.lambda);
  j["p"] = model.p;
  j["variant"] = to_string(model.variant);
  j["fv_uses_h_arg"] = model.fv_uses_h_arg;
  return j;
}

SystemModel model_from_json(const nlohmann::json& j) {
  SystemModel model;
  try {
    model.n = j.at("n").get<int>();
    model.m = j.at("m").get<int>();
    for (const auto& q : j.at("f")) model.f.push_back(polynomial_from_json(q, model.n));
    const auto& jg = j.at("g");
    if (static_cast<int>(jg.size()) != model.n) throw ModelError("model: g must have n rows");
    std::vector<Polynomial> entries;
    for (const auto& row : jg) {
      if (static_cast<int>(row.size()) != model.m) throw ModelError("model: every row of g needs m entries");
      for (const auto& q : row) entries.push_back(polynomial_from_json(q, model.n));
    }
    model.g = PolyMatrix(model.n, model.m, std::move(entries));
    for (const auto& q : j.at("u_nom")) model.u_nom.push_back(polynomial_from_json(q, model.n));
    model.V = polynomial_from_json(j.at("V"), model.n);
    model.gamma_c = j.at("gamma_c").get<double>();
    model.h = polynomial_from_json(j.at("h"), model.n);
    model.lambda = polynomial_from_json(j.at("lambda"), model.n);
    model.p = j.at("p").get<double>();
    model.variant = variant_from_string(j.value("variant", "modified"));
    model.fv_uses_h_arg = j.value("fv_uses_h_arg", false);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("model: ") + e.what());
  } catch (const DimensionError& e) {
    throw ModelError(std::string("model: ") + e.what());
  }
  model.validate();
  return model;
}

SystemModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("model file " + path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace cbfsos
