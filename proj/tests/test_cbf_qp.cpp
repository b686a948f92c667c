#include <cmath>
#include <random>

#include "cbfsos/cbf_qp.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cbfsos;
using cbfsos::testing::X;

namespace {

SystemModel example_model(const Polynomial& lambda = Polynomial::constant(2, 1.0), Variant variant = Variant::kModified) {
  SystemModel m;
  m.n = 2;
  m.m = 1;
  m.f = {-X(1), -X(0)};
  m.g = PolyMatrix(2, 1, 2);
  m.g(1, 0) = Polynomial::constant(2, 1.0);
  m.u_nom = {Polynomial(2)};
  m.V = X(0) * X(0) + X(1) * X(1);
  m.gamma_c = 1.0;
  m.h = testing::h_example();
  m.lambda = lambda;
  m.p = 1.0;
  m.variant = variant;
  return m;
}

Polynomial random_poly(std::mt19937_64& rng, int degree, bool constant) {
  std::normal_distribution<double> nd;
  Polynomial out(2);
  for (const auto& m : monomial_basis(2, degree, constant)) out += Polynomial::monomial(m, nd(rng));
  return out;
}

SystemModel random_model(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.2, 3.0);
  std::normal_distribution<double> nd;
  SystemModel m;
  m.n = 2;
  m.m = 2;
  m.f = {random_poly(rng, 2, false), random_poly(rng, 2, false)};
  m.g = PolyMatrix(2, 2, 2);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) m.g(r, c) = random_poly(rng, 1, true);
  }
  m.u_nom = {random_poly(rng, 1, false), random_poly(rng, 1, false)};
  const double a = pos(rng), b = pos(rng), c = 0.9 * std::tanh(nd(rng)) * std::sqrt(a * b);
  m.V = a * X(0) * X(0) + 2.0 * c * X(0) * X(1) + b * X(1) * X(1);
  m.gamma_c = pos(rng);
  m.h = random_poly(rng, 2, false) + pos(rng);
  const Polynomial q = random_poly(rng, 1, true);
  m.lambda = q * q + 0.01;
  m.p = pos(rng);
  return m;
}

std::vector<std::vector<double>> sample_states(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-10.0, 10.0);
  std::vector<std::vector<double>> out;
  for (int k = 0; k < count; ++k) out.push_back({d(rng), d(rng)});
  return out;
}

}  // namespace

TEST_CASE("filter terms at (1, -1) by substitution") {
  const std::vector<double> x{1.0, -1.0};
  const FilterTerms t = eval_terms(example_model(), x);
  // b1 = -0.15 + 0.2, h = 4.9 - 0.1 + 0.15 - 0.1, L_f h = 0.15 - 0.4 + 0.15.
  CHECK(t.b1(0) == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(t.h == doctest::Approx(4.85).epsilon(1e-14));
  CHECK(t.F_lambda == doctest::Approx(-0.1 + 4.85).epsilon(1e-14));
  // L_f V = -4 x1 x2 = 4, gamma V = 2.
  CHECK(t.F_V == doctest::Approx(6.0).epsilon(1e-14));
  CHECK(t.b2(0) == doctest::Approx(-2.0).epsilon(1e-14));
}

TEST_CASE("closed form at (1, -1)") {
  const std::vector<double> x{1.0, -1.0};
  const FilterOutput out = solve_filter(example_model(), x);
  CHECK(out.region == RegionTag::kClfCbfbar);
  CHECK(out.u_prime(0) == doctest::Approx(2.4).epsilon(1e-14));
  CHECK(out.delta == doctest::Approx(1.2).epsilon(1e-14));
  CHECK(out.objective == doctest::Approx(7.2).epsilon(1e-14));
  const FilterOutput oracle = qp_oracle(example_model(), x);
  CHECK(std::abs(oracle.u_prime(0) - 2.4) <= 1e-12);
}

TEST_CASE("origin of the example") {
  const std::vector<double> x{0.0, 0.0};
  const FilterTerms t = eval_terms(example_model(), x);
  CHECK(t.F_V == 0.0);
  CHECK(t.b2(0) == 0.0);
  CHECK(t.F_lambda == doctest::Approx(4.9));
  const FilterOutput out = solve_filter(example_model(), x);
  CHECK(out.region == RegionTag::kClfCbfbar);
  CHECK(out.u_prime(0) == 0.0);
  CHECK(out.delta == 0.0);
}

TEST_CASE("region predicates on constructed terms") {
  FilterTerms t;
  t.b1 = Eigen::VectorXd::Constant(1, 0.5);
  t.b2 = Eigen::VectorXd::Constant(1, 1.0);

  t.F_V = -1.0;
  t.F_lambda = 2.0;
  CHECK(classify_region(t, 1.0) == RegionTag::kClfbarCbfbar);
  CHECK(solve_from_terms(t, 1.0, {}).u_prime(0) == 0.0);

  // CBF active, CLF inactive.
  t.F_V = -10.0;
  t.F_lambda = -1.0;
  CHECK(classify_region(t, 1.0) == RegionTag::kClfbarCbf2);
  const FilterOutput o = solve_from_terms(t, 1.0, {});
  CHECK(t.F_lambda + t.b1.dot(o.u_prime) == doctest::Approx(0.0));
  CHECK(o.objective == doctest::Approx(t.F_lambda * t.F_lambda / t.b1.squaredNorm()).epsilon(1e-15));

  // b1 = 0 with F_lambda = 0.
  t.b1.setZero();
  t.F_lambda = 0.0;
  t.F_V = -1.0;
  CHECK(classify_region(t, 1.0) == RegionTag::kClfbarCbf1);
  t.F_V = 1.0;
  CHECK(classify_region(t, 1.0) == RegionTag::kClfCbf1);

  // Invalid barrier: b1 = 0 and F_lambda < 0 matches nothing.
  t.F_lambda = -1.0;
  CHECK(count_regions(t, 1.0) == 0);
  CHECK_THROWS_AS(classify_region(t, 1.0), PartitionError);
  CHECK_THROWS_AS(qp_oracle(t, 1.0), PartitionError);
}

TEST_CASE("ill-conditioned doubly active system aborts") {
  FilterTerms t;
  t.F_lambda = -1.0;
  t.F_V = 1.0;
  t.b1 = Eigen::VectorXd::Constant(1, 1e-8);
  t.b2 = Eigen::VectorXd::Constant(1, 1.0);
  REQUIRE(classify_region(t, 1.0) == RegionTag::kClfCbf2);
  const std::vector<double> x{3.0, 4.0};
  try {
    solve_from_terms(t, 1.0, x);
    FAIL("expected SingularSystemError");
  } catch (const SingularSystemError& e) {
    CHECK(e.state() == x);
  }
}

TEST_CASE("closed form agrees with the active-set oracle") {
  for (Variant v : {Variant::kAmes, Variant::kTan, Variant::kModified}) {
    const FilterEvaluator ev(example_model(Polynomial::constant(2, 1.0), v));
    for (const auto& x : sample_states(10000, 5)) {
      const FilterTerms t = ev.terms(x);
      const FilterOutput a = solve_from_terms(t, 1.0, x);
      const FilterOutput b = qp_oracle(t, 1.0);
      CHECK((a.u_prime - b.u_prime).cwiseAbs().maxCoeff() <= 1e-6);
      CHECK(std::abs(a.objective - b.objective) <= 1e-8 * std::max(1.0, std::abs(b.objective)));
    }
  }
}

TEST_CASE("partition and constraint satisfaction on random models") {
  std::mt19937_64 rng(77);
  int states = 0;
  for (int k = 0; k < 5; ++k) {
    const SystemModel model = random_model(rng);
    const FilterEvaluator ev(model);
    for (const auto& x : sample_states(20000, 100 + k)) {
      const FilterTerms t = ev.terms(x);
      if (t.b1.squaredNorm() == 0.0 && t.F_lambda < 0.0) continue;
      ++states;
      REQUIRE(count_regions(t, model.p) == 1);
      const FilterOutput a = solve_from_terms(t, model.p, x);
      const double scale = 1.0 + std::abs(t.F_lambda) + std::abs(t.F_V);
      CHECK(t.F_lambda + t.b1.dot(a.u_prime) >= -1e-9 * scale);
      CHECK(t.F_V + t.b2.dot(a.u_prime) <= a.delta + 1e-9 * scale);
      const FilterOutput b = qp_oracle(t, model.p);
      CHECK((a.u_prime - b.u_prime).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, b.u_prime.norm()));
    }
  }
  CHECK(states == 100000);
}

TEST_CASE("constant multiplier collapses modified onto tan") {
  const FilterEvaluator mod(example_model(Polynomial::constant(2, 1.0), Variant::kModified));
  const FilterEvaluator tan(example_model(Polynomial::constant(2, 1.0), Variant::kTan));
  for (const auto& x : sample_states(2000, 9)) {
    const FilterOutput a = mod.solve(x);
    const FilterOutput b = tan.solve(x);
    CHECK(a.u_prime(0) == b.u_prime(0));
    CHECK(a.delta == b.delta);
    CHECK(a.region == b.region);
  }
}

TEST_CASE("zero correction at the origin for a CLF-compatible nominal input") {
  SystemModel m = example_model();
  m.u_nom = {2.0 * X(0) - X(1)};
  m.V = 1.5 * X(0) * X(0) - X(0) * X(1) + X(1) * X(1);
  m.gamma_c = 0.5;
  const FilterOutput out = solve_filter(m, std::vector<double>{0.0, 0.0});
  CHECK(out.u_prime(0) == 0.0);
  CHECK(out.delta == 0.0);
}

TEST_CASE("model validation") {
  SystemModel m = example_model();
  CHECK_NOTHROW(m.validate());
  SystemModel bad = m;
  bad.f[0] = bad.f[0] + 1.0;
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = m;
  bad.V = X(0) * X(0) - X(1) * X(1);
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = m;
  bad.variant = Variant::kTan;
  bad.lambda = 1.0 + X(0) * X(0);
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = m;
  bad.variant = Variant::kAmes;
  bad.u_nom = {X(0)};
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = m;
  bad.p = 0.0;
  CHECK_THROWS_AS(bad.validate(), ModelError);
}

TEST_CASE("model JSON round trip and shipped model") {
  const SystemModel m = example_model();
  const SystemModel back = model_from_json(nlohmann::json::parse(to_json(m).dump()));
  CHECK(back.h == m.h);
  CHECK(back.V == m.V);
  CHECK(back.g(1, 0) == m.g(1, 0));
  CHECK(to_json(back).dump() == to_json(m).dump());

  const SystemModel shipped = load_model(std::string(CBFSOS_SOURCE_DIR) + "/models/example_vi.json");
  CHECK(to_json(shipped).dump() == to_json(m).dump());
  CHECK_THROWS_AS(model_from_json(nlohmann::json::parse(R"({"n": 2})")), ModelError);
  CHECK_THROWS_AS(load_model("/nonexistent/model.json"), ModelError);
}
