#include <cmath>
#include <random>

#include "cbfsos/sos.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cbfsos;
using cbfsos::testing::X;

namespace {

Polynomial motzkin() {
  const Polynomial x = X(0), y = X(1);
  return x * x * x * x * y * y + x * x * y * y * y * y - 3.0 * x * x * y * y + 1.0;
}

SosResult certify(const Polynomial& p, SdpMethod method = SdpMethod::kInteriorPoint) {
  SosProgram prog(p.nvars());
  prog.add_sos(DecisionPoly(p), "p");
  SosSolveOptions opts;
  opts.sdp.method = method;
  return solve_sos(prog, opts);
}

const SdpMethod kMethods[] = {SdpMethod::kSplitting, SdpMethod::kInteriorPoint};

}  // namespace

TEST_CASE("decision polynomial sizes") {
  SosProgram prog(2);
  CHECK(prog.decision_poly(1).terms().size() == 3);
  CHECK(prog.decision_poly(2).terms().size() == 6);
  SosProgram one(1);
  const DecisionPoly even = one.decision_poly(2, Parity::kEven);
  REQUIRE(even.terms().size() == 2);
  CHECK(even.terms().begin()->first.degree() == 0);
  CHECK(even.terms().rbegin()->first.degree() == 2);
  CHECK(one.vars().size() == 2);
}

TEST_CASE("affinity guard rejects bilinear products") {
  SosProgram prog(2);
  const DecisionPoly a = prog.decision_poly(1);
  const DecisionPoly b = prog.decision_poly(1);
  CHECK_THROWS_AS(a * b, BilinearError);
  CHECK_NOTHROW(a * DecisionPoly(X(0)));
  CHECK_NOTHROW(DecisionPoly(X(1) * X(1)) * b);
  // Derivatives stay affine.
  const DecisionPoly d = lie_derivative(PolyVector{-X(1), -X(0)}, a);
  CHECK(d.has_vars());
}

TEST_CASE("Gram basis pruning") {
  // Motzkin: only 1, x1x2, x1^2x2, x1x2^2 survive.
  const auto basis = gram_basis(DecisionPoly(motzkin()));
  REQUIRE(basis.size() == 4);
  CHECK(basis[0].exponents() == std::vector<int>{0, 0});
  CHECK(basis[1].exponents() == std::vector<int>{1, 1});
  CHECK(basis[2].exponents() == std::vector<int>{2, 1});
  CHECK(basis[3].exponents() == std::vector<int>{1, 2});

  const Polynomial sq = (X(0) + X(1)) * (X(0) + X(1));
  const auto b2 = gram_basis(DecisionPoly(sq));
  REQUIRE(b2.size() == 2);
  CHECK(b2[0].exponents() == std::vector<int>{1, 0});
  CHECK(gram_basis(DecisionPoly(Polynomial(2))).empty());
}

TEST_CASE("compile counts for x^2 over the basis {1, x}") {
  SosProgram prog(1);
  const Polynomial x = Polynomial::variable(1, 0);
  prog.add_sos_with_basis(DecisionPoly(x * x), monomial_basis(1, 1), "x2");
  const SdpInstance inst = compile(prog);
  REQUIRE(inst.blocks.size() == 1);
  CHECK(inst.blocks[0].size == 2);
  CHECK(inst.num_rows() == 3);
}

TEST_CASE("compile is deterministic") {
  auto build = [] {
    SosProgram prog(2);
    const DecisionPoly lam = prog.decision_poly(2, Parity::kAll, "lam");
    const CoeffVar eta = prog.new_var("eta");
    prog.add_sos(lam, "lam", 1e-3);
    prog.add_sos(lam * DecisionPoly(testing::h_example()) - AffineExpr::var(eta), "main");
    prog.set_objective(AffineExpr::var(eta), ObjectiveSense::kMaximize);
    return prog;
  };
  const SdpInstance a = compile(build());
  const SdpInstance b = compile(build());
  CHECK(a == b);
  CHECK(to_json(a).dump() == to_json(b).dump());
}

TEST_CASE("unreferenced variables are rejected at compile time") {
  SosProgram prog(1);
  prog.new_var("orphan");
  prog.add_sos(DecisionPoly(Polynomial::constant(1, 1.0)), "one");
  CHECK_THROWS_AS(compile(prog), std::invalid_argument);
}

TEST_CASE("perfect square round trip") {
  const Polynomial sq = (X(0) + X(1)) * (X(0) + X(1));
  for (const SdpMethod method : kMethods) {
    CAPTURE(static_cast<int>(method));
    const SosResult r = certify(sq, method);
    REQUIRE(r.status == SdpStatus::kOptimal);
    REQUIRE(r.certificate.has_value());
    CHECK(r.certificate->max_residual <= 1e-8);
    CHECK(r.certificate->min_eig >= -1e-8);
    CHECK(verify_certificate(*r.certificate).pass);
  }
  const SosResult res = certify(sq);
  REQUIRE(res.certificate.has_value());

  // The hand Gram matrix [[1,1],[1,1]] over (x1, x2) also verifies.
  GramCertificate hand = *res.certificate;
  hand.blocks[0].gram = Eigen::Matrix2d::Ones();
  CHECK(verify_certificate(hand).pass);
  CHECK(verify_certificate(hand).residual <= 1e-15);
}

TEST_CASE("zero polynomial is trivially SOS") {
  const SosResult res = certify(Polynomial(2));
  REQUIRE(res.certificate.has_value());
  CHECK(verify_certificate(*res.certificate).pass);
}

TEST_CASE("verify_certificate catches corrupted certificates") {
  const Polynomial sq = (X(0) + X(1)) * (X(0) + X(1));
  const SosResult res = certify(sq);
  REQUIRE(res.certificate.has_value());
  GramCertificate bad = *res.certificate;
  bad.blocks[0].gram(0, 0) += 0.1;
  const VerificationReport rep = verify_certificate(bad);
  CHECK_FALSE(rep.pass);
  CHECK(rep.residual == doctest::Approx(0.1).epsilon(1e-6));

  GramCertificate indef;
  indef.nvars = 2;
  GramBlock b;
  b.name = "indefinite";
  b.basis = monomial_basis(2, 1, false);
  b.gram = Eigen::Matrix2d::Zero();
  b.gram(0, 0) = 1.0;
  b.gram(1, 1) = -0.5;
  b.expression = gram_polynomial(b.basis, b.gram);
  indef.blocks.push_back(b);
  const VerificationReport r2 = verify_certificate(indef);
  CHECK_FALSE(r2.pass);
  CHECK(r2.residual == 0.0);
  CHECK(r2.min_eig == doctest::Approx(-0.5));
}

TEST_CASE("Jacobi eigenvalues agree with a closed form") {
  Eigen::Matrix2d A;
  A << 2, 1, 1, 2;
  CHECK(jacobi_min_eigenvalue(A) == doctest::Approx(1.0).epsilon(1e-14));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 20; ++t) {
    Eigen::MatrixXd M(6, 6);
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) M(i, j) = nd(rng);
    }
    M = 0.5 * (M + M.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    CHECK(jacobi_min_eigenvalue(M) == doctest::Approx(es.eigenvalues().minCoeff()).epsilon(1e-10));
  }
}

TEST_CASE("random SOS quartics certify") {
  for (const SdpMethod method : kMethods) {
    std::mt19937_64 rng(42);
    for (int t = 0; t < 5; ++t) {
      CAPTURE(static_cast<int>(method));
      CAPTURE(t);
      const Polynomial p = testing::random_sos_quartic(rng);
      const SosResult res = certify(p, method);
      REQUIRE(res.certificate.has_value());
      const VerificationReport rep = verify_certificate(*res.certificate);
      CHECK(rep.pass);
      CHECK(rep.residual <= 1e-6);
      CHECK(rep.min_eig >= -1e-7);
    }
  }
}

TEST_CASE("Motzkin polynomial has no certificate") {
  for (const SdpMethod method : kMethods) {
    CAPTURE(static_cast<int>(method));
    const SosResult res = certify(motzkin(), method);
    CHECK(res.status == SdpStatus::kInfeasible);
    CHECK_FALSE(res.certificate.has_value());
  }
  // It is nonnegative everywhere, so sampling never goes negative.
  const SamplingReport s = sample_minimum(motzkin(), {}, 2.0, 100000, 3);
  CHECK(s.min_value >= 0.0);
}

TEST_CASE("S-procedure with a constant multiplier") {
  SosProgram prog(1);
  const Polynomial x = Polynomial::variable(1, 0);
  const Polynomial p0 = 2.0 - x * x;
  const SProcedure sp = prog.s_procedure(DecisionPoly(p0), {1.0 - x * x}, {0}, "contain");
  const SosResult res = solve_sos(prog);
  REQUIRE(res.certificate.has_value());
  CHECK(verify_certificate(*res.certificate).pass);
  const double s1 = sp.multipliers[0].substitute(res.certificate->values)(std::vector<double>{0.0});
  // Any 0 <= s1 <= 2 works; the residual 2 - s1 + (s1 - 1) x^2 needs s1 >= 1.
  CHECK(s1 >= 1.0 - 1e-6);
  CHECK(s1 <= 2.0 + 1e-6);
  const SamplingReport samp = sample_minimum(sp.p0.substitute(res.certificate->values), sp.region, 3.0, 10000, 7);
  CHECK(samp.samples == 10000);
  CHECK(samp.min_value >= -1e-6);
}

TEST_CASE("S-procedure on an empty-certificate instance is infeasible") {
  SosProgram prog(1);
  const Polynomial x = Polynomial::variable(1, 0);
  prog.s_procedure(DecisionPoly(Polynomial::constant(1, -1.0)), {1.0 - x * x}, {2}, "neg");
  const SosResult res = solve_sos(prog);
  CHECK(res.status != SdpStatus::kOptimal);
  CHECK_FALSE(res.certificate.has_value());
}

TEST_CASE("S-procedure rejects odd leading degree") {
  SosProgram prog(1);
  const Polynomial x = Polynomial::variable(1, 0);
  CHECK_THROWS_AS(prog.s_procedure(DecisionPoly(Polynomial::constant(1, 1.0)), {x}, {0}, "odd"), DegreeError);
  CHECK_THROWS_AS(prog.s_procedure(DecisionPoly(Polynomial::constant(1, 1.0)), {x * x}, {1}, "odd"), DegreeError);
  CHECK_THROWS_AS(prog.s_procedure(DecisionPoly(Polynomial::constant(1, 1.0)), {x * x}, {}, "count"), std::invalid_argument);
}

TEST_CASE("maximization with polish keeps the certificate valid") {
  // max eta s.t. 2 - eta + x^2 in Sigma  -> eta* = 2.
  SosProgram prog(1);
  const Polynomial x = Polynomial::variable(1, 0);
  const CoeffVar eta = prog.new_var("eta");
  prog.add_sos(DecisionPoly(2.0 + x * x) - AffineExpr::var(eta), "main");
  prog.set_objective(AffineExpr::var(eta), ObjectiveSense::kMaximize);
  const SosResult res = solve_sos(prog);
  REQUIRE(res.certificate.has_value());
  CHECK(res.optimal_objective == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(res.objective <= res.optimal_objective);
  CHECK(res.objective >= res.optimal_objective - 2.1e-4);
  CHECK(verify_certificate(*res.certificate).pass);
  CHECK(res.certificate->min_eig > 0.0);
}

TEST_CASE("certificate JSON round trip") {
  const SosResult res = certify((X(0) - 2.0 * X(1)) * (X(0) - 2.0 * X(1)) + 1.0);
  REQUIRE(res.certificate.has_value());
  const GramCertificate back = certificate_from_json(nlohmann::json::parse(to_json(*res.certificate).dump()));
  const VerificationReport a = verify_certificate(*res.certificate);
  const VerificationReport b = verify_certificate(back);
  CHECK(a.pass == b.pass);
  CHECK(a.residual == b.residual);
  CHECK(a.min_eig == b.min_eig);
  CHECK(to_json(back).dump() == to_json(*res.certificate).dump());
}
