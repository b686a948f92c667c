// Brute-force active-set solution of
//   min |u'|^2 + p delta^2
//   s.t. F_lambda + b1 u' >= 0,  F_V + b2 u' <= delta
// used to cross-check the closed form. Works in z = (u', delta) with
// H = diag(I, p) and constraints G z >= r.

#include <cmath>
#include <limits>

#include "cbfsos/cbf_qp.hpp"

namespace cbfsos {

FilterOutput qp_oracle(const FilterTerms& t, double p) {
  const Eigen::Index m = t.b1.size();
  const Eigen::Index nz = m + 1;
  Eigen::VectorXd Hinv = Eigen::VectorXd::Ones(nz);
  Hinv(m) = 1.0 / p;

  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(2, nz);
  G.row(0).head(m) = t.b1.transpose();
  G.row(1).head(m) = -t.b2.transpose();
  G(1, m) = 1.0;
  const Eigen::Vector2d r(-t.F_lambda, t.F_V);
  const double scale = 1.0 + std::abs(t.F_lambda) + std::abs(t.F_V) + t.b1.norm() + t.b2.norm();

  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_z;
  int best_set = -1;
  for (int set = 0; set < 4; ++set) {
    std::vector<int> active;
    if (set & 1) active.push_back(0);
    if (set & 2) active.push_back(1);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(nz);
    if (!active.empty()) {
      const auto k = static_cast<Eigen::Index>(active.size());
      Eigen::MatrixXd GS(k, nz);
      Eigen::VectorXd rS(k);
      for (Eigen::Index a = 0; a < k; ++a) {
        GS.row(a) = G.row(active[static_cast<std::size_t>(a)]);
        rS(a) = r(active[static_cast<std::size_t>(a)]);
      }
      // Stationarity 2 H z = GS^T mu with GS z = rS:
      // (GS H^-1 GS^T) mu = 2 rS.
      const Eigen::MatrixXd K = GS * Hinv.asDiagonal() * GS.transpose();
      Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
      if (lu.rank() < k) continue;
      const Eigen::VectorXd mu = lu.solve(2.0 * rS);
      if ((mu.array() < -1e-12 * (1.0 + mu.cwiseAbs().maxCoeff())).any()) continue;
      z = 0.5 * Hinv.asDiagonal() * (GS.transpose() * mu);
    }
    const double feas_tol = 1e-10 * (scale + G.norm() * z.norm());
    if (((G * z - r).array() < -feas_tol).any()) continue;
    const double obj = z.head(m).squaredNorm() + p * z(m) * z(m);
    if (obj < best) {
      best = obj;
      best_z = z;
      best_set = set;
    }
  }
  if (best_set < 0) throw PartitionError("qp_oracle: no feasible active set (b1 = 0 with F_lambda < 0)");

  FilterOutput out;
  out.u_prime = best_z.head(m);
  out.delta = best_z(m);
  out.objective = best;
  const bool b1_zero = t.b1.squaredNorm() == 0.0;
  switch (best_set) {
    case 0:
      out.region = RegionTag::kClfbarCbfbar;
      break;
    case 1:
      out.region = b1_zero ? RegionTag::kClfbarCbf1 : RegionTag::kClfbarCbf2;
      break;
    case 2:
      out.region = RegionTag::kClfCbfbar;
      break;
    default:
      out.region = RegionTag::kClfCbf2;
      break;
  }
  return out;
}

FilterOutput qp_oracle(const SystemModel& model, std::span<const double> x) {
  const FilterEvaluator ev(model);
  FilterOutput out = qp_oracle(ev.terms(x), model.p);
  out.u_total = ev.u_nom(x) + out.u_prime;
  return out;
}

}  // namespace cbfsos
