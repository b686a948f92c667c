#include "cbfsos/sdp.hpp"

#include "sdp_internal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cbfsos {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

// Flattened coordinates: a PSD block of size n occupies n(n+1)/2 entries
// (upper triangle, column by column, off-diagonals scaled by sqrt 2 so the
// Euclidean inner product matches the trace inner product); a diagonal
// block occupies n entries.
class Layout {
 public:
  explicit Layout(const std::vector<SdpBlock>& blocks) : blocks_(&blocks) {
    int offset = 0;
    for (const auto& b : blocks) {
      offsets_.push_back(offset);
      offset += b.kind == BlockKind::kPsd ? b.size * (b.size + 1) / 2 : b.size;
    }
    dim_ = offset;
  }

  int dim() const { return dim_; }

  // Index of (i, j) and the factor applied to the symmetric-matrix value.
  std::pair<int, double> index(int block, int i, int j) const {
    const auto& b = (*blocks_)[static_cast<std::size_t>(block)];
    if (i > j) std::swap(i, j);
    if (b.kind != BlockKind::kPsd) return {offsets_[static_cast<std::size_t>(block)] + i, 1.0};
    const int idx = offsets_[static_cast<std::size_t>(block)] + j * (j + 1) / 2 + i;
    return {idx, i == j ? 1.0 : kSqrt2};
  }

  Eigen::VectorXd pack(const std::vector<Eigen::MatrixXd>& mats) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
    for (std::size_t k = 0; k < blocks_->size(); ++k) {
      const auto& b = (*blocks_)[k];
      for (int j = 0; j < b.size; ++j) {
        if (b.kind != BlockKind::kPsd) {
          v(offsets_[k] + j) = mats[k](j, j);
          continue;
        }
        for (int i = 0; i <= j; ++i) {
          v(offsets_[k] + j * (j + 1) / 2 + i) = (i == j ? 1.0 : kSqrt2) * 0.5 * (mats[k](i, j) + mats[k](j, i));
        }
      }
    }
    return v;
  }

  Eigen::MatrixXd unpack_block(const Eigen::VectorXd& v, std::size_t k) const {
    const auto& b = (*blocks_)[k];
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(b.size, b.size);
    for (int j = 0; j < b.size; ++j) {
      if (b.kind != BlockKind::kPsd) {
        M(j, j) = v(offsets_[k] + j);
        continue;
      }
      for (int i = 0; i <= j; ++i) {
        const double val = v(offsets_[k] + j * (j + 1) / 2 + i);
        if (i == j) {
          M(i, i) = val;
        } else {
          M(i, j) = M(j, i) = val / kSqrt2;
        }
      }
    }
    return M;
  }

  std::vector<Eigen::MatrixXd> unpack(const Eigen::VectorXd& v) const {
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t k = 0; k < blocks_->size(); ++k) out.push_back(unpack_block(v, k));
    return out;
  }

  void store_block(const Eigen::MatrixXd& M, std::size_t k, Eigen::VectorXd& v) const {
    const auto& b = (*blocks_)[k];
    for (int j = 0; j < b.size; ++j) {
      for (int i = 0; i <= j; ++i) v(offsets_[k] + j * (j + 1) / 2 + i) = i == j ? M(i, i) : kSqrt2 * M(i, j);
    }
  }

  // Euclidean projection onto the product cone.
  void project_cone(Eigen::VectorXd& v) const {
    for (std::size_t k = 0; k < blocks_->size(); ++k) {
      const auto& b = (*blocks_)[k];
      if (b.kind == BlockKind::kFree) continue;
      if (b.kind == BlockKind::kNonnegDiagonal) {
        for (int j = 0; j < b.size; ++j) v(offsets_[k] + j) = std::max(0.0, v(offsets_[k] + j));
        continue;
      }
      if (b.size == 1) {
        v(offsets_[k]) = std::max(0.0, v(offsets_[k]));
        continue;
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(unpack_block(v, k));
      const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
      store_block(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose(), k, v);
    }
  }

  // Largest eigenvalue-wise violation of membership in the cone K
  // (sign = +1) or in -K (sign = -1); with dual = true the cone is K*,
  // which replaces each free block by {0}.
  double cone_violation(const Eigen::VectorXd& v, double sign, bool dual = false) const {
    double worst = 0.0;
    for (std::size_t k = 0; k < blocks_->size(); ++k) {
      const auto& b = (*blocks_)[k];
      if (b.kind == BlockKind::kFree) {
        if (dual) {
          for (int j = 0; j < b.size; ++j) worst = std::max(worst, std::abs(v(offsets_[k] + j)));
        }
        continue;
      }
      if (b.kind == BlockKind::kNonnegDiagonal) {
        for (int j = 0; j < b.size; ++j) worst = std::max(worst, -sign * v(offsets_[k] + j));
        continue;
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(unpack_block(v, k), Eigen::EigenvaluesOnly);
      const double lam = sign > 0 ? es.eigenvalues().minCoeff() : -es.eigenvalues().maxCoeff();
      worst = std::max(worst, -lam);
    }
    return worst;
  }

 private:
  const std::vector<SdpBlock>* blocks_;
  std::vector<int> offsets_;
  int dim_ = 0;
};

struct Problem {
  Eigen::MatrixXd A;  // original rows
  Eigen::VectorXd b;
  Eigen::VectorXd c;  // minimization form
  double sense = 1.0;
};

Problem assemble(const SdpInstance& inst, const Layout& layout) {
  Problem p;
  p.sense = inst.sense == ObjectiveSense::kMaximize ? -1.0 : 1.0;
  const int m = inst.num_rows();
  p.A = Eigen::MatrixXd::Zero(m, layout.dim());
  p.b = Eigen::VectorXd::Zero(m);
  for (int r = 0; r < m; ++r) {
    const auto& row = inst.rows[static_cast<std::size_t>(r)];
    p.b(r) = row.rhs;
    for (const auto& e : row.entries) {
      auto [idx, factor] = layout.index(e.block, e.i, e.j);
      p.A(r, idx) += factor * e.value;
    }
  }
  std::vector<Eigen::MatrixXd> costs;
  for (const auto& blk : inst.blocks) {
    Eigen::MatrixXd C = blk.cost.size() == 0 ? Eigen::MatrixXd::Zero(blk.size, blk.size) : blk.cost;
    costs.push_back(C);
  }
  p.c = p.sense * layout.pack(costs);
  return p;
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

std::string to_string(SdpStatus status) {
  switch (status) {
    case SdpStatus::kOptimal:
      return "optimal";
    case SdpStatus::kInfeasible:
      return "infeasible";
    case SdpStatus::kUnbounded:
      return "unbounded";
    case SdpStatus::kMaxIter:
      return "max_iter";
  }
  return "unknown";
}

void SdpInstance::validate() const {
  for (const auto& b : blocks) {
    if (b.size <= 0) throw std::invalid_argument("SdpInstance: block size must be positive");
    if (b.cost.size() != 0) {
      if (b.cost.rows() != b.size || b.cost.cols() != b.size) throw std::invalid_argument("SdpInstance: cost shape mismatch");
      if (b.kind != BlockKind::kPsd && !b.cost.isDiagonal()) {
        throw std::invalid_argument("SdpInstance: off-diagonal cost in a diagonal block");
      }
      if ((b.cost - b.cost.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw std::invalid_argument("SdpInstance: cost matrix is not symmetric");
      }
    }
  }
  for (const auto& row : rows) {
    for (const auto& e : row.entries) {
      if (e.block < 0 || e.block >= static_cast<int>(blocks.size())) throw std::invalid_argument("SdpInstance: entry block out of range");
      const auto& b = blocks[static_cast<std::size_t>(e.block)];
      if (e.i < 0 || e.j < 0 || e.i >= b.size || e.j >= b.size) throw std::invalid_argument("SdpInstance: entry index out of range");
      if (b.kind != BlockKind::kPsd && e.i != e.j) {
        throw std::invalid_argument("SdpInstance: off-diagonal entry in a diagonal block");
      }
    }
  }
}

bool SdpInstance::operator==(const SdpInstance& other) const {
  if (sense != other.sense || blocks.size() != other.blocks.size() || rows.size() != other.rows.size()) return false;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& a = blocks[k];
    const auto& b = other.blocks[k];
    if (a.size != b.size || a.kind != b.kind || a.cost.size() != b.cost.size()) return false;
    if (a.cost.size() != 0 && a.cost != b.cost) return false;
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& a = rows[r];
    const auto& b = other.rows[r];
    if (a.rhs != b.rhs || a.entries.size() != b.entries.size()) return false;
    for (std::size_t e = 0; e < a.entries.size(); ++e) {
      const auto& x = a.entries[e];
      const auto& y = b.entries[e];
      if (x.block != y.block || x.i != y.i || x.j != y.j || x.value != y.value) return false;
    }
  }
  return true;
}

Eigen::MatrixXd project_psd(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols()) throw std::invalid_argument("project_psd: matrix is not square");
  if (M.size() == 0) return M;
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw std::invalid_argument("project_psd: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()));
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd P = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (P + P.transpose());
}

namespace internal {

SdpSolution finalize(const SdpInstance& inst, const std::vector<Eigen::MatrixXd>& X, const Eigen::VectorXd& y,
                     SdpStatus status, int iterations, std::string message) {
  const Layout layout(inst.blocks);
  const Problem prob = assemble(inst, layout);
  const Eigen::VectorXd z = layout.pack(X);
  SdpSolution sol;
  sol.status = status;
  sol.iterations = iterations;
  sol.message = std::move(message);
  sol.X = layout.unpack(z);
  sol.y = y;
  const Eigen::VectorXd svec_s = prob.c - prob.A.transpose() * y;
  sol.S = layout.unpack(svec_s);
  for (auto& S : sol.S) S *= prob.sense;
  const double pobj = prob.c.dot(z);
  const double dobj = prob.b.dot(y);
  sol.primal_objective = prob.sense * pobj;
  sol.dual_objective = prob.sense * dobj;
  sol.primal_residual = inf_norm(prob.A * z - prob.b);
  sol.dual_residual = layout.cone_violation(svec_s, 1.0, true);
  sol.gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
  return sol;
}

}  // namespace internal

SdpSolution solve(const SdpInstance& inst, double tol, int max_iter) {
  SdpSettings s;
  s.tol = tol;
  s.max_iter = max_iter;
  return solve(inst, s);
}

SdpSolution solve(const SdpInstance& inst, const SdpSettings& settings) {
  if (!(settings.tol > 0.0)) throw std::invalid_argument("solve: tol must be positive");
  inst.validate();
  if (settings.method == SdpMethod::kInteriorPoint) return internal::solve_interior_point(inst, settings);
  const Layout layout(inst.blocks);
  const Problem prob = assemble(inst, layout);
  const int m = inst.num_rows();
  const int n = layout.dim();

  // Unit-norm rows; the affine set itself is unchanged.
  Eigen::VectorXd row_scale = Eigen::VectorXd::Ones(m);
  for (int r = 0; r < m; ++r) {
    const double nr = prob.A.row(r).norm();
    if (nr > 0.0) row_scale(r) = 1.0 / nr;
  }
  const Eigen::MatrixXd As = row_scale.asDiagonal() * prob.A;
  const Eigen::VectorXd bs = row_scale.cwiseProduct(prob.b);
  Eigen::MatrixXd pinv = Eigen::MatrixXd::Zero(n, m);
  if (m > 0 && n > 0) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(As);
    cod.setThreshold(1e-12);
    pinv = cod.pseudoInverse();
  }

  std::string message;
  auto finish = [&](const Eigen::VectorXd& z, const Eigen::VectorXd& y, SdpStatus status, int iters) {
    return internal::finalize(inst, layout.unpack(z), y, status, iters, message);
  };

  Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);

  // b outside range(A): the residual direction is a Farkas certificate.
  if (m > 0) {
    const Eigen::VectorXd res = bs - As * (pinv * bs);
    if (res.norm() > 1e-9 * (1.0 + bs.norm())) {
      message = "equality system is inconsistent";
      return finish(z, row_scale.cwiseProduct(res), SdpStatus::kInfeasible, 0);
    }
  }

  double rho = settings.rho;
  const double alpha = settings.relaxation;
  Eigen::VectorXd x(n), w(n), t(n), z_old(n), xr(n);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd y_prev = Eigen::VectorXd::Zero(m);
  int infeasible_hits = 0;
  int unbounded_hits = 0;

  auto dual_from = [&](const Eigen::VectorXd& tt) -> Eigen::VectorXd {
    // y = -rho * (A A^T)^+ (A w - b) in scaled rows, mapped back to original rows.
    return row_scale.cwiseProduct(-rho * (pinv.transpose() * tt));
  };

  for (int k = 1; k <= settings.max_iter; ++k) {
    w = z - u - prob.c / rho;
    if (m > 0) {
      t = pinv * (As * w - bs);
      x = w - t;
    } else {
      t.setZero();
      x = w;
    }
    xr = alpha * x + (1.0 - alpha) * z;
    z_old = z;
    z = xr + u;
    layout.project_cone(z);
    u += xr - z;

    const bool check = k % settings.check_interval == 0 || k == settings.max_iter;
    if (k % settings.check_interval == settings.check_interval - 1) y_prev = dual_from(t);
    if (!check) continue;
    y = dual_from(t);

    const double pres = inf_norm(prob.A * z - prob.b);
    const Eigen::VectorXd svec_s = prob.c - prob.A.transpose() * y;
    const double dres = layout.cone_violation(svec_s, 1.0, true);
    const double pobj = prob.c.dot(z);
    const double dobj = prob.b.dot(y);
    const double gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    if (pres <= settings.tol && dres <= settings.tol && gap <= settings.tol) {
      message = "converged";
      return finish(z, y, SdpStatus::kOptimal, k);
    }

    // Primal infeasibility: dy with A^T dy in -K and b^T dy > 0.
    const Eigen::VectorXd dy = y - y_prev;
    const double bdy = prob.b.dot(dy);
    if (m > 0 && bdy > 0.0 && pres > settings.tol) {
      const double viol = layout.cone_violation(prob.A.transpose() * dy, -1.0, true);
      infeasible_hits = viol <= settings.tol_infeasible * bdy ? infeasible_hits + 1 : 0;
    } else {
      infeasible_hits = 0;
    }
    if (infeasible_hits >= 2) {
      message = "primal infeasibility certificate found";
      return finish(z, dy / bdy, SdpStatus::kInfeasible, k);
    }

    // Unboundedness: dz in K with A dz = 0 and c^T dz < 0.
    const Eigen::VectorXd dz = z - z_old;
    const double cdz = prob.c.dot(dz);
    if (cdz < 0.0 && dres > settings.tol) {
      const double ares = (prob.A * dz).cwiseAbs().maxCoeff();
      const double kres = layout.cone_violation(dz, 1.0);
      unbounded_hits = std::max(ares, kres) <= settings.tol_infeasible * -cdz ? unbounded_hits + 1 : 0;
    } else {
      unbounded_hits = 0;
    }
    if (unbounded_hits >= 2) {
      message = "improving primal ray found";
      return finish(z, y, SdpStatus::kUnbounded, k);
    }

    if (settings.adaptive_rho) {
      const double r_prim = (x - z).norm() / std::max({x.norm(), z.norm(), 1e-12});
      const double r_dual = rho * (z - z_old).norm() / std::max(rho * u.norm(), 1e-12);
      if (r_dual > 0.0 && r_prim > 0.0) {
        const double ratio = std::sqrt(r_prim / r_dual);
        if (ratio > 5.0 || ratio < 0.2) {
          const double rho_new = std::clamp(rho * ratio, 1e-6, 1e6);
          u *= rho / rho_new;
          rho = rho_new;
        }
      }
    }
  }
  message = "iteration limit reached";
  return finish(z, y, SdpStatus::kMaxIter, settings.max_iter);
}

namespace {

const char* kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::kPsd:
      return "psd";
    case BlockKind::kNonnegDiagonal:
      return "diag";
    case BlockKind::kFree:
      return "free";
  }
  return "psd";
}

}  // namespace

nlohmann::json to_json(const SdpInstance& inst) {
  nlohmann::json j;
  j["sense"] = inst.sense == ObjectiveSense::kMaximize ? "max" : "min";
  j["blocks"] = nlohmann::json::array();
  j["cost"] = nlohmann::json::array();
  for (std::size_t k = 0; k < inst.blocks.size(); ++k) {
    const auto& b = inst.blocks[k];
    j["blocks"].push_back({{"size", b.size}, {"kind", kind_name(b.kind)}});
    if (b.cost.size() == 0) continue;
    for (int c = 0; c < b.size; ++c) {
      for (int r = 0; r <= c; ++r) {
        if (b.cost(r, c) != 0.0) j["cost"].push_back({static_cast<int>(k), r, c, b.cost(r, c)});
      }
    }
  }
  j["constraints"] = nlohmann::json::array();
  for (const auto& row : inst.rows) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : row.entries) entries.push_back({e.block, e.i, e.j, e.value});
    j["constraints"].push_back({{"rhs", row.rhs}, {"entries", entries}});
  }
  return j;
}

SdpInstance sdp_instance_from_json(const nlohmann::json& j) {
  SdpInstance inst;
  const std::string sense = j.value("sense", "min");
  if (sense != "min" && sense != "max") throw std::invalid_argument("sdp json: sense must be min or max");
  inst.sense = sense == "max" ? ObjectiveSense::kMaximize : ObjectiveSense::kMinimize;
  for (const auto& b : j.at("blocks")) {
    SdpBlock blk;
    blk.size = b.at("size").get<int>();
    const std::string kind = b.value("kind", "psd");
    if (kind == "psd") {
      blk.kind = BlockKind::kPsd;
    } else if (kind == "diag") {
      blk.kind = BlockKind::kNonnegDiagonal;
    } else if (kind == "free") {
      blk.kind = BlockKind::kFree;
    } else {
      throw std::invalid_argument("sdp json: unknown block kind " + kind);
    }
    blk.cost = Eigen::MatrixXd::Zero(blk.size, blk.size);
    inst.blocks.push_back(std::move(blk));
  }
  if (j.contains("cost")) {
    for (const auto& e : j.at("cost")) {
      const int k = e.at(0).get<int>();
      const int r = e.at(1).get<int>();
      const int c = e.at(2).get<int>();
      if (k < 0 || k >= static_cast<int>(inst.blocks.size())) throw std::invalid_argument("sdp json: cost block out of range");
      auto& C = inst.blocks[static_cast<std::size_t>(k)].cost;
      if (r < 0 || c < 0 || r >= C.rows() || c >= C.cols()) throw std::invalid_argument("sdp json: cost index out of range");
      C(r, c) = C(c, r) = e.at(3).get<double>();
    }
  }
  for (const auto& c : j.at("constraints")) {
    SdpRow row;
    row.rhs = c.at("rhs").get<double>();
    for (const auto& e : c.at("entries")) {
      row.entries.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>(), e.at(3).get<double>()});
    }
    inst.rows.push_back(std::move(row));
  }
  inst.validate();
  return inst;
}

nlohmann::json to_json(const SdpSolution& sol) {
  nlohmann::json j;
  j["status"] = to_string(sol.status);
  j["primal_objective"] = sol.primal_objective;
  j["dual_objective"] = sol.dual_objective;
  j["primal_residual"] = sol.primal_residual;
  j["dual_residual"] = sol.dual_residual;
  j["gap"] = sol.gap;
  j["iterations"] = sol.iterations;
  j["message"] = sol.message;
  nlohmann::json xs = nlohmann::json::array();
  for (const auto& X : sol.X) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < X.rows(); ++r) {
      std::vector<double> row(X.cols());
      for (int c = 0; c < X.cols(); ++c) row[static_cast<std::size_t>(c)] = X(r, c);
      rows.push_back(row);
    }
    xs.push_back(rows);
  }
  j["X"] = xs;
  j["y"] = std::vector<double>(sol.y.data(), sol.y.data() + sol.y.size());
  return j;
}

}  // namespace cbfsos
