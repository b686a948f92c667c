// Infeasible primal-dual interior point method for the block form of
// SdpInstance, with Helmberg-Kojima-Monteiro search directions and a
// Mehrotra predictor-corrector. Free blocks are eliminated from the Newton
// system through the null space of their constraint columns, so they are
// never split into differences of nonnegative variables.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "sdp_internal.hpp"

namespace cbfsos::internal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct PsdBlock {
  int block = 0;
  int n = 0;
  Eigen::MatrixXd C;
  // Rows touching this block with their dense symmetric coefficient matrix.
  std::vector<std::pair<int, Eigen::MatrixXd>> rows;
};

// Nonnegative or free scalars gathered across blocks.
struct VecPart {
  std::vector<std::pair<int, int>> where;  // (block, index)
  Eigen::VectorXd c;
  Eigen::MatrixXd A;  // m x size
  int size() const { return static_cast<int>(where.size()); }
};

struct Data {
  int m = 0;
  Eigen::VectorXd b;
  std::vector<PsdBlock> psd;
  VecPart lp;
  VecPart free;
  double sense = 1.0;
  int barrier_dim = 0;  // sum of PSD sizes plus LP size
};

Data build(const SdpInstance& inst) {
  Data d;
  d.m = inst.num_rows();
  d.sense = inst.sense == ObjectiveSense::kMaximize ? -1.0 : 1.0;
  d.b.resize(d.m);
  std::vector<int> psd_of(inst.blocks.size(), -1);
  std::vector<int> vec_offset(inst.blocks.size(), -1);
  for (std::size_t k = 0; k < inst.blocks.size(); ++k) {
    const auto& blk = inst.blocks[k];
    const Eigen::MatrixXd C = blk.cost.size() == 0 ? Eigen::MatrixXd::Zero(blk.size, blk.size) : blk.cost;
    if (blk.kind == BlockKind::kPsd) {
      psd_of[k] = static_cast<int>(d.psd.size());
      d.psd.push_back({static_cast<int>(k), blk.size, d.sense * C, {}});
      d.barrier_dim += blk.size;
      continue;
    }
    VecPart& part = blk.kind == BlockKind::kFree ? d.free : d.lp;
    vec_offset[k] = part.size();
    for (int i = 0; i < blk.size; ++i) part.where.emplace_back(static_cast<int>(k), i);
    if (blk.kind == BlockKind::kNonnegDiagonal) d.barrier_dim += blk.size;
  }
  auto init_vec = [&](VecPart& part) {
    part.c = Eigen::VectorXd::Zero(part.size());
    part.A = Eigen::MatrixXd::Zero(d.m, part.size());
    for (int i = 0; i < part.size(); ++i) {
      const auto [k, j] = part.where[static_cast<std::size_t>(i)];
      const auto& cost = inst.blocks[static_cast<std::size_t>(k)].cost;
      if (cost.size() != 0) part.c(i) = d.sense * cost(j, j);
    }
  };
  init_vec(d.lp);
  init_vec(d.free);

  std::vector<std::map<int, Eigen::MatrixXd>> psd_rows(d.psd.size());
  for (int r = 0; r < d.m; ++r) {
    const auto& row = inst.rows[static_cast<std::size_t>(r)];
    d.b(r) = row.rhs;
    for (const auto& e : row.entries) {
      const auto& blk = inst.blocks[static_cast<std::size_t>(e.block)];
      if (blk.kind == BlockKind::kPsd) {
        const int p = psd_of[static_cast<std::size_t>(e.block)];
        auto& mats = psd_rows[static_cast<std::size_t>(p)];
        auto it = mats.find(r);
        if (it == mats.end()) it = mats.emplace(r, Eigen::MatrixXd::Zero(blk.size, blk.size)).first;
        it->second(e.i, e.j) += e.value;
        if (e.i != e.j) it->second(e.j, e.i) += e.value;
      } else {
        VecPart& part = blk.kind == BlockKind::kFree ? d.free : d.lp;
        part.A(r, vec_offset[static_cast<std::size_t>(e.block)] + e.i) += e.value;
      }
    }
  }
  for (std::size_t p = 0; p < d.psd.size(); ++p) {
    for (auto& [r, M] : psd_rows[p]) d.psd[p].rows.emplace_back(r, std::move(M));
  }
  return d;
}

struct Iterate {
  std::vector<Eigen::MatrixXd> X, S;
  Eigen::VectorXd xl, sl, xf, y;
};

Eigen::VectorXd apply_A(const Data& d, const std::vector<Eigen::MatrixXd>& X, const Eigen::VectorXd& xl,
                        const Eigen::VectorXd& xf) {
  Eigen::VectorXd out = d.lp.A * xl + d.free.A * xf;
  for (std::size_t p = 0; p < d.psd.size(); ++p) {
    for (const auto& [r, Ar] : d.psd[p].rows) out(r) += Ar.cwiseProduct(X[p]).sum();
  }
  return out;
}

// sum_r y_r A_r per PSD block.
std::vector<Eigen::MatrixXd> apply_AT_psd(const Data& d, const Eigen::VectorXd& y) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& blk : d.psd) {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(blk.n, blk.n);
    for (const auto& [r, Ar] : blk.rows) M += y(r) * Ar;
    out.push_back(std::move(M));
  }
  return out;
}

// Evaluates before assigning, so X = sym(X) does not alias.
Eigen::MatrixXd sym(const Eigen::MatrixXd& M) { return 0.5 * (M + M.transpose()); }

double max_step_psd(const Eigen::MatrixXd& X, const Eigen::MatrixXd& dX) {
  Eigen::LLT<Eigen::MatrixXd> llt(X);
  if (llt.info() != Eigen::Success) return 0.0;
  const Eigen::MatrixXd left = llt.matrixL().solve(dX);
  Eigen::MatrixXd W = llt.matrixL().solve(left.transpose());
  W = sym(W);
  const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(W, Eigen::EigenvaluesOnly).eigenvalues()(0);
  return lmin >= 0.0 ? kInf : -1.0 / lmin;
}

double max_step_vec(const Eigen::VectorXd& x, const Eigen::VectorXd& dx) {
  double a = kInf;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (dx(i) < 0.0) a = std::min(a, -x(i) / dx(i));
  }
  return a;
}

double max_abs(const Eigen::MatrixXd& M) { return M.size() == 0 ? 0.0 : M.cwiseAbs().maxCoeff(); }

struct Direction {
  std::vector<Eigen::MatrixXd> dX, dS;
  Eigen::VectorXd dxl, dsl, dxf, dy;
};

}  // namespace

SdpSolution solve_interior_point(const SdpInstance& inst, const SdpSettings& settings) {
  const Data d = build(inst);
  const int m = d.m;
  const int nf = d.free.size();
  const int nl = d.lp.size();
  const std::size_t np = d.psd.size();

  auto to_blocks = [&](const Iterate& it) {
    std::vector<Eigen::MatrixXd> X;
    for (const auto& blk : inst.blocks) X.push_back(Eigen::MatrixXd::Zero(blk.size, blk.size));
    for (std::size_t p = 0; p < np; ++p) X[static_cast<std::size_t>(d.psd[p].block)] = it.X[p];
    for (int i = 0; i < nl; ++i) {
      const auto [k, j] = d.lp.where[static_cast<std::size_t>(i)];
      X[static_cast<std::size_t>(k)](j, j) = it.xl(i);
    }
    for (int i = 0; i < nf; ++i) {
      const auto [k, j] = d.free.where[static_cast<std::size_t>(i)];
      X[static_cast<std::size_t>(k)](j, j) = it.xf(i);
    }
    return X;
  };

  // Starting point: scaled identities.
  double b_scale = 0.0;
  double c_scale = 0.0;
  double a_scale = 0.0;
  for (int r = 0; r < m; ++r) b_scale = std::max(b_scale, std::abs(d.b(r)));
  for (const auto& blk : d.psd) {
    c_scale = std::max(c_scale, max_abs(blk.C));
    for (const auto& [r, Ar] : blk.rows) a_scale = std::max(a_scale, Ar.norm());
  }
  c_scale = std::max({c_scale, max_abs(d.lp.c), max_abs(d.free.c)});
  a_scale = std::max({a_scale, max_abs(d.lp.A), max_abs(d.free.A)});
  const double xi = std::max(10.0, (1.0 + b_scale) / (1.0 + a_scale) * std::sqrt(static_cast<double>(std::max(1, d.barrier_dim))));
  const double zeta = std::max({10.0, std::sqrt(static_cast<double>(std::max(1, d.barrier_dim))), a_scale, c_scale});

  Iterate it;
  for (const auto& blk : d.psd) {
    it.X.push_back(xi * Eigen::MatrixXd::Identity(blk.n, blk.n));
    it.S.push_back(zeta * Eigen::MatrixXd::Identity(blk.n, blk.n));
  }
  it.xl = Eigen::VectorXd::Constant(nl, xi);
  it.sl = Eigen::VectorXd::Constant(nl, zeta);
  it.xf = Eigen::VectorXd::Zero(nf);
  it.y = Eigen::VectorXd::Zero(m);

  const double norm_b = 1.0 + b_scale;
  const double norm_c = 1.0 + c_scale;
  const double gamma = settings.ipm_step_fraction;

  // A_free = Q [R; 0] P^T, factored once. Q2 spans the null space of A_free^T.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_f;
  if (nf > 0) qr_f.compute(d.free.A);
  const int rank_f = nf > 0 ? static_cast<int>(qr_f.rank()) : 0;
  Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(m, m);
  if (nf > 0) Q = qr_f.householderQ() * Q;
  const Eigen::MatrixXd Q1 = Q.leftCols(rank_f);
  const Eigen::MatrixXd Q2 = Q.rightCols(m - rank_f);
  const Eigen::MatrixXd R11 = nf > 0 ? Eigen::MatrixXd(qr_f.matrixR().topLeftCorner(rank_f, rank_f)) : Eigen::MatrixXd();
  std::string message = "iteration limit reached";
  SdpStatus status = SdpStatus::kMaxIter;
  int iter = 0;
  int stalls = 0;
  // Best iterate by max(pinf, dinf, gap). Roundoff can make the iterates
  // drift away once the Schur complement degenerates near the optimum.
  Iterate best = it;
  double best_err = kInf;
  int best_iter = 0;

  for (iter = 0; iter <= settings.ipm_max_iter; ++iter) {
    // Residuals.
    const Eigen::VectorXd Ax = apply_A(d, it.X, it.xl, it.xf);
    const Eigen::VectorXd rp = d.b - Ax;
    const std::vector<Eigen::MatrixXd> ATy = apply_AT_psd(d, it.y);
    std::vector<Eigen::MatrixXd> Rd(np);
    double dinf = 0.0;
    double pobj = d.lp.c.dot(it.xl) + d.free.c.dot(it.xf);
    double xs = it.xl.dot(it.sl);
    for (std::size_t p = 0; p < np; ++p) {
      Rd[p] = d.psd[p].C - ATy[p] - it.S[p];
      dinf = std::max(dinf, max_abs(Rd[p]));
      pobj += d.psd[p].C.cwiseProduct(it.X[p]).sum();
      xs += it.X[p].cwiseProduct(it.S[p]).sum();
    }
    const Eigen::VectorXd rd = d.lp.c - d.lp.A.transpose() * it.y - it.sl;
    const Eigen::VectorXd rf = d.free.c - d.free.A.transpose() * it.y;
    dinf = std::max({dinf, max_abs(rd), max_abs(rf)});
    const double dobj = d.b.dot(it.y);
    const double pinf = max_abs(rp) / norm_b;
    dinf /= norm_c;
    const double gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    const double mu = d.barrier_dim > 0 ? xs / d.barrier_dim : 0.0;

    if (pinf <= settings.tol && dinf <= settings.tol && gap <= settings.tol) {
      status = SdpStatus::kOptimal;
      message = "converged";
      break;
    }
    const double err = std::max({pinf, dinf, gap});
    if (err < best_err) {
      best = it;
      best_err = err;
      best_iter = iter;
    } else if (best_err <= settings.ipm_tol_reduced &&
               (iter - best_iter >= 5 || err > 1e2 * best_err)) {
      message = "progress stalled";
      break;
    }

    // Primal infeasibility: y / b'y with -A^T y in K* and A_free^T y = 0.
    if (dobj > 0.0 && m > 0) {
      const double scale = 1.0 / dobj;
      double viol = max_abs(d.free.A.transpose() * it.y) * scale;
      const Eigen::VectorXd lp_part = -(d.lp.A.transpose() * it.y) * scale;
      for (Eigen::Index i = 0; i < lp_part.size(); ++i) viol = std::max(viol, -lp_part(i));
      for (std::size_t p = 0; p < np && viol <= settings.tol_infeasible; ++p) {
        const Eigen::MatrixXd W = -ATy[p] * scale;
        viol = std::max(viol, -Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(W, Eigen::EigenvaluesOnly).eigenvalues()(0));
      }
      if (viol <= settings.tol_infeasible && pinf > settings.tol && dobj > 1e3 * norm_c * norm_b) {
        status = SdpStatus::kInfeasible;
        message = "primal infeasibility certificate found";
        return finalize(inst, to_blocks(it), it.y * scale, status, iter, message);
      }
    }
    // Dual infeasibility: x / (-c'x) with A x = 0 and x in K.
    if (pobj < 0.0) {
      const double scale = -1.0 / pobj;
      const double viol = max_abs(Ax) * scale;
      if (viol <= settings.tol_infeasible && dinf > settings.tol && -pobj > 1e3 * norm_c * norm_b) {
        status = SdpStatus::kUnbounded;
        message = "improving primal ray found";
        return finalize(inst, to_blocks(it), it.y, status, iter, message);
      }
    }
    if (iter == settings.ipm_max_iter) break;

    // Schur complement M = [tr(A_i X A_j S^-1)] + A_lp diag(x/s) A_lp^T.
    std::vector<Eigen::MatrixXd> Sinv(np);
    bool factor_ok = true;
    for (std::size_t p = 0; p < np; ++p) {
      Eigen::LLT<Eigen::MatrixXd> llt(it.S[p]);
      if (llt.info() != Eigen::Success) {
        factor_ok = false;
        break;
      }
      Sinv[p] = llt.solve(Eigen::MatrixXd::Identity(d.psd[p].n, d.psd[p].n));
      Sinv[p] = sym(Sinv[p]);
    }
    if (!factor_ok) {
      message = "dual slack lost definiteness";
      break;
    }
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(m, m);
    for (std::size_t p = 0; p < np; ++p) {
      const auto& rows = d.psd[p].rows;
      for (std::size_t a = 0; a < rows.size(); ++a) {
        const Eigen::MatrixXd G = it.X[p] * rows[a].second * Sinv[p];
        for (std::size_t c = 0; c <= a; ++c) {
          const double v = rows[c].second.cwiseProduct(G).sum();
          M(rows[c].first, rows[a].first) += v;
          if (c != a) M(rows[a].first, rows[c].first) += v;
        }
      }
    }
    if (nl > 0) {
      const Eigen::VectorXd ratio = it.xl.cwiseQuotient(it.sl);
      M += d.lp.A * ratio.asDiagonal() * d.lp.A.transpose();
    }
    M = sym(M);
    // Reduced system on the null space of A_free^T.
    Eigen::MatrixXd Mr = Q2.transpose() * M * Q2;
    const double reg = 1e-13 * std::max(1.0, Mr.size() == 0 ? 0.0 : Mr.diagonal().cwiseAbs().maxCoeff());
    Mr.diagonal().array() += reg;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(Mr);

    // Solves M dy + A_free dxf = r, A_free^T dy = rf.
    auto solve_kkt = [&](const Eigen::VectorXd& r, Eigen::VectorXd& dy, Eigen::VectorXd& dxf) {
      Eigen::VectorXd u = Eigen::VectorXd::Zero(rank_f);
      if (rank_f > 0) {
        const Eigen::VectorXd prf = qr_f.colsPermutation().transpose() * rf;
        u = R11.transpose().triangularView<Eigen::Lower>().solve(prf.head(rank_f));
      }
      const Eigen::VectorXd base = Q1 * u;
      const Eigen::VectorXd rhs = Q2.transpose() * (r - M * base);
      Eigen::VectorXd z = ldlt.solve(rhs);
      for (int refine = 0; refine < 2; ++refine) z += ldlt.solve(rhs - Q2.transpose() * (M * (Q2 * z)));
      dy = base + Q2 * z;
      dxf = Eigen::VectorXd::Zero(nf);
      if (rank_f > 0) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(nf);
        v.head(rank_f) = R11.triangularView<Eigen::Upper>().solve(Q1.transpose() * (r - M * dy));
        dxf = qr_f.colsPermutation() * v;
      }
    };

    // Direction for targets T (PSD) and t (LP): X S + dX S + X dS = T.
    auto direction = [&](const std::vector<Eigen::MatrixXd>& T, const Eigen::VectorXd& t) {
      Direction dir;
      Eigen::VectorXd rhs = rp;
      std::vector<Eigen::MatrixXd> Z(np);
      for (std::size_t p = 0; p < np; ++p) {
        Z[p] = T[p] * Sinv[p] - it.X[p] - it.X[p] * Rd[p] * Sinv[p];
        for (const auto& [r, Ar] : d.psd[p].rows) rhs(r) -= Ar.cwiseProduct(Z[p]).sum();
      }
      Eigen::VectorXd zl;
      if (nl > 0) {
        zl = t.cwiseQuotient(it.sl) - it.xl - it.xl.cwiseProduct(rd).cwiseQuotient(it.sl);
        rhs -= d.lp.A * zl;
      }
      solve_kkt(rhs, dir.dy, dir.dxf);
      const std::vector<Eigen::MatrixXd> ATdy = apply_AT_psd(d, dir.dy);
      for (std::size_t p = 0; p < np; ++p) {
        Eigen::MatrixXd dS = Rd[p] - ATdy[p];
        dS = sym(dS);
        Eigen::MatrixXd dX = T[p] * Sinv[p] - it.X[p] - it.X[p] * dS * Sinv[p];
        dX = sym(dX);
        dir.dS.push_back(std::move(dS));
        dir.dX.push_back(std::move(dX));
      }
      if (nl > 0) {
        dir.dsl = rd - d.lp.A.transpose() * dir.dy;
        dir.dxl = t.cwiseQuotient(it.sl) - it.xl - it.xl.cwiseProduct(dir.dsl).cwiseQuotient(it.sl);
      } else {
        dir.dsl = Eigen::VectorXd::Zero(0);
        dir.dxl = Eigen::VectorXd::Zero(0);
      }
      return dir;
    };
    auto step_lengths = [&](const Direction& dir) {
      double ap = max_step_vec(it.xl, dir.dxl);
      double ad = max_step_vec(it.sl, dir.dsl);
      for (std::size_t p = 0; p < np; ++p) {
        ap = std::min(ap, max_step_psd(it.X[p], dir.dX[p]));
        ad = std::min(ad, max_step_psd(it.S[p], dir.dS[p]));
      }
      return std::make_pair(ap, ad);
    };

    // Predictor.
    std::vector<Eigen::MatrixXd> T0(np);
    for (std::size_t p = 0; p < np; ++p) T0[p] = Eigen::MatrixXd::Zero(d.psd[p].n, d.psd[p].n);
    const Direction aff = direction(T0, Eigen::VectorXd::Zero(nl));
    auto [ap_aff, ad_aff] = step_lengths(aff);
    ap_aff = std::min(1.0, ap_aff);
    ad_aff = std::min(1.0, ad_aff);
    double xs_aff = (it.xl + ap_aff * aff.dxl).dot(it.sl + ad_aff * aff.dsl);
    for (std::size_t p = 0; p < np; ++p) {
      xs_aff += (it.X[p] + ap_aff * aff.dX[p]).cwiseProduct(it.S[p] + ad_aff * aff.dS[p]).sum();
    }
    const double mu_aff = d.barrier_dim > 0 ? xs_aff / d.barrier_dim : 0.0;
    const double sigma = mu > 0.0 ? std::clamp(std::pow(std::max(mu_aff, 0.0) / mu, 3.0), 0.0, 1.0) : 0.0;

    // Corrector.
    std::vector<Eigen::MatrixXd> T(np);
    for (std::size_t p = 0; p < np; ++p) {
      T[p] = sigma * mu * Eigen::MatrixXd::Identity(d.psd[p].n, d.psd[p].n) - aff.dX[p] * aff.dS[p];
    }
    Eigen::VectorXd t = Eigen::VectorXd::Constant(nl, sigma * mu);
    if (nl > 0) t -= aff.dxl.cwiseProduct(aff.dsl);
    const Direction dir = direction(T, t);
    auto [ap, ad] = step_lengths(dir);
    ap = std::min(1.0, gamma * ap);
    ad = std::min(1.0, gamma * ad);
    if (!std::isfinite(ap) || !std::isfinite(ad)) {
      message = "non-finite step";
      break;
    }
    // The eigenvalue bound loses accuracy on ill-conditioned iterates, so
    // confirm definiteness by factorization and back off if needed.
    auto definite_after = [&](const std::vector<Eigen::MatrixXd>& base, const std::vector<Eigen::MatrixXd>& step,
                              double a) {
      for (std::size_t p = 0; p < np; ++p) {
        Eigen::LLT<Eigen::MatrixXd> llt(base[p] + a * step[p]);
        if (llt.info() != Eigen::Success) return false;
      }
      return true;
    };
    for (int k = 0; k < 60 && ap > 0.0 && !definite_after(it.X, dir.dX, ap); ++k) ap *= 0.8;
    for (int k = 0; k < 60 && ad > 0.0 && !definite_after(it.S, dir.dS, ad); ++k) ad *= 0.8;

    for (std::size_t p = 0; p < np; ++p) {
      it.X[p] += ap * dir.dX[p];
      it.S[p] += ad * dir.dS[p];
    }
    if (nl > 0) {
      it.xl += ap * dir.dxl;
      it.sl += ad * dir.dsl;
    }
    it.xf += ap * dir.dxf;
    it.y += ad * dir.dy;

    stalls = (ap < 1e-10 && ad < 1e-10) ? stalls + 1 : 0;
    if (stalls >= 3) {
      message = "step length stalled";
      break;
    }
  }
  if (status != SdpStatus::kOptimal && best_err <= settings.ipm_tol_reduced) {
    status = SdpStatus::kOptimal;
    message = "converged to reduced accuracy (" + message + ")";
    it = best;
  }
  return finalize(inst, to_blocks(it), it.y, status, std::min(iter, settings.ipm_max_iter), message);
}

}  // namespace cbfsos::internal
