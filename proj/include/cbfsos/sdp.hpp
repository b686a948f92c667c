#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace cbfsos {

// kFree is a vector of unconstrained scalars (dual cone {0}); it is stored
// like a diagonal block.
enum class BlockKind { kPsd, kNonnegDiagonal, kFree };
enum class ObjectiveSense { kMinimize, kMaximize };
enum class SdpStatus { kOptimal, kInfeasible, kUnbounded, kMaxIter };

std::string to_string(SdpStatus status);

struct SdpBlock {
  int size = 0;
  BlockKind kind = BlockKind::kPsd;
  // Symmetric cost matrix; diagonal blocks only use the diagonal.
  Eigen::MatrixXd cost;
};

/// One coefficient of a symmetric constraint matrix. An off-diagonal entry
/// (i < j) stands for both (i, j) and (j, i), so it contributes
/// 2 * value * X(i, j) to the row.
struct SdpEntry {
  int block = 0;
  int i = 0;
  int j = 0;
  double value = 0.0;
};

struct SdpRow {
  std::vector<SdpEntry> entries;
  double rhs = 0.0;
};

/// Block-diagonal standard primal form:
///   min (or max) sum_k <C_k, X_k>  s.t.  sum_k <A_jk, X_k> = b_j,  X_k in K_k.
struct SdpInstance {
  std::vector<SdpBlock> blocks;
  std::vector<SdpRow> rows;
  ObjectiveSense sense = ObjectiveSense::kMinimize;

  int num_rows() const { return static_cast<int>(rows.size()); }
  /// Throws std::invalid_argument on out-of-range entries or asymmetric costs.
  void validate() const;
  bool operator==(const SdpInstance& other) const;
};

struct SdpSolution {
  SdpStatus status = SdpStatus::kMaxIter;
  std::vector<Eigen::MatrixXd> X;
  Eigen::VectorXd y;
  // Dual slack C - A^T y, per block.
  std::vector<Eigen::MatrixXd> S;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  // Recomputed from X and y after the loop: ||A(X) - b||_inf, the largest
  // cone violation of S, and |c'x - b'y| / (1 + |c'x| + |b'y|).
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
  int iterations = 0;
  std::string message;
};

// kSplitting: first-order operator splitting with a cached affine projection.
// kInteriorPoint: infeasible primal-dual path following (HKM direction,
// Mehrotra predictor-corrector), for degenerate instances where splitting
// stalls.
enum class SdpMethod { kSplitting, kInteriorPoint };

struct SdpSettings {
  SdpMethod method = SdpMethod::kSplitting;
  double tol = 1e-8;
  int max_iter = 200000;
  double rho = 1.0;
  bool adaptive_rho = true;
  double relaxation = 1.6;
  // Normalized residual an improving ray must reach to be reported.
  double tol_infeasible = 1e-6;
  int check_interval = 20;
  // Interior point only.
  int ipm_max_iter = 200;
  double ipm_step_fraction = 0.98;
  // When tol is not reached, the best iterate is still reported optimal if
  // its max(pinf, dinf, gap) is below this.
  double ipm_tol_reduced = 1e-6;
};

/// Eigenvalue clip of a symmetric matrix. Throws std::invalid_argument if M
/// is not symmetric to within 1e-12 (scaled by max(1, max|M_ij|)).
Eigen::MatrixXd project_psd(const Eigen::MatrixXd& M);

/// Dispatches on settings.method.
SdpSolution solve(const SdpInstance& inst, const SdpSettings& settings = {});
SdpSolution solve(const SdpInstance& inst, double tol, int max_iter);

// {"sense": "min"|"max",
//  "blocks": [{"size": n, "kind": "psd"|"diag"|"free"}, ...],
//  "cost": [[block, i, j, value], ...],            (i <= j, 0-based)
//  "constraints": [{"rhs": b, "entries": [[block, i, j, value], ...]}, ...]}
nlohmann::json to_json(const SdpInstance& inst);
SdpInstance sdp_instance_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SdpSolution& sol);

}  // namespace cbfsos
