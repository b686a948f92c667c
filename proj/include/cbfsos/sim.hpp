#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cbfsos/cbf_qp.hpp"
#include "cbfsos/poly.hpp"
#include "json.hpp"

namespace cbfsos {

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DisturbanceSignal { kWorstCase, kSinusoidal, kRandom };

std::string to_string(DisturbanceSignal s);
DisturbanceSignal disturbance_signal_from_string(const std::string& s);

/// Bounded input w(t) entering as map(x) w, with |w| <= bound.
struct DisturbanceModel {
  PolyMatrix map;  // n x w
  double bound = 0.0;
  DisturbanceSignal signal = DisturbanceSignal::kWorstCase;
  // Angular frequency of the sinusoid.
  double frequency = 1.0;
  // The random signal is piecewise constant on intervals of this length.
  double hold = 0.1;
  std::uint64_t seed = 0;

  void validate(int n) const;
  /// w at time t and state x; map_h is the row dh/dx * map(x).
  Eigen::VectorXd sample(double t, const Eigen::VectorXd& map_h) const;
};

struct SimConfig {
  std::vector<double> x0;
  double T = 50.0;
  double dt = 1e-3;
  std::string method = "rk4";
  std::optional<DisturbanceModel> disturbance;
  // Stop once |x| <= origin_radius. Zero disables the check.
  double origin_radius = 0.0;
  // |x(T)| at or below this counts as converged.
  double converge_radius = 1e-3;
  double equilibrium_speed = 1e-6;
  double equilibrium_window = 1.0;
  double tol_h = 1e-6;

  void validate(int n) const;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> u_total;
  std::vector<Eigen::VectorXd> u_prime;
  std::vector<double> delta;
  std::vector<double> h;
  std::vector<double> V;
  std::vector<RegionTag> region;
  // Set when the run stopped on a filter failure.
  std::optional<std::string> error;

  std::size_t size() const { return times.size(); }
};

struct EquilibriumDetection {
  std::vector<double> state;
  double time = 0.0;
  bool at_origin = false;
};

struct SimReport {
  double min_h = 0.0;
  double final_norm = 0.0;
  bool converged = false;
  bool safety_violated = false;
  std::optional<double> first_violation_time;
  std::vector<EquilibriumDetection> equilibria;
  std::map<std::string, int> region_counts;
  std::optional<std::string> error;
};

/// Fixed-step RK4 on f' + g u' (+ map w) with the filter solved at every
/// stage state. Throws SimError on a bad config, a filter failure at x0, or
/// a non-finite state.
Trajectory integrate_closed_loop(const SystemModel& model, const SimConfig& cfg);
Trajectory integrate_closed_loop(const FilterEvaluator& eval, const SimConfig& cfg);

SimReport analyze(const Trajectory& trj, const SystemModel& model, const SimConfig& cfg = {});
SimReport analyze(const Trajectory& trj, const FilterEvaluator& eval, const SimConfig& cfg = {});

struct MonteCarloRun {
  std::vector<double> x0;
  bool converged = false;
  double final_norm = 0.0;
  double min_h = 0.0;
  std::optional<std::string> error;
};

struct MonteCarloResult {
  double fraction_converged = 0.0;
  std::vector<MonteCarloRun> runs;
  // Indices into runs that did not converge.
  std::vector<int> counterexamples;
  int proposals = 0;
};

struct MonteCarloOptions {
  std::uint64_t seed = 0;
  // Sampling box half-width. When unset, V must be a positive definite
  // quadratic form and the tight box of {V <= eta} is used.
  std::optional<double> half_width;
  int max_proposals = 1000000;
  // Zero uses the hardware concurrency.
  int workers = 0;
};

/// Simulates N states drawn uniformly from {V <= eta}. cfg.x0 is ignored.
MonteCarloResult roa_monte_carlo(const SystemModel& model, double eta, int N, const SimConfig& cfg,
                                 const MonteCarloOptions& options = {});

/// "t,x1..xn,u1..um,uprime1..uprimem,delta,h,V,region" with %.17g numbers.
void write_csv(std::ostream& os, const Trajectory& trj);
std::string format_double(double v);

nlohmann::json to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const nlohmann::json& j, int n);
nlohmann::json to_json(const SimReport& r);
nlohmann::json to_json(const MonteCarloResult& r);

}  // namespace cbfsos
