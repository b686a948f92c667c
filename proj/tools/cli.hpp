#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace cbfsos::cli {

enum ExitCode : int { kOk = 0, kInputError = 2, kNumericalFailure = 3, kPropertyViolation = 4 };

inline constexpr const char* kToolVersion = "1.0.0";

/// Flag values shared by the subcommands. Unset fields fall back to the
/// --config file, then to the command defaults.
struct Options {
  std::optional<std::string> model;
  std::optional<std::string> out;
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<double> dt;
  std::optional<double> horizon;
  std::optional<double> ball_radius;
  std::optional<int> deg_lambda;
  std::optional<int> deg_lambda1;
  std::optional<int> deg_lambda2;
  std::optional<double> eps;
  std::optional<std::string> variant;
  std::optional<double> p;
  // filter-eval
  std::vector<std::vector<double>> states;
  std::optional<std::vector<double>> grid;  // lo, hi, step
  // simulate
  std::optional<std::vector<double>> x0;
  // roa
  std::optional<int> samples;
  std::optional<double> eta_scale;
  // robust-cbf: JSON polynomial literal file for the containment set c(x)
  std::optional<std::string> containment;
  std::optional<int> max_rounds;
  // verify-cert
  std::optional<std::string> cert;
};

int cmd_filter_eval(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_simulate(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_reproduce_example(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_roa(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_robust_cbf(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_verify_cert(const Options& opt, std::ostream& out, std::ostream& err);

std::string sha256_hex(const std::string& bytes);
/// Throws std::runtime_error when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

/// Parses argv and dispatches. Returns the process exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace cbfsos::cli
