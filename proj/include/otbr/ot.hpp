#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "otbr/tensor.hpp"

namespace otbr {

class MarginalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(std::size_t iterations, double rowResidual, double colResidual);
  std::size_t iterations() const { return iterations_; }
  double row_residual() const { return rowResidual_; }
  double col_residual() const { return colResidual_; }

 private:
  std::size_t iterations_;
  double rowResidual_;
  double colResidual_;
};

struct Marginal {
  std::vector<double> mass;

  static Marginal uniform(std::size_t n);
  std::size_t size() const { return mass.size(); }
  double total() const;
};

enum class SolverKind { Exact, Sinkhorn };
std::string to_string(SolverKind k);
SolverKind parse_solver(const std::string& s);

struct TransportPlan {
  Matrix plan;  // [n x m]
  Marginal source;
  Marginal target;
  double objective = 0.0;
  SolverKind solver = SolverKind::Exact;
  double epsilon = 0.0;
  std::size_t iterations = 0;
};

inline constexpr double kExactTolerance = 1e-8;
inline constexpr double kSinkhornTolerance = 1e-6;

// transportation simplex: north-west corner start, MODI potentials,
// Dantzig pricing with Bland's rule after long degenerate runs
TransportPlan solve_exact(const Marginal& source, const Marginal& target, const Matrix& cost);

// entropic OT in the log domain, rounded onto the feasible set
TransportPlan solve_sinkhorn(const Marginal& source, const Marginal& target, const Matrix& cost, double epsilon,
                             std::size_t maxIterations = 10000, double tolerance = 1e-9);

struct FeasibilityReport {
  double maxRowViolation = 0.0;
  double maxColViolation = 0.0;
  double minEntry = 0.0;
  std::size_t minRow = 0;
  std::size_t minCol = 0;
  std::size_t support = 0;  // entries above zero
  double tolerance = kExactTolerance;
  bool pass = false;
};

FeasibilityReport check_plan(const TransportPlan& plan);
FeasibilityReport check_plan(const TransportPlan& plan, double tolerance);

double transport_cost(const Matrix& plan, const Matrix& cost);

void write_plan_csv(const TransportPlan& plan, const std::filesystem::path& path);

}  // namespace otbr
