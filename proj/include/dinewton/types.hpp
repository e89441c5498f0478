#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dinewton {

using Real = double;
using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<Real>;  // column-major throughout

/// Invalid run configuration (bad flag value, inconsistent sizes vs data).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Filesystem / stream failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed dataset input; carries the 1-based line number.
struct ParseError : IoError {
  ParseError(const std::string& what, long line)
      : IoError(what + " (line " + std::to_string(line) + ")"), line(line) {}
  long line;
};

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A node diverged from the common collective call sequence (SPMD violation),
/// or payloads disagree in shape across nodes.
struct SpmdError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Objective became non-finite during a run.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Inner solver detected an inconsistency (indefinite system, stall).
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dinewton
