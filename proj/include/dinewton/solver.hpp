#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dinewton/collectives.hpp"
#include "dinewton/dataset.hpp"
#include "dinewton/loss.hpp"
#include "dinewton/precond.hpp"
#include "dinewton/types.hpp"

namespace dinewton {

struct EpsPolicy {
  enum class Mode { Relative, Absolute };
  Mode mode = Mode::Relative;
  Real beta = 0.05;     // eps_k = beta * ||grad f(w_k)||
  Real absolute = 0.0;  // eps_k = absolute
};

/// Inner tolerance for the Newton-system solve at gradient norm `grad_norm`.
Real eps_policy(Real grad_norm, const EpsPolicy& policy);

/// 1 / (serial_fraction + (1 - serial_fraction) / m).
Real amdahl_speedup(Real serial_fraction, Real m);

enum class PrecondKind { Woodbury, Identity };

/// Test/debug hook invoked on the master node after each inner iteration of
/// the sample-partitioned PCG.
struct InnerIterationInfo {
  int t;
  Real alpha;
  Real beta;
  Real residual_norm;  // global, after this iteration
  const Vector& v;
  const Vector& r;
  const Vector& u;
  const Vector& Hu;
  const Vector& Hv;
};
using InnerProbe = std::function<void(const InnerIterationInfo&)>;

struct SolverConfig {
  LossModel loss = LossModel::logistic();
  Real lambda = 1e-2;
  Real mu = 1e-2;    // preconditioner damping
  Index tau = 100;   // samples behind the preconditioner
  PartitionMode mode = PartitionMode::BySamples;
  int nodes = 1;
  EpsPolicy eps;
  Real grad_tol = 1e-10;
  int max_outer = 100;
  Index max_inner = 0;          // 0: defaults to 2 d + 10
  Real hessian_fraction = 1.0;  // in (0,1]; < 1 subsamples Hessian-vector sums
  std::uint64_t seed = 0;
  Scheduler scheduler = Scheduler::Threads;

  // BySamples only: >= 2 restricts the preconditioner to that many diagonal
  // feature blocks (the operator the feature-partitioned run applies), for
  // cross-mode comparisons. 0/1 keeps the full matrix.
  int precond_blocks = 0;
  PrecondKind precond = PrecondKind::Woodbury;

  bool record_iterates = false;  // keep every outer iterate in the result
  InnerProbe inner_probe;
};

/// One row per outer iteration, describing the state at its start; comm
/// counters are cumulative at that barrier. `grouped_rounds` counts only
/// vector-payload collectives (the conventional "rounds" axis), `rounds`
/// every collective call.
struct TraceRow {
  int k = 0;
  std::uint64_t inner_cum = 0;
  Real f_value = 0;
  Real grad_norm = 0;
  std::uint64_t rounds = 0;
  std::uint64_t grouped_rounds = 0;
  std::uint64_t scalars = 0;
  std::uint64_t elements = 0;
  double wall_seconds = 0;
};

/// Header: k,t_total_inner,f_value,grad_norm,rounds_cum,rounds_grouped_cum,
/// scalars_cum,vec_elements_cum,wall_seconds
std::string trace_to_csv(const std::vector<TraceRow>& rows);

struct NewtonStepResult {
  Vector step;             // v_k: full vector (BySamples) or this node's slice
  Real delta = 0;          // Newton decrement estimate delta_k
  int inner_iters = 0;
  std::uint64_t comm_rounds = 0;
  Real residual_norm = 0;  // maintained ||grad - H v|| at exit
};

struct SolveResult {
  Vector w;
  bool converged = false;
  int outer_iters = 0;
  std::uint64_t total_inner = 0;
  Real f_value = 0;
  Real grad_norm = 0;
  std::vector<TraceRow> trace;
  std::vector<Vector> iterates;  // per outer iteration when record_iterates
  TrafficLedger ledger;
};

/// Damped Newton outer loop w_{k+1} = w_k - v_k / (1 + delta_k) on an
/// in-process cluster of cfg.nodes nodes, partitioned per cfg.mode.
SolveResult solve_distributed(const SparseDataset& ds, const SolverConfig& cfg);

/// Inner PCG, sample-partitioned layout. Node 0 owns the preconditioner and
/// all PCG vector algebra; the other nodes only contribute Hessian-vector
/// pieces. `local_margins` are the node's cached w.x_i values; `precond` may
/// be null on non-master nodes. Communicates 2 d-length payloads per
/// iteration (broadcast of the search direction, sum of Hessian pieces).
NewtonStepResult pcg_by_samples(NodeContext& ctx, const DatasetShard& shard,
                                const Objective& obj, const Vector& grad,
                                const Vector& local_margins,
                                const Preconditioner* precond, Real eps_k,
                                const std::vector<Index>* hessian_subset,
                                Index max_inner, const InnerProbe& probe);

/// Inner PCG, feature-partitioned layout. Every node owns one coordinate
/// slice of every PCG vector plus the matching preconditioner block; one
/// n-length sum plus two scalar sums per iteration. The returned step is the
/// node's slice; delta is already integrated across nodes.
NewtonStepResult pcg_by_features(NodeContext& ctx, const DatasetShard& shard,
                                 const Objective& obj, const Vector& grad_slice,
                                 const Vector& margins,
                                 const Preconditioner& block_precond,
                                 Real eps_k,
                                 const std::vector<Index>* hessian_subset,
                                 Index max_inner);

/// Deterministic uniform draw (without replacement, ascending) of
/// ceil(fraction * n) sample indices for outer iteration k.
std::vector<Index> hessian_sample_subset(Index n, Real fraction,
                                         std::uint64_t seed, int outer_k);

}  // namespace dinewton
