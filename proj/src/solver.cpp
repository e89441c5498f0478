#include "dinewton/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <random>
#include <ranges>
#include <sstream>

namespace dinewton {

Real eps_policy(Real grad_norm, const EpsPolicy& policy) {
  if (!(grad_norm >= 0)) throw ConfigError("gradient norm must be nonnegative");
  switch (policy.mode) {
    case EpsPolicy::Mode::Relative:
      return policy.beta * grad_norm;
    case EpsPolicy::Mode::Absolute:
      return policy.absolute;
  }
  return 0.0;
}

Real amdahl_speedup(Real serial_fraction, Real m) {
  if (!(serial_fraction >= 0.0 && serial_fraction <= 1.0)) {
    throw ConfigError("serial fraction must lie in [0, 1]");
  }
  if (!(m >= 1.0)) throw ConfigError("node count must be >= 1");
  return 1.0 / (serial_fraction + (1.0 - serial_fraction) / m);
}

std::vector<Index> hessian_sample_subset(Index n, Real fraction,
                                         std::uint64_t seed, int outer_k) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("hessian fraction must lie in (0, 1]");
  }
  const Index count =
      std::max<Index>(1, static_cast<Index>(std::ceil(fraction * static_cast<Real>(n))));
  std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL *
                                 static_cast<std::uint64_t>(outer_k + 1));
  std::vector<Index> subset;
  subset.reserve(static_cast<size_t>(count));
  auto all = std::views::iota(Index{0}, n);
  std::sample(all.begin(), all.end(), std::back_inserter(subset), count, rng);
  return subset;  // ascending by construction
}

std::string trace_to_csv(const std::vector<TraceRow>& rows) {
  std::string out =
      "k,t_total_inner,f_value,grad_norm,rounds_cum,rounds_grouped_cum,"
      "scalars_cum,vec_elements_cum,wall_seconds\n";
  char buf[320];
  for (const TraceRow& r : rows) {
    std::snprintf(buf, sizeof buf,
                  "%d,%llu,%.17g,%.17g,%llu,%llu,%llu,%llu,%.6f\n", r.k,
                  static_cast<unsigned long long>(r.inner_cum), r.f_value,
                  r.grad_norm, static_cast<unsigned long long>(r.rounds),
                  static_cast<unsigned long long>(r.grouped_rounds),
                  static_cast<unsigned long long>(r.scalars),
                  static_cast<unsigned long long>(r.elements), r.wall_seconds);
    out += buf;
  }
  return out;
}

namespace {

Vector derivative_coeffs(const LossModel& loss, const Vector& margins,
                         const Vector& labels) {
  Vector c(margins.size());
  for (Index i = 0; i < margins.size(); ++i) {
    c[i] = loss_derivative(loss, margins[i], labels[i]);
  }
  return c;
}

Real loss_total(const LossModel& loss, const Vector& margins,
                const Vector& labels) {
  Real sum = 0.0;
  for (Index i = 0; i < margins.size(); ++i) {
    sum += loss_value(loss, margins[i], labels[i]);
  }
  return sum;
}

Vector curvature_weighted(const LossModel& loss, const Vector& margins,
                          const Vector& labels, const Vector& t) {
  Vector z(t.size());
  for (Index i = 0; i < t.size(); ++i) {
    z[i] = loss_second_derivative(loss, margins[i], labels[i]) * t[i];
  }
  return z;
}

// Unscaled local Hessian-vector piece sum_{i local} phi''_i (x_i.u) x_i for
// the sample-partitioned layout.
Vector hv_piece_full(const DatasetShard& shard, const LossModel& loss,
                     const Vector& local_margins, const Vector& u) {
  const Vector t = shard.local.transpose() * u;
  const Vector z = curvature_weighted(loss, local_margins, shard.labels, t);
  return shard.local * z;
}

Vector hv_piece_subset(const DatasetShard& shard, const LossModel& loss,
                       const Vector& local_margins, const Vector& u,
                       const std::vector<Index>& subset) {
  Vector acc = Vector::Zero(shard.local.rows());
  const Index lo = shard.offset;
  const Index hi = shard.offset + shard.local.cols();
  for (Index g : subset) {
    if (g < lo || g >= hi) continue;
    const Index c = g - lo;
    Real dot = 0.0;
    for (SpMat::InnerIterator it(shard.local, c); it; ++it) {
      dot += it.value() * u[it.row()];
    }
    const Real z =
        loss_second_derivative(loss, local_margins[c], shard.labels[c]) * dot;
    for (SpMat::InnerIterator it(shard.local, c); it; ++it) {
      acc[it.row()] += z * it.value();
    }
  }
  return acc;
}

}  // namespace

NewtonStepResult pcg_by_samples(NodeContext& ctx, const DatasetShard& shard,
                                const Objective& obj, const Vector& grad,
                                const Vector& local_margins,
                                const Preconditioner* precond, Real eps_k,
                                const std::vector<Index>* hessian_subset,
                                Index max_inner, const InnerProbe& probe) {
  const bool master = ctx.id() == 0;
  if (master && precond == nullptr) {
    throw ConfigError("master node needs a preconditioner");
  }
  const Index d = obj.d;
  const Real count =
      hessian_subset ? static_cast<Real>(hessian_subset->size())
                     : static_cast<Real>(obj.n);
  const auto rounds_before = ctx.ledger_snapshot().rounds();

  Vector v, Hv, r, s, u, Hu;
  Real rho = 0.0, delta_sq = 0.0;
  if (master) {
    v = Vector::Zero(d);
    Hv = Vector::Zero(d);
    r = grad;
    s = precond->solve(r);
    u = s;
    rho = r.dot(s);
  } else {
    u = Vector::Zero(d);  // broadcast buffer; contents come from the master
  }

  int t = 0;
  Real rnorm = 0.0;
  while (true) {
    const Vector u_bc = ctx.broadcast(0, u, CommPhase::PcgIteration);
    const Vector piece =
        hessian_subset
            ? hv_piece_subset(shard, obj.loss, local_margins, u_bc,
                              *hessian_subset)
            : hv_piece_full(shard, obj.loss, local_margins, u_bc);
    const Vector hsum = ctx.reduce_all(piece, CommPhase::PcgIteration);

    Real alpha = 0.0, beta = 0.0;
    if (master) {
      Hu = hsum / count + obj.lambda * u;
      const Real uHu = u.dot(Hu);
      if (!(uHu > 0)) {
        throw SolverError("u.Hu <= 0 in PCG: system is not positive definite");
      }
      alpha = rho / uHu;
      v += alpha * u;
      delta_sq = v.dot(Hv) + alpha * v.dot(Hu);
      Hv += alpha * Hu;
      r -= alpha * Hu;
      s = precond->solve(r);
      const Real rs = r.dot(s);
      beta = rs / rho;
      u = s + beta * u;
      rho = rs;
    }
    ++t;
    const Real rsq = ctx.control_sum(master ? r.squaredNorm() : 0.0);
    rnorm = std::sqrt(rsq);
    if (master && probe) probe({t, alpha, beta, rnorm, v, r, u, Hu, Hv});
    if (rnorm <= eps_k) break;
    if (t >= max_inner) {
      throw SolverError("PCG did not reach tolerance after " +
                        std::to_string(t) + " iterations");
    }
  }

  NewtonStepResult result;
  result.inner_iters = t;
  result.residual_norm = rnorm;
  result.comm_rounds = ctx.ledger_snapshot().rounds() - rounds_before;
  if (master) {
    result.step = std::move(v);
    result.delta = std::sqrt(std::max(Real(0), delta_sq));
  }
  return result;
}

NewtonStepResult pcg_by_features(NodeContext& ctx, const DatasetShard& shard,
                                 const Objective& obj, const Vector& grad_slice,
                                 const Vector& margins,
                                 const Preconditioner& block_precond,
                                 Real eps_k,
                                 const std::vector<Index>* hessian_subset,
                                 Index max_inner) {
  const Index dj = shard.local.rows();
  const Real count =
      hessian_subset ? static_cast<Real>(hessian_subset->size())
                     : static_cast<Real>(obj.n);
  const auto rounds_before = ctx.ledger_snapshot().rounds();

  Vector v = Vector::Zero(dj);
  Vector Hv = Vector::Zero(dj);
  Vector r = grad_slice;
  Vector s = block_precond.solve(r);
  Vector u = s;
  // One extra scalar sum per PCG run; it belongs to setup, not to the
  // per-iteration traffic, hence the outer-gradient label.
  Real rho = ctx.reduce_all_scalar(r.dot(s), CommPhase::OuterGradient);
  Real delta_contrib = 0.0;

  int t = 0;
  Real rnorm = 0.0;
  while (true) {
    Vector raw;
    if (!hessian_subset) {
      const Vector t_local = shard.local.transpose() * u;
      const Vector t_glob = ctx.reduce_all(t_local, CommPhase::PcgIteration);
      const Vector z = curvature_weighted(obj.loss, margins, shard.labels, t_glob);
      raw = shard.local * z;
    } else {
      const auto& subset = *hessian_subset;
      Vector contrib(static_cast<Index>(subset.size()));
      for (size_t p = 0; p < subset.size(); ++p) {
        Real dot = 0.0;
        for (SpMat::InnerIterator it(shard.local, subset[p]); it; ++it) {
          dot += it.value() * u[it.row()];
        }
        contrib[static_cast<Index>(p)] = dot;
      }
      const Vector t_glob = ctx.reduce_all(contrib, CommPhase::PcgIteration);
      raw = Vector::Zero(dj);
      for (size_t p = 0; p < subset.size(); ++p) {
        const Index g = subset[p];
        const Real z = loss_second_derivative(obj.loss, margins[g],
                                              shard.labels[g]) *
                       t_glob[static_cast<Index>(p)];
        for (SpMat::InnerIterator it(shard.local, g); it; ++it) {
          raw[it.row()] += z * it.value();
        }
      }
    }
    const Vector Hu = raw / count + obj.lambda * u;
    const Real uHu =
        ctx.reduce_all_scalar(u.dot(Hu), CommPhase::PcgIteration);
    if (!(uHu > 0)) {
      throw SolverError("u.Hu <= 0 in PCG: system is not positive definite");
    }
    const Real alpha = rho / uHu;
    v += alpha * u;
    delta_contrib = v.dot(Hv) + alpha * v.dot(Hu);
    Hv += alpha * Hu;
    r -= alpha * Hu;
    s = block_precond.solve(r);
    const Real rs = ctx.reduce_all_scalar(r.dot(s), CommPhase::PcgIteration);
    const Real beta = rs / rho;
    u = s + beta * u;
    rho = rs;
    ++t;
    const Real rsq = ctx.control_sum(r.squaredNorm());
    rnorm = std::sqrt(rsq);
    if (rnorm <= eps_k) break;
    if (t >= max_inner) {
      throw SolverError("PCG did not reach tolerance after " +
                        std::to_string(t) + " iterations");
    }
  }

  const Real delta_sq =
      ctx.reduce_all_scalar(delta_contrib, CommPhase::Integration);

  NewtonStepResult result;
  result.step = std::move(v);
  result.delta = std::sqrt(std::max(Real(0), delta_sq));
  result.inner_iters = t;
  result.residual_norm = rnorm;
  result.comm_rounds = ctx.ledger_snapshot().rounds() - rounds_before;
  return result;
}

namespace {

using Clock = std::chrono::steady_clock;

struct RunShared {
  std::vector<std::vector<Vector>> iterate_slices;  // [node][outer]
  std::vector<TraceRow> trace;                      // written by node 0
  Vector final_w;
  bool converged = false;
  int outer_iters = 0;
  std::uint64_t total_inner = 0;
  Real f_final = 0;
  Real grad_norm_final = 0;
};

void validate_config(const SolverConfig& cfg, const SparseDataset& ds) {
  if (cfg.nodes < 1) throw ConfigError("nodes must be >= 1");
  if (!(cfg.mu >= 0)) throw ConfigError("mu must be nonnegative");
  if (cfg.max_outer < 0) throw ConfigError("max-outer must be nonnegative");
  if (!(cfg.grad_tol >= 0)) throw ConfigError("grad-tol must be nonnegative");
  if (!(cfg.hessian_fraction > 0 && cfg.hessian_fraction <= 1)) {
    throw ConfigError("hessian-fraction must lie in (0, 1]");
  }
  if (cfg.eps.mode == EpsPolicy::Mode::Relative && !(cfg.eps.beta > 0)) {
    throw ConfigError("eps-beta must be positive");
  }
  if (cfg.eps.mode == EpsPolicy::Mode::Absolute && !(cfg.eps.absolute > 0)) {
    throw ConfigError("absolute eps must be positive");
  }
  if (cfg.precond == PrecondKind::Woodbury) {
    if (cfg.tau < 1) throw ConfigError("tau must be >= 1");
    const Index master_samples =
        cfg.mode == PartitionMode::BySamples
            ? make_partition(cfg.mode, ds.n, cfg.nodes).size(0)
            : ds.n;
    if (cfg.tau > master_samples) {
      throw ConfigError("tau exceeds the sample count available for the "
                        "preconditioner (" +
                        std::to_string(master_samples) + ")");
    }
  }
}

std::unique_ptr<Preconditioner> build_sample_mode_precond(
    const SolverConfig& cfg, const DatasetShard& shard, const Index d,
    const Vector& local_margins) {
  if (cfg.precond == PrecondKind::Identity) {
    return std::make_unique<IdentityPreconditioner>();
  }
  if (cfg.precond_blocks >= 2) {
    const Partition blocks =
        make_partition(PartitionMode::ByFeatures, d, cfg.precond_blocks);
    std::vector<WoodburyPreconditioner> parts;
    parts.reserve(static_cast<size_t>(blocks.blocks()));
    for (Index j = 0; j < blocks.blocks(); ++j) {
      parts.push_back(build_block_preconditioner(
          shard.local, local_margins.head(cfg.tau),
          shard.labels.head(cfg.tau), cfg.loss, cfg.lambda, cfg.mu, cfg.tau,
          blocks.begin(j), blocks.size(j)));
    }
    return std::make_unique<BlockDiagPreconditioner>(std::move(parts),
                                                     blocks.boundaries);
  }
  return std::make_unique<WoodburyOp>(build_preconditioner(
      shard.local, local_margins.head(cfg.tau), shard.labels.head(cfg.tau),
      cfg.loss, cfg.lambda, cfg.mu, cfg.tau));
}

void node_main_samples(NodeContext& ctx, const DatasetShard& shard,
                       const Objective& obj, const SolverConfig& cfg,
                       RunShared& shared, Clock::time_point t0) {
  const bool master = ctx.id() == 0;
  const Index d = obj.d;
  const Index n = obj.n;
  const Index max_inner = cfg.max_inner > 0 ? cfg.max_inner : 2 * d + 10;

  Vector w = Vector::Zero(d);
  std::unique_ptr<Preconditioner> precond;
  std::uint64_t inner_cum = 0;
  bool converged = false;
  int k = 0;

  for (k = 0;; ++k) {
    w = ctx.broadcast(0, w, CommPhase::OuterGradient);
    const Vector local_margins = shard.local.transpose() * w;
    const Vector gpiece =
        shard.local * derivative_coeffs(obj.loss, local_margins, shard.labels);
    const Vector gsum = ctx.reduce_all(gpiece, CommPhase::OuterGradient);
    const Vector g = gsum / static_cast<Real>(n) + obj.lambda * w;
    const Real loss_sum = ctx.reduce_all_scalar(
        loss_total(obj.loss, local_margins, shard.labels),
        CommPhase::OuterGradient);
    const Real f =
        loss_sum / static_cast<Real>(n) + 0.5 * obj.lambda * w.squaredNorm();
    const Real gnorm = g.norm();
    if (!std::isfinite(f) || !std::isfinite(gnorm)) {
      throw DivergenceError("objective diverged at outer iteration " +
                            std::to_string(k));
    }

    if (master) {
      const TrafficLedger led = ctx.ledger_snapshot();
      shared.trace.push_back(
          {k, inner_cum, f, gnorm, led.rounds(), led.grouped_rounds(),
           led.scalars(), led.vector_elements(),
           std::chrono::duration<double>(Clock::now() - t0).count()});
      shared.f_final = f;
      shared.grad_norm_final = gnorm;
      if (cfg.record_iterates) shared.iterate_slices[0].push_back(w);
    }

    if (gnorm <= cfg.grad_tol) {
      converged = true;
      break;
    }
    if (k >= cfg.max_outer) break;

    const Real eps_k = eps_policy(gnorm, cfg.eps);
    std::vector<Index> subset_store;
    const std::vector<Index>* subset = nullptr;
    if (cfg.hessian_fraction < 1.0) {
      subset_store = hessian_sample_subset(n, cfg.hessian_fraction, cfg.seed, k);
      subset = &subset_store;
    }
    if (master &&
        (!precond || (cfg.precond == PrecondKind::Woodbury &&
                      obj.loss.family != LossFamily::Quadratic))) {
      precond = build_sample_mode_precond(cfg, shard, d, local_margins);
    }

    const NewtonStepResult step =
        pcg_by_samples(ctx, shard, obj, g, local_margins, precond.get(), eps_k,
                       subset, max_inner, master ? cfg.inner_probe : InnerProbe{});
    inner_cum += static_cast<std::uint64_t>(step.inner_iters);
    if (master) w -= step.step / (1.0 + step.delta);
  }

  if (master) {
    shared.final_w = w;
    shared.converged = converged;
    shared.outer_iters = k;
    shared.total_inner = inner_cum;
  }
}

void node_main_features(NodeContext& ctx, const DatasetShard& shard,
                        const Objective& obj, const SolverConfig& cfg,
                        RunShared& shared, Clock::time_point t0) {
  const bool reporter = ctx.id() == 0;
  const Index d = obj.d;
  const Index n = obj.n;
  const Index dj = shard.local.rows();
  const Index max_inner = cfg.max_inner > 0 ? cfg.max_inner : 2 * d + 10;

  Vector w = Vector::Zero(dj);  // this node's slice of the iterate
  std::unique_ptr<Preconditioner> precond;
  std::uint64_t inner_cum = 0;
  bool converged = false;
  int k = 0;

  for (k = 0;; ++k) {
    const Vector margin_piece = shard.local.transpose() * w;
    const Vector margins =
        ctx.reduce_all(margin_piece, CommPhase::OuterGradient);
    const Vector graw =
        shard.local * derivative_coeffs(obj.loss, margins, shard.labels);
    const Vector g = graw / static_cast<Real>(n) + obj.lambda * w;
    const Real gnsq =
        ctx.reduce_all_scalar(g.squaredNorm(), CommPhase::OuterGradient);
    const Real wsq =
        ctx.reduce_all_scalar(w.squaredNorm(), CommPhase::OuterGradient);
    const Real f = loss_total(obj.loss, margins, shard.labels) /
                       static_cast<Real>(n) +
                   0.5 * obj.lambda * wsq;
    const Real gnorm = std::sqrt(gnsq);
    if (!std::isfinite(f) || !std::isfinite(gnorm)) {
      throw DivergenceError("objective diverged at outer iteration " +
                            std::to_string(k));
    }

    if (reporter) {
      const TrafficLedger led = ctx.ledger_snapshot();
      shared.trace.push_back(
          {k, inner_cum, f, gnorm, led.rounds(), led.grouped_rounds(),
           led.scalars(), led.vector_elements(),
           std::chrono::duration<double>(Clock::now() - t0).count()});
      shared.f_final = f;
      shared.grad_norm_final = gnorm;
    }
    if (cfg.record_iterates) {
      shared.iterate_slices[static_cast<size_t>(ctx.id())].push_back(w);
    }

    if (gnorm <= cfg.grad_tol) {
      converged = true;
      break;
    }
    if (k >= cfg.max_outer) break;

    const Real eps_k = eps_policy(gnorm, cfg.eps);
    std::vector<Index> subset_store;
    const std::vector<Index>* subset = nullptr;
    if (cfg.hessian_fraction < 1.0) {
      subset_store = hessian_sample_subset(n, cfg.hessian_fraction, cfg.seed, k);
      subset = &subset_store;
    }
    if (!precond || (cfg.precond == PrecondKind::Woodbury &&
                     obj.loss.family != LossFamily::Quadratic)) {
      if (cfg.precond == PrecondKind::Identity) {
        precond = std::make_unique<IdentityPreconditioner>();
      } else {
        // The node's feature rows of the first tau samples, with curvature
        // taken from the cached margin vector: the diagonal block of the
        // global preconditioner.
        precond = std::make_unique<WoodburyOp>(build_preconditioner(
            shard.local, margins.head(cfg.tau), shard.labels.head(cfg.tau),
            cfg.loss, cfg.lambda, cfg.mu, cfg.tau));
      }
    }

    const NewtonStepResult step = pcg_by_features(
        ctx, shard, obj, g, margins, *precond, eps_k, subset, max_inner);
    inner_cum += static_cast<std::uint64_t>(step.inner_iters);
    w -= step.step / (1.0 + step.delta);
  }

  // Step-level integration: the sharded iterate is collected once per run.
  Vector padded = Vector::Zero(d);
  padded.segment(shard.offset, dj) = w;
  auto gathered = ctx.reduce(0, padded, CommPhase::Integration);
  if (reporter) {
    shared.final_w = std::move(*gathered);
    shared.converged = converged;
    shared.outer_iters = k;
    shared.total_inner = inner_cum;
  }
}

}  // namespace

SolveResult solve_distributed(const SparseDataset& ds,
                              const SolverConfig& cfg) {
  validate_config(cfg, ds);
  const Objective obj(cfg.lambda, cfg.loss, ds.n, ds.d);
  const std::vector<DatasetShard> shards = partition(ds, cfg.nodes, cfg.mode);

  RunShared shared;
  shared.iterate_slices.resize(static_cast<size_t>(cfg.nodes));

  Cluster cluster(cfg.nodes, cfg.scheduler);
  const auto t0 = Clock::now();
  cluster.run([&](NodeContext& ctx) {
    const DatasetShard& shard = shards[static_cast<size_t>(ctx.id())];
    if (cfg.mode == PartitionMode::BySamples) {
      node_main_samples(ctx, shard, obj, cfg, shared, t0);
    } else {
      node_main_features(ctx, shard, obj, cfg, shared, t0);
    }
  });

  SolveResult result;
  result.w = std::move(shared.final_w);
  result.converged = shared.converged;
  result.outer_iters = shared.outer_iters;
  result.total_inner = shared.total_inner;
  result.f_value = shared.f_final;
  result.grad_norm = shared.grad_norm_final;
  result.trace = std::move(shared.trace);
  result.ledger = cluster.ledger_snapshot();

  if (cfg.record_iterates) {
    const size_t steps = shared.iterate_slices[0].size();
    if (cfg.mode == PartitionMode::BySamples) {
      result.iterates = std::move(shared.iterate_slices[0]);
    } else {
      const Partition p =
          make_partition(PartitionMode::ByFeatures, ds.d, cfg.nodes);
      result.iterates.assign(steps, Vector::Zero(ds.d));
      for (Index j = 0; j < cfg.nodes; ++j) {
        for (size_t k = 0; k < steps; ++k) {
          result.iterates[k].segment(p.begin(j), p.size(j)) =
              shared.iterate_slices[static_cast<size_t>(j)][k];
        }
      }
    }
  }
  return result;
}

}  // namespace dinewton
