#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "dinewton/dataset.hpp"
#include "dinewton/solver.hpp"

namespace {

using namespace dinewton;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;

struct CliOptions {
  std::string data;
  std::string loss = "logistic";
  Real lambda = 1e-2;
  Real mu = 1e-2;
  Index tau = 100;
  std::string mode = "s";
  int nodes = 1;
  Real eps_beta = 0.05;
  Real hessian_fraction = 1.0;
  int max_outer = 100;
  Real grad_tol = 1e-10;
  std::uint64_t seed = 0;
  std::string out;
  std::string ledger_out;
  std::string scheduler = "threads";
};

void add_common_options(CLI::App* cmd, CliOptions& o) {
  cmd->add_option("--data", o.data, "libsvm dataset path (.gz accepted)")
      ->required();
  cmd->add_option("--loss", o.loss, "quadratic|squared-hinge|logistic")
      ->check(CLI::IsMember({"quadratic", "squared-hinge", "logistic"}));
  cmd->add_option("--lambda", o.lambda, "L2 weight");
  cmd->add_option("--mu", o.mu, "preconditioner damping");
  cmd->add_option("--tau", o.tau, "preconditioner sample count");
  cmd->add_option("--mode", o.mode, "partitioning: s (samples) | f (features)")
      ->check(CLI::IsMember({"s", "f"}));
  cmd->add_option("--nodes", o.nodes, "cluster size");
  cmd->add_option("--eps-beta", o.eps_beta,
                  "inner tolerance factor: eps_k = beta * ||grad||");
  cmd->add_option("--hessian-fraction", o.hessian_fraction,
                  "fraction of samples in Hessian-vector products");
  cmd->add_option("--max-outer", o.max_outer, "outer iteration cap");
  cmd->add_option("--grad-tol", o.grad_tol, "stop when ||grad|| <= tol");
  cmd->add_option("--seed", o.seed, "seed for randomized choices");
  cmd->add_option("--out", o.out, "trace / sweep CSV path")->required();
  cmd->add_option("--scheduler", o.scheduler, "threads|round-robin")
      ->check(CLI::IsMember({"threads", "round-robin"}));
}

SolverConfig to_solver_config(const CliOptions& o) {
  SolverConfig cfg;
  if (o.loss == "quadratic") {
    cfg.loss = LossModel::quadratic();
  } else if (o.loss == "squared-hinge") {
    cfg.loss = LossModel::squared_hinge();
  } else {
    cfg.loss = LossModel::logistic();
  }
  if (!(o.lambda > 0)) throw ConfigError("--lambda must be positive");
  cfg.lambda = o.lambda;
  cfg.mu = o.mu;
  cfg.tau = o.tau;
  cfg.mode = o.mode == "f" ? PartitionMode::ByFeatures : PartitionMode::BySamples;
  cfg.nodes = o.nodes;
  cfg.eps.beta = o.eps_beta;
  cfg.hessian_fraction = o.hessian_fraction;
  cfg.max_outer = o.max_outer;
  cfg.grad_tol = o.grad_tol;
  cfg.seed = o.seed;
  cfg.scheduler =
      o.scheduler == "round-robin" ? Scheduler::RoundRobin : Scheduler::Threads;
  return cfg;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

void print_summary(const SolveResult& res, double wall) {
  std::printf("converged=%s outer=%d inner=%llu\n",
              res.converged ? "yes" : "no", res.outer_iters,
              static_cast<unsigned long long>(res.total_inner));
  std::printf("f=%.12g grad_norm=%.6g\n", res.f_value, res.grad_norm);
  std::printf(
      "rounds=%llu grouped_rounds=%llu scalars=%llu vector_elements=%llu\n",
      static_cast<unsigned long long>(res.ledger.rounds()),
      static_cast<unsigned long long>(res.ledger.grouped_rounds()),
      static_cast<unsigned long long>(res.ledger.scalars()),
      static_cast<unsigned long long>(res.ledger.vector_elements()));
  std::printf("wall_seconds=%.3f\n", wall);
}

int run_solve(const CliOptions& o) {
  const SparseDataset ds = load_libsvm_file(o.data);
  const SolverConfig cfg = to_solver_config(o);
  const auto t0 = std::chrono::steady_clock::now();
  const SolveResult res = solve_distributed(ds, cfg);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  write_file(o.out, trace_to_csv(res.trace));
  if (!o.ledger_out.empty()) write_file(o.ledger_out, res.ledger.to_csv());
  print_summary(res, wall);
  return kExitOk;
}

int run_sweep_tau(const CliOptions& o, const std::vector<Index>& taus) {
  if (taus.empty()) throw ConfigError("--taus must not be empty");
  const SparseDataset ds = load_libsvm_file(o.data);
  std::string csv = "tau,outer_iters,total_inner_iters,rounds,wall_seconds\n";
  char buf[160];
  for (Index tau : taus) {
    SolverConfig cfg = to_solver_config(o);
    cfg.tau = tau;
    const auto t0 = std::chrono::steady_clock::now();
    const SolveResult res = solve_distributed(ds, cfg);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::snprintf(buf, sizeof buf, "%lld,%d,%llu,%llu,%.6f\n",
                  static_cast<long long>(tau), res.outer_iters,
                  static_cast<unsigned long long>(res.total_inner),
                  static_cast<unsigned long long>(res.ledger.rounds()), wall);
    csv += buf;
    std::printf("tau=%lld outer=%d inner=%llu\n", static_cast<long long>(tau),
                res.outer_iters,
                static_cast<unsigned long long>(res.total_inner));
  }
  write_file(o.out, csv);
  return kExitOk;
}

int run_sweep_hessian(const CliOptions& o, const std::vector<Real>& fractions) {
  if (fractions.empty()) throw ConfigError("--fractions must not be empty");
  for (Real f : fractions) {
    if (!(f > 0 && f <= 1)) {
      throw ConfigError("--fractions entries must lie in (0, 1]");
    }
  }
  const SparseDataset ds = load_libsvm_file(o.data);
  std::string csv =
      "fraction,outer_iters,total_inner_iters,rounds,wall_seconds\n";
  char buf[160];
  for (Real fraction : fractions) {
    SolverConfig cfg = to_solver_config(o);
    cfg.hessian_fraction = fraction;
    const auto t0 = std::chrono::steady_clock::now();
    const SolveResult res = solve_distributed(ds, cfg);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::snprintf(buf, sizeof buf, "%.6g,%d,%llu,%llu,%.6f\n", fraction,
                  res.outer_iters,
                  static_cast<unsigned long long>(res.total_inner),
                  static_cast<unsigned long long>(res.ledger.rounds()), wall);
    csv += buf;
    std::printf("fraction=%.6g outer=%d inner=%llu\n", fraction,
                res.outer_iters,
                static_cast<unsigned long long>(res.total_inner));
  }
  write_file(o.out, csv);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "dinewton: distributed inexact damped Newton solver for L2-regularized "
      "empirical risk minimization on an in-process metered cluster"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a config file");

  CliOptions solve_opts;
  CLI::App* solve = app.add_subcommand(
      "solve", "run one solve and write the outer-iteration trace CSV");
  add_common_options(solve, solve_opts);
  solve->add_option("--ledger-out", solve_opts.ledger_out,
                    "also write the communication ledger CSV");

  CliOptions tau_opts;
  std::vector<Index> taus;
  CLI::App* sweep_tau = app.add_subcommand(
      "sweep-tau", "solve once per preconditioner sample count");
  add_common_options(sweep_tau, tau_opts);
  sweep_tau->add_option("--taus", taus, "comma-separated tau values")
      ->required()
      ->delimiter(',');

  CliOptions hess_opts;
  std::vector<Real> fractions;
  CLI::App* sweep_hess = app.add_subcommand(
      "sweep-hessian", "solve once per Hessian sample fraction");
  add_common_options(sweep_hess, hess_opts);
  sweep_hess
      ->add_option("--fractions", fractions, "comma-separated fractions in (0,1]")
      ->required()
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (solve->parsed()) return run_solve(solve_opts);
    if (sweep_tau->parsed()) return run_sweep_tau(tau_opts, taus);
    if (sweep_hess->parsed()) return run_sweep_hessian(hess_opts, fractions);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kExitOk;
}
