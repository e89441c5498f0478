#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dinewton/types.hpp"

namespace dinewton {

enum class CommKind { Broadcast = 0, Reduce = 1, ReduceAll = 2 };
enum class CommPhase { OuterGradient = 0, PcgIteration = 1, Integration = 2 };

const char* to_string(CommKind k);
const char* to_string(CommPhase p);

/// Per-(phase, kind) traffic counters. One `rounds` tick per collective call
/// regardless of payload size; a length-1 payload counts toward `scalars`,
/// anything longer toward `vector_elements`. `vector_rounds` counts only the
/// calls that moved a vector payload -- the count conventionally plotted as
/// "rounds of communication" (scalar side-channels ride along as negligible).
struct TrafficLedger {
  struct Cell {
    std::uint64_t rounds = 0;
    std::uint64_t vector_rounds = 0;
    std::uint64_t scalars = 0;
    std::uint64_t vector_elements = 0;

    bool operator==(const Cell&) const = default;
  };

  Cell cell[3][3];  // [phase][kind]
  std::uint64_t control_syncs = 0;  // unmetered control plane, tracked apart

  Cell& at(CommPhase p, CommKind k) {
    return cell[static_cast<int>(p)][static_cast<int>(k)];
  }
  const Cell& at(CommPhase p, CommKind k) const {
    return cell[static_cast<int>(p)][static_cast<int>(k)];
  }

  std::uint64_t rounds() const;
  std::uint64_t rounds(CommPhase p) const;
  std::uint64_t grouped_rounds() const;  // total vector_rounds
  std::uint64_t grouped_rounds(CommPhase p) const;
  std::uint64_t scalars(CommPhase p) const;
  std::uint64_t scalars() const;
  std::uint64_t vector_elements(CommPhase p) const;
  std::uint64_t vector_elements() const;

  /// CSV with header `phase,kind,rounds,scalars,vector_elements`, one row per
  /// phase x kind. Control-plane syncs are not data traffic and stay out.
  std::string to_csv() const;

  bool operator==(const TrafficLedger&) const = default;
};

enum class Scheduler { Threads, RoundRobin };

class NodeContext;

/// An in-process cluster of m SPMD nodes. Nodes interact only through the
/// collectives below, which are also the barriers; every node must issue the
/// same call sequence (kind, root, length, phase) or the whole cluster aborts
/// with SpmdError instead of deadlocking. Reductions sum node payloads in
/// node-id order, so results are bitwise reproducible under either scheduler.
class Cluster {
 public:
  explicit Cluster(int nodes, Scheduler sched = Scheduler::Threads);

  /// Run `fn` once per node, each in its own context, and join. The first
  /// node error (by node id) is rethrown.
  void run(const std::function<void(NodeContext&)>& fn);

  int nodes() const { return m_; }
  TrafficLedger ledger_snapshot() const;

 private:
  friend class NodeContext;

  struct OpDesc {
    CommKind kind;
    int root;           // meaningful for Broadcast/Reduce
    Index len;
    CommPhase phase;
    std::uint64_t seq;  // per-node collective counter
    bool control;

    bool operator==(const OpDesc&) const = default;
  };

  // Rendezvous for one collective. Returns true if this node receives the
  // result (always, except non-root nodes of a Reduce).
  bool rendezvous(int node, const OpDesc& desc, const Vector& payload,
                  Vector& out);

  void complete_locked(const OpDesc& desc);
  void abort_locked(const std::string& reason);

  void acquire_turn(int node);
  void release_turn_locked(int node);

  void node_begin(int node);
  void node_finish(int node);

  const int m_;
  const Scheduler sched_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  TrafficLedger ledger_;

  // gate state
  int arrived_ = 0;
  std::uint64_t generation_ = 0;
  std::vector<std::optional<OpDesc>> submitted_;
  std::vector<const Vector*> inputs_;
  Vector result_;
  int finished_ = 0;
  std::vector<bool> done_;
  bool aborted_ = false;
  std::string abort_reason_;

  // round-robin token
  int turn_ = 0;
};

/// Handle through which one node's code talks to the cluster.
class NodeContext {
 public:
  int id() const { return id_; }
  int nodes() const { return cluster_->nodes(); }

  /// Root's payload is copied to every node. Non-root callers pass a buffer
  /// of the agreed length (contents ignored).
  Vector broadcast(int root, const Vector& payload, CommPhase phase);

  /// Elementwise sum over nodes, delivered to every node.
  Vector reduce_all(const Vector& payload, CommPhase phase);
  Real reduce_all_scalar(Real value, CommPhase phase);

  /// Elementwise sum delivered to root only; other nodes get nullopt.
  std::optional<Vector> reduce(int root, const Vector& payload,
                               CommPhase phase);

  /// Control-plane scalar sum: synchronizes like a collective but is not
  /// metered as data traffic (loop-termination flags and the like).
  Real control_sum(Real value);

  /// Consistent ledger copy; callers should be at a quiescent point of their
  /// own call sequence (e.g. between collectives of an outer iteration).
  TrafficLedger ledger_snapshot() const { return cluster_->ledger_snapshot(); }

 private:
  friend class Cluster;
  NodeContext(Cluster* c, int id) : cluster_(c), id_(id) {}

  Cluster* cluster_;
  int id_;
  std::uint64_t seq_ = 0;
};

}  // namespace dinewton
