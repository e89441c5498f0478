#include "dinewton/collectives.hpp"

#include <exception>
#include <sstream>
#include <thread>

namespace dinewton {

const char* to_string(CommKind k) {
  switch (k) {
    case CommKind::Broadcast: return "Broadcast";
    case CommKind::Reduce: return "Reduce";
    case CommKind::ReduceAll: return "ReduceAll";
  }
  return "?";
}

const char* to_string(CommPhase p) {
  switch (p) {
    case CommPhase::OuterGradient: return "outer-gradient";
    case CommPhase::PcgIteration: return "pcg-iteration";
    case CommPhase::Integration: return "integration";
  }
  return "?";
}

namespace {
template <typename F>
std::uint64_t sum_cells(const TrafficLedger& l, F f) {
  std::uint64_t total = 0;
  for (int p = 0; p < 3; ++p)
    for (int k = 0; k < 3; ++k) total += f(l.cell[p][k]);
  return total;
}
template <typename F>
std::uint64_t sum_kinds(const TrafficLedger& l, CommPhase p, F f) {
  std::uint64_t total = 0;
  for (int k = 0; k < 3; ++k) total += f(l.cell[static_cast<int>(p)][k]);
  return total;
}
}  // namespace

std::uint64_t TrafficLedger::rounds() const {
  return sum_cells(*this, [](const Cell& c) { return c.rounds; });
}
std::uint64_t TrafficLedger::rounds(CommPhase p) const {
  return sum_kinds(*this, p, [](const Cell& c) { return c.rounds; });
}
std::uint64_t TrafficLedger::grouped_rounds() const {
  return sum_cells(*this, [](const Cell& c) { return c.vector_rounds; });
}
std::uint64_t TrafficLedger::grouped_rounds(CommPhase p) const {
  return sum_kinds(*this, p, [](const Cell& c) { return c.vector_rounds; });
}
std::uint64_t TrafficLedger::scalars(CommPhase p) const {
  return sum_kinds(*this, p, [](const Cell& c) { return c.scalars; });
}
std::uint64_t TrafficLedger::scalars() const {
  return sum_cells(*this, [](const Cell& c) { return c.scalars; });
}
std::uint64_t TrafficLedger::vector_elements(CommPhase p) const {
  return sum_kinds(*this, p, [](const Cell& c) { return c.vector_elements; });
}
std::uint64_t TrafficLedger::vector_elements() const {
  return sum_cells(*this, [](const Cell& c) { return c.vector_elements; });
}

std::string TrafficLedger::to_csv() const {
  std::ostringstream out;
  out << "phase,kind,rounds,scalars,vector_elements\n";
  for (int p = 0; p < 3; ++p) {
    for (int k = 0; k < 3; ++k) {
      const Cell& c = cell[p][k];
      out << to_string(static_cast<CommPhase>(p)) << ','
          << to_string(static_cast<CommKind>(k)) << ',' << c.rounds << ','
          << c.scalars << ',' << c.vector_elements << '\n';
    }
  }
  return out.str();
}

Cluster::Cluster(int nodes, Scheduler sched) : m_(nodes), sched_(sched) {
  if (nodes < 1) throw ConfigError("cluster needs at least one node");
  submitted_.resize(static_cast<size_t>(nodes));
  inputs_.resize(static_cast<size_t>(nodes), nullptr);
  done_.resize(static_cast<size_t>(nodes), false);
}

TrafficLedger Cluster::ledger_snapshot() const {
  std::lock_guard lk(mu_);
  return ledger_;
}

void Cluster::abort_locked(const std::string& reason) {
  if (aborted_) return;
  aborted_ = true;
  abort_reason_ = reason;
  cv_.notify_all();
}

void Cluster::complete_locked(const OpDesc& first) {
  for (int j = 0; j < m_; ++j) {
    if (!submitted_[j] || !(*submitted_[j] == first)) {
      std::ostringstream msg;
      msg << "SPMD sequence mismatch at collective #" << first.seq << ": node 0 "
          << to_string(first.kind) << " len " << first.len << ", node " << j
          << " differs";
      abort_locked(msg.str());
      return;
    }
  }

  if (first.kind == CommKind::Broadcast) {
    result_ = *inputs_[first.root];
  } else {
    result_ = *inputs_[0];
    for (int j = 1; j < m_; ++j) result_ += *inputs_[j];  // fixed node order
  }

  if (first.control) {
    ledger_.control_syncs++;
  } else {
    auto& c = ledger_.at(first.phase, first.kind);
    c.rounds++;
    if (first.len == 1) {
      c.scalars++;
    } else {
      c.vector_rounds++;
      c.vector_elements += static_cast<std::uint64_t>(first.len);
    }
  }

  for (auto& s : submitted_) s.reset();
  arrived_ = 0;
  generation_++;
  cv_.notify_all();
}

bool Cluster::rendezvous(int node, const OpDesc& desc, const Vector& payload,
                         Vector& out) {
  std::unique_lock lk(mu_);
  if (aborted_) throw SpmdError(abort_reason_);
  if (finished_ > 0) {
    abort_locked("node " + std::to_string(node) +
                 " issued a collective after another node finished");
    throw SpmdError(abort_reason_);
  }
  if (desc.root < 0 || desc.root >= m_) {
    abort_locked("collective root out of range");
    throw SpmdError(abort_reason_);
  }

  submitted_[node] = desc;
  inputs_[node] = &payload;
  arrived_++;
  const std::uint64_t my_gen = generation_;

  if (sched_ == Scheduler::RoundRobin) release_turn_locked(node);

  if (arrived_ == m_) {
    complete_locked(*submitted_[0]);
  } else {
    cv_.wait(lk, [&] { return aborted_ || generation_ != my_gen; });
  }
  if (aborted_) throw SpmdError(abort_reason_);

  const bool receives = desc.kind != CommKind::Reduce || node == desc.root;
  if (receives) out = result_;
  lk.unlock();

  if (sched_ == Scheduler::RoundRobin) acquire_turn(node);
  return receives;
}

void Cluster::acquire_turn(int node) {
  std::unique_lock lk(mu_);
  cv_.wait(lk, [&] { return aborted_ || turn_ == node; });
  if (aborted_) throw SpmdError(abort_reason_);
}

void Cluster::release_turn_locked(int node) {
  int next = node;
  for (int step = 0; step < m_; ++step) {
    next = (next + 1) % m_;
    if (!done_[next]) break;
  }
  turn_ = next;
  cv_.notify_all();
}

void Cluster::node_begin(int node) {
  if (sched_ == Scheduler::RoundRobin) acquire_turn(node);
}

void Cluster::node_finish(int node) {
  std::lock_guard lk(mu_);
  done_[node] = true;
  finished_++;
  if (arrived_ > 0 && !aborted_) {
    abort_locked("node " + std::to_string(node) +
                 " finished while others wait in a collective");
  }
  if (sched_ == Scheduler::RoundRobin) release_turn_locked(node);
  cv_.notify_all();
}

void Cluster::run(const std::function<void(NodeContext&)>& fn) {
  {
    std::lock_guard lk(mu_);
    arrived_ = 0;
    generation_ = 0;
    finished_ = 0;
    aborted_ = false;
    abort_reason_.clear();
    turn_ = 0;
    for (auto& s : submitted_) s.reset();
    std::fill(done_.begin(), done_.end(), false);
  }

  std::vector<std::exception_ptr> errors(static_cast<size_t>(m_));
  std::exception_ptr root_cause;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(m_));

  for (int i = 0; i < m_; ++i) {
    threads.emplace_back([&, i] {
      NodeContext ctx(this, i);
      try {
        node_begin(i);
        fn(ctx);
      } catch (...) {
        errors[static_cast<size_t>(i)] = std::current_exception();
        std::lock_guard lk(mu_);
        if (!aborted_) {
          root_cause = errors[static_cast<size_t>(i)];
          abort_locked("node " + std::to_string(i) + " failed");
        }
      }
      node_finish(i);
    });
  }
  for (auto& t : threads) t.join();

  if (root_cause) std::rethrow_exception(root_cause);
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Vector NodeContext::broadcast(int root, const Vector& payload,
                              CommPhase phase) {
  Vector out;
  cluster_->rendezvous(
      id_, {CommKind::Broadcast, root, payload.size(), phase, seq_++, false},
      payload, out);
  return out;
}

Vector NodeContext::reduce_all(const Vector& payload, CommPhase phase) {
  Vector out;
  cluster_->rendezvous(
      id_, {CommKind::ReduceAll, 0, payload.size(), phase, seq_++, false},
      payload, out);
  return out;
}

Real NodeContext::reduce_all_scalar(Real value, CommPhase phase) {
  Vector v(1);
  v[0] = value;
  return reduce_all(v, phase)[0];
}

std::optional<Vector> NodeContext::reduce(int root, const Vector& payload,
                                          CommPhase phase) {
  Vector out;
  const bool got = cluster_->rendezvous(
      id_, {CommKind::Reduce, root, payload.size(), phase, seq_++, false},
      payload, out);
  if (!got) return std::nullopt;
  return out;
}

Real NodeContext::control_sum(Real value) {
  Vector v(1);
  v[0] = value;
  Vector out;
  cluster_->rendezvous(
      id_, {CommKind::ReduceAll, 0, 1, CommPhase::PcgIteration, seq_++, true},
      v, out);
  return out[0];
}

}  // namespace dinewton
