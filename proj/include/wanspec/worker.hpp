#pragma once

#include "wanspec/oracle.hpp"
#include "wanspec/spectree.hpp"
#include "wanspec/types.hpp"
#include "wanspec/wire.hpp"

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace wanspec {

// Draft-model side of the protocol. Each step extends up to s frontier
// leaves in one batch, branching top-2 where the draft entropy signals low
// confidence, and streams one speculation per extended leaf back to the
// controller. Same harness-driven poll/apply contract as the controller.

struct WorkerConfig {
  std::uint32_t b = 2;        // branching factor, 1 or 2
  double theta = 0.5;         // entropy below this skips the branch
  std::uint32_t s = 4;        // max parallel sequences per batched draft step
  SimTime t_draft = 7500;
  std::size_t max_nodes = 64;
  TokenId eos = 32767;

  void validate() const {
    if (b < 1 || b > 2) throw ConfigError("worker: b must be 1 or 2");
    if (s < 1) throw ConfigError("worker: s must be >= 1");
    if (t_draft <= 0) throw ConfigError("worker: t_draft must be > 0");
  }
};

struct WorkerCounters {
  std::uint64_t draft_steps = 0;        // batched steps, not per-leaf passes
  std::uint64_t speculations_sent = 0;
  std::uint64_t prunes_applied = 0;
  std::uint64_t branches = 0;           // leaves that got two children
  std::uint64_t stale_outputs_dropped = 0;
};

struct WorkerState {
  SpecTree tree;
  std::vector<TokenId> committed;
  bool finished = false;
  std::uint64_t request_id = 0;
  WorkerCounters counters;

  explicit WorkerState(std::size_t max_nodes = 64) : tree(max_nodes) {}

  void reset(std::uint64_t request, std::size_t max_nodes) {
    tree = SpecTree(max_nodes);
    committed.clear();
    finished = false;
    request_id = request;
  }
};

struct StepDraft {
  struct Leaf {
    NodeId id = kRootId;
    std::uint64_t anchor = 0;  // absolute position the leaf extends into
  };
  std::vector<Leaf> leaves;
};

struct WorkerFinish {};

using WorkerAction = std::variant<StepDraft, WorkerFinish>;

/// Applies all received validations in arrival order, then schedules one
/// batched draft step over the current frontier (the root anchor when the
/// tree is empty), or finishes once the output has ended.
inline WorkerAction worker_poll(WorkerState& st, const WorkerConfig& cfg,
                                std::span<const Message> inbox) {
  for (const Message& m : inbox) {
    if (m.request_id != st.request_id) continue;
    if (const auto* v = std::get_if<ValidationMsg>(&m.body)) {
      if (v->base != st.tree.committed_len()) continue;  // duplicate or out of date
      std::vector<TokenId> toks = v->result.accepted;
      toks.push_back(v->result.bonus_token);
      commit_tokens(st.committed, st.finished, toks, cfg.eos);
      st.tree.prune(v->result);
      ++st.counters.prunes_applied;
    } else if (std::get_if<EosMsg>(&m.body)) {
      st.finished = true;
    }
  }

  if (st.finished) return WorkerFinish{};

  StepDraft step;
  for (NodeId id : st.tree.frontier(cfg.s))
    step.leaves.push_back({id, st.tree.extension_position(id)});
  return step;
}

struct LeafOutput {
  NodeId leaf = kRootId;
  std::uint64_t anchor = 0;
  Prediction prediction;
};

/// Folds a finished batched draft step back in. Per leaf: keep only the
/// argmax when the draft is confident (entropy < theta) or branching is off,
/// otherwise the top two; append, and emit one speculation message anchored
/// at the current committed offset. Outputs whose leaf vanished under an
/// interleaved prune are dropped.
inline std::vector<Message> apply_draft_output(WorkerState& st, const WorkerConfig& cfg,
                                               std::span<const LeafOutput> outputs) {
  ++st.counters.draft_steps;
  std::vector<Message> out;
  for (const LeafOutput& o : outputs) {
    if (o.leaf != kRootId && !st.tree.contains(o.leaf)) {
      ++st.counters.stale_outputs_dropped;
      continue;
    }
    const Prediction& p = o.prediction;
    std::vector<CandidateIn> cands;
    cands.push_back({p.argmax().id, p.argmax().prob, p.entropy});
    if (cfg.b >= 2 && p.entropy >= cfg.theta && p.has_second()) {
      cands.push_back({p.argmax2().id, p.argmax2().prob, p.entropy});
      ++st.counters.branches;
    }
    SpeculationMsg s;
    s.base = st.tree.committed_len();
    s.path = st.tree.path_tokens(o.leaf);
    s.candidates = cands;
    if (!st.tree.append(o.leaf, cands, NodeOrigin::worker)) {
      ++st.counters.stale_outputs_dropped;
      continue;
    }
    Message m;
    m.request_id = st.request_id;
    m.body = std::move(s);
    out.push_back(std::move(m));
    ++st.counters.speculations_sent;
  }
  return out;
}

}  // namespace wanspec
