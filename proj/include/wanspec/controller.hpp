#pragma once

#include "wanspec/oracle.hpp"
#include "wanspec/spectree.hpp"
#include "wanspec/types.hpp"
#include "wanspec/wire.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace wanspec {

// Target-model side of the protocol. Pure state machine: the harness owns
// scheduling and the clock, runs the model steps (simulated or slept), and
// moves messages. poll() decides what to run next; apply_*() folds a
// completed step back into the state.

struct ControllerConfig {
  std::uint32_t k = 2;              // candidates validated per target step
  SimTime rtt_estimate = 0;         // R: expected round trip to the worker
  double phi = 0.5;                 // entropy threshold for marking the worker stale
  SimTime t_target = 23400;         // target model step duration
  SimTime t_draft = 7500;           // draft model step duration
  std::uint32_t catchup_batch_limit = 32;
  std::size_t max_nodes = 64;
  TokenId eos = 32767;
  bool wait_backstop = false;       // liveness fallback: draft again after 3R of waiting

  void validate() const {
    if (k < 1) throw ConfigError("controller: k must be >= 1");
    if (rtt_estimate < 0) throw ConfigError("controller: R must be >= 0");
    if (t_target <= 0 || t_draft <= 0)
      throw ConfigError("controller: step durations must be > 0");
    if (catchup_batch_limit < 1)
      throw ConfigError("controller: catchup_batch_limit must be >= 1");
  }
};

struct ControllerCounters {
  std::uint64_t target_steps = 0;
  std::uint64_t local_draft_steps = 0;   // candidate-emitting local draft steps
  std::uint64_t catchup_batches = 0;     // extra context passes beyond the emitting one
  std::uint64_t draft_passes = 0;        // every draft forward pass, catch-up included
  std::uint64_t sync_stalls = 0;         // target steps that rejected a candidate
  std::uint64_t entropy_resets = 0;      // full accepts whose bonus entropy exceeded phi
  std::uint64_t stale_specs_dropped = 0;
  std::uint64_t stale_local_drafts = 0;  // drafts overtaken by a concurrent commit
};

struct ControllerState {
  SpecTree tree;
  std::vector<TokenId> committed;
  bool finished = false;
  SimTime t_update = 0;                // timestamp of the last out-of-date marking
  std::vector<TokenId> draft_context;  // tokens the local draft model has consumed
  SimTime wait_since = -1;
  std::uint64_t request_id = 0;
  ControllerCounters counters;

  explicit ControllerState(std::size_t max_nodes = 64) : tree(max_nodes) {}

  /// Starts a request. t_update begins at the request start so the local
  /// draft covers the window before the worker's first speculations arrive.
  void reset(std::uint64_t request, SimTime now, std::size_t max_nodes) {
    tree = SpecTree(max_nodes);
    committed.clear();
    finished = false;
    t_update = now;
    draft_context.clear();
    wait_since = -1;
    request_id = request;
  }

  std::uint64_t draft_position() const { return draft_context.size(); }
};

/// Splits a context gap of `lag` tokens into forward passes of at most
/// `limit` tokens each. The final pass also emits the next candidate, so a
/// local draft step with 1 <= lag <= limit costs exactly one pass.
inline std::vector<std::uint32_t> catchup_plan(std::uint64_t lag, std::uint32_t limit) {
  std::vector<std::uint32_t> batches;
  while (lag > 0) {
    auto take = static_cast<std::uint32_t>(std::min<std::uint64_t>(lag, limit));
    batches.push_back(take);
    lag -= take;
  }
  return batches;
}

struct StepTarget {
  std::uint64_t base = 0;                  // committed length the path extends
  std::vector<SpecTree::PathStep> path;    // k nodes, best path by path probability

  std::vector<TokenId> tokens() const {
    std::vector<TokenId> out;
    out.reserve(path.size());
    for (const auto& p : path) out.push_back(p.token);
    return out;
  }
};

struct StepDraftLocal {
  NodeId leaf = kRootId;                   // frontier leaf being extended
  std::uint64_t anchor = 0;                // absolute position of the new candidate
  std::vector<std::uint32_t> batches;      // catch-up plan (empty when context is hot)
  std::vector<TokenId> context;            // tokens consumed once the step completes

  std::size_t passes() const { return batches.empty() ? 1 : batches.size(); }
  SimTime duration(SimTime t_draft) const {
    return static_cast<SimTime>(passes()) * t_draft;
  }
};

struct WaitAction {
  SimTime wait_until = 0;                  // t_update + R; informational
  std::optional<SimTime> backstop_at;      // set when the liveness backstop is armed
};

struct FinishAction {
  std::uint64_t final_length = 0;
};

using ControllerAction = std::variant<StepTarget, StepDraftLocal, WaitAction, FinishAction>;

/// Occupancy of the controller's two model resources. The target and draft
/// models overlap: a hedging draft pass must never delay a target step that
/// becomes runnable mid-pass. The harness polls whenever either resource
/// frees up; each poll returns one action for one idle resource.
struct ControllerDevices {
  bool target_busy = false;
  bool draft_busy = false;

  bool any_busy() const { return target_busy || draft_busy; }
};

namespace detail {

/// Resolves a content-addressed speculation anchor against the committed
/// output and the live tree. Returns the parent node to extend, or nullopt
/// when the anchor is stale: behind the commit point, contradicting it, or
/// walking off the tree.
inline std::optional<NodeId> resolve_speculation(const SpecTree& tree,
                                                 const std::vector<TokenId>& committed,
                                                 const SpeculationMsg& s) {
  const std::uint64_t here = tree.committed_len();
  if (s.base > here) return std::nullopt;
  const std::uint64_t overlap = here - s.base;
  if (s.path.size() < overlap) return std::nullopt;  // lands inside committed output
  for (std::uint64_t i = 0; i < overlap; ++i)
    if (s.path[i] != committed[s.base + i]) return std::nullopt;
  return tree.resolve_path(
      std::span<const TokenId>(s.path).subspan(static_cast<std::size_t>(overlap)));
}

}  // namespace detail

/// Ingests inbox messages, then picks one action:
///   StepTarget     when the target model is free and the tree is k deep,
///   StepDraftLocal when the draft model is free, the tree is shallower than
///                  k, and now is within R of the last out-of-date marking,
///   Wait           otherwise (a step is in flight, or worker speculations
///                  are due any moment),
///   Finish         once EOS is committed.
inline ControllerAction controller_poll(ControllerState& st, const ControllerConfig& cfg,
                                        SimTime now, std::span<const Message> inbox,
                                        ControllerDevices devices = {}) {
  for (const Message& m : inbox) {
    const auto* s = std::get_if<SpeculationMsg>(&m.body);
    if (!s || st.finished || m.request_id != st.request_id) continue;
    auto parent = detail::resolve_speculation(st.tree, st.committed, *s);
    if (!parent) {
      ++st.counters.stale_specs_dropped;
      continue;
    }
    if (!st.tree.append(*parent, s->candidates, NodeOrigin::worker))
      ++st.counters.stale_specs_dropped;
  }

  if (st.finished) {
    st.wait_since = -1;
    return FinishAction{st.committed.size()};
  }

  if (!devices.target_busy) {
    if (auto path = st.tree.best_path(cfg.k)) {
      st.wait_since = -1;
      return StepTarget{st.tree.committed_len(), std::move(*path)};
    }
  }

  auto plan_local = [&]() -> StepDraftLocal {
    st.wait_since = -1;
    NodeId leaf = st.tree.frontier(1).front();
    StepDraftLocal plan;
    plan.leaf = leaf;
    plan.anchor = st.tree.extension_position(leaf);
    plan.context = st.committed;
    for (TokenId t : st.tree.path_tokens(leaf)) plan.context.push_back(t);
    // Longest prefix of the needed context the draft model already consumed.
    std::size_t lcp = 0;
    while (lcp < plan.context.size() && lcp < st.draft_context.size() &&
           plan.context[lcp] == st.draft_context[lcp])
      ++lcp;
    plan.batches = catchup_plan(plan.context.size() - lcp, cfg.catchup_batch_limit);
    return plan;
  };

  if (!devices.draft_busy && st.tree.depth() < cfg.k &&
      sat_add(st.t_update, cfg.rtt_estimate) > now)
    return plan_local();

  if (devices.any_busy()) {
    // A step is already running; this is progress, not a stall.
    st.wait_since = -1;
    return WaitAction{sat_add(st.t_update, cfg.rtt_estimate), std::nullopt};
  }

  if (st.wait_since < 0) st.wait_since = now;
  WaitAction w;
  w.wait_until = sat_add(st.t_update, cfg.rtt_estimate);
  if (cfg.wait_backstop && cfg.rtt_estimate > 0) {
    SimTime deadline = sat_add(st.wait_since, 3 * cfg.rtt_estimate);
    if (now >= deadline) return plan_local();
    w.backstop_at = deadline;
  }
  return w;
}

/// Folds a finished target step back in: commits the accepted prefix plus
/// the bonus token, prunes the tree, emits the Validation (and Eos when the
/// output just ended), and updates the staleness clock.
inline std::vector<Message> apply_target_result(ControllerState& st,
                                                const ControllerConfig& cfg,
                                                const ValidationResult& result,
                                                SimTime now) {
  const std::uint64_t base = st.tree.committed_len();
  std::vector<TokenId> toks = result.accepted;
  toks.push_back(result.bonus_token);
  commit_tokens(st.committed, st.finished, toks, cfg.eos);
  st.tree.prune(result);

  ++st.counters.target_steps;
  if (result.length() < cfg.k + 1) {
    st.t_update = now;
    ++st.counters.sync_stalls;
  } else if (result.final_entropy > cfg.phi) {
    st.t_update = now;
    ++st.counters.entropy_resets;
  }

  std::vector<Message> out;
  Message v;
  v.request_id = st.request_id;
  v.body = ValidationMsg{base, result};
  out.push_back(std::move(v));
  if (st.finished) {
    Message e;
    e.request_id = st.request_id;
    e.body = EosMsg{st.committed.size()};
    out.push_back(std::move(e));
  }
  return out;
}

/// Folds a finished local draft step back in: the draft model consumed the
/// planned context and emitted one prediction at the anchor; only the argmax
/// is kept (the controller's fallback is a plain chain). A target step that
/// completed meanwhile may have moved the commit point past the anchor; the
/// pass still happened, but its output is obsolete and dropped.
inline void apply_local_draft(ControllerState& st, const ControllerConfig& cfg,
                              const StepDraftLocal& plan, const Prediction& prediction) {
  (void)cfg;
  ++st.counters.local_draft_steps;
  st.counters.catchup_batches += plan.passes() - 1;
  st.counters.draft_passes += plan.passes();
  st.draft_context = plan.context;
  bool leaf_live = plan.leaf == kRootId ? true : st.tree.contains(plan.leaf);
  if (!leaf_live || st.tree.extension_position(plan.leaf) != plan.anchor) {
    ++st.counters.stale_local_drafts;
    return;
  }
  const Candidate& top = prediction.argmax();
  CandidateIn c{top.id, top.prob, prediction.entropy};
  st.tree.append(plan.leaf, std::span<const CandidateIn>(&c, 1), NodeOrigin::controller);
}

}  // namespace wanspec
