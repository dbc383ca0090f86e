#include "wanspec/worker.hpp"

#include <doctest.h>

#include <limits>

using namespace wanspec;

namespace {

WorkerConfig cfg_with(std::uint32_t b, double theta, std::uint32_t s = 4) {
  WorkerConfig c;
  c.b = b;
  c.theta = theta;
  c.s = s;
  c.eos = 255;
  c.max_nodes = 4096;
  return c;
}

WorkerState fresh(const WorkerConfig& c) {
  WorkerState st(c.max_nodes);
  st.reset(0, c.max_nodes);
  return st;
}

Message validation_msg(std::uint64_t base, std::vector<TokenId> accepted,
                       TokenId bonus, double entropy = 0.1) {
  Message m;
  m.request_id = 0;
  m.body = ValidationMsg{base, ValidationResult{std::move(accepted), bonus, entropy}};
  return m;
}

Prediction pred(TokenId top1, TokenId top2, double entropy) {
  return Prediction{{{top1, 0.7}, {top2, 0.2}}, entropy};
}

}  // namespace

TEST_CASE("an idle worker bootstraps from the root anchor") {
  WorkerConfig c = cfg_with(2, 0.5);
  WorkerState st = fresh(c);
  WorkerAction a = worker_poll(st, c, {});
  auto* step = std::get_if<StepDraft>(&a);
  REQUIRE(step);
  REQUIRE(step->leaves.size() == 1);
  CHECK(step->leaves[0].id == kRootId);
  CHECK(step->leaves[0].anchor == 0);
}

TEST_CASE("validations are pruned before the next draft step") {
  WorkerConfig c = cfg_with(1, 0.5);
  WorkerState st = fresh(c);
  // Draft a three-token chain first.
  for (int i = 0; i < 3; ++i) {
    auto a = worker_poll(st, c, {});
    auto& step = std::get<StepDraft>(a);
    LeafOutput out{step.leaves[0].id, step.leaves[0].anchor,
                   pred(static_cast<TokenId>(10 + i), 99, 0.2)};
    apply_draft_output(st, c, std::span<const LeafOutput>(&out, 1));
  }
  CHECK(st.tree.depth() == 3);

  std::vector<Message> inbox{validation_msg(0, {10, 11}, 12)};
  WorkerAction a = worker_poll(st, c, inbox);
  CHECK(st.committed == std::vector<TokenId>{10, 11, 12});
  CHECK(st.tree.committed_len() == 3);
  auto* step = std::get_if<StepDraft>(&a);
  REQUIRE(step);
  CHECK(step->leaves[0].anchor == 3);  // frontier reflects the prune
  CHECK(st.counters.prunes_applied == 1);
}

TEST_CASE("a diverging validation restarts drafting from the new root") {
  WorkerConfig c = cfg_with(1, 0.5);
  WorkerState st = fresh(c);
  auto a = worker_poll(st, c, {});
  auto& step = std::get<StepDraft>(a);
  LeafOutput out{step.leaves[0].id, 0, pred(10, 99, 0.2)};
  apply_draft_output(st, c, std::span<const LeafOutput>(&out, 1));

  std::vector<Message> inbox{validation_msg(0, {}, 77)};  // 77 not in tree
  WorkerAction next = worker_poll(st, c, inbox);
  CHECK(st.tree.node_count() == 0);
  CHECK(st.committed == std::vector<TokenId>{77});
  auto* s2 = std::get_if<StepDraft>(&next);
  REQUIRE(s2);
  CHECK(s2->leaves[0].id == kRootId);
  CHECK(s2->leaves[0].anchor == 1);
}

TEST_CASE("confident predictions skip the branch") {
  WorkerConfig c = cfg_with(2, 0.5);
  WorkerState st = fresh(c);
  LeafOutput out{kRootId, 0, pred(10, 11, 0.2)};
  auto msgs = apply_draft_output(st, c, std::span<const LeafOutput>(&out, 1));
  CHECK(st.tree.node_count() == 1);
  REQUIRE(msgs.size() == 1);
  CHECK(std::get<SpeculationMsg>(msgs[0].body).candidates.size() == 1);
  CHECK(st.counters.branches == 0);
}

TEST_CASE("uncertain predictions branch top-2") {
  WorkerConfig c = cfg_with(2, 0.5);
  WorkerState st = fresh(c);
  LeafOutput out{kRootId, 0, pred(10, 11, 0.8)};
  auto msgs = apply_draft_output(st, c, std::span<const LeafOutput>(&out, 1));
  CHECK(st.tree.node_count() == 2);
  REQUIRE(msgs.size() == 1);
  CHECK(std::get<SpeculationMsg>(msgs[0].body).candidates.size() == 2);
  CHECK(st.counters.branches == 1);
}

TEST_CASE("branch factor one never branches") {
  WorkerConfig c = cfg_with(1, 0.5);
  WorkerState st = fresh(c);
  LeafOutput out{kRootId, 0, pred(10, 11, 5.0)};
  apply_draft_output(st, c, std::span<const LeafOutput>(&out, 1));
  CHECK(st.tree.node_count() == 1);
  CHECK(st.counters.branches == 0);
}

TEST_CASE("theta extremes: always branch at zero, never at infinity") {
  WorkerConfig always = cfg_with(2, 0.0);
  WorkerState st = fresh(always);
  for (int i = 0; i < 5; ++i) {
    auto a = worker_poll(st, always, {});
    auto& step = std::get<StepDraft>(a);
    std::vector<LeafOutput> outs;
    for (auto& leaf : step.leaves)
      outs.push_back({leaf.id, leaf.anchor,
                      pred(static_cast<TokenId>(10 + i), static_cast<TokenId>(40 + i), 0.3)});
    apply_draft_output(st, always, outs);
  }
  CHECK(st.counters.branches > 0);

  WorkerConfig never = cfg_with(2, std::numeric_limits<double>::infinity());
  WorkerState st2 = fresh(never);
  const int n = 12;
  for (int i = 0; i < n; ++i) {
    auto a = worker_poll(st2, never, {});
    auto& step = std::get<StepDraft>(a);
    REQUIRE(step.leaves.size() == 1);  // a chain stays a chain
    LeafOutput out{step.leaves[0].id, step.leaves[0].anchor,
                   pred(static_cast<TokenId>(i), static_cast<TokenId>(100 + i), 4.0)};
    apply_draft_output(st2, never, std::span<const LeafOutput>(&out, 1));
  }
  CHECK(st2.tree.node_count() == n);  // exactly one node per step
  CHECK(st2.counters.branches == 0);
}

TEST_CASE("s=1 b=1 emits exactly one speculation per step") {
  WorkerConfig c = cfg_with(1, 0.5, 1);
  WorkerState st = fresh(c);
  for (int i = 0; i < 8; ++i) {
    auto a = worker_poll(st, c, {});
    auto& step = std::get<StepDraft>(a);
    REQUIRE(step.leaves.size() == 1);
    LeafOutput out{step.leaves[0].id, step.leaves[0].anchor,
                   pred(static_cast<TokenId>(i), static_cast<TokenId>(100 + i), 0.2)};
    auto msgs = apply_draft_output(st, c, std::span<const LeafOutput>(&out, 1));
    CHECK(msgs.size() == 1);
  }
  CHECK(st.counters.speculations_sent == 8);
  CHECK(st.counters.draft_steps == 8);
}

TEST_CASE("branch count is monotone non-increasing in theta (property)") {
  // Fixed stream of draft entropies; higher thresholds can only skip more.
  std::vector<double> entropies;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) entropies.push_back(3.0 * uniform_unit(rng));

  std::uint64_t prev = std::numeric_limits<std::uint64_t>::max();
  for (double theta : {0.0, 0.3, 0.6, 1.0, 2.0, 4.0}) {
    WorkerConfig c = cfg_with(2, theta, 1);
    WorkerState st = fresh(c);
    for (std::size_t i = 0; i < entropies.size(); ++i) {
      auto a = worker_poll(st, c, {});
      auto& step = std::get<StepDraft>(a);
      LeafOutput out{step.leaves[0].id, step.leaves[0].anchor,
                     pred(static_cast<TokenId>(i % 64), static_cast<TokenId>(64 + i % 64),
                          entropies[i])};
      apply_draft_output(st, c, std::span<const LeafOutput>(&out, 1));
    }
    CHECK(st.counters.branches <= prev);
    prev = st.counters.branches;
  }
}

TEST_CASE("outputs for pruned-away leaves are dropped") {
  WorkerConfig c = cfg_with(1, 0.5);
  WorkerState st = fresh(c);
  auto a = worker_poll(st, c, {});
  auto& step = std::get<StepDraft>(a);
  LeafOutput out{step.leaves[0].id, 0, pred(10, 11, 0.2)};
  apply_draft_output(st, c, std::span<const LeafOutput>(&out, 1));
  NodeId leaf = st.tree.frontier(1)[0];

  std::vector<Message> inbox{validation_msg(0, {}, 77)};  // empties the tree
  worker_poll(st, c, inbox);
  REQUIRE_FALSE(st.tree.contains(leaf));

  LeafOutput stale{leaf, 1, pred(12, 13, 0.2)};
  auto msgs = apply_draft_output(st, c, std::span<const LeafOutput>(&stale, 1));
  CHECK(msgs.empty());
  CHECK(st.counters.stale_outputs_dropped == 1);
  CHECK(st.tree.node_count() == 0);
}

TEST_CASE("an eos message finishes the worker") {
  WorkerConfig c = cfg_with(2, 0.5);
  WorkerState st = fresh(c);
  Message eos;
  eos.request_id = 0;
  eos.body = EosMsg{10};
  std::vector<Message> inbox{eos};
  WorkerAction a = worker_poll(st, c, inbox);
  CHECK(std::holds_alternative<WorkerFinish>(a));
}

TEST_CASE("duplicate or out-of-date validations are ignored") {
  WorkerConfig c = cfg_with(1, 0.5);
  WorkerState st = fresh(c);
  std::vector<Message> inbox{validation_msg(0, {}, 5), validation_msg(0, {}, 5)};
  worker_poll(st, c, inbox);
  CHECK(st.committed == std::vector<TokenId>{5});
  CHECK(st.counters.prunes_applied == 1);
}
