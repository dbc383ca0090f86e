#include "wanspec/controller.hpp"

#include <doctest.h>

#include <limits>

using namespace wanspec;

namespace {

ControllerConfig cfg_with(SimTime r, double phi) {
  ControllerConfig c;
  c.k = 2;
  c.rtt_estimate = r;
  c.phi = phi;
  c.eos = 255;
  return c;
}

ControllerState fresh(const ControllerConfig& c, SimTime now = 0) {
  ControllerState st(c.max_nodes);
  st.reset(0, now, c.max_nodes);
  return st;
}

Message spec_msg(std::uint64_t base, std::vector<TokenId> path,
                 std::vector<CandidateIn> cands) {
  Message m;
  m.request_id = 0;
  SpeculationMsg s;
  s.base = base;
  s.path = std::move(path);
  s.candidates = std::move(cands);
  m.body = std::move(s);
  return m;
}

}  // namespace

TEST_CASE("poll steps the target once the tree is k deep") {
  ControllerConfig c = cfg_with(10000, 0.5);
  ControllerState st = fresh(c);
  std::vector<Message> inbox{
      spec_msg(0, {}, {{10, 0.9, 0.2}}),
      spec_msg(0, {10}, {{11, 0.8, 0.2}}),
  };
  ControllerAction a = controller_poll(st, c, 50000, inbox);
  auto* t = std::get_if<StepTarget>(&a);
  REQUIRE(t);
  CHECK(t->base == 0);
  CHECK(t->tokens() == std::vector<TokenId>{10, 11});
}

TEST_CASE("poll runs the local draft inside the staleness window") {
  ControllerConfig c = cfg_with(10000, 0.5);
  ControllerState st = fresh(c);  // t_update = 0
  ControllerAction a = controller_poll(st, c, 5000, {});
  auto* d = std::get_if<StepDraftLocal>(&a);
  REQUIRE(d);
  CHECK(d->leaf == kRootId);
  CHECK(d->anchor == 0);
  CHECK(d->passes() == 1);
}

TEST_CASE("poll waits once the window has elapsed") {
  ControllerConfig c = cfg_with(10000, 0.5);
  ControllerState st = fresh(c);
  ControllerAction a = controller_poll(st, c, 10000, {});
  auto* w = std::get_if<WaitAction>(&a);
  REQUIRE(w);
  CHECK(w->wait_until == 10000);
  CHECK_FALSE(w->backstop_at.has_value());
}

TEST_CASE("full accepts leave the clock alone unless the bonus entropy is high") {
  ControllerConfig c = cfg_with(10000, 0.5);

  ControllerState st = fresh(c);
  ValidationResult calm{{10, 11}, 12, 0.1};
  apply_target_result(st, c, calm, 7777);
  CHECK(st.t_update == 0);
  CHECK(st.counters.sync_stalls == 0);

  ControllerState st2 = fresh(c);
  ValidationResult spooked{{10, 11}, 12, 0.9};
  apply_target_result(st2, c, spooked, 7777);
  CHECK(st2.t_update == 7777);
  CHECK(st2.counters.entropy_resets == 1);
  CHECK(st2.counters.sync_stalls == 0);
}

TEST_CASE("a rejected candidate marks the worker out of date and counts a stall") {
  ControllerConfig c = cfg_with(10000, 0.5);
  ControllerState st = fresh(c);
  ValidationResult partial{{10}, 42, 0.1};  // length 2 < k+1
  apply_target_result(st, c, partial, 9999);
  CHECK(st.t_update == 9999);
  CHECK(st.counters.sync_stalls == 1);
  CHECK(st.committed == std::vector<TokenId>{10, 42});
}

TEST_CASE("apply_target_result emits a validation and an eos at the end") {
  ControllerConfig c = cfg_with(0, 0.5);
  ControllerState st = fresh(c);
  ValidationResult final_step{{7}, 255, 0.0};  // bonus is EOS
  std::vector<Message> out = apply_target_result(st, c, final_step, 1);
  CHECK(st.finished);
  REQUIRE(out.size() == 2);
  CHECK(out[0].kind() == MsgKind::validation);
  CHECK(out[1].kind() == MsgKind::eos);
  CHECK(std::get<EosMsg>(out[1].body).final_length == 2);

  ControllerAction a = controller_poll(st, c, 2, {});
  CHECK(std::holds_alternative<FinishAction>(a));
}

TEST_CASE("catchup_plan splits a context gap by the batch limit") {
  CHECK(catchup_plan(0, 8).empty());
  CHECK(catchup_plan(5, 8) == std::vector<std::uint32_t>{5});
  CHECK(catchup_plan(20, 8) == std::vector<std::uint32_t>{8, 8, 4});
}

TEST_CASE("local draft steps charge catch-up passes for a cold context") {
  ControllerConfig c = cfg_with(1000000, 0.5);
  c.catchup_batch_limit = 8;
  ControllerState st = fresh(c);
  // Commit 20 tokens the local draft never consumed.
  for (int i = 0; i < 10; ++i) {
    ValidationResult v{{static_cast<TokenId>(2 * i)}, static_cast<TokenId>(2 * i + 1), 0.0};
    apply_target_result(st, c, v, 0);
  }
  ControllerAction a = controller_poll(st, c, 1, {});
  auto* d = std::get_if<StepDraftLocal>(&a);
  REQUIRE(d);
  CHECK(d->anchor == 20);
  CHECK(d->batches == std::vector<std::uint32_t>{8, 8, 4});
  CHECK(d->passes() == 3);
  CHECK(d->duration(c.t_draft) == 3 * c.t_draft);

  Prediction p{{{100, 0.9}, {101, 0.05}}, 0.4};
  apply_local_draft(st, c, *d, p);
  CHECK(st.counters.local_draft_steps == 1);
  CHECK(st.counters.catchup_batches == 2);
  CHECK(st.counters.draft_passes == 3);
  CHECK(st.draft_position() == 20);
  CHECK(st.tree.depth() == 1);
  CHECK(st.tree.node(st.tree.frontier(1)[0]).token == 100);

  // The next chained step only needs to consume the token just drafted.
  ControllerAction a2 = controller_poll(st, c, 2, {});
  auto* d2 = std::get_if<StepDraftLocal>(&a2);
  REQUIRE(d2);
  CHECK(d2->anchor == 21);
  CHECK(d2->passes() == 1);
}

TEST_CASE("speculations anchored behind the commit point are dropped") {
  ControllerConfig c = cfg_with(0, 0.5);
  ControllerState st = fresh(c);
  ValidationResult v{{10, 11}, 12, 0.0};
  apply_target_result(st, c, v, 0);  // committed = [10,11,12]

  // Candidates for an already-committed position: stale.
  std::vector<Message> stale{spec_msg(0, {10}, {{11, 0.9, 0.1}})};
  controller_poll(st, c, 1, stale);
  CHECK(st.tree.node_count() == 0);
  CHECK(st.counters.stale_specs_dropped == 1);

  // A path that contradicts the committed output: stale.
  std::vector<Message> contradicts{spec_msg(0, {10, 99, 12}, {{13, 0.9, 0.1}})};
  controller_poll(st, c, 1, contradicts);
  CHECK(st.tree.node_count() == 0);
  CHECK(st.counters.stale_specs_dropped == 2);

  // An old base whose path matches the committed tail resolves to the root.
  std::vector<Message> good{spec_msg(0, {10, 11, 12}, {{13, 0.9, 0.1}})};
  controller_poll(st, c, 1, good);
  CHECK(st.tree.depth() == 1);

  // And one more level deep, resolved through the live tree.
  std::vector<Message> deeper{spec_msg(0, {10, 11, 12, 13}, {{14, 0.8, 0.1}})};
  controller_poll(st, c, 1, deeper);
  CHECK(st.tree.depth() == 2);

  // A base ahead of the committed output cannot happen; it is dropped.
  std::vector<Message> future{spec_msg(9, {}, {{50, 0.9, 0.1}})};
  controller_poll(st, c, 1, future);
  CHECK(st.counters.stale_specs_dropped == 3);
}

TEST_CASE("the wait backstop re-arms the local draft after 3R") {
  ControllerConfig c = cfg_with(1000, 0.5);
  c.wait_backstop = true;
  ControllerState st = fresh(c);
  ControllerAction a = controller_poll(st, c, 5000, {});
  auto* w = std::get_if<WaitAction>(&a);
  REQUIRE(w);
  REQUIRE(w->backstop_at.has_value());
  CHECK(*w->backstop_at == 8000);

  ControllerAction later = controller_poll(st, c, 7999, {});
  CHECK(std::holds_alternative<WaitAction>(later));
  ControllerAction fired = controller_poll(st, c, 8000, {});
  CHECK(std::holds_alternative<StepDraftLocal>(fired));
}

TEST_CASE("poll respects the two model resources") {
  ControllerConfig c = cfg_with(10000, 0.5);
  ControllerState st = fresh(c);
  std::vector<Message> inbox{
      spec_msg(0, {}, {{10, 0.9, 0.2}}),
      spec_msg(0, {10}, {{11, 0.8, 0.2}}),
  };
  controller_poll(st, c, 0, inbox);  // ingest

  // Target busy: the deep tree cannot launch a second target step, and the
  // draft stays quiet because the tree is not shallow.
  ControllerAction a = controller_poll(st, c, 1, {}, {true, false});
  CHECK(std::holds_alternative<WaitAction>(a));

  // Draft busy inside the window with a shallow tree: nothing to launch.
  ControllerState st2 = fresh(c);
  ControllerAction b = controller_poll(st2, c, 1, {}, {false, true});
  CHECK(std::holds_alternative<WaitAction>(b));

  // Both idle with a shallow tree inside the window: the draft fires even
  // though a previous poll would have run the target first on a deep tree.
  ControllerAction d = controller_poll(st2, c, 1, {}, {false, false});
  CHECK(std::holds_alternative<StepDraftLocal>(d));
}

TEST_CASE("a local draft overtaken by a commit is counted and dropped") {
  ControllerConfig c = cfg_with(1000000, 0.5);
  ControllerState st = fresh(c);
  ControllerAction a = controller_poll(st, c, 1, {});
  auto plan = std::get<StepDraftLocal>(a);

  // A target step completes while the draft pass is in flight.
  ValidationResult v{{5, 6}, 7, 0.0};
  apply_target_result(st, c, v, 2);

  Prediction p{{{100, 0.9}, {101, 0.05}}, 0.4};
  apply_local_draft(st, c, plan, p);
  CHECK(st.counters.stale_local_drafts == 1);
  CHECK(st.tree.node_count() == 0);  // nothing appended at the stale anchor
  CHECK(st.counters.draft_passes == 1);  // the pass itself still happened
}

TEST_CASE("an infinite R never waits; R zero never drafts locally") {
  ControllerConfig inf = cfg_with(kInfiniteTime, 0.5);
  ControllerState st = fresh(inf);
  CHECK(std::holds_alternative<StepDraftLocal>(
      controller_poll(st, inf, std::numeric_limits<SimTime>::max() / 2, {})));

  ControllerConfig zero = cfg_with(0, 0.5);
  ControllerState st2 = fresh(zero);
  CHECK(std::holds_alternative<WaitAction>(controller_poll(st2, zero, 0, {})));
}
