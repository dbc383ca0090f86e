#pragma once

#include "wanspec/controller.hpp"
#include "wanspec/net.hpp"
#include "wanspec/oracle.hpp"
#include "wanspec/sim.hpp"
#include "wanspec/worker.hpp"

#include <functional>
#include <future>
#include <optional>
#include <string>
#include <thread>

namespace wanspec {

// Networked deployment of the protocol: the same state machines as the
// simulator, with model steps realized as sleeps plus oracle lookups and
// frames carried over a TCP stream. The controller listens; the worker
// connects, and both must present the same configuration digest.

struct RuntimeConfig {
  enum class Role { controller, worker };
  Role role = Role::controller;
  std::string listen_host = "127.0.0.1";
  std::uint16_t listen_port = 0;  // 0 picks a free port
  std::string connect_host = "127.0.0.1";
  std::uint16_t connect_port = 0;
  SimConfig sim;                   // shared protocol/oracle/timing parameters
  SimTime emulate_one_way = 0;     // extra inbound delay at this endpoint
  SimTime emulate_jitter = 0;
};

/// FNV-1a over the canonical rendering of everything both ends must agree
/// on. Checked in the Hello exchange; a mismatch refuses the connection.
inline std::uint64_t config_digest(const SimConfig& cfg) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "|k=%u|b=%u|s=%u|theta=%.17g|phi=%.17g|tt=%lld|td=%lld|cb=%u|mn=%zu|req=%u",
                cfg.k, cfg.b, cfg.s, cfg.theta, cfg.phi,
                static_cast<long long>(cfg.t_target), static_cast<long long>(cfg.t_draft),
                cfg.catchup_batch_limit, cfg.max_nodes, cfg.num_requests);
  std::string canon = cfg.oracle.canonical_string() + buf;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace runtime_detail {

/// One model resource: sleeps for the submitted duration, then posts the
/// completion to the hub. The state machine itself never runs here.
template <typename Done>
class StepSlot {
 public:
  StepSlot(EventHub& hub, void (EventHub::*post)(Done)) : hub_(hub), post_(post) {
    thread_ = std::thread([this] { run(); });
  }

  ~StepSlot() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    thread_.join();
  }

  void submit(Done payload, SimTime duration_us) {
    std::lock_guard lk(mu_);
    job_ = std::move(payload);
    duration_ = duration_us;
    cv_.notify_all();
  }

 private:
  void run() {
    for (;;) {
      Done payload;
      SimTime duration;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [this] { return job_.has_value() || stop_; });
        if (stop_) return;
        payload = std::move(*job_);
        job_.reset();
        duration = duration_;
      }
      std::this_thread::sleep_for(std::chrono::microseconds(duration));
      (hub_.*post_)(std::move(payload));
    }
  }

  EventHub& hub_;
  void (EventHub::*post_)(Done);
  std::thread thread_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::optional<Done> job_;
  SimTime duration_ = 0;
  bool stop_ = false;
};

struct Peer {
  TcpSocket sock;
  EventHub hub;
  std::unique_ptr<FrameWriter> writer;
  std::thread reader;
  std::map<std::uint64_t, std::uint64_t> next_seq;  // per request

  explicit Peer(TcpSocket s, LatencyEmulator emu) : sock(std::move(s)) {
    writer = std::make_unique<FrameWriter>(sock);
    reader = std::thread([this, emu] { run_reader(sock, hub, emu); });
  }

  ~Peer() {
    writer->stop();
    sock.close();
    if (reader.joinable()) reader.join();
  }

  void send(Message m) {
    if (m.kind() != MsgKind::bye) m.seq_no = ++next_seq[m.request_id];
    writer->push(encode(m));
  }

  /// Blocks until one message arrives (handshake use only).
  std::optional<Message> await_one(SimTime timeout_us) {
    SimTime deadline = mono_us() + timeout_us;
    std::vector<Message> pending;
    while (mono_us() < deadline) {
      EventHub::Woken w = hub.wait(deadline);
      if (!w.frames.empty()) return std::move(w.frames.front());
      if (w.closed) return std::nullopt;
    }
    return std::nullopt;
  }
};

}  // namespace runtime_detail

struct WorkerRunStats {
  WorkerCounters counters;
  std::uint32_t requests_completed = 0;
  bool clean_bye = false;
};

/// Worker role: connect, handshake, then free-run the draft loop per
/// request until the controller's Eos, and exit on Bye.
inline WorkerRunStats serve_worker(const RuntimeConfig& cfg) {
  cfg.sim.validate();
  Oracle oracle = Oracle::open(cfg.sim.oracle);
  WorkerConfig wcfg = cfg.sim.worker_config();
  LatencyEmulator emu{cfg.emulate_one_way, cfg.emulate_jitter,
                      std::mt19937_64{cfg.sim.oracle.seed ^ 0x77ULL}, 0};
  runtime_detail::Peer peer(tcp_connect(cfg.connect_host, cfg.connect_port), emu);

  Message hello;
  hello.request_id = 0;
  hello.body = HelloMsg{config_digest(cfg.sim)};
  peer.send(hello);
  auto reply = peer.await_one(10'000'000);
  if (!reply || reply->kind() != MsgKind::hello ||
      std::get<HelloMsg>(reply->body).config_digest != config_digest(cfg.sim))
    throw ProtocolError("worker: handshake failed (config digest mismatch?)");

  WorkerRunStats stats;
  WorkerState st(cfg.sim.max_nodes);
  std::deque<Message> buffered;  // frames for a request we have not reached yet
  bool saw_bye = false;          // Bye can ride in with the final Eos
  for (std::uint32_t r = 0; r < cfg.sim.num_requests; ++r) {
    SequenceTrace trace = oracle.next_sequence();
    st.reset(r, cfg.sim.max_nodes);
    for (;;) {
      EventHub::Woken w = peer.hub.poll_now();
      if (w.closed) throw ProtocolError("worker: connection lost mid-request");
      for (Message& m : w.frames) {
        if (m.kind() == MsgKind::bye)
          saw_bye = true;
        else
          buffered.push_back(std::move(m));
      }
      std::vector<Message> inbox;
      while (!buffered.empty() && buffered.front().request_id <= r) {
        inbox.push_back(std::move(buffered.front()));
        buffered.pop_front();
      }
      WorkerAction act = worker_poll(st, wcfg, inbox);
      if (std::holds_alternative<WorkerFinish>(act)) break;
      auto& step = std::get<StepDraft>(act);
      std::this_thread::sleep_for(std::chrono::microseconds(wcfg.t_draft));
      std::vector<LeafOutput> outputs;
      for (auto& leaf : step.leaves)
        outputs.push_back({leaf.id, leaf.anchor, trace.draft_prediction(leaf.anchor)});
      for (Message& m : apply_draft_output(st, wcfg, outputs)) peer.send(std::move(m));
    }
    stats.counters = st.counters;  // counters accumulate across request resets
    ++stats.requests_completed;
  }

  // Shutdown: wait for Bye (unless it already arrived), answer Bye. Scan
  // whole wake batches; the Bye may share one with the final Eos.
  SimTime deadline = mono_us() + 10'000'000;
  while (!saw_bye && mono_us() < deadline) {
    EventHub::Woken w = peer.hub.wait(deadline);
    for (const Message& m : w.frames)
      if (m.kind() == MsgKind::bye) saw_bye = true;
    if (w.closed) break;
  }
  if (saw_bye) {
    Message reply_bye;
    reply_bye.body = ByeMsg{};
    peer.send(reply_bye);
    peer.writer->flush();
    stats.clean_bye = true;
  }
  return stats;
}

/// One protocol-thread turn of the runtime controller: everything it folded
/// in and the clock it folded it at. A recorded log can be replayed through
/// a fresh state machine to check that decisions depend on nothing but the
/// arrival/completion ordering.
struct DecisionTurn {
  std::optional<std::uint64_t> request_start;  // set on the turn a request begins
  SimTime request_start_now = 0;               // the clock the request reset used
  SimTime now = 0;
  std::vector<Message> frames;
  std::optional<EventHub::TargetJobDone> target_done;
  std::optional<EventHub::DraftJobDone> draft_done;
  SimTime t_update_after = 0;
};

using DecisionLog = std::vector<DecisionTurn>;

/// Controller role: accept one worker, handshake, then run the request loop
/// with the target and draft models on their own step slots so they overlap.
inline RunOutputs serve_controller(const RuntimeConfig& cfg, TcpSocket conn,
                                   DecisionLog* log = nullptr) {
  cfg.sim.validate();
  Oracle oracle = Oracle::open(cfg.sim.oracle);
  ControllerConfig ccfg = cfg.sim.controller_config();
  LatencyEmulator emu{cfg.emulate_one_way, cfg.emulate_jitter,
                      std::mt19937_64{cfg.sim.oracle.seed ^ 0xCCULL}, 0};
  runtime_detail::Peer peer(std::move(conn), emu);

  auto hello = peer.await_one(10'000'000);
  if (!hello || hello->kind() != MsgKind::hello)
    throw ProtocolError("controller: no Hello from worker");
  if (std::get<HelloMsg>(hello->body).config_digest != config_digest(cfg.sim))
    throw ProtocolError("controller: config digest mismatch, refusing");
  Message reply;
  reply.request_id = 0;
  reply.body = HelloMsg{config_digest(cfg.sim)};
  peer.send(reply);

  runtime_detail::StepSlot<EventHub::TargetJobDone> target_slot(
      peer.hub, &EventHub::post_target_done);
  runtime_detail::StepSlot<EventHub::DraftJobDone> draft_slot(
      peer.hub, &EventHub::post_draft_done);

  RunOutputs out;
  ControllerState st(cfg.sim.max_nodes);
  ControllerCounters prev_counters;
  for (std::uint32_t r = 0; r < cfg.sim.num_requests; ++r) {
    SequenceTrace trace = oracle.next_sequence();
    SimTime start = mono_us();
    st.reset(r, start, cfg.sim.max_nodes);
    ControllerDevices devices;
    std::vector<Message> inbox;
    SimTime finish_time = 0;
    std::optional<EventHub::Woken> pending;  // wake carried into the next turn
    bool first_turn = true;

    while (!st.finished || devices.any_busy()) {
      EventHub::Woken w;
      if (pending) {
        w = std::move(*pending);
        pending.reset();
      } else if (devices.any_busy() && st.finished) {
        w = peer.hub.wait(std::nullopt);  // drain in-flight steps
      } else {
        w = peer.hub.poll_now();
      }
      if (w.closed && !st.finished)
        throw ProtocolError("controller: connection lost mid-request");
      const SimTime turn_now = mono_us();
      DecisionTurn turn;
      if (log) {
        if (first_turn) {
          turn.request_start = r;
          turn.request_start_now = start;
        }
        turn.now = turn_now;
        turn.frames = w.frames;
        turn.target_done = w.target;
        turn.draft_done = w.draft;
      }
      first_turn = false;
      for (Message& m : w.frames) inbox.push_back(std::move(m));
      if (w.target) {
        devices.target_busy = false;
        if (w.target->request == st.request_id) {
          ValidationResult result =
              run_target_step(trace, w.target->step.base, w.target->step.tokens());
          bool was = st.finished;
          for (Message& m : apply_target_result(st, ccfg, result, turn_now))
            peer.send(std::move(m));
          if (!was && st.finished) finish_time = turn_now;
        }
      }
      if (w.draft) {
        devices.draft_busy = false;
        if (w.draft->request == st.request_id)
          apply_local_draft(st, ccfg, w.draft->step,
                            trace.draft_prediction(w.draft->step.anchor));
      }
      if (log) {
        turn.t_update_after = st.t_update;
        log->push_back(std::move(turn));
      }
      if (st.finished) continue;

      // Launch whatever the state machine wants on the idle resources.
      bool launched = true;
      std::optional<SimTime> backstop;
      while (launched) {
        launched = false;
        ControllerAction act = controller_poll(st, ccfg, turn_now, inbox, devices);
        inbox.clear();
        if (auto* t = std::get_if<StepTarget>(&act)) {
          devices.target_busy = true;
          target_slot.submit({st.request_id, std::move(*t)}, ccfg.t_target);
          launched = true;
        } else if (auto* d = std::get_if<StepDraftLocal>(&act)) {
          devices.draft_busy = true;
          SimTime dur = d->duration(ccfg.t_draft);
          draft_slot.submit({st.request_id, std::move(*d)}, dur);
          launched = true;
        } else if (auto* wa = std::get_if<WaitAction>(&act)) {
          backstop = wa->backstop_at;
        }
      }
      // Sleep until something happens: a frame, a completion, or (when both
      // resources are idle and the backstop is armed) its deadline.
      pending = peer.hub.wait(devices.any_busy() ? std::nullopt : backstop);
    }

    RequestMetrics m;
    m.latency = finish_time - start;
    m.tokens_committed = st.committed.size();
    m.target_steps = st.counters.target_steps - prev_counters.target_steps;
    m.ctrl_draft_passes = st.counters.draft_passes - prev_counters.draft_passes;
    m.ctrl_local_draft_steps =
        st.counters.local_draft_steps - prev_counters.local_draft_steps;
    m.ctrl_catchup_batches =
        st.counters.catchup_batches - prev_counters.catchup_batches;
    m.sync_stalls = st.counters.sync_stalls - prev_counters.sync_stalls;
    m.entropy_resets = st.counters.entropy_resets - prev_counters.entropy_resets;
    m.stale_specs =
        st.counters.stale_specs_dropped - prev_counters.stale_specs_dropped;
    prev_counters = st.counters;
    out.metrics.requests.push_back(m);
    out.controller_outputs.push_back(st.committed);
    out.greedy_references.push_back(trace.greedy_sequence());
  }

  Message bye;
  bye.body = ByeMsg{};
  peer.send(bye);
  peer.writer->flush();
  // Trailing speculations may still be in flight; scan for the Bye reply.
  bool got_bye = false;
  SimTime deadline = mono_us() + 10'000'000;
  while (!got_bye && mono_us() < deadline) {
    EventHub::Woken w = peer.hub.wait(deadline);
    for (const Message& m : w.frames)
      if (m.kind() == MsgKind::bye) got_bye = true;
    if (w.closed) break;
  }
  if (!got_bye) throw ProtocolError("controller: no Bye handshake from worker");
  return out;
}

inline RunOutputs serve_controller_listening(const RuntimeConfig& cfg,
                                             std::function<void(std::uint16_t)> on_port = {}) {
  TcpListener listener(cfg.listen_host, cfg.listen_port);
  if (on_port) on_port(listener.port());
  return serve_controller(cfg, listener.accept_one());
}

/// Replays a recorded controller decision log through a fresh state machine:
/// same fold-in order, same clock readings, same oracle. Returns the replayed
/// committed outputs and the t_update value after every turn, which must
/// match the recording exactly if decisions depend only on the log.
struct ReplayResult {
  std::vector<std::vector<TokenId>> outputs;
  std::vector<SimTime> t_update_trace;
};

inline ReplayResult replay_decision_log(const SimConfig& sim_cfg, const DecisionLog& log) {
  Oracle oracle = Oracle::open(sim_cfg.oracle);
  ControllerConfig ccfg = sim_cfg.controller_config();
  ControllerState st(sim_cfg.max_nodes);
  ControllerDevices devices;
  std::optional<SequenceTrace> trace;
  std::vector<Message> inbox;
  ReplayResult out;

  for (const DecisionTurn& turn : log) {
    if (turn.request_start) {
      if (trace) out.outputs.push_back(st.committed);
      trace = oracle.next_sequence();
      st.reset(*turn.request_start, turn.request_start_now, sim_cfg.max_nodes);
      devices = {};
      inbox.clear();
    }
    for (const Message& m : turn.frames) inbox.push_back(m);
    if (turn.target_done) {
      devices.target_busy = false;
      if (turn.target_done->request == st.request_id) {
        ValidationResult result = run_target_step(*trace, turn.target_done->step.base,
                                                  turn.target_done->step.tokens());
        apply_target_result(st, ccfg, result, turn.now);
      }
    }
    if (turn.draft_done) {
      devices.draft_busy = false;
      if (turn.draft_done->request == st.request_id)
        apply_local_draft(st, ccfg, turn.draft_done->step,
                          trace->draft_prediction(turn.draft_done->step.anchor));
    }
    out.t_update_trace.push_back(st.t_update);
    if (st.finished) continue;
    bool launched = true;
    while (launched) {
      launched = false;
      ControllerAction act = controller_poll(st, ccfg, turn.now, inbox, devices);
      inbox.clear();
      if (std::holds_alternative<StepTarget>(act)) {
        devices.target_busy = true;
        launched = true;
      } else if (std::holds_alternative<StepDraftLocal>(act)) {
        devices.draft_busy = true;
        launched = true;
      }
    }
  }
  if (trace) out.outputs.push_back(st.committed);
  return out;
}

/// Sequential speculative decoding on this machine alone, with real sleeps;
/// the single-machine comparison row for deployment experiments.
inline RunOutputs run_runtime_baseline(const SimConfig& cfg) {
  SimConfig base = cfg;
  base.mode = SimMode::baseline;
  base.validate();
  Oracle oracle = Oracle::open(base.oracle);
  ControllerConfig ccfg = base.controller_config();
  RunOutputs out;
  ControllerState st(base.max_nodes);
  ControllerCounters prev;
  for (std::uint32_t r = 0; r < base.num_requests; ++r) {
    SequenceTrace trace = oracle.next_sequence();
    SimTime start = mono_us();
    st.reset(r, start, base.max_nodes);
    while (!st.finished) {
      ControllerAction act = controller_poll(st, ccfg, mono_us(), {}, {});
      if (auto* t = std::get_if<StepTarget>(&act)) {
        std::this_thread::sleep_for(std::chrono::microseconds(ccfg.t_target));
        ValidationResult result = run_target_step(trace, t->base, t->tokens());
        apply_target_result(st, ccfg, result, mono_us());
      } else if (auto* d = std::get_if<StepDraftLocal>(&act)) {
        std::this_thread::sleep_for(
            std::chrono::microseconds(d->duration(ccfg.t_draft)));
        apply_local_draft(st, ccfg, *d, trace.draft_prediction(d->anchor));
      } else {
        throw std::logic_error("baseline runtime: unexpected wait");
      }
    }
    RequestMetrics m;
    m.latency = mono_us() - start;
    m.tokens_committed = st.committed.size();
    m.target_steps = st.counters.target_steps - prev.target_steps;
    m.ctrl_draft_passes = st.counters.draft_passes - prev.draft_passes;
    m.ctrl_local_draft_steps = st.counters.local_draft_steps - prev.local_draft_steps;
    prev = st.counters;
    out.metrics.requests.push_back(m);
    out.controller_outputs.push_back(st.committed);
    out.greedy_references.push_back(trace.greedy_sequence());
  }
  return out;
}

struct LoopbackResult {
  RunOutputs controller;
  WorkerRunStats worker;
};

/// Runs a controller and worker pair over real loopback TCP inside one
/// process, sharing the serve() implementations with the standalone tool.
inline LoopbackResult run_loopback(const SimConfig& sim, SimTime emulated_rtt,
                                   SimTime jitter = 0, DecisionLog* log = nullptr) {
  RuntimeConfig ctrl_cfg;
  ctrl_cfg.role = RuntimeConfig::Role::controller;
  ctrl_cfg.sim = sim;
  ctrl_cfg.sim.mode = SimMode::wanspec;
  ctrl_cfg.sim.rtt = emulated_rtt;  // R estimate follows the emulated RTT
  ctrl_cfg.emulate_one_way = emulated_rtt / 2;
  ctrl_cfg.emulate_jitter = jitter;

  RuntimeConfig wrk_cfg = ctrl_cfg;
  wrk_cfg.role = RuntimeConfig::Role::worker;

  TcpListener listener("127.0.0.1", 0);
  wrk_cfg.connect_host = "127.0.0.1";
  wrk_cfg.connect_port = listener.port();

  auto worker_future = std::async(std::launch::async, [&] { return serve_worker(wrk_cfg); });
  LoopbackResult result;
  result.controller = serve_controller(ctrl_cfg, listener.accept_one(), log);
  result.worker = worker_future.get();
  return result;
}

}  // namespace wanspec
