#pragma once

#include "wanspec/controller.hpp"
#include "wanspec/oracle.hpp"
#include "wanspec/rng.hpp"
#include "wanspec/types.hpp"
#include "wanspec/wire.hpp"
#include "wanspec/worker.hpp"

#include <algorithm>
#include <atomic>
#include <deque>
#include <functional>
#include <queue>
#include <span>
#include <thread>
#include <variant>
#include <vector>

namespace wanspec {

// Deterministic event simulator: both state machines on one virtual clock,
// frames delayed by rtt/2 per direction, model steps occupying their device
// for the configured duration. Identical configs replay identical runs.

enum class SimMode { baseline, wanspec };

struct SimConfig {
  SimMode mode = SimMode::wanspec;
  SimTime rtt = 0;
  SimTime jitter = 0;        // uniform +/- jitter on each frame, default off
  SimTime r_estimate = -1;   // controller's R; negative means "use rtt"
  SimTime t_target = 23400;  // l40s profile defaults
  SimTime t_draft = 7500;
  std::uint32_t k = 2;
  std::uint32_t b = 2;
  std::uint32_t s = 4;
  double theta = 0.5;
  double phi = 0.5;
  std::uint32_t catchup_batch_limit = 32;
  std::size_t max_nodes = 64;
  bool wait_backstop = false;
  std::uint32_t num_requests = 1;
  OracleConfig oracle;

  void validate() const {
    if (rtt < 0 || jitter < 0) throw ConfigError("sim: delays must be >= 0");
    if (num_requests < 1) throw ConfigError("sim: num_requests must be >= 1");
    controller_config().validate();
    worker_config().validate();
    oracle.validate();
  }

  ControllerConfig controller_config() const {
    ControllerConfig c;
    c.k = k;
    c.rtt_estimate = mode == SimMode::baseline ? kInfiniteTime
                     : r_estimate < 0          ? rtt
                                               : r_estimate;
    c.phi = phi;
    c.t_target = t_target;
    c.t_draft = t_draft;
    c.catchup_batch_limit = catchup_batch_limit;
    c.max_nodes = max_nodes;
    c.eos = oracle.eos_id;
    c.wait_backstop = wait_backstop;
    return c;
  }

  WorkerConfig worker_config() const {
    WorkerConfig w;
    w.b = b;
    w.theta = theta;
    w.s = s;
    w.t_draft = t_draft;
    w.max_nodes = max_nodes;
    w.eos = oracle.eos_id;
    return w;
  }
};

/// Cumulative ablation stages: plain offloaded decoding, then tree
/// branching, then the worker entropy gate, then the controller entropy
/// gate. "Off" thresholds are pinned so the disabled heuristic always takes
/// its conservative branch.
enum class Stage { plain, branching, branching_theta, full };

constexpr const char* stage_name(Stage s) {
  switch (s) {
    case Stage::plain: return "wanspec_plain";
    case Stage::branching: return "wanspec_branch";
    case Stage::branching_theta: return "wanspec_branch_theta";
    default: return "wanspec_full";
  }
}

inline SimConfig apply_stage(SimConfig cfg, Stage stage) {
  cfg.mode = SimMode::wanspec;
  switch (stage) {
    case Stage::plain:
      cfg.b = 1;
      cfg.theta = 0.0;
      cfg.phi = 0.0;  // every full accept re-marks the worker: hedge always
      break;
    case Stage::branching:
      cfg.b = 2;
      cfg.theta = 0.0;  // branch at every step
      cfg.phi = 0.0;
      break;
    case Stage::branching_theta:
      cfg.b = 2;
      cfg.phi = 0.0;
      break;
    case Stage::full:
      cfg.b = 2;
      break;
  }
  return cfg;
}

struct RequestMetrics {
  SimTime latency = 0;
  std::uint64_t tokens_committed = 0;
  std::uint64_t target_steps = 0;
  std::uint64_t ctrl_draft_passes = 0;
  std::uint64_t ctrl_local_draft_steps = 0;
  std::uint64_t ctrl_catchup_batches = 0;
  std::uint64_t worker_draft_steps = 0;
  std::uint64_t sync_stalls = 0;
  std::uint64_t entropy_resets = 0;
  std::uint64_t stale_specs = 0;

  bool operator==(const RequestMetrics&) const = default;
};

struct RunMetrics {
  std::vector<RequestMetrics> requests;

  bool operator==(const RunMetrics&) const = default;

  SimTime total_latency() const {
    SimTime t = 0;
    for (const auto& r : requests) t += r.latency;
    return t;
  }
  std::uint64_t total(std::uint64_t RequestMetrics::* field) const {
    std::uint64_t v = 0;
    for (const auto& r : requests) v += r.*field;
    return v;
  }
  std::uint64_t total_ctrl_draft_passes() const {
    return total(&RequestMetrics::ctrl_draft_passes);
  }
  std::uint64_t total_sync_stalls() const { return total(&RequestMetrics::sync_stalls); }
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace detail {

class RequestSim {
 public:
  RequestSim(const SimConfig& cfg, const SequenceTrace& trace, std::uint64_t request_id,
             std::uint64_t jitter_seed)
      : cfg_(cfg),
        ccfg_(cfg.controller_config()),
        wcfg_(cfg.worker_config()),
        trace_(trace),
        ctrl_(cfg.max_nodes),
        wrk_(cfg.max_nodes),
        request_id_(request_id),
        jitter_rng_(jitter_seed) {
    ctrl_.reset(request_id, 0, cfg.max_nodes);
    wrk_.reset(request_id, cfg.max_nodes);
  }

  RequestMetrics run() {
    if (cfg_.mode == SimMode::wanspec) {
      // The worker joins half an RTT in, mirroring the handshake / previous
      // request's end-of-sequence frame crossing the network.
      Message hello;
      hello.request_id = request_id_;
      hello.body = HelloMsg{0};
      send_to_worker(std::move(hello), 0);
    }
    pump();
    std::uint64_t processed = 0;
    while (!done() && !queue_.empty()) {
      Event ev = pop();
      now_ = ev.time;
      handle(ev);
      pump();
      if (++processed > kMaxEvents) throw std::logic_error("sim: event budget exceeded");
    }
    if (!ctrl_.finished) throw std::logic_error("sim: request did not finish");

    RequestMetrics m;
    m.latency = finish_time_;
    m.tokens_committed = ctrl_.committed.size();
    m.target_steps = ctrl_.counters.target_steps;
    m.ctrl_draft_passes = ctrl_.counters.draft_passes;
    m.ctrl_local_draft_steps = ctrl_.counters.local_draft_steps;
    m.ctrl_catchup_batches = ctrl_.counters.catchup_batches;
    m.worker_draft_steps = wrk_.counters.draft_steps;
    m.sync_stalls = ctrl_.counters.sync_stalls;
    m.entropy_resets = ctrl_.counters.entropy_resets;
    m.stale_specs = ctrl_.counters.stale_specs_dropped;
    return m;
  }

  const std::vector<TokenId>& controller_output() const { return ctrl_.committed; }
  const std::vector<TokenId>& worker_output() const { return wrk_.committed; }

 private:
  static constexpr std::uint64_t kMaxEvents = 10'000'000;

  struct Event {
    SimTime time = 0;
    std::uint64_t tie = 0;
    // Exactly one of these is meaningful, selected by `kind`.
    enum class Kind { frame_to_ctrl, frame_to_worker, target_done, ctrl_draft_done,
                      worker_draft_done, wait_expiry } kind;
    Message msg;
    StepTarget target;
    StepDraftLocal local;
    std::vector<StepDraft::Leaf> leaves;
  };

  struct EventAfter {
    bool operator()(const Event& a, const Event& b) const {
      if (a.time != b.time) return a.time > b.time;
      return a.tie > b.tie;
    }
  };

  bool done() const {
    if (!ctrl_.finished) return false;
    return cfg_.mode == SimMode::baseline || wrk_.finished;
  }

  void schedule(Event ev) {
    ev.tie = next_tie_++;
    queue_.push(std::move(ev));
  }

  Event pop() {
    Event ev = queue_.top();
    queue_.pop();
    if (ev.time < now_) throw std::logic_error("sim: event scheduled in the past");
    return ev;
  }

  SimTime frame_delay() {
    SimTime d = cfg_.rtt / 2;
    if (cfg_.jitter > 0) d += uniform_jitter(jitter_rng_, cfg_.jitter);
    return d < 0 ? 0 : d;
  }

  void send_to_worker(Message m, SimTime now) {
    if (cfg_.mode == SimMode::baseline) return;
    m.seq_no = ++seq_to_worker_;
    Event ev;
    ev.kind = Event::Kind::frame_to_worker;
    ev.time = std::max(now + frame_delay(), last_to_worker_);
    last_to_worker_ = ev.time;
    ev.msg = std::move(m);
    schedule(std::move(ev));
  }

  void send_to_ctrl(Message m, SimTime now) {
    m.seq_no = ++seq_to_ctrl_;
    Event ev;
    ev.kind = Event::Kind::frame_to_ctrl;
    ev.time = std::max(now + frame_delay(), last_to_ctrl_);
    last_to_ctrl_ = ev.time;
    ev.msg = std::move(m);
    schedule(std::move(ev));
  }

  void handle(const Event& ev) {
    switch (ev.kind) {
      case Event::Kind::frame_to_ctrl:
        inbox_ctrl_.push_back(ev.msg);
        break;
      case Event::Kind::frame_to_worker:
        if (ev.msg.kind() == MsgKind::hello) worker_started_ = true;
        inbox_wrk_.push_back(ev.msg);
        break;
      case Event::Kind::target_done: {
        devices_.target_busy = false;
        ValidationResult result =
            run_target_step(trace_, ev.target.base, ev.target.tokens());
        bool was_finished = ctrl_.finished;
        std::vector<Message> out = apply_target_result(ctrl_, ccfg_, result, now_);
        if (!was_finished && ctrl_.finished) finish_time_ = now_;
        for (Message& m : out) send_to_worker(std::move(m), now_);
        break;
      }
      case Event::Kind::ctrl_draft_done:
        devices_.draft_busy = false;
        apply_local_draft(ctrl_, ccfg_, ev.local,
                          trace_.draft_prediction(ev.local.anchor));
        break;
      case Event::Kind::worker_draft_done: {
        wrk_busy_ = false;
        std::vector<LeafOutput> outputs;
        outputs.reserve(ev.leaves.size());
        for (const auto& leaf : ev.leaves)
          outputs.push_back({leaf.id, leaf.anchor, trace_.draft_prediction(leaf.anchor)});
        std::vector<Message> out = apply_draft_output(wrk_, wcfg_, outputs);
        for (Message& m : out) send_to_ctrl(std::move(m), now_);
        break;
      }
      case Event::Kind::wait_expiry:
        break;  // pump() below re-polls the controller
    }
  }

  void pump() {
    bool progressed = true;
    while (progressed) {
      progressed = false;
      if (!ctrl_.finished) progressed |= poll_controller();
      if (cfg_.mode == SimMode::wanspec && worker_started_ && !wrk_busy_ &&
          !wrk_.finished)
        progressed |= poll_worker();
    }
  }

  // Polls until the controller has nothing more to launch: both model
  // resources may pick up work from one pump.
  bool poll_controller() {
    bool launched = false;
    while (!(devices_.target_busy && devices_.draft_busy)) {
      std::vector<Message> inbox = std::move(inbox_ctrl_);
      inbox_ctrl_.clear();
      ControllerAction action = controller_poll(ctrl_, ccfg_, now_, inbox, devices_);
      if (auto* t = std::get_if<StepTarget>(&action)) {
        devices_.target_busy = true;
        Event ev;
        ev.kind = Event::Kind::target_done;
        ev.time = now_ + ccfg_.t_target;
        ev.target = std::move(*t);
        schedule(std::move(ev));
        launched = true;
        continue;
      }
      if (auto* d = std::get_if<StepDraftLocal>(&action)) {
        devices_.draft_busy = true;
        Event ev;
        ev.kind = Event::Kind::ctrl_draft_done;
        ev.time = now_ + d->duration(ccfg_.t_draft);
        ev.local = std::move(*d);
        schedule(std::move(ev));
        launched = true;
        continue;
      }
      if (auto* w = std::get_if<WaitAction>(&action)) {
        if (w->backstop_at && *w->backstop_at != armed_backstop_) {
          armed_backstop_ = *w->backstop_at;
          Event ev;
          ev.kind = Event::Kind::wait_expiry;
          ev.time = *w->backstop_at;
          schedule(std::move(ev));
        }
      }
      break;  // Wait or Finish
    }
    return launched;
  }

  bool poll_worker() {
    std::vector<Message> inbox = std::move(inbox_wrk_);
    inbox_wrk_.clear();
    WorkerAction action = worker_poll(wrk_, wcfg_, inbox);
    if (auto* sd = std::get_if<StepDraft>(&action)) {
      wrk_busy_ = true;
      Event ev;
      ev.kind = Event::Kind::worker_draft_done;
      ev.time = now_ + wcfg_.t_draft;
      ev.leaves = std::move(sd->leaves);
      schedule(std::move(ev));
      return true;
    }
    return false;  // WorkerFinish
  }

  SimConfig cfg_;
  ControllerConfig ccfg_;
  WorkerConfig wcfg_;
  const SequenceTrace& trace_;
  ControllerState ctrl_;
  WorkerState wrk_;
  std::uint64_t request_id_;
  std::mt19937_64 jitter_rng_;

  std::priority_queue<Event, std::vector<Event>, EventAfter> queue_;
  std::uint64_t next_tie_ = 0;
  SimTime now_ = 0;
  SimTime finish_time_ = 0;
  ControllerDevices devices_;
  bool wrk_busy_ = false;
  bool worker_started_ = false;
  SimTime armed_backstop_ = -1;
  std::vector<Message> inbox_ctrl_;
  std::vector<Message> inbox_wrk_;
  std::uint64_t seq_to_worker_ = 0;
  std::uint64_t seq_to_ctrl_ = 0;
  SimTime last_to_worker_ = 0;
  SimTime last_to_ctrl_ = 0;
};

}  // namespace detail

struct RunOutputs {
  RunMetrics metrics;
  // Committed outputs per request, controller side then worker side, kept
  // for correctness checks against the oracle's greedy sequences.
  std::vector<std::vector<TokenId>> controller_outputs;
  std::vector<std::vector<TokenId>> worker_outputs;
  std::vector<std::vector<TokenId>> greedy_references;
};

inline RunOutputs run_sim_full(const SimConfig& cfg) {
  cfg.validate();
  Oracle oracle = Oracle::open(cfg.oracle);
  RunOutputs out;
  for (std::uint32_t r = 0; r < cfg.num_requests; ++r) {
    SequenceTrace trace = oracle.next_sequence();
    detail::RequestSim sim(cfg, trace, r, cfg.oracle.seed ^ (0x9e3779b97f4a7c15ULL * (r + 1)));
    out.metrics.requests.push_back(sim.run());
    out.controller_outputs.push_back(sim.controller_output());
    out.worker_outputs.push_back(sim.worker_output());
    out.greedy_references.push_back(trace.greedy_sequence());
  }
  return out;
}

inline RunMetrics run_sim(const SimConfig& cfg) { return run_sim_full(cfg).metrics; }

namespace detail {

inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  unsigned count = std::min<unsigned>(jobs, static_cast<unsigned>(n));
  pool.reserve(count);
  for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Per-seed baselines for paired comparisons: same oracle draws, sequential
/// decoding on the controller alone (no network involvement, so one run
/// serves every RTT point).
inline std::vector<RunMetrics> paired_baselines(const SimConfig& base,
                                                std::uint32_t iterations,
                                                unsigned jobs = 1) {
  std::vector<RunMetrics> out(iterations);
  detail::parallel_for(iterations, jobs, [&](std::size_t i) {
    SimConfig cfg = base;
    cfg.mode = SimMode::baseline;
    cfg.rtt = 0;
    cfg.jitter = 0;
    cfg.oracle.seed = base.oracle.seed + i;
    out[i] = run_sim(cfg);
  });
  return out;
}

struct PairedRatios {
  double median_latency_ratio = 0.0;
  double median_token_ratio = 0.0;
  double median_latency_us = 0.0;
  double median_ctrl_passes = 0.0;
  double baseline_median_latency_us = 0.0;
  double baseline_median_ctrl_passes = 0.0;
  double median_sync_stalls = 0.0;
  double median_worker_steps = 0.0;
};

inline PairedRatios paired_ratios(const std::vector<RunMetrics>& runs,
                                  const std::vector<RunMetrics>& baselines) {
  std::vector<double> lat_r, tok_r, lat, tok, blat, btok, stalls, wsteps;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& w = runs[i];
    const auto& b = baselines[i];
    lat_r.push_back(static_cast<double>(w.total_latency()) /
                    static_cast<double>(b.total_latency()));
    tok_r.push_back(static_cast<double>(w.total_ctrl_draft_passes()) /
                    static_cast<double>(b.total_ctrl_draft_passes()));
    lat.push_back(static_cast<double>(w.total_latency()));
    tok.push_back(static_cast<double>(w.total_ctrl_draft_passes()));
    blat.push_back(static_cast<double>(b.total_latency()));
    btok.push_back(static_cast<double>(b.total_ctrl_draft_passes()));
    stalls.push_back(static_cast<double>(w.total_sync_stalls()));
    wsteps.push_back(static_cast<double>(w.total(&RequestMetrics::worker_draft_steps)));
  }
  PairedRatios r;
  r.median_latency_ratio = median(lat_r);
  r.median_token_ratio = median(tok_r);
  r.median_latency_us = median(lat);
  r.median_ctrl_passes = median(tok);
  r.baseline_median_latency_us = median(blat);
  r.baseline_median_ctrl_passes = median(btok);
  r.median_sync_stalls = median(stalls);
  r.median_worker_steps = median(wsteps);
  return r;
}

struct AblationRow {
  Stage stage;
  SimTime rtt;
  PairedRatios ratios;
  std::vector<RunMetrics> runs;  // one per seed, paired with the baselines
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<RunMetrics> baselines;
};

/// Ablation table: four cumulative configurations per RTT, each compared
/// against the baseline run on identical oracle draws (paired seeds), median
/// over `iterations` seeds.
inline AblationResult run_ablation_full(const SimConfig& base,
                                        std::span<const SimTime> rtt_grid,
                                        std::uint32_t iterations,
                                        unsigned jobs = 1) {
  AblationResult result;
  result.baselines = paired_baselines(base, iterations, jobs);
  constexpr Stage kStages[] = {Stage::plain, Stage::branching, Stage::branching_theta,
                               Stage::full};
  result.rows.resize(rtt_grid.size() * 4);
  auto* rows = &result.rows;
  auto* baselines = &result.baselines;
  detail::parallel_for(rows->size(), jobs, [&, rows, baselines](std::size_t idx) {
    SimTime rtt = rtt_grid[idx / 4];
    Stage stage = kStages[idx % 4];
    std::vector<RunMetrics> runs(iterations);
    for (std::uint32_t i = 0; i < iterations; ++i) {
      SimConfig cfg = apply_stage(base, stage);
      cfg.rtt = rtt;
      cfg.oracle.seed = base.oracle.seed + i;
      runs[i] = run_sim(cfg);
    }
    (*rows)[idx] = {stage, rtt, paired_ratios(runs, *baselines), std::move(runs)};
  });
  return result;
}

inline std::vector<AblationRow> run_ablation(const SimConfig& base,
                                             std::span<const SimTime> rtt_grid,
                                             std::uint32_t iterations,
                                             unsigned jobs = 1) {
  return run_ablation_full(base, rtt_grid, iterations, jobs).rows;
}

/// Entropy quantiles actually observed in the run's target stream, smallest
/// to largest, used as the phi grid.
inline std::vector<double> phi_quantiles(const OracleConfig& ocfg,
                                         std::uint32_t num_requests,
                                         std::uint32_t points) {
  if (points < 2) throw ConfigError("phi sweep needs >= 2 points");
  Oracle oracle = Oracle::open(ocfg);
  std::vector<double> entropies;
  for (std::uint32_t r = 0; r < num_requests; ++r) {
    SequenceTrace trace = oracle.next_sequence();
    for (const TokenRecord& rec : trace.records())
      entropies.push_back(rec.target_prediction.entropy);
  }
  std::sort(entropies.begin(), entropies.end());
  std::vector<double> out;
  out.reserve(points);
  for (std::uint32_t i = 0; i < points; ++i) {
    std::size_t idx = static_cast<std::size_t>(
        (static_cast<double>(i) * static_cast<double>(entropies.size() - 1)) /
        static_cast<double>(points - 1) + 0.5);
    out.push_back(entropies[idx]);
  }
  return out;
}

struct PhiSweepRow {
  SimTime rtt;
  double phi;
  PairedRatios ratios;
  std::vector<RunMetrics> runs;
};

struct PhiSweepResult {
  std::vector<PhiSweepRow> rows;
  std::vector<RunMetrics> baselines;
};

/// Trade-off sweep: per RTT, a latency/offload curve across phi values
/// taken as quantiles of the observed target entropy distribution.
inline PhiSweepResult run_phi_sweep_full(const SimConfig& base,
                                         std::span<const SimTime> rtt_grid,
                                         std::uint32_t phi_points,
                                         std::uint32_t iterations,
                                         unsigned jobs = 1) {
  PhiSweepResult result;
  std::vector<double> phis = phi_quantiles(base.oracle, base.num_requests, phi_points);
  result.baselines = paired_baselines(base, iterations, jobs);
  result.rows.resize(rtt_grid.size() * phis.size());
  auto* rows = &result.rows;
  auto* baselines = &result.baselines;
  detail::parallel_for(rows->size(), jobs, [&, rows, baselines](std::size_t idx) {
    SimTime rtt = rtt_grid[idx / phis.size()];
    double phi = phis[idx % phis.size()];
    std::vector<RunMetrics> runs(iterations);
    for (std::uint32_t i = 0; i < iterations; ++i) {
      SimConfig cfg = base;
      cfg.mode = SimMode::wanspec;
      cfg.rtt = rtt;
      cfg.phi = phi;
      cfg.oracle.seed = base.oracle.seed + i;
      runs[i] = run_sim(cfg);
    }
    (*rows)[idx] = {rtt, phi, paired_ratios(runs, *baselines), std::move(runs)};
  });
  return result;
}

inline std::vector<PhiSweepRow> run_phi_sweep(const SimConfig& base,
                                              std::span<const SimTime> rtt_grid,
                                              std::uint32_t phi_points,
                                              std::uint32_t iterations,
                                              unsigned jobs = 1) {
  return run_phi_sweep_full(base, rtt_grid, phi_points, iterations, jobs).rows;
}

}  // namespace wanspec
