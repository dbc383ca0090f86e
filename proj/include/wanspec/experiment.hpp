#pragma once

#include "wanspec/oracle.hpp"
#include "wanspec/runtime.hpp"
#include "wanspec/sim.hpp"
#include "wanspec/types.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace wanspec {

// Declarative experiment front-end: an INI-style file selects a suite
// (single run, ablation, phi sweep, or networked deploy), the oracle and
// timing profile, and the parameter grids. Every run emits a summary CSV,
// a per-seed CSV, and a manifest that embeds the resolved file verbatim so
// the exact run can be reproduced from the manifest alone.

struct ExperimentConfig {
  enum class Suite { single, ablation, phi_sweep, deploy };

  Suite suite = Suite::single;
  std::string mode = "wanspec_full";  // single suite: baseline or a stage name
  std::uint64_t seed = 1;
  std::uint32_t iterations = 20;
  std::uint32_t requests = 3;

  OracleConfig oracle;

  std::string profile = "l40s";
  SimTime t_target = 23400;
  SimTime t_draft = 7500;

  std::uint32_t k = 2;
  std::uint32_t b = 2;
  std::uint32_t s = 4;
  double theta = 0.5;
  double phi = 0.5;
  std::uint32_t catchup_batch_limit = 32;
  std::size_t max_nodes = 64;
  bool wait_backstop = false;

  std::vector<SimTime> rtt_us{0};
  std::uint32_t phi_points = 100;
  SimTime jitter = 0;

  std::string csv_path = "results.csv";
  std::string per_seed_csv_path;  // derived from csv_path when empty
  std::string manifest_path;      // derived from csv_path when empty

  std::string source_text;  // the file exactly as parsed

  static const char* suite_name(Suite s) {
    switch (s) {
      case Suite::single: return "single";
      case Suite::ablation: return "ablation";
      case Suite::phi_sweep: return "phi_sweep";
      default: return "deploy";
    }
  }

  SimConfig to_sim() const {
    SimConfig c;
    c.mode = SimMode::wanspec;
    c.jitter = jitter;
    c.t_target = t_target;
    c.t_draft = t_draft;
    c.k = k;
    c.b = b;
    c.s = s;
    c.theta = theta;
    c.phi = phi;
    c.catchup_batch_limit = catchup_batch_limit;
    c.max_nodes = max_nodes;
    c.wait_backstop = wait_backstop;
    c.num_requests = requests;
    c.oracle = oracle;
    c.oracle.seed = seed;
    return c;
  }

  void validate() const {
    to_sim().validate();
    if (iterations < 1) throw ConfigError("experiment: iterations must be >= 1");
    if (rtt_us.empty()) throw ConfigError("experiment: rtt grid must be non-empty");
    if (suite == Suite::phi_sweep && phi_points < 2)
      throw ConfigError("experiment: phi_points must be >= 2");
  }
};

/// Applies a single-suite mode string to a sim config. Stage names follow
/// the ablation ladder; "wanspec" is the fully enabled configuration.
inline SimConfig apply_mode(SimConfig cfg, const std::string& mode) {
  if (mode == "baseline") {
    cfg.mode = SimMode::baseline;
    return cfg;
  }
  if (mode == "wanspec" || mode == "wanspec_full") return apply_stage(cfg, Stage::full);
  if (mode == "wanspec_plain") return apply_stage(cfg, Stage::plain);
  if (mode == "wanspec_branch") return apply_stage(cfg, Stage::branching);
  if (mode == "wanspec_branch_theta") return apply_stage(cfg, Stage::branching_theta);
  throw ConfigError("experiment: unknown mode \"" + mode + "\"");
}

namespace exp_detail {

struct Parser {
  int lineno = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("line " + std::to_string(lineno) + ": " + msg);
  }

  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  double number(const std::string& v) const {
    std::size_t used = 0;
    double d = 0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      fail("expected a number, got \"" + v + "\"");
    }
    if (used != v.size()) fail("trailing characters in number \"" + v + "\"");
    return d;
  }

  std::uint64_t integer(const std::string& v) const {
    double d = number(v);
    auto i = static_cast<std::uint64_t>(d);
    if (static_cast<double>(i) != d || d < 0) fail("expected a non-negative integer");
    return i;
  }

  bool boolean(const std::string& v) const {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    fail("expected true/false");
  }

  std::vector<double> list(const std::string& v) const {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) fail("empty list element");
      out.push_back(number(item));
    }
    if (out.empty()) fail("expected a non-empty list");
    return out;
  }
};

}  // namespace exp_detail

inline ExperimentConfig parse_experiment(const std::string& text) {
  ExperimentConfig cfg;
  cfg.source_text = text;
  exp_detail::Parser p;
  std::istringstream in(text);
  std::string raw, section;
  bool custom_tt = false, custom_td = false;

  while (std::getline(in, raw)) {
    ++p.lineno;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = exp_detail::Parser::trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') p.fail("unterminated section header");
      section = line.substr(1, line.size() - 2);
      if (section != "experiment" && section != "oracle" && section != "timing" &&
          section != "protocol" && section != "grid" && section != "output")
        p.fail("unknown section [" + section + "]");
      continue;
    }

    auto eq = line.find('=');
    if (eq == std::string::npos) p.fail("expected key = value");
    std::string key = exp_detail::Parser::trim(line.substr(0, eq));
    std::string val = exp_detail::Parser::trim(line.substr(eq + 1));
    if (key.empty() || val.empty()) p.fail("empty key or value");
    if (section.empty()) p.fail("key before any [section]");

    if (section == "experiment") {
      if (key == "suite") {
        if (val == "single") cfg.suite = ExperimentConfig::Suite::single;
        else if (val == "ablation") cfg.suite = ExperimentConfig::Suite::ablation;
        else if (val == "phi_sweep") cfg.suite = ExperimentConfig::Suite::phi_sweep;
        else if (val == "deploy") cfg.suite = ExperimentConfig::Suite::deploy;
        else p.fail("unknown suite \"" + val + "\"");
      } else if (key == "mode") cfg.mode = val;
      else if (key == "seed") cfg.seed = p.integer(val);
      else if (key == "iterations") cfg.iterations = static_cast<std::uint32_t>(p.integer(val));
      else if (key == "requests") cfg.requests = static_cast<std::uint32_t>(p.integer(val));
      else p.fail("unknown key \"" + key + "\" in [experiment]");
    } else if (section == "oracle") {
      if (key == "kind") {
        if (val == "stochastic") cfg.oracle.kind = OracleKind::stochastic;
        else if (val == "trace") cfg.oracle.kind = OracleKind::trace;
        else p.fail("unknown oracle kind \"" + val + "\"");
      } else if (key == "match_prob") cfg.oracle.match_prob = p.number(val);
      else if (key == "sequence_length") cfg.oracle.sequence_length = static_cast<std::uint32_t>(p.integer(val));
      else if (key == "vocab_size") cfg.oracle.vocab_size = static_cast<std::uint32_t>(p.integer(val));
      else if (key == "eos_id") cfg.oracle.eos_id = static_cast<TokenId>(p.integer(val));
      else if (key == "entropy_low") cfg.oracle.entropy_low = p.number(val);
      else if (key == "entropy_high") cfg.oracle.entropy_high = p.number(val);
      else if (key == "second_correct_prob") cfg.oracle.second_correct_prob = p.number(val);
      else if (key == "trace_path") cfg.oracle.trace_path = val;
      else p.fail("unknown key \"" + key + "\" in [oracle]");
    } else if (section == "timing") {
      if (key == "profile") {
        cfg.profile = val;
        if (val == "l40s") {
          cfg.t_target = 23400;
          cfg.t_draft = 7500;
        } else if (val == "swiftspec") {
          cfg.t_target = 6000;
          cfg.t_draft = 1000;
        } else if (val != "custom") {
          p.fail("unknown profile \"" + val + "\" (l40s, swiftspec, custom)");
        }
      } else if (key == "t_target_ms") {
        cfg.t_target = ms_to_us(p.number(val));
        custom_tt = true;
      } else if (key == "t_draft_ms") {
        cfg.t_draft = ms_to_us(p.number(val));
        custom_td = true;
      } else p.fail("unknown key \"" + key + "\" in [timing]");
    } else if (section == "protocol") {
      if (key == "k") cfg.k = static_cast<std::uint32_t>(p.integer(val));
      else if (key == "b") cfg.b = static_cast<std::uint32_t>(p.integer(val));
      else if (key == "s") cfg.s = static_cast<std::uint32_t>(p.integer(val));
      else if (key == "theta") cfg.theta = p.number(val);
      else if (key == "phi") cfg.phi = p.number(val);
      else if (key == "catchup_batch_limit") cfg.catchup_batch_limit = static_cast<std::uint32_t>(p.integer(val));
      else if (key == "max_nodes") cfg.max_nodes = static_cast<std::size_t>(p.integer(val));
      else if (key == "wait_backstop") cfg.wait_backstop = p.boolean(val);
      else p.fail("unknown key \"" + key + "\" in [protocol]");
    } else if (section == "grid") {
      if (key == "rtt_ms") {
        cfg.rtt_us.clear();
        for (double ms : p.list(val)) cfg.rtt_us.push_back(ms_to_us(ms));
      } else if (key == "phi_points") cfg.phi_points = static_cast<std::uint32_t>(p.integer(val));
      else if (key == "jitter_ms") cfg.jitter = ms_to_us(p.number(val));
      else p.fail("unknown key \"" + key + "\" in [grid]");
    } else if (section == "output") {
      if (key == "csv") cfg.csv_path = val;
      else if (key == "per_seed_csv") cfg.per_seed_csv_path = val;
      else if (key == "manifest") cfg.manifest_path = val;
      else p.fail("unknown key \"" + key + "\" in [output]");
    }
  }

  if (cfg.profile == "custom" && !(custom_tt && custom_td))
    throw ParseError("timing profile \"custom\" needs t_target_ms and t_draft_ms");

  auto stem = [](const std::string& path) {
    auto dot = path.rfind('.');
    return dot == std::string::npos ? path : path.substr(0, dot);
  };
  if (cfg.per_seed_csv_path.empty()) cfg.per_seed_csv_path = stem(cfg.csv_path) + "_per_seed.csv";
  if (cfg.manifest_path.empty()) cfg.manifest_path = stem(cfg.csv_path) + ".manifest.json";

  cfg.validate();
  (void)apply_mode(cfg.to_sim(), cfg.mode);  // reject bad single-suite modes early
  return cfg;
}

// ---------------------------------------------------------------------------
// Results and serialization
// ---------------------------------------------------------------------------

struct ResultRow {
  std::string harness = "sim";  // sim | runtime
  std::string mode;
  SimTime rtt = 0;
  double phi = 0.0;
  double theta = 0.0;
  std::uint32_t b = 0, s = 0, k = 0;
  PairedRatios ratios;
  std::string status = "ok";
};

struct PerSeedRow {
  std::string harness = "sim";
  std::string mode;
  SimTime rtt = 0;
  double phi = 0.0;
  std::uint64_t seed = 0;
  SimTime latency_us = 0;
  std::uint64_t ctrl_draft_passes = 0;
  std::uint64_t sync_stalls = 0;
  std::uint64_t worker_draft_steps = 0;
  std::uint64_t tokens = 0;
  SimTime baseline_latency_us = 0;
  std::uint64_t baseline_ctrl_draft_passes = 0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::uint64_t effective_seed = 0;
  std::vector<ResultRow> rows;
  std::vector<PerSeedRow> per_seed;
  bool ok = true;
};

inline constexpr const char* kCsvHeader =
    "suite,harness,mode,rtt_ms,phi,theta,b,s,k,seed,requests,iterations,"
    "median_latency_us,baseline_median_latency_us,median_latency_ratio,"
    "median_ctrl_draft_passes,baseline_median_ctrl_draft_passes,"
    "median_ctrl_draft_ratio,median_sync_stalls,median_worker_draft_steps,status";

inline constexpr const char* kPerSeedCsvHeader =
    "suite,harness,mode,rtt_ms,phi,seed,requests,latency_us,ctrl_draft_passes,"
    "sync_stalls,worker_draft_steps,tokens_committed,baseline_latency_us,"
    "baseline_ctrl_draft_passes";

namespace exp_detail {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string fmt_ms(SimTime us) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", us_to_ms(us));
  return buf;
}

}  // namespace exp_detail

inline std::string render_csv(const ExperimentResult& r) {
  std::ostringstream os;
  os << kCsvHeader << "\n";
  const ExperimentConfig& c = r.config;
  for (const ResultRow& row : r.rows) {
    os << ExperimentConfig::suite_name(c.suite) << ',' << row.harness << ','
       << row.mode << ',' << exp_detail::fmt_ms(row.rtt) << ','
       << exp_detail::fmt(row.phi) << ',' << exp_detail::fmt(row.theta) << ','
       << row.b << ',' << row.s << ',' << row.k << ',' << r.effective_seed << ','
       << c.requests << ',' << c.iterations << ','
       << exp_detail::fmt(row.ratios.median_latency_us) << ','
       << exp_detail::fmt(row.ratios.baseline_median_latency_us) << ','
       << exp_detail::fmt(row.ratios.median_latency_ratio) << ','
       << exp_detail::fmt(row.ratios.median_ctrl_passes) << ','
       << exp_detail::fmt(row.ratios.baseline_median_ctrl_passes) << ','
       << exp_detail::fmt(row.ratios.median_token_ratio) << ','
       << exp_detail::fmt(row.ratios.median_sync_stalls) << ','
       << exp_detail::fmt(row.ratios.median_worker_steps) << ',' << row.status
       << "\n";
  }
  return os.str();
}

inline std::string render_per_seed_csv(const ExperimentResult& r) {
  std::ostringstream os;
  os << kPerSeedCsvHeader << "\n";
  const ExperimentConfig& c = r.config;
  for (const PerSeedRow& row : r.per_seed) {
    os << ExperimentConfig::suite_name(c.suite) << ',' << row.harness << ','
       << row.mode << ',' << exp_detail::fmt_ms(row.rtt) << ','
       << exp_detail::fmt(row.phi) << ',' << row.seed << ',' << c.requests << ','
       << row.latency_us << ',' << row.ctrl_draft_passes << ',' << row.sync_stalls
       << ',' << row.worker_draft_steps << ',' << row.tokens << ','
       << row.baseline_latency_us << ',' << row.baseline_ctrl_draft_passes << "\n";
  }
  return os.str();
}

/// Human-readable table derived from the same rows the CSV holds, so the
/// printed ratios cannot drift from the written ones.
inline std::string render_summary(const ExperimentResult& r) {
  std::ostringstream os;
  os << "suite: " << ExperimentConfig::suite_name(r.config.suite)
     << "  seed: " << r.effective_seed << "  iterations: " << r.config.iterations
     << "  requests/run: " << r.config.requests << "\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-22s %-8s %9s %11s %11s %9s  %s\n", "mode",
                "harness", "rtt_ms", "lat_ratio", "tok_ratio", "stalls", "status");
  os << line;
  for (const ResultRow& row : r.rows) {
    std::snprintf(line, sizeof(line), "%-22s %-8s %9s %11.4f %11.4f %9.1f  %s\n",
                  row.mode.c_str(), row.harness.c_str(),
                  exp_detail::fmt_ms(row.rtt).c_str(), row.ratios.median_latency_ratio,
                  row.ratios.median_token_ratio, row.ratios.median_sync_stalls,
                  row.status.c_str());
    os << line;
  }
  return os.str();
}

inline std::string render_manifest(const ExperimentResult& r) {
  nlohmann::ordered_json m;
  m["tool"] = "wanspec";
  m["format"] = 1;
  m["suite"] = ExperimentConfig::suite_name(r.config.suite);
  m["effective_seed"] = r.effective_seed;
  m["csv"] = r.config.csv_path;
  m["per_seed_csv"] = r.config.per_seed_csv_path;
  m["csv_columns"] = kCsvHeader;
  m["per_seed_columns"] = kPerSeedCsvHeader;
  m["ratio_definition"] =
      "median over paired seeds of (wanspec total / baseline total); totals are "
      "summed over the run's requests; ctrl draft passes count every controller "
      "draft forward pass including catch-up batches; the baseline denominator "
      "counts all baseline draft forward passes";
  m["source"] = r.config.source_text;
  return m.dump(2) + "\n";
}

/// Pulls the embedded experiment file back out of a manifest and pins the
/// seed it ran with, so a rerun reproduces the CSV byte for byte.
inline ExperimentConfig config_from_manifest(const std::string& manifest_json) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(manifest_json);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  if (!m.contains("source") || !m.contains("effective_seed"))
    throw ParseError("manifest: missing source or effective_seed");
  ExperimentConfig cfg = parse_experiment(m["source"].get<std::string>());
  cfg.seed = m["effective_seed"].get<std::uint64_t>();
  return cfg;
}

// ---------------------------------------------------------------------------
// Suite execution
// ---------------------------------------------------------------------------

namespace exp_detail {

inline void append_per_seed(ExperimentResult& out, const std::string& harness,
                            const std::string& mode, SimTime rtt, double phi,
                            std::uint64_t base_seed,
                            const std::vector<RunMetrics>& runs,
                            const std::vector<RunMetrics>& baselines) {
  for (std::size_t i = 0; i < runs.size(); ++i) {
    PerSeedRow row;
    row.harness = harness;
    row.mode = mode;
    row.rtt = rtt;
    row.phi = phi;
    row.seed = base_seed + i;
    row.latency_us = runs[i].total_latency();
    row.ctrl_draft_passes = runs[i].total_ctrl_draft_passes();
    row.sync_stalls = runs[i].total_sync_stalls();
    row.worker_draft_steps = runs[i].total(&RequestMetrics::worker_draft_steps);
    row.tokens = runs[i].total(&RequestMetrics::tokens_committed);
    row.baseline_latency_us = baselines[i].total_latency();
    row.baseline_ctrl_draft_passes = baselines[i].total_ctrl_draft_passes();
    out.per_seed.push_back(row);
  }
}

inline ResultRow make_row(const std::string& harness, const std::string& mode,
                          const SimConfig& cfg, SimTime rtt, PairedRatios ratios) {
  ResultRow row;
  row.harness = harness;
  row.mode = mode;
  row.rtt = rtt;
  row.phi = cfg.phi;
  row.theta = cfg.theta;
  row.b = cfg.b;
  row.s = cfg.s;
  row.k = cfg.k;
  row.ratios = ratios;
  return row;
}

inline void run_single_suite(ExperimentResult& out, unsigned jobs) {
  const ExperimentConfig& c = out.config;
  SimConfig base = c.to_sim();
  base.oracle.seed = out.effective_seed;
  std::vector<RunMetrics> baselines = paired_baselines(base, c.iterations, jobs);
  SimConfig cfg = apply_mode(base, c.mode);
  for (SimTime rtt : c.rtt_us) {
    std::vector<RunMetrics> runs(c.iterations);
    detail::parallel_for(c.iterations, jobs, [&](std::size_t i) {
      SimConfig point = cfg;
      point.rtt = rtt;
      point.oracle.seed = base.oracle.seed + i;
      runs[i] = run_sim(point);
    });
    SimConfig labeled = cfg;
    labeled.rtt = rtt;
    out.rows.push_back(make_row("sim", c.mode, labeled, rtt,
                                paired_ratios(runs, baselines)));
    append_per_seed(out, "sim", c.mode, rtt, cfg.phi, base.oracle.seed, runs, baselines);
  }
}

inline void run_ablation_suite(ExperimentResult& out, unsigned jobs) {
  const ExperimentConfig& c = out.config;
  SimConfig base = c.to_sim();
  base.oracle.seed = out.effective_seed;
  AblationResult res = run_ablation_full(base, c.rtt_us, c.iterations, jobs);
  for (const AblationRow& row : res.rows) {
    SimConfig staged = apply_stage(base, row.stage);
    staged.rtt = row.rtt;
    out.rows.push_back(
        make_row("sim", stage_name(row.stage), staged, row.rtt, row.ratios));
    append_per_seed(out, "sim", stage_name(row.stage), row.rtt, staged.phi,
                    base.oracle.seed, row.runs, res.baselines);
  }
}

inline void run_phi_sweep_suite(ExperimentResult& out, unsigned jobs) {
  const ExperimentConfig& c = out.config;
  SimConfig base = c.to_sim();
  base.oracle.seed = out.effective_seed;
  PhiSweepResult res = run_phi_sweep_full(base, c.rtt_us, c.phi_points, c.iterations, jobs);
  for (const PhiSweepRow& row : res.rows) {
    SimConfig point = base;
    point.rtt = row.rtt;
    point.phi = row.phi;
    out.rows.push_back(make_row("sim", "wanspec_full", point, row.rtt, row.ratios));
    append_per_seed(out, "sim", "wanspec_full", row.rtt, row.phi, base.oracle.seed,
                    row.runs, res.baselines);
  }
}

inline void run_deploy_suite(ExperimentResult& out, unsigned jobs) {
  const ExperimentConfig& c = out.config;
  SimConfig base = c.to_sim();
  base.oracle.seed = out.effective_seed;
  SimConfig full = apply_mode(base, c.mode);

  // Paired denominators, wall-clock and simulated, shared across RTT points.
  std::vector<RunMetrics> sim_baselines = paired_baselines(base, c.iterations, jobs);
  std::vector<RunMetrics> rt_baselines(c.iterations);
  for (std::uint32_t i = 0; i < c.iterations; ++i) {
    SimConfig cfg = base;
    cfg.oracle.seed = base.oracle.seed + i;
    rt_baselines[i] = run_runtime_baseline(cfg).metrics;
  }

  for (SimTime rtt : c.rtt_us) {
    // Simulator prediction for this deployment point.
    std::vector<RunMetrics> sim_runs(c.iterations);
    detail::parallel_for(c.iterations, jobs, [&](std::size_t i) {
      SimConfig cfg = full;
      cfg.rtt = rtt;
      cfg.oracle.seed = base.oracle.seed + i;
      sim_runs[i] = run_sim(cfg);
    });
    SimConfig labeled = full;
    labeled.rtt = rtt;
    out.rows.push_back(make_row("sim", c.mode, labeled, rtt,
                                paired_ratios(sim_runs, sim_baselines)));
    append_per_seed(out, "sim", c.mode, rtt, full.phi, base.oracle.seed, sim_runs,
                    sim_baselines);

    // Real loopback deployment with emulated latency.
    ResultRow row = make_row("runtime", c.mode, labeled, rtt, PairedRatios{});
    try {
      std::vector<RunMetrics> rt_runs(c.iterations);
      for (std::uint32_t i = 0; i < c.iterations; ++i) {
        SimConfig cfg = full;
        cfg.oracle.seed = base.oracle.seed + i;
        LoopbackResult lb = run_loopback(cfg, rtt, c.jitter);
        rt_runs[i] = lb.controller.metrics;
        // The worker process owns its per-request counters; only the run
        // total survives the wire, so park it on the first request.
        for (auto& req : rt_runs[i].requests) req.worker_draft_steps = 0;
        if (!rt_runs[i].requests.empty())
          rt_runs[i].requests.front().worker_draft_steps =
              lb.worker.counters.draft_steps;
      }
      row.ratios = paired_ratios(rt_runs, rt_baselines);
      append_per_seed(out, "runtime", c.mode, rtt, full.phi, base.oracle.seed,
                      rt_runs, rt_baselines);
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
      out.ok = false;
    }
    out.rows.push_back(row);
  }
}

}  // namespace exp_detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       std::uint64_t effective_seed, unsigned jobs = 1) {
  ExperimentResult out;
  out.config = cfg;
  out.effective_seed = effective_seed;
  switch (cfg.suite) {
    case ExperimentConfig::Suite::single:
      exp_detail::run_single_suite(out, jobs);
      break;
    case ExperimentConfig::Suite::ablation:
      exp_detail::run_ablation_suite(out, jobs);
      break;
    case ExperimentConfig::Suite::phi_sweep:
      exp_detail::run_phi_sweep_suite(out, jobs);
      break;
    case ExperimentConfig::Suite::deploy:
      exp_detail::run_deploy_suite(out, jobs);
      break;
  }
  return out;
}

}  // namespace wanspec
