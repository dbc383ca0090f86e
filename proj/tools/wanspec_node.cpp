// Networked protocol endpoint: one process per role, connected by the wire
// protocol, stepping mock models against a shared seeded oracle. The
// controller listens and owns the request loop; the worker connects and
// free-runs its draft loop. Exit code 0 means a clean Bye handshake.

#include "wanspec/experiment.hpp"
#include "wanspec/runtime.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

using namespace wanspec;

namespace {

std::pair<std::string, std::uint16_t> parse_hostport(const std::string& s) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos)
    throw ConfigError("expected host:port, got \"" + s + "\"");
  int port = std::stoi(s.substr(colon + 1));
  if (port < 0 || port > 65535) throw ConfigError("port out of range in " + s);
  return {s.substr(0, colon), static_cast<std::uint16_t>(port)};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_metrics_csv(const std::string& path, const std::string& mode,
                       SimTime rtt, const SimConfig& cfg, const RunOutputs& out) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << kPerSeedCsvHeader << "\n";
  const RunMetrics& m = out.metrics;
  f << "deploy,runtime," << mode << ',' << us_to_ms(rtt) << ',' << cfg.phi << ','
    << cfg.oracle.seed << ',' << cfg.num_requests << ',' << m.total_latency() << ','
    << m.total_ctrl_draft_passes() << ',' << m.total_sync_stalls() << ",0,"
    << m.total(&RequestMetrics::tokens_committed) << ",0,0\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wanspec networked endpoint"};

  std::string role, listen = "127.0.0.1:4600", connect = "127.0.0.1:4600";
  std::string config_path, out_path;
  double emulate_rtt_ms = 0.0;
  double rtt_estimate_ms = -1.0;
  app.add_option("--role", role, "controller or worker")
      ->required()
      ->check(CLI::IsMember({"controller", "worker"}));
  app.add_option("--listen", listen, "controller listen address (host:port)");
  app.add_option("--connect", connect, "worker connect address (host:port)");
  app.add_option("--config", config_path, "shared experiment file")->required();
  app.add_option("--emulate-rtt-ms", emulate_rtt_ms,
                 "extra emulated round trip, split across both inbound paths");
  app.add_option("--rtt-estimate-ms", rtt_estimate_ms,
                 "controller's R (defaults to the emulated RTT)");
  app.add_option("--out", out_path, "metrics CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig exp = parse_experiment(read_file(config_path));
    RuntimeConfig cfg;
    cfg.sim = apply_mode(exp.to_sim(), exp.mode == "baseline" ? "wanspec_full" : exp.mode);
    cfg.sim.mode = SimMode::wanspec;
    cfg.sim.rtt = ms_to_us(rtt_estimate_ms >= 0 ? rtt_estimate_ms : emulate_rtt_ms);
    cfg.emulate_one_way = ms_to_us(emulate_rtt_ms) / 2;
    cfg.emulate_jitter = exp.jitter;

    if (role == "controller") {
      cfg.role = RuntimeConfig::Role::controller;
      auto [host, port] = parse_hostport(listen);
      cfg.listen_host = host;
      cfg.listen_port = port;
      RunOutputs out = serve_controller_listening(
          cfg, [](std::uint16_t p) { std::cerr << "listening on port " << p << "\n"; });
      for (std::size_t r = 0; r < out.metrics.requests.size(); ++r) {
        const RequestMetrics& m = out.metrics.requests[r];
        std::cout << "request " << r << ": latency_ms=" << us_to_ms(m.latency)
                  << " tokens=" << m.tokens_committed
                  << " target_steps=" << m.target_steps
                  << " ctrl_draft_passes=" << m.ctrl_draft_passes
                  << " sync_stalls=" << m.sync_stalls << "\n";
        if (out.controller_outputs[r] != out.greedy_references[r]) {
          std::cerr << "error: committed output diverged from the oracle\n";
          return 2;
        }
      }
      if (!out_path.empty())
        write_metrics_csv(out_path, exp.mode, cfg.sim.rtt, cfg.sim, out);
    } else {
      cfg.role = RuntimeConfig::Role::worker;
      auto [host, port] = parse_hostport(connect);
      cfg.connect_host = host;
      cfg.connect_port = port;
      WorkerRunStats stats = serve_worker(cfg);
      std::cout << "worker done: requests=" << stats.requests_completed
                << " draft_steps=" << stats.counters.draft_steps
                << " speculations=" << stats.counters.speculations_sent
                << " clean_bye=" << (stats.clean_bye ? "yes" : "no") << "\n";
      if (!stats.clean_bye) return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
