// Experiment front-end: runs declarative experiment files (or reruns a
// manifest), generates oracle trace files, and parse-checks configs.

#include "wanspec/experiment.hpp"
#include "wanspec/oracle.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace wanspec;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
}

bool looks_like_manifest(const std::string& text) {
  auto pos = text.find_first_not_of(" \t\r\n");
  return pos != std::string::npos && text[pos] == '{';
}

int cmd_run(const std::string& file, const std::string& out_dir, unsigned jobs) {
  std::string text = read_file(file);
  ExperimentConfig cfg;
  std::uint64_t seed;
  if (looks_like_manifest(text)) {
    cfg = config_from_manifest(text);
    seed = cfg.seed;  // manifests pin the seed they ran with
  } else {
    cfg = parse_experiment(text);
    seed = cfg.seed;
    if (const char* env = std::getenv("WANSPEC_SEED")) {
      char* end = nullptr;
      seed = std::strtoull(env, &end, 10);
      if (end == env) throw ConfigError("WANSPEC_SEED is not a number");
      std::cerr << "seed overridden by WANSPEC_SEED: " << seed << "\n";
    }
  }

  ExperimentResult res = run_experiment(cfg, seed, jobs);
  fs::path base(out_dir);
  write_file(base / cfg.csv_path, render_csv(res));
  write_file(base / cfg.per_seed_csv_path, render_per_seed_csv(res));
  write_file(base / cfg.manifest_path, render_manifest(res));

  std::cout << render_summary(res);
  std::cout << "csv: " << (base / cfg.csv_path).string() << "\n"
            << "per-seed: " << (base / cfg.per_seed_csv_path).string() << "\n"
            << "manifest: " << (base / cfg.manifest_path).string() << "\n";
  return res.ok ? 0 : 1;
}

int cmd_gen_trace(const OracleConfig& ocfg, std::uint32_t sequences,
                  const std::string& out_path) {
  Oracle oracle = Oracle::open(ocfg);
  std::vector<SequenceTrace> seqs;
  seqs.reserve(sequences);
  for (std::uint32_t i = 0; i < sequences; ++i) seqs.push_back(oracle.next_sequence());
  std::ostringstream os;
  trace_io::write_trace(os, seqs);
  write_file(out_path, os.str());
  std::cout << "wrote " << sequences << " sequences x " << ocfg.sequence_length
            << " tokens to " << out_path << "\n";
  return 0;
}

int cmd_validate(const std::string& file) {
  std::string text = read_file(file);
  ExperimentConfig cfg =
      looks_like_manifest(text) ? config_from_manifest(text) : parse_experiment(text);
  std::cout << "ok: suite=" << ExperimentConfig::suite_name(cfg.suite)
            << " mode=" << cfg.mode << " seed=" << cfg.seed
            << " iterations=" << cfg.iterations << " requests=" << cfg.requests
            << " rtt_points=" << cfg.rtt_us.size() << " profile=" << cfg.profile
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wanspec experiment harness"};
  app.require_subcommand(1);

  std::string run_file, out_dir = ".";
  unsigned jobs = 1;
  auto* run = app.add_subcommand("run", "run an experiment file or manifest");
  run->add_option("file", run_file, "experiment file (.exp) or manifest (.json)")
      ->required();
  run->add_option("--out-dir", out_dir, "directory output paths resolve against");
  run->add_option("--jobs", jobs, "worker pool size for sweep points");

  OracleConfig ocfg;
  std::uint32_t sequences = 1;
  std::string trace_out;
  auto* gen = app.add_subcommand("gen-trace", "materialize a stochastic oracle trace");
  gen->add_option("--out", trace_out, "output trace path")->required();
  gen->add_option("--sequences", sequences, "number of sequences");
  gen->add_option("--length", ocfg.sequence_length, "tokens per sequence");
  gen->add_option("--seed", ocfg.seed, "oracle seed");
  gen->add_option("--match-prob", ocfg.match_prob, "draft/target match probability");
  gen->add_option("--vocab", ocfg.vocab_size, "vocabulary size");
  gen->add_option("--eos", ocfg.eos_id, "EOS token id");
  gen->add_option("--entropy-low", ocfg.entropy_low, "mean entropy at matches");
  gen->add_option("--entropy-high", ocfg.entropy_high, "mean entropy at mismatches");
  gen->add_option("--second-correct", ocfg.second_correct_prob,
                  "P(second choice is the target | mismatch)");

  std::string validate_file;
  auto* val = app.add_subcommand("validate", "parse-check an experiment file");
  val->add_option("file", validate_file, "experiment file or manifest")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_file, out_dir, jobs);
    if (gen->parsed()) return cmd_gen_trace(ocfg, sequences, trace_out);
    if (val->parsed()) return cmd_validate(validate_file);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
