#pragma once

#include "wanspec/rng.hpp"
#include "wanspec/spectree.hpp"
#include "wanspec/types.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace wanspec {

/// -sum(p * ln p) in nats, with 0*ln(0) taken as 0. The probabilities must
/// be non-negative and sum to 1 within 1e-9.
inline double entropy_of(std::span<const double> probs) {
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw std::invalid_argument("entropy_of: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("entropy_of: probabilities sum to " + std::to_string(sum));
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h < 0.0 ? 0.0 : h;
}

enum class OracleKind { stochastic, trace };

struct OracleConfig {
  OracleKind kind = OracleKind::stochastic;
  std::uint64_t seed = 1;
  std::uint32_t vocab_size = 32768;
  TokenId eos_id = 32767;
  double match_prob = 0.8;          // P(draft argmax == target token)
  double entropy_low = 0.3;         // mean entropy (nats) at matching positions
  double entropy_high = 1.5;        // mean entropy (nats) at mismatches
  double second_correct_prob = 0.3; // P(draft second choice == target | mismatch)
  std::uint32_t sequence_length = 100;
  std::string trace_path;

  void validate() const {
    if (vocab_size < 2) throw ConfigError("oracle: vocab_size must be >= 2");
    if (eos_id >= vocab_size) throw ConfigError("oracle: eos_id must be < vocab_size");
    if (match_prob < 0.0 || match_prob > 1.0)
      throw ConfigError("oracle: match_prob must be in [0,1]");
    if (second_correct_prob < 0.0 || second_correct_prob > 1.0)
      throw ConfigError("oracle: second_correct_prob must be in [0,1]");
    if (entropy_low <= 0.0 || entropy_high <= 0.0)
      throw ConfigError("oracle: entropy means must be > 0");
    if (sequence_length < 1) throw ConfigError("oracle: sequence_length must be >= 1");
    if (kind == OracleKind::trace && trace_path.empty())
      throw ConfigError("oracle: trace kind requires trace_path");
  }

  std::string canonical_string() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "kind=%s;seed=%llu;vocab=%u;eos=%u;match=%.17g;elow=%.17g;"
                  "ehigh=%.17g;second=%.17g;len=%u;trace=%s",
                  kind == OracleKind::stochastic ? "stochastic" : "trace",
                  static_cast<unsigned long long>(seed), vocab_size, eos_id,
                  match_prob, entropy_low, entropy_high, second_correct_prob,
                  sequence_length, trace_path.c_str());
    return buf;
  }
};

/// One request's worth of ground truth. Positions at or past the stored
/// length resolve to a fully confident EOS on both models, so lookups stay
/// total while speculation runs ahead of the sequence end.
class SequenceTrace {
 public:
  SequenceTrace(std::vector<TokenRecord> records, TokenId eos)
      : records_(std::move(records)), eos_(eos) {}

  std::size_t length() const { return records_.size(); }
  TokenId eos() const { return eos_; }
  const std::vector<TokenRecord>& records() const { return records_; }

  TokenId target_token(std::uint64_t pos) const {
    return pos < records_.size() ? records_[pos].target_token : eos_;
  }

  Prediction target_prediction(std::uint64_t pos) const {
    return pos < records_.size() ? records_[pos].target_prediction : eos_prediction();
  }

  Prediction draft_prediction(std::uint64_t pos) const {
    return pos < records_.size() ? records_[pos].draft_prediction : eos_prediction();
  }

  double target_entropy(std::uint64_t pos) const {
    return pos < records_.size() ? records_[pos].target_prediction.entropy : 0.0;
  }

  /// The greedy target output: all stored tokens, plus the implicit EOS when
  /// the stored sequence does not end with one.
  std::vector<TokenId> greedy_sequence() const {
    std::vector<TokenId> out;
    out.reserve(records_.size() + 1);
    for (const TokenRecord& r : records_) {
      out.push_back(r.target_token);
      if (r.target_token == eos_) return out;
    }
    if (out.empty() || out.back() != eos_) out.push_back(eos_);
    return out;
  }

 private:
  Prediction eos_prediction() const { return Prediction{{{eos_, 1.0}}, 0.0}; }

  std::vector<TokenRecord> records_;
  TokenId eos_;
};

/// One target-model step over a candidate path anchored at `base`: accepts
/// the longest matching prefix and emits the target's own next token as the
/// bonus. Total for any base and any candidates.
inline ValidationResult run_target_step(const SequenceTrace& trace, std::uint64_t base,
                                        std::span<const TokenId> candidates) {
  ValidationResult v;
  std::uint64_t pos = base;
  for (TokenId c : candidates) {
    if (c != trace.target_token(pos)) break;
    v.accepted.push_back(c);
    ++pos;
  }
  v.bonus_token = trace.target_token(pos);
  v.final_entropy = trace.target_entropy(pos);
  return v;
}

struct TraceExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace trace_io {

inline void check(bool cond, std::size_t record, const std::string& what) {
  if (!cond)
    throw ParseError("trace record " + std::to_string(record) + ": " + what);
}

inline Prediction parse_prediction(const nlohmann::json& pairs, double entropy,
                                   std::size_t record, std::uint32_t vocab,
                                   const char* label) {
  check(pairs.is_array() && pairs.size() >= 2, record,
        std::string(label) + " needs >= 2 candidate pairs");
  Prediction p;
  p.entropy = entropy;
  for (const auto& pr : pairs) {
    check(pr.is_array() && pr.size() == 2, record, "candidate pair malformed");
    Candidate c{pr[0].get<TokenId>(), pr[1].get<double>()};
    check(c.id < vocab, record, "token id out of vocabulary");
    check(c.prob > 0.0 && c.prob <= 1.0, record, "probability out of (0,1]");
    p.top_candidates.push_back(c);
  }
  for (std::size_t i = 1; i < p.top_candidates.size(); ++i) {
    const Candidate& a = p.top_candidates[i - 1];
    const Candidate& b = p.top_candidates[i];
    check(a.prob > b.prob || (a.prob == b.prob && a.id < b.id), record,
          std::string(label) + " candidates not in canonical order");
  }
  check(p.top_candidates[0].prob + p.top_candidates[1].prob <= 1.0 + 1e-12, record,
        "top-2 probabilities exceed 1");
  check(entropy >= 0.0, record, "negative entropy");
  check((entropy == 0.0) == (p.top_candidates[0].prob == 1.0), record,
        "entropy zero iff top probability is 1");
  return p;
}

/// Parses one newline-delimited trace file. Each line is a JSON object of
/// the form {"tokens":[{"t":..,"tp":[[id,p],..],"te":..,"dp":[[id,p],..],
/// "de":..},...]}. Errors name the offending record (line) index.
inline std::vector<SequenceTrace> read_trace(std::istream& in, const OracleConfig& cfg) {
  std::vector<SequenceTrace> out;
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    ++record;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("trace record " + std::to_string(record) + ": " + e.what());
    }
    check(j.is_object() && j.contains("tokens") && j["tokens"].is_array() &&
              !j["tokens"].empty(),
          record, "expected non-empty \"tokens\" array");
    std::vector<TokenRecord> records;
    std::uint64_t pos = 0;
    for (const auto& tok : j["tokens"]) {
      for (const auto& [key, val] : tok.items())
        check(key == "t" || key == "tp" || key == "te" || key == "dp" || key == "de",
              record, "unknown field \"" + key + "\"");
      check(tok.contains("t") && tok.contains("tp") && tok.contains("te") &&
                tok.contains("dp") && tok.contains("de"),
            record, "missing field");
      TokenRecord r;
      r.position = pos++;
      r.target_token = tok["t"].get<TokenId>();
      check(r.target_token < cfg.vocab_size, record, "target token out of vocabulary");
      r.target_prediction = parse_prediction(tok["tp"], tok["te"].get<double>(),
                                             record, cfg.vocab_size, "tp");
      r.draft_prediction = parse_prediction(tok["dp"], tok["de"].get<double>(),
                                            record, cfg.vocab_size, "dp");
      check(r.target_prediction.top_candidates[0].id == r.target_token, record,
            "target token is not the target argmax");
      records.push_back(std::move(r));
    }
    out.emplace_back(std::move(records), cfg.eos_id);
  }
  return out;
}

inline std::vector<SequenceTrace> read_trace_file(const std::string& path,
                                                  const OracleConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace file: " + path);
  return read_trace(in, cfg);
}

/// Writes sequences in the canonical trace format, one JSON object per line,
/// field order fixed (t, tp, te, dp, de) so regeneration is byte-identical.
inline void write_trace(std::ostream& os, std::span<const SequenceTrace> sequences) {
  for (const SequenceTrace& seq : sequences) {
    nlohmann::ordered_json line;
    auto& tokens = line["tokens"] = nlohmann::ordered_json::array();
    for (const TokenRecord& r : seq.records()) {
      nlohmann::ordered_json t;
      t["t"] = r.target_token;
      auto pairs = [](const Prediction& p) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const Candidate& c : p.top_candidates) arr.push_back({c.id, c.prob});
        return arr;
      };
      t["tp"] = pairs(r.target_prediction);
      t["te"] = r.target_prediction.entropy;
      t["dp"] = pairs(r.draft_prediction);
      t["de"] = r.draft_prediction.entropy;
      tokens.push_back(std::move(t));
    }
    os << line.dump() << "\n";
  }
}

}  // namespace trace_io

/// Deterministic, seedable replacement for the draft/target model pair.
/// Stochastic oracles synthesize i.i.d. positions; trace oracles replay a
/// recorded dataset, dealing sequences without replacement in a seeded
/// shuffle order.
class Oracle {
 public:
  static Oracle open(const OracleConfig& cfg) {
    cfg.validate();
    Oracle o(cfg);
    if (cfg.kind == OracleKind::trace) {
      o.sequences_ = trace_io::read_trace_file(cfg.trace_path, cfg);
      if (o.sequences_.empty()) throw ConfigError("trace file holds no sequences");
      o.order_.resize(o.sequences_.size());
      std::iota(o.order_.begin(), o.order_.end(), std::size_t{0});
      // Fisher-Yates with the deterministic engine: drawing without
      // replacement within one experiment run.
      for (std::size_t i = o.order_.size(); i > 1; --i)
        std::swap(o.order_[i - 1], o.order_[uniform_below(o.rng_, i)]);
    }
    return o;
  }

  const OracleConfig& config() const { return cfg_; }

  SequenceTrace next_sequence() {
    if (cfg_.kind == OracleKind::trace) {
      if (next_ >= order_.size())
        throw TraceExhausted("trace oracle exhausted after " +
                             std::to_string(next_) + " sequences");
      return sequences_[order_[next_++]];
    }
    return synth_sequence();
  }

 private:
  explicit Oracle(const OracleConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  TokenId draw_excluding(std::initializer_list<TokenId> excluded) {
    std::vector<TokenId> ex(excluded);
    std::sort(ex.begin(), ex.end());
    auto t = static_cast<TokenId>(
        uniform_below(rng_, cfg_.vocab_size - ex.size()));
    for (TokenId e : ex)
      if (t >= e) ++t;
    return t;
  }

  static void fill_probs(Prediction& p, double entropy) {
    p.entropy = entropy;
    double p1 = std::clamp(std::exp(-entropy), 0.05, 0.99);
    double p2 = std::min(0.9 * p1, 0.5 * (1.0 - p1));
    p.top_candidates[0].prob = p1;
    p.top_candidates[1].prob = p2;
  }

  SequenceTrace synth_sequence() {
    std::vector<TokenRecord> records;
    records.reserve(cfg_.sequence_length);
    for (std::uint32_t pos = 0; pos < cfg_.sequence_length; ++pos) {
      bool last = pos + 1 == cfg_.sequence_length;
      TokenRecord r;
      r.position = pos;
      // Draw order is part of the replay contract; do not reorder.
      bool match = uniform_unit(rng_) < cfg_.match_prob;
      r.target_token = last ? cfg_.eos_id : draw_excluding({cfg_.eos_id});
      double target_entropy = exponential(rng_, match ? cfg_.entropy_low : cfg_.entropy_high);
      double draft_entropy = exponential(rng_, match ? cfg_.entropy_low : cfg_.entropy_high);

      TokenId draft_top1, draft_top2;
      if (match) {
        draft_top1 = r.target_token;
        draft_top2 = draw_excluding({draft_top1});
      } else {
        draft_top1 = draw_excluding({r.target_token});
        bool second_correct = uniform_unit(rng_) < cfg_.second_correct_prob;
        draft_top2 = second_correct ? r.target_token
                                    : draw_excluding({r.target_token, draft_top1});
      }
      TokenId target_top2 = draw_excluding({r.target_token});

      r.target_prediction.top_candidates = {{r.target_token, 0.0}, {target_top2, 0.0}};
      fill_probs(r.target_prediction, target_entropy);
      r.draft_prediction.top_candidates = {{draft_top1, 0.0}, {draft_top2, 0.0}};
      fill_probs(r.draft_prediction, draft_entropy);
      records.push_back(std::move(r));
    }
    return SequenceTrace(std::move(records), cfg_.eos_id);
  }

  OracleConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<SequenceTrace> sequences_;
  std::vector<std::size_t> order_;
  std::size_t next_ = 0;
};

/// Appends tokens to a committed output, stopping permanently once EOS has
/// been committed. Both endpoints use this, so their outputs agree exactly.
inline void commit_tokens(std::vector<TokenId>& committed, bool& finished,
                          std::span<const TokenId> tokens, TokenId eos) {
  for (TokenId t : tokens) {
    if (finished) return;
    committed.push_back(t);
    if (t == eos) finished = true;
  }
}

}  // namespace wanspec
