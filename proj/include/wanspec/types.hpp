#pragma once

#include <cstdint>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace wanspec {

/// Vocabulary index of a token. The vocabulary size and the distinguished
/// EOS id are configuration parameters (see OracleConfig).
using TokenId = std::uint32_t;

/// Virtual or monotonic time in microseconds. The simulator interprets it as
/// time since request start; the runtime feeds monotonic-clock readings.
using SimTime = std::int64_t;

constexpr SimTime kInfiniteTime = std::numeric_limits<SimTime>::max();

inline SimTime ms_to_us(double ms) {
  return static_cast<SimTime>(std::llround(ms * 1000.0));
}

inline double us_to_ms(SimTime us) { return static_cast<double>(us) / 1000.0; }

/// Addition that saturates at kInfiniteTime instead of overflowing, so an
/// "effectively infinite" round-trip estimate stays usable in comparisons.
inline SimTime sat_add(SimTime a, SimTime b) {
  if (a > 0 && b > kInfiniteTime - a) return kInfiniteTime;
  return a + b;
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One candidate token with the probability the model assigned to it.
struct Candidate {
  TokenId id = 0;
  double prob = 0.0;
};

/// A model's output distribution at one position, reduced to what the
/// protocol consumes: the top candidates (descending probability, ties by
/// ascending id) and the entropy of the full distribution in nats.
struct Prediction {
  std::vector<Candidate> top_candidates;
  double entropy = 0.0;

  const Candidate& argmax() const { return top_candidates.at(0); }
  bool has_second() const { return top_candidates.size() >= 2; }
  const Candidate& argmax2() const { return top_candidates.at(1); }
};

/// Ground truth for one decoding position: the target model's token and
/// distribution plus the draft model's distribution at the same position.
struct TokenRecord {
  std::uint64_t position = 0;
  TokenId target_token = 0;
  Prediction target_prediction;
  Prediction draft_prediction;
};

}  // namespace wanspec
