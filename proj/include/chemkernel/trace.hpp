#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "chemkernel/network.hpp"

namespace chemkernel {

inline constexpr const char* kToolVersion = "0.3.1";

enum class RecordKind { fire, inject, sample, reconfig };

struct TraceRecord {
  double t = 0.0;
  RecordKind kind = RecordKind::fire;
  std::int64_t index = -1;  // reaction id (fire) or species id (inject)
  std::vector<std::pair<SpeciesId, std::int64_t>> delta;
  std::vector<std::pair<SpeciesId, std::int64_t>> snapshot;
  std::string note;  // reconfig: patch kind and edit count
};

struct TraceHeader {
  std::uint64_t seed = 0;
  std::string rng;
  std::string network_hash;
  std::string engine = "ssa";
};

struct Trace {
  TraceHeader header;
  std::vector<TraceRecord> records;
  std::uint64_t firings = 0;  // counted even when firing records are not kept
  std::uint64_t injections = 0;

  /// Reaction ids of the recorded firings, in order.
  std::vector<std::int64_t> firing_sequence() const;
};

/// JSONL: a header line, then one record per line. Species and reactions are
/// written by name when `names` is given.
void write_jsonl(std::ostream& os, const Trace& trace, const ReactionNetwork& names);

/// Streaming halves of write_jsonl.
void write_jsonl_header(std::ostream& os, const TraceHeader& header);
void write_jsonl_record(std::ostream& os, const TraceRecord& record, const ReactionNetwork& names);

}  // namespace chemkernel
