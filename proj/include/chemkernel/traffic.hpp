#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chemkernel/hw.hpp"
#include "chemkernel/network.hpp"
#include "chemkernel/ssa.hpp"
#include "chemkernel/trace.hpp"

namespace chemkernel::traffic {

struct Packet {
  std::uint32_t bytes = 0;
  double arrival = 0.0;
  std::uint64_t seq = 0;     // arrival order within the queue
  std::uint32_t origin = 0;  // queue the packet first entered
};

struct QueueCounters {
  std::uint64_t arrived = 0, departed = 0, head_dropped = 0, tail_dropped = 0;
  std::uint64_t arrived_bits = 0, departed_bits = 0, head_dropped_bits = 0, tail_dropped_bits = 0;
};

/// FIFO with an optional byte capacity; a full queue tail-drops.
class PacketQueue {
 public:
  explicit PacketQueue(std::optional<std::uint64_t> capacity_bytes = std::nullopt)
      : capacity_(capacity_bytes) {}

  /// False (and a tail-drop counted) when the packet does not fit.
  bool push(Packet p);
  Packet pop_departure();
  Packet pop_drop();

  bool empty() const { return fifo_.empty(); }
  std::size_t size() const { return fifo_.size(); }
  std::uint64_t bytes() const { return bytes_; }
  const Packet& front() const { return fifo_.front(); }
  const QueueCounters& counters() const { return counters_; }
  std::optional<std::uint64_t> capacity() const { return capacity_; }

 private:
  Packet pop();

  std::deque<Packet> fifo_;
  std::optional<std::uint64_t> capacity_;
  std::uint64_t bytes_ = 0;
  std::uint64_t next_seq_ = 0;
  QueueCounters counters_;
};

/// Molecules standing for one packet: ceil(bits / quantum).
std::int64_t molecule_cost(std::uint32_t bytes, double quantum_bits);

/// Queue side of a queue/CA binding: turns enqueues into molecules and
/// output or drop molecules into departures and head drops.
class CaBinding {
 public:
  CaBinding(PacketQueue queue, double quantum_bits, std::int64_t credit_cap);

  /// Molecules to inject for the packet; 0 when it was tail-dropped.
  std::int64_t enqueue(Packet p);
  /// Adds output credit and releases every head packet it pays for.
  std::vector<Packet> on_output_molecules(std::int64_t amount);
  /// Adds drop credit and removes head packets it pays for.
  std::vector<Packet> on_drop_molecules(std::int64_t amount);

  const PacketQueue& queue() const { return queue_; }
  std::int64_t credit() const { return credit_; }
  std::int64_t drop_credit() const { return drop_credit_; }
  std::int64_t credit_cap() const { return credit_cap_; }
  std::uint64_t discarded_credit() const { return discarded_; }
  double quantum_bits() const { return quantum_; }
  bool tail_dropped_last() const { return tail_dropped_last_; }

 private:
  std::int64_t bank(std::int64_t credit, std::int64_t amount);

  PacketQueue queue_;
  double quantum_;
  std::int64_t credit_cap_;
  std::int64_t credit_ = 0;
  std::int64_t drop_credit_ = 0;
  std::uint64_t discarded_ = 0;
  bool tail_dropped_last_ = false;
};

// --- scenarios -------------------------------------------------------------------

enum class ArrivalKind { cbr, poisson, onoff, trace };

struct ArrivalSpec {
  std::string queue;
  ArrivalKind kind = ArrivalKind::cbr;
  double rate_bps = 0.0;                  // mean rate (burst rate for onoff)
  std::uint32_t packet_bytes = 1500;
  std::uint32_t packet_bytes_max = 0;     // > packet_bytes: uniform sizes
  double on_mean = 0.1, off_mean = 0.1;   // onoff: exponential period lengths
  double from = 0.0;
  double until = std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, std::uint32_t>> trace;  // (time, bytes)
};

struct QueueSpec {
  std::string name;
  std::string input, output;
  std::optional<std::string> drop;
  std::optional<std::uint64_t> capacity_bytes;
  std::int64_t credit_cap = 0;   // 0: 10 x the largest packet cost reaching the queue
  std::optional<std::string> forward;  // departures enqueue here
};

struct Scenario {
  std::string name = "scenario";
  ReactionNetwork network;
  std::vector<QueueSpec> queues;
  std::vector<ArrivalSpec> arrivals;
  std::vector<TimedPatch> patches;
  double duration = 1.0;
  double window = 0.1;
  double quantum_bits = 1000.0;
  std::uint64_t seed = 1;

  /// Throws Error naming the first dangling reference.
  void validate() const;
};

/// Timestamped packets of one arrival process, from its own seeded stream.
std::vector<std::pair<double, std::uint32_t>> generate_arrivals(const ArrivalSpec& spec,
                                                                std::uint64_t seed,
                                                                std::size_t index);

/// Line-oriented scenario text; paths resolve against `base_dir`.
///   scenario <name> | duration <s> | seed <u64> | window <s> | quantum <bits>
///   network <file.cadl>
///   queue <name> input <S> output <P> [drop <D>] [capacity <bytes>] [credit-cap <mol>] [forward <queue>]
///   arrival <queue> cbr|poisson rate <bps> size <bytes> [size-max <bytes>] [from <s>] [until <s>]
///   arrival <queue> onoff rate <bps> on <s> off <s> size <bytes> [from <s>] [until <s>]
///   arrival <queue> trace <file> [from <s>] [until <s>]
///   patch <s> <file.capatch>
/// Throws ParseError with the line number.
Scenario parse_scenario(std::string_view text, const std::string& base_dir = ".");
Scenario load_scenario(const std::string& path);

/// fig7, fig8-k20, fig8-k10, fig10, fig12.
std::optional<Scenario> builtin_scenario(std::string_view name);
std::vector<std::string> builtin_names();

struct Rnet4Egress {
  std::uint64_t e0 = 100;
  double k1 = 1.0, k2 = 20.0, kd = 0.001;
};

/// Per class i: S_i + T_i -> TS_i (k1), TS_i -> T_i + P_i (k2_i), with e0
/// tokens T_i. Class departures aggregate in an egress queue run by an AQM
/// stage on S, E, ES, P, D. The classes couple through the egress queue.
ReactionNetwork build_rnet4(std::size_t n_classes, std::span<const double> k2_weights,
                            std::uint64_t class_e0 = 150, double class_k1 = 1.0,
                            const Rnet4Egress& egress = {});

// --- running ---------------------------------------------------------------------

enum class EngineKind { ssa, hw };

/// Which records reach the trace: everything, or reconfig markers only.
enum class TraceDetail { all, reconfig };

struct RunConfig {
  EngineKind engine = EngineKind::ssa;
  EngineLimits limits;
  hw::CycleCostModel cost;
  bool record_trace = false;
  TraceDetail trace_detail = TraceDetail::all;
  /// Receives each record with the network running at that moment, in place
  /// of storing it in MetricsReport::trace.
  std::function<void(const TraceRecord&, const ReactionNetwork&)> trace_sink;
  double window = 0.0;  // > 0 overrides the scenario's window
};

struct QueueSeries {
  std::vector<double> offered_bps, tx_bps, drop_bps;
  std::vector<double> occupancy_bits;
  std::vector<std::uint64_t> occupancy_packets;
  std::vector<std::vector<double>> tx_bps_by_origin;  // [window][origin queue]
};

struct MetricsReport {
  TraceHeader header;
  std::string scenario;
  double duration = 0.0, window = 0.0, quantum_bits = 0.0;
  std::vector<std::string> queues;
  std::vector<double> window_start, window_length;
  std::vector<QueueSeries> series;
  std::vector<QueueCounters> totals;
  std::vector<std::uint64_t> discarded_credit;
  std::uint64_t firings = 0, injections = 0, patches = 0;
  std::uint64_t conservation_violations = 0, fifo_violations = 0;
  std::uint64_t cycles = 0;   // hw engine only
  bool saturated = false;     // hw engine only
  std::optional<hw::Saturation> first_saturation;
  Trace trace;                // filled when RunConfig::record_trace

  std::size_t queue_index(std::string_view name) const;
  /// Length-weighted mean of a per-window series over windows inside [t0, t1).
  double mean(const std::vector<double>& s, double t0, double t1) const;
};

MetricsReport run_scenario(const Scenario& sc, const RunConfig& cfg = {});

/// One CSV row per (window, queue); `#` header lines carry run identity.
void write_csv(std::ostream& os, const MetricsReport& m);
/// JSONL: identity header line, then one object per (window, queue).
void write_jsonl(std::ostream& os, const MetricsReport& m);
/// Whole-run aggregate as one JSON document.
void write_json(std::ostream& os, const MetricsReport& m);

/// Energy of the mean-removed series above f_cut, one-sided periodogram.
double high_band_energy(std::span<const double> series, double dt, double f_cut);

}  // namespace chemkernel::traffic
