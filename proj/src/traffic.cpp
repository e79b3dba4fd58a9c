#include "chemkernel/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <unsupported/Eigen/FFT>

#include "chemkernel/cadl.hpp"
#include "chemkernel/catalog.hpp"
#include "chemkernel/rng.hpp"
#include "json.hpp"

namespace chemkernel::traffic {

// --- queue and binding -----------------------------------------------------------

bool PacketQueue::push(Packet p) {
  ++counters_.arrived;
  counters_.arrived_bits += 8ull * p.bytes;
  if (capacity_ && bytes_ + p.bytes > *capacity_) {
    ++counters_.tail_dropped;
    counters_.tail_dropped_bits += 8ull * p.bytes;
    return false;
  }
  p.seq = next_seq_++;
  bytes_ += p.bytes;
  fifo_.push_back(p);
  return true;
}

Packet PacketQueue::pop() {
  Packet p = fifo_.front();
  fifo_.pop_front();
  bytes_ -= p.bytes;
  return p;
}

Packet PacketQueue::pop_departure() {
  auto p = pop();
  ++counters_.departed;
  counters_.departed_bits += 8ull * p.bytes;
  return p;
}

Packet PacketQueue::pop_drop() {
  auto p = pop();
  ++counters_.head_dropped;
  counters_.head_dropped_bits += 8ull * p.bytes;
  return p;
}

std::int64_t molecule_cost(std::uint32_t bytes, double quantum_bits) {
  return static_cast<std::int64_t>(std::ceil(8.0 * bytes / quantum_bits));
}

CaBinding::CaBinding(PacketQueue queue, double quantum_bits, std::int64_t credit_cap)
    : queue_(std::move(queue)), quantum_(quantum_bits), credit_cap_(credit_cap) {
  if (!(quantum_bits > 0.0)) throw Error("molecule quantum must be positive");
  if (credit_cap < 0) throw Error("credit cap must be non-negative");
}

std::int64_t CaBinding::enqueue(Packet p) {
  tail_dropped_last_ = !queue_.push(p);
  return tail_dropped_last_ ? 0 : molecule_cost(p.bytes, quantum_);
}

std::int64_t CaBinding::bank(std::int64_t credit, std::int64_t amount) {
  credit += amount;
  if (credit > credit_cap_) {
    discarded_ += static_cast<std::uint64_t>(credit - credit_cap_);
    credit = credit_cap_;
  }
  return credit;
}

std::vector<Packet> CaBinding::on_output_molecules(std::int64_t amount) {
  credit_ = bank(credit_, amount);
  std::vector<Packet> out;
  while (!queue_.empty()) {
    const auto cost = molecule_cost(queue_.front().bytes, quantum_);
    if (credit_ < cost) break;
    credit_ -= cost;
    out.push_back(queue_.pop_departure());
  }
  return out;
}

std::vector<Packet> CaBinding::on_drop_molecules(std::int64_t amount) {
  drop_credit_ = bank(drop_credit_, amount);
  std::vector<Packet> out;
  while (!queue_.empty()) {
    const auto cost = molecule_cost(queue_.front().bytes, quantum_);
    if (drop_credit_ < cost) break;
    drop_credit_ -= cost;
    out.push_back(queue_.pop_drop());
  }
  return out;
}

// --- arrivals ----------------------------------------------------------------------

std::vector<std::pair<double, std::uint32_t>> generate_arrivals(const ArrivalSpec& spec,
                                                                std::uint64_t seed,
                                                                std::size_t index) {
  VariateStream rng(splitmix64(seed ^ splitmix64(index + 1)));
  auto size = [&]() -> std::uint32_t {
    if (spec.packet_bytes_max <= spec.packet_bytes) return spec.packet_bytes;
    const auto span = spec.packet_bytes_max - spec.packet_bytes + 1;
    return spec.packet_bytes + static_cast<std::uint32_t>(rng.uniform() * span);
  };
  const double mean_bits = spec.packet_bytes_max > spec.packet_bytes
                               ? 4.0 * (double(spec.packet_bytes) + spec.packet_bytes_max)
                               : 8.0 * spec.packet_bytes;

  std::vector<std::pair<double, std::uint32_t>> out;
  switch (spec.kind) {
    case ArrivalKind::cbr: {
      if (!(spec.rate_bps > 0.0) || !std::isfinite(spec.until)) break;
      const double gap = mean_bits / spec.rate_bps;
      for (std::uint64_t i = 0;; ++i) {
        const double t = spec.from + static_cast<double>(i) * gap;
        if (t >= spec.until) break;
        out.emplace_back(t, size());
      }
      break;
    }
    case ArrivalKind::poisson: {
      if (!(spec.rate_bps > 0.0) || !std::isfinite(spec.until)) break;
      const double mean_gap = mean_bits / spec.rate_bps;
      for (double t = spec.from + mean_gap * rng.exponential(); t < spec.until;
           t += mean_gap * rng.exponential())
        out.emplace_back(t, size());
      break;
    }
    case ArrivalKind::onoff: {
      if (!(spec.rate_bps > 0.0) || !std::isfinite(spec.until)) break;
      const double mean_gap = mean_bits / spec.rate_bps;
      double t = spec.from;
      while (t < spec.until) {
        const double on_end = std::min(spec.until, t + spec.on_mean * rng.exponential());
        for (t += mean_gap * rng.exponential(); t < on_end; t += mean_gap * rng.exponential())
          out.emplace_back(t, size());
        t = on_end + spec.off_mean * rng.exponential();
      }
      break;
    }
    case ArrivalKind::trace:
      for (const auto& [t, bytes] : spec.trace)
        if (t >= spec.from && t < spec.until) out.emplace_back(t, bytes);
      std::stable_sort(out.begin(), out.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      break;
  }
  return out;
}

// --- scenario validation and parsing ---------------------------------------------

void Scenario::validate() const {
  if (!(duration > 0.0)) throw Error("scenario duration must be positive");
  if (!(window > 0.0)) throw Error("scenario window must be positive");
  if (!(quantum_bits > 0.0)) throw Error("molecule quantum must be positive");
  network.validate();
  auto has_queue = [&](const std::string& q) {
    return std::any_of(queues.begin(), queues.end(), [&](const auto& s) { return s.name == q; });
  };
  for (std::size_t i = 0; i < queues.size(); ++i) {
    const auto& q = queues[i];
    for (std::size_t j = 0; j < i; ++j)
      if (queues[j].name == q.name) throw Error("duplicate queue '" + q.name + "'");
    for (const auto* s : {&q.input, &q.output})
      if (!network.find_species(*s))
        throw Error("queue '" + q.name + "' binds unknown species '" + *s + "'");
    if (q.drop && !network.find_species(*q.drop))
      throw Error("queue '" + q.name + "' binds unknown drop species '" + *q.drop + "'");
    if (q.forward && !has_queue(*q.forward))
      throw Error("queue '" + q.name + "' forwards to unknown queue '" + *q.forward + "'");
  }
  for (const auto& a : arrivals)
    if (!has_queue(a.queue)) throw Error("arrival targets unknown queue '" + a.queue + "'");
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].time < 0.0 || patches[i].time > duration)
      throw Error("patch at t=" + cadl::format_real(patches[i].time) + " lies outside the run");
    if (i > 0 && patches[i].time < patches[i - 1].time) throw Error("patches must be ordered by time");
  }
}

namespace {

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

std::string resolve(const std::string& base, const std::string& path) {
  std::filesystem::path p(path);
  return p.is_absolute() ? path : (std::filesystem::path(base) / p).string();
}

std::vector<std::pair<double, std::uint32_t>> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file '" + path + "'");
  std::vector<std::pair<double, std::uint32_t>> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto w = split_words(line);
    if (w.empty()) continue;
    if (w.size() != 2) throw ParseError("trace lines are '<time> <bytes>'", n, 1);
    try {
      out.emplace_back(std::stod(w[0]), static_cast<std::uint32_t>(std::stoul(w[1])));
    } catch (const std::logic_error&) {
      throw ParseError("bad trace entry", n, 1);
    }
  }
  return out;
}

}  // namespace

Scenario parse_scenario(std::string_view text, const std::string& base_dir) {
  Scenario sc;
  bool have_network = false;
  std::vector<std::pair<double, std::string>> patch_files;
  std::istringstream is{std::string(text)};
  std::string raw;
  for (std::size_t n = 1; std::getline(is, raw); ++n) {
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.resize(hash);
    const auto w = split_words(raw);
    if (w.empty()) continue;
    auto fail = [&](const std::string& msg) -> ParseError {
      return ParseError(msg, n, raw.find_first_not_of(" \t") + 1);
    };
    auto num = [&](std::size_t i) {
      if (i >= w.size()) throw fail("missing value after '" + w[i - 1] + "'");
      try {
        std::size_t used = 0;
        const double v = std::stod(w[i], &used);
        if (used != w[i].size()) throw std::invalid_argument(w[i]);
        return v;
      } catch (const std::logic_error&) {
        throw fail("'" + w[i] + "' is not a number");
      }
    };
    auto word = [&](std::size_t i) -> const std::string& {
      if (i >= w.size()) throw fail("missing value after '" + w[i - 1] + "'");
      return w[i];
    };

    const auto& kw = w[0];
    if (kw == "scenario") {
      sc.name = word(1);
    } else if (kw == "duration") {
      sc.duration = num(1);
    } else if (kw == "seed") {
      sc.seed = static_cast<std::uint64_t>(num(1));
    } else if (kw == "window") {
      sc.window = num(1);
    } else if (kw == "quantum") {
      sc.quantum_bits = num(1);
    } else if (kw == "network") {
      sc.network = cadl::load_network(resolve(base_dir, word(1)));
      have_network = true;
    } else if (kw == "queue") {
      QueueSpec q;
      q.name = word(1);
      for (std::size_t i = 2; i < w.size(); i += 2) {
        const auto& key = w[i];
        if (key == "input") q.input = word(i + 1);
        else if (key == "output") q.output = word(i + 1);
        else if (key == "drop") q.drop = word(i + 1);
        else if (key == "capacity") q.capacity_bytes = static_cast<std::uint64_t>(num(i + 1));
        else if (key == "credit-cap") q.credit_cap = static_cast<std::int64_t>(num(i + 1));
        else if (key == "forward") q.forward = word(i + 1);
        else throw fail("unknown queue option '" + key + "'");
      }
      if (q.input.empty() || q.output.empty()) throw fail("queue needs input and output species");
      sc.queues.push_back(std::move(q));
    } else if (kw == "arrival") {
      ArrivalSpec a;
      a.queue = word(1);
      const auto& kind = word(2);
      std::size_t i = 3;
      if (kind == "cbr") a.kind = ArrivalKind::cbr;
      else if (kind == "poisson") a.kind = ArrivalKind::poisson;
      else if (kind == "onoff") a.kind = ArrivalKind::onoff;
      else if (kind == "trace") {
        a.kind = ArrivalKind::trace;
        a.trace = load_trace(resolve(base_dir, word(3)));
        i = 4;
      } else {
        throw fail("unknown arrival kind '" + kind + "'");
      }
      for (; i < w.size(); i += 2) {
        const auto& key = w[i];
        if (key == "rate") a.rate_bps = num(i + 1);
        else if (key == "size") a.packet_bytes = static_cast<std::uint32_t>(num(i + 1));
        else if (key == "size-max") a.packet_bytes_max = static_cast<std::uint32_t>(num(i + 1));
        else if (key == "on") a.on_mean = num(i + 1);
        else if (key == "off") a.off_mean = num(i + 1);
        else if (key == "from") a.from = num(i + 1);
        else if (key == "until") a.until = num(i + 1);
        else throw fail("unknown arrival option '" + key + "'");
      }
      sc.arrivals.push_back(std::move(a));
    } else if (kw == "patch") {
      patch_files.emplace_back(num(1), resolve(base_dir, word(2)));
    } else {
      throw fail("unknown statement '" + kw + "'");
    }
  }
  if (!have_network) throw ParseError("scenario names no network", 1, 1);
  for (auto& a : sc.arrivals)
    if (!std::isfinite(a.until)) a.until = sc.duration;
  std::stable_sort(patch_files.begin(), patch_files.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [t, path] : patch_files) sc.patches.push_back({t, cadl::load_patch(path)});
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scenario file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path().string();
  return parse_scenario(buf.str(), dir.empty() ? "." : dir);
}

// --- built-in scenarios ------------------------------------------------------------

ReactionNetwork build_rnet4(std::size_t n_classes, std::span<const double> k2_weights,
                            std::uint64_t class_e0, double class_k1, const Rnet4Egress& egress) {
  if (n_classes < 2) throw InvalidNetwork("Rnet4 needs at least two classes");
  if (k2_weights.size() != n_classes) throw InvalidNetwork("one k2 weight per class is required");
  ReactionNetwork net;
  for (std::size_t i = 1; i <= n_classes; ++i) {
    const auto k2 = k2_weights[i - 1];
    if (!(k2 > 0.0)) throw InvalidNetwork("k2 weights must be positive");
    const auto id = std::to_string(i);
    const auto s = net.add_species("S" + id, 0);
    const auto t = net.add_species("T" + id, class_e0);
    const auto ts = net.add_species("TS" + id, 0);
    const auto p = net.add_species("P" + id, 0);
    net.add_reaction("bind" + id, {{s, 1}, {t, 1}}, {{ts, 1}}, class_k1);
    net.add_reaction("serve" + id, {{ts, 1}}, {{t, 1}, {p, 1}}, k2);
    net.roles.inputs.push_back(s);
    net.roles.outputs.push_back(p);
  }
  const auto s = net.add_species("S", 0);
  const auto e = net.add_species("E", egress.e0);
  const auto es = net.add_species("ES", 0);
  const auto p = net.add_species("P", 0);
  const auto d = net.add_species("D", 0);
  net.add_reaction("r1", {{s, 1}, {e, 1}}, {{es, 1}}, egress.k1);
  net.add_reaction("r2", {{es, 1}}, {{e, 1}, {p, 1}}, egress.k2);
  net.add_reaction("r3", {{s, 2}}, {{s, 1}, {d, 1}}, egress.kd);
  net.roles.inputs.push_back(s);
  net.roles.outputs.push_back(p);
  net.roles.drops.push_back(d);
  return net;
}

namespace {

QueueSpec simple_queue(std::string name, bool drop) {
  QueueSpec q;
  q.name = std::move(name);
  q.input = "S";
  q.output = "P";
  if (drop) q.drop = "D";
  return q;
}

ArrivalSpec arrival(ArrivalKind kind, double rate, double from, double until) {
  ArrivalSpec a;
  a.queue = "q";
  a.kind = kind;
  a.rate_bps = rate;
  a.from = from;
  a.until = until;
  return a;
}

Scenario fig8(double k2, std::uint64_t e0, const char* name) {
  Scenario sc;
  sc.name = name;
  sc.network = catalog::rate_controller(e0, 1.0, k2);
  sc.queues.push_back(simple_queue("q", false));
  sc.arrivals.push_back(arrival(ArrivalKind::poisson, 0.6e9, 0.5, 8.5));
  auto bursts = arrival(ArrivalKind::onoff, 0.8e9, 12.5, 20.0);
  bursts.on_mean = 0.1;
  bursts.off_mean = 0.2;
  sc.arrivals.push_back(bursts);
  sc.duration = 22.0;
  sc.seed = 8;
  return sc;
}

}  // namespace

std::vector<std::string> builtin_names() { return {"fig7", "fig8-k20", "fig8-k10", "fig10", "fig12"}; }

std::optional<Scenario> builtin_scenario(std::string_view name) {
  if (name == "fig7") {
    Scenario sc;
    sc.name = "fig7";
    sc.network = catalog::pacer(20.0);
    sc.queues.push_back(simple_queue("q", false));
    sc.arrivals.push_back(arrival(ArrivalKind::poisson, 0.3e9, 0.5, 6.0));
    sc.arrivals.push_back(arrival(ArrivalKind::poisson, 0.8e9, 6.5, 14.0));
    auto bursts = arrival(ArrivalKind::onoff, 0.45e9, 19.0, 27.0);
    bursts.on_mean = 0.5;
    bursts.off_mean = 0.5;
    sc.arrivals.push_back(bursts);
    sc.patches.push_back({5.0, cadl::diff(sc.network, catalog::rate_controller(25000, 1.0, 20.0))});
    sc.duration = 27.0;
    sc.seed = 7;
    return sc;
  }
  if (name == "fig8-k20") return fig8(20.0, 25000, "fig8-k20");
  if (name == "fig8-k10") return fig8(10.0, 50000, "fig8-k10");
  if (name == "fig10") {
    Scenario sc;
    sc.name = "fig10";
    sc.network = catalog::aqm_controller(20000, 1.0, 20.0, 0.01);
    sc.queues.push_back(simple_queue("q", true));
    sc.arrivals.push_back(arrival(ArrivalKind::poisson, 0.2e9, 2.0, 13.0));
    sc.arrivals.push_back(arrival(ArrivalKind::poisson, 1.0e9, 14.0, 25.0));
    sc.duration = 26.0;
    sc.seed = 10;
    return sc;
  }
  if (name == "fig12") {
    Scenario sc;
    sc.name = "fig12";
    const double weights[] = {20.0, 10.0, 10.0};
    sc.network = build_rnet4(3, weights);
    const double demand[] = {0.4e6, 0.8e6, 0.4e6};
    for (int i = 1; i <= 3; ++i) {
      const auto id = std::to_string(i);
      QueueSpec q;
      q.name = "class" + id;
      q.input = "S" + id;
      q.output = "P" + id;
      q.forward = "egress";
      sc.queues.push_back(q);
      auto low = arrival(ArrivalKind::cbr, demand[i - 1], 0.0, 10.0);
      low.queue = q.name;
      auto high = arrival(ArrivalKind::cbr, 4.0e6, 10.0, 20.0);
      high.queue = q.name;
      sc.arrivals.push_back(low);
      sc.arrivals.push_back(high);
    }
    sc.queues.push_back(simple_queue("egress", true));
    sc.duration = 20.0;
    sc.seed = 12;
    return sc;
  }
  return std::nullopt;
}

// --- harness -----------------------------------------------------------------------

namespace {

struct Arrival {
  double time;
  std::uint32_t queue;
  std::uint32_t bytes;
};

template <typename EngineT>
class Harness {
 public:
  Harness(const Scenario& sc, const RunConfig& cfg, EngineT& engine)
      : sc_(sc), cfg_(cfg), engine_(engine) {
    window_ = cfg.window > 0.0 ? cfg.window : sc.window;
    tracing_all_ = (cfg.record_trace || cfg.trace_sink) && cfg.trace_detail == TraceDetail::all;
    const auto nq = sc.queues.size();
    std::vector<std::int64_t> max_cost(nq, 0);
    for (std::size_t i = 0; i < sc.arrivals.size(); ++i) {
      const auto& spec = sc.arrivals[i];
      const auto q = queue_index(spec.queue);
      for (const auto& [t, bytes] : generate_arrivals(spec, sc.seed, i)) {
        if (t < 0.0 || t > sc.duration) continue;
        arrivals_.push_back({t, static_cast<std::uint32_t>(q), bytes});
        max_cost[q] = std::max(max_cost[q], molecule_cost(bytes, sc.quantum_bits));
      }
    }
    std::stable_sort(arrivals_.begin(), arrivals_.end(),
                     [](const Arrival& a, const Arrival& b) { return a.time < b.time; });
    // forwarded traffic brings the sender's packet sizes along
    for (std::size_t pass = 0; pass < nq; ++pass)
      for (std::size_t i = 0; i < nq; ++i)
        if (sc.queues[i].forward) {
          const auto j = queue_index(*sc.queues[i].forward);
          max_cost[j] = std::max(max_cost[j], max_cost[i]);
        }
    for (std::size_t i = 0; i < nq; ++i) {
      const auto& q = sc.queues[i];
      const auto cap = q.credit_cap > 0 ? q.credit_cap : 10 * std::max<std::int64_t>(max_cost[i], 1);
      bindings_.emplace_back(PacketQueue(q.capacity_bytes), sc.quantum_bits, cap);
      forward_.push_back(q.forward ? static_cast<int>(queue_index(*q.forward)) : -1);
      last_seq_.push_back(-1);
      report_.queues.push_back(q.name);
    }
    report_.series.resize(nq);
    prev_.resize(nq);
    origin_bits_.assign(nq, std::vector<double>(nq, 0.0));
    resolve_species();
  }

  MetricsReport run() {
    report_.scenario = sc_.name;
    report_.duration = sc_.duration;
    report_.window = window_;
    report_.quantum_bits = sc_.quantum_bits;
    report_.header.seed = sc_.seed;
    report_.header.rng = std::string(VariateStream::algorithm);
    report_.header.network_hash = cadl::network_hash(sc_.network);
    report_.trace.header = report_.header;

    const double never = std::numeric_limits<double>::infinity();
    std::size_t next_arrival = 0, next_patch = 0;
    std::uint64_t window_index = 1;
    double window_origin = 0.0;
    while (true) {
      const double t_window = std::min(static_cast<double>(window_index) * window_, sc_.duration);
      const double t_patch = next_patch < sc_.patches.size() ? sc_.patches[next_patch].time : never;
      const double t_arrival = next_arrival < arrivals_.size() ? arrivals_[next_arrival].time : never;
      const double t_next = std::min({t_window, t_patch, t_arrival});

      while (auto ev = engine_.step_before(t_next)) on_firing(*ev);
      engine_.advance_to(t_next);

      if (t_window == t_next) {
        close_window(window_origin, t_window);
        window_origin = t_window;
        ++window_index;
        if (t_window >= sc_.duration) break;
      } else if (t_patch == t_next) {
        const auto outcome = engine_.reconfigure(sc_.patches[next_patch].patch);
        ++next_patch;
        ++report_.patches;
        resolve_species();
        emit(TraceRecord{t_patch, RecordKind::reconfig, -1, {}, {},
                         std::string(outcome.structural ? "structural" : "parameter") +
                             " edits=" + std::to_string(outcome.edits)});
      } else {
        const auto& a = arrivals_[next_arrival++];
        enqueue(a.queue, Packet{a.bytes, a.time, 0, a.queue}, a.time);
      }
    }
    for (std::size_t i = 0; i < bindings_.size(); ++i) {
      report_.totals.push_back(bindings_[i].queue().counters());
      report_.discarded_credit.push_back(bindings_[i].discarded_credit());
    }
    return std::move(report_);
  }

  std::uint64_t injections() const { return report_.injections; }

 private:
  std::size_t queue_index(const std::string& name) const {
    for (std::size_t i = 0; i < sc_.queues.size(); ++i)
      if (sc_.queues[i].name == name) return i;
    throw Error("unknown queue '" + name + "'");
  }

  // Species ids can move when a structural patch lands.
  void resolve_species() {
    const auto& net = engine_.network();
    auto find = [&](const std::string& name) {
      auto s = net.find_species(name);
      if (!s) throw InvalidNetwork("bound species '" + name + "' is not in the running network");
      return *s;
    };
    input_.clear();
    output_owner_.assign(net.species_count() + 1, -1);
    drop_owner_.assign(net.species_count() + 1, -1);
    for (std::size_t i = 0; i < sc_.queues.size(); ++i) {
      const auto& q = sc_.queues[i];
      input_.push_back(find(q.input));
      output_owner_[find(q.output).value] = static_cast<int>(i);
      if (q.drop) drop_owner_[find(*q.drop).value] = static_cast<int>(i);
    }
  }

  void inject(SpeciesId s, std::int64_t amount, double t) {
    const InjectionEvent ev{t, s, amount};
    engine_.inject(ev);
    ++report_.injections;
    if (tracing_all_) emit(TraceRecord{t, RecordKind::inject, s.value, {{s, amount}}, {}, {}});
  }

  void enqueue(std::size_t q, Packet p, double t) {
    const auto molecules = bindings_[q].enqueue(p);
    if (molecules > 0) inject(input_[q], molecules, t);
  }

  template <typename Fired>
  void on_firing(const Fired& ev) {
    ++report_.firings;
    if (tracing_all_) {
      TraceRecord rec{ev.time, RecordKind::fire, ev.reaction, {}, {}, {}};
      for (const auto& d : ev.delta) rec.delta.emplace_back(d.species, d.amount);
      emit(std::move(rec));
    }
    // copy first: draining below invalidates the engine's delta view
    pending_.clear();
    for (const auto& d : ev.delta)
      if (d.amount > 0) pending_.push_back({d.species, d.amount});
    for (const auto& d : pending_) {
      if (const int q = output_owner_[d.species.value]; q >= 0) {
        inject(d.species, -d.amount, ev.time);
        for (const auto& p : bindings_[q].on_output_molecules(d.amount)) depart(q, p, ev.time);
      }
      if (const int q = drop_owner_[d.species.value]; q >= 0) {
        inject(d.species, -d.amount, ev.time);
        for (const auto& p : bindings_[q].on_drop_molecules(d.amount)) check_fifo(q, p);
      }
    }
  }

  void emit(TraceRecord rec) {
    if (cfg_.trace_sink)
      cfg_.trace_sink(rec, engine_.network());
    else if (cfg_.record_trace)
      report_.trace.records.push_back(std::move(rec));
  }

  void check_fifo(std::size_t q, const Packet& p) {
    if (static_cast<std::int64_t>(p.seq) <= last_seq_[q]) ++report_.fifo_violations;
    last_seq_[q] = static_cast<std::int64_t>(p.seq);
  }

  void depart(std::size_t q, const Packet& p, double t) {
    check_fifo(q, p);
    origin_bits_[q][p.origin] += 8.0 * p.bytes;
    if (forward_[q] >= 0) enqueue(static_cast<std::size_t>(forward_[q]), Packet{p.bytes, t, 0, p.origin}, t);
  }

  void close_window(double start, double end) {
    const double len = end - start;
    if (len <= 0.0) return;
    report_.window_start.push_back(start);
    report_.window_length.push_back(len);
    for (std::size_t i = 0; i < bindings_.size(); ++i) {
      const auto& queue = bindings_[i].queue();
      const auto& c = queue.counters();
      auto& prev = prev_[i];
      auto& s = report_.series[i];
      s.offered_bps.push_back(double(c.arrived_bits - prev.arrived_bits) / len);
      s.tx_bps.push_back(double(c.departed_bits - prev.departed_bits) / len);
      s.drop_bps.push_back(double(c.head_dropped_bits + c.tail_dropped_bits - prev.head_dropped_bits -
                                  prev.tail_dropped_bits) / len);
      s.occupancy_bits.push_back(8.0 * static_cast<double>(queue.bytes()));
      s.occupancy_packets.push_back(queue.size());
      std::vector<double> by_origin(bindings_.size());
      for (std::size_t o = 0; o < bindings_.size(); ++o) by_origin[o] = origin_bits_[i][o] / len;
      s.tx_bps_by_origin.push_back(std::move(by_origin));
      std::fill(origin_bits_[i].begin(), origin_bits_[i].end(), 0.0);
      if (c.arrived != c.departed + c.head_dropped + c.tail_dropped + queue.size())
        ++report_.conservation_violations;
      prev = c;
    }
  }

  const Scenario& sc_;
  const RunConfig& cfg_;
  EngineT& engine_;
  double window_ = 0.1;
  std::vector<Arrival> arrivals_;
  std::vector<CaBinding> bindings_;
  std::vector<int> forward_;
  std::vector<std::int64_t> last_seq_;
  std::vector<SpeciesId> input_;
  std::vector<int> output_owner_, drop_owner_;
  std::vector<QueueCounters> prev_;
  std::vector<std::vector<double>> origin_bits_;
  std::vector<SpeciesDelta> pending_;
  bool tracing_all_ = false;
  MetricsReport report_;
};

}  // namespace

MetricsReport run_scenario(const Scenario& sc, const RunConfig& cfg) {
  sc.validate();
  if (cfg.engine == EngineKind::ssa) {
    Engine engine(sc.network, sc.seed);
    Harness<Engine> h(sc, cfg, engine);
    auto report = h.run();
    report.header.engine = report.trace.header.engine = "ssa";
    return report;
  }
  hw::HwEngine engine(sc.network, cfg.limits, sc.seed, cfg.cost);
  Harness<hw::HwEngine> h(sc, cfg, engine);
  auto report = h.run();
  report.header.engine = report.trace.header.engine = "hw";
  report.cycles = engine.cycles();
  report.saturated = engine.saturated();
  report.first_saturation = engine.first_saturation();
  return report;
}

// --- report ------------------------------------------------------------------------

std::size_t MetricsReport::queue_index(std::string_view name) const {
  for (std::size_t i = 0; i < queues.size(); ++i)
    if (queues[i] == name) return i;
  throw Error("no queue named '" + std::string(name) + "' in the report");
}

double MetricsReport::mean(const std::vector<double>& s, double t0, double t1) const {
  double sum = 0.0, len = 0.0;
  for (std::size_t w = 0; w < s.size() && w < window_start.size(); ++w) {
    const double a = window_start[w], b = a + window_length[w];
    if (a >= t0 - 1e-9 && b <= t1 + 1e-9) {
      sum += s[w] * window_length[w];
      len += window_length[w];
    }
  }
  return len > 0.0 ? sum / len : 0.0;
}

namespace {

void identity_lines(std::ostream& os, const MetricsReport& m) {
  os << "# tool=chemkernel version=" << kToolVersion << " engine=" << m.header.engine
     << " scenario=" << m.scenario << '\n'
     << "# seed=" << m.header.seed << " rng=" << m.header.rng
     << " network_hash=" << m.header.network_hash << '\n';
}

nlohmann::ordered_json identity(const MetricsReport& m) {
  return {{"tool", "chemkernel"},
          {"version", kToolVersion},
          {"engine", m.header.engine},
          {"scenario", m.scenario},
          {"seed", m.header.seed},
          {"rng", m.header.rng},
          {"network_hash", m.header.network_hash}};
}

}  // namespace

void write_csv(std::ostream& os, const MetricsReport& m) {
  identity_lines(os, m);
  os << "t_start,queue,offered_bps,tx_bps,drop_bps,occupancy_bits,occupancy_packets\n";
  for (std::size_t w = 0; w < m.window_start.size(); ++w)
    for (std::size_t q = 0; q < m.queues.size(); ++q) {
      const auto& s = m.series[q];
      os << cadl::format_real(m.window_start[w]) << ',' << m.queues[q] << ','
         << cadl::format_real(s.offered_bps[w]) << ',' << cadl::format_real(s.tx_bps[w]) << ','
         << cadl::format_real(s.drop_bps[w]) << ',' << cadl::format_real(s.occupancy_bits[w]) << ','
         << s.occupancy_packets[w] << '\n';
    }
}

void write_jsonl(std::ostream& os, const MetricsReport& m) {
  nlohmann::ordered_json header{{"kind", "header"}};
  header.update(identity(m));
  os << header.dump() << '\n';
  for (std::size_t w = 0; w < m.window_start.size(); ++w)
    for (std::size_t q = 0; q < m.queues.size(); ++q) {
      const auto& s = m.series[q];
      nlohmann::ordered_json j{{"t_start", m.window_start[w]},
                               {"queue", m.queues[q]},
                               {"offered_bps", s.offered_bps[w]},
                               {"tx_bps", s.tx_bps[w]},
                               {"drop_bps", s.drop_bps[w]},
                               {"occupancy_bits", s.occupancy_bits[w]},
                               {"occupancy_packets", s.occupancy_packets[w]}};
      os << j.dump() << '\n';
    }
}

void write_json(std::ostream& os, const MetricsReport& m) {
  auto j = identity(m);
  j["duration"] = m.duration;
  j["window"] = m.window;
  j["quantum_bits"] = m.quantum_bits;
  j["firings"] = m.firings;
  j["injections"] = m.injections;
  j["patches"] = m.patches;
  j["conservation_violations"] = m.conservation_violations;
  j["fifo_violations"] = m.fifo_violations;
  if (m.header.engine == "hw") {
    j["cycles"] = m.cycles;
    j["saturated"] = m.saturated;
  }
  auto queues = nlohmann::ordered_json::array();
  for (std::size_t q = 0; q < m.queues.size(); ++q) {
    const auto& c = m.totals[q];
    queues.push_back({{"name", m.queues[q]},
                      {"arrived", c.arrived},
                      {"departed", c.departed},
                      {"head_dropped", c.head_dropped},
                      {"tail_dropped", c.tail_dropped},
                      {"arrived_bits", c.arrived_bits},
                      {"departed_bits", c.departed_bits},
                      {"mean_offered_bps", m.mean(m.series[q].offered_bps, 0.0, m.duration)},
                      {"mean_tx_bps", m.mean(m.series[q].tx_bps, 0.0, m.duration)},
                      {"mean_drop_bps", m.mean(m.series[q].drop_bps, 0.0, m.duration)},
                      {"discarded_credit", m.discarded_credit[q]}});
  }
  j["queues"] = std::move(queues);
  os << j.dump(2) << '\n';
}

double high_band_energy(std::span<const double> series, double dt, double f_cut) {
  const auto n = series.size();
  if (n < 2) return 0.0;
  std::vector<double> x(series.begin(), series.end());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  for (double& v : x) v -= mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, x);
  double energy = 0.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    const double f = static_cast<double>(k) / (static_cast<double>(n) * dt);
    if (f > f_cut) energy += std::norm(spectrum[k]) / static_cast<double>(n);
  }
  return energy;
}

}  // namespace chemkernel::traffic
