#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"

#include "chemkernel/cadl.hpp"
#include "chemkernel/catalog.hpp"
#include "chemkernel/fluid.hpp"
#include "chemkernel/traffic.hpp"
#include "support/networks.hpp"

using namespace chemkernel;
using namespace chemkernel::traffic;

namespace {

CaBinding binding(std::optional<std::uint64_t> capacity = std::nullopt, std::int64_t cap = 120) {
  return CaBinding(PacketQueue(capacity), 1000.0, cap);
}

Scenario small_controller(double offered_bps, double duration, std::uint64_t e0 = 500) {
  Scenario sc;
  sc.name = "small";
  sc.network = catalog::rate_controller(e0, 1.0, 20.0);
  QueueSpec q;
  q.name = "q";
  q.input = "S";
  q.output = "P";
  sc.queues.push_back(q);
  ArrivalSpec a;
  a.queue = "q";
  a.kind = ArrivalKind::poisson;
  a.rate_bps = offered_bps;
  a.until = duration;
  sc.arrivals.push_back(a);
  sc.duration = duration;
  sc.seed = 3;
  return sc;
}

std::string csv_of(const MetricsReport& m) {
  std::ostringstream os;
  write_csv(os, m);
  return os.str();
}

}  // namespace

TEST_CASE("enqueue injects one molecule per quantum") {
  auto b = binding();
  CHECK(b.enqueue({1500, 0.0}) == 12);
  CHECK(b.enqueue({0, 0.0}) == 0);
  CHECK(b.queue().size() == 2);
  CHECK(molecule_cost(1501, 1000.0) == 13);
  CHECK(molecule_cost(1500, 8.0 * 1024) == 2);
}

TEST_CASE("full queue tail-drops without injecting") {
  auto b = binding(3000);
  CHECK(b.enqueue({1500, 0.0}) == 12);
  CHECK(b.enqueue({1500, 0.0}) == 12);
  CHECK(b.enqueue({1500, 0.0}) == 0);
  CHECK(b.tail_dropped_last());
  CHECK(b.queue().counters().tail_dropped == 1);
  CHECK(b.queue().size() == 2);
}

TEST_CASE("output credit releases whole packets") {
  auto b = binding();
  b.enqueue({1500, 0.0});
  CHECK(b.on_output_molecules(11).empty());
  CHECK(b.on_output_molecules(1).size() == 1);
  CHECK(b.credit() == 0);

  auto c = binding();
  c.enqueue({1500, 0.0});
  c.enqueue({1500, 0.0});
  CHECK(c.on_output_molecules(30).size() == 2);
  CHECK(c.credit() == 6);
}

TEST_CASE("idle credit is capped") {
  auto b = binding(std::nullopt, 120);
  CHECK(b.on_output_molecules(500).empty());
  CHECK(b.credit() == 120);
  CHECK(b.discarded_credit() == 380);
}

TEST_CASE("credit cap keeps an idle period from being spent as a burst") {
  // one second of output at the cap with nothing queued, then a burst lands
  auto burst = [](std::int64_t cap) {
    CaBinding b(PacketQueue{}, 1000.0, cap);
    for (int i = 0; i < 1000; ++i) b.on_output_molecules(500);
    for (int i = 0; i < 1000; ++i) b.enqueue({1500, 1.0});
    return b.on_output_molecules(0).size();
  };
  // without a cap the whole burst leaves at once, far beyond e0*k2
  CHECK(burst(std::numeric_limits<std::int64_t>::max() / 2) == 1000);
  CHECK(burst(120) == 10);
}

TEST_CASE("drop credit removes packets from the head") {
  auto b = binding();
  b.enqueue({1500, 0.0});
  b.enqueue({100, 0.1});
  const auto dropped = b.on_drop_molecules(12);
  REQUIRE(dropped.size() == 1);
  CHECK(dropped[0].arrival == 0.0);
  CHECK(b.queue().counters().head_dropped == 1);
  CHECK(b.queue().front().bytes == 100);
}

TEST_CASE("arrival processes") {
  ArrivalSpec cbr;
  cbr.kind = ArrivalKind::cbr;
  cbr.rate_bps = 12000.0;
  cbr.from = 1.0;
  cbr.until = 2.0;
  const auto c = generate_arrivals(cbr, 1, 0);
  REQUIRE(c.size() == 1);
  cbr.rate_bps = 120000.0;
  const auto c10 = generate_arrivals(cbr, 1, 0);
  CHECK(c10.size() == 10);
  CHECK(c10[1].first == doctest::Approx(1.1));

  ArrivalSpec poisson;
  poisson.kind = ArrivalKind::poisson;
  poisson.rate_bps = 1.2e8;
  poisson.until = 10.0;
  const auto p = generate_arrivals(poisson, 5, 1);
  CHECK(std::abs(double(p.size()) / 100000.0 - 1.0) < 0.02);
  CHECK(std::is_sorted(p.begin(), p.end()));
  CHECK(generate_arrivals(poisson, 5, 1) == p);
  CHECK(generate_arrivals(poisson, 5, 2) != p);

  ArrivalSpec onoff = poisson;
  onoff.kind = ArrivalKind::onoff;
  onoff.on_mean = 0.1;
  onoff.off_mean = 0.3;
  const auto o = generate_arrivals(onoff, 5, 1);
  CHECK(std::is_sorted(o.begin(), o.end()));
  CHECK(std::abs(double(o.size()) / 25000.0 - 1.0) < 0.25);

  ArrivalSpec sized = poisson;
  sized.packet_bytes = 64;
  sized.packet_bytes_max = 1500;
  for (const auto& [t, bytes] : generate_arrivals(sized, 9, 0)) {
    CHECK(bytes >= 64);
    CHECK(bytes <= 1500);
  }

  ArrivalSpec trace;
  trace.kind = ArrivalKind::trace;
  trace.trace = {{0.5, 100}, {0.2, 200}, {3.0, 300}};
  trace.until = 2.0;
  const auto t = generate_arrivals(trace, 1, 0);
  REQUIRE(t.size() == 2);
  CHECK(t[0].second == 200);
}

TEST_CASE("scenario text") {
  const auto dir = std::filesystem::temp_directory_path() / "chemkernel_scenario_test";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "rnet1.cadl") << testsupport::kRnet1;
  std::ofstream(dir / "slow.capatch") << "set-k r2 10\n";
  std::ofstream(dir / "pkts.txt") << "# time bytes\n0.1 1500\n0.2 64\n";
  const std::string text = R"(scenario demo
duration 2
seed 9
window 0.05
network rnet1.cadl
queue q input S output P capacity 100000
arrival q cbr rate 1e6 size 1500 until 1
arrival q trace pkts.txt
patch 1.5 slow.capatch
)";
  const auto sc = parse_scenario(text, dir.string());
  CHECK(sc.name == "demo");
  CHECK(sc.duration == 2.0);
  CHECK(sc.seed == 9);
  CHECK(sc.window == 0.05);
  CHECK(sc.queues[0].capacity_bytes == 100000u);
  CHECK(sc.arrivals.size() == 2);
  CHECK(sc.arrivals[1].trace.size() == 2);
  CHECK(sc.arrivals[1].until == 2.0);
  REQUIRE(sc.patches.size() == 1);
  CHECK(sc.patches[0].time == 1.5);
  sc.validate();

  try {
    parse_scenario("network rnet1.cadl\nqueue q input S output P\nbogus 1\n", dir.string());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_scenario("duration 1\n", dir.string()), ParseError);
  CHECK_THROWS_AS(parse_scenario("network rnet1.cadl\nduration x\n", dir.string()), ParseError);

  auto bad = sc;
  bad.queues[0].output = "Q";
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = sc;
  bad.patches[0].time = 3.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("Rnet4 construction") {
  const double w[] = {20.0, 10.0, 10.0};
  const auto net = build_rnet4(3, w);
  CHECK(net.species_count() == 17);
  CHECK(net.reaction_count() == 9);
  CHECK(net.reactions[*net.find_reaction("serve1")].k == 20.0);
  CHECK(net.species_at(net.species_id("T2")).initial == 150);
  CHECK(net.species_at(net.species_id("E")).initial == 100);
  const double one[] = {1.0};
  CHECK_THROWS_AS(build_rnet4(1, one), InvalidNetwork);
  const double neg[] = {1.0, -1.0};
  CHECK_THROWS_AS(build_rnet4(2, neg), InvalidNetwork);
}

TEST_CASE("Rnet4 fluid shares follow the k2 weights") {
  auto class_rates = [](std::span<const double> weights, std::span<const double> offered) {
    const auto net = build_rnet4(weights.size(), weights);
    std::vector<std::pair<std::string, double>> inflow;
    for (std::size_t i = 0; i < offered.size(); ++i)
      inflow.emplace_back("S" + std::to_string(i + 1), offered[i]);
    const auto sys = build_odes(net, inflow);
    const auto ss = steady_state(sys, initial_counts(net).cast<double>());
    std::vector<double> out;
    for (std::size_t i = 0; i < weights.size(); ++i)
      out.push_back(ss.rates(*net.find_reaction("serve" + std::to_string(i + 1))));
    return out;
  };
  // egress stage alone, fed by the classes' aggregate
  auto egress_rate = [](double inflow) {
    const auto net = catalog::aqm_controller(100, 1.0, 20.0, 0.001);
    const std::pair<std::string, double> in[] = {{"S", inflow}};
    const auto ss = steady_state(build_odes(net, in), initial_counts(net).cast<double>());
    return ss.rates(1);
  };

  const double weighted[] = {20.0, 10.0, 10.0};
  const double overload[] = {4000.0, 4000.0, 4000.0};
  const auto r = class_rates(weighted, overload);
  const double total = r[0] + r[1] + r[2];
  CHECK(r[0] / total == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(r[1] / total == doctest::Approx(0.25).epsilon(1e-3));
  CHECK(r[2] / total == doctest::Approx(0.25).epsilon(1e-3));
  CHECK(egress_rate(total) == doctest::Approx(2000.0).epsilon(0.01));

  const double equal[] = {10.0, 10.0, 10.0};
  const auto e = class_rates(equal, overload);
  CHECK(e[0] == doctest::Approx(e[1]).epsilon(1e-6));
  CHECK(e[1] == doctest::Approx(e[2]).epsilon(1e-6));

  // an idle class leaves the egress cap to the others
  const double one_idle[] = {0.0, 4000.0, 4000.0};
  const auto i = class_rates(weighted, one_idle);
  CHECK(i[0] == doctest::Approx(0.0));
  // the AQM branch keeps S finite, so the egress sits just under e0*k2
  CHECK(egress_rate(i[1] + i[2]) == doctest::Approx(egress_rate(total)).epsilon(0.02));
}

TEST_CASE("scenario run keeps packets conserved and in order") {
  const auto sc = small_controller(2e6, 3.0);
  const auto m = run_scenario(sc);
  CHECK(m.conservation_violations == 0);
  CHECK(m.fifo_violations == 0);
  const auto& c = m.totals[0];
  CHECK(c.arrived > 400);
  CHECK(c.arrived >= c.departed);
  CHECK(m.window_start.size() == 30);
  CHECK(m.mean(m.series[0].tx_bps, 0.5, 3.0) == doctest::Approx(2e6).epsilon(0.05));
}

TEST_CASE("scenario runs are deterministic") {
  const auto sc = small_controller(2e6, 2.0);
  CHECK(csv_of(run_scenario(sc)) == csv_of(run_scenario(sc)));
  auto other = sc;
  other.seed = 4;
  CHECK(csv_of(run_scenario(sc)) != csv_of(run_scenario(other)));
}

TEST_CASE("rate cap holds for a small controller") {
  // cap e0*k2 = 10000 mol/s = 10 Mbps at 1 Kbit per molecule
  const auto m = run_scenario(small_controller(20e6, 6.0));
  CHECK(m.mean(m.series[0].tx_bps, 2.0, 6.0) <= 10e6 * 1.02);
  CHECK(m.mean(m.series[0].tx_bps, 2.0, 6.0) >= 10e6 * 0.95);
}

TEST_CASE("structural patch mid-run loses no packets") {
  auto sc = small_controller(3e6, 4.0);
  sc.network = catalog::pacer(20.0);
  sc.patches.push_back({2.0, cadl::diff(sc.network, catalog::rate_controller(500, 1.0, 20.0))});
  RunConfig cfg;
  cfg.record_trace = true;
  const auto m = run_scenario(sc, cfg);
  CHECK(m.patches == 1);
  CHECK(m.conservation_violations == 0);
  CHECK(m.totals[0].head_dropped + m.totals[0].tail_dropped == 0);
  const auto markers = std::count_if(m.trace.records.begin(), m.trace.records.end(),
                                     [](const TraceRecord& r) { return r.kind == RecordKind::reconfig; });
  CHECK(markers == 1);
}

TEST_CASE("drop species drives head drops") {
  Scenario sc = small_controller(20e6, 4.0);
  sc.network = catalog::aqm_controller(500, 1.0, 20.0, 0.01);
  sc.queues[0].drop = "D";
  const auto m = run_scenario(sc);
  CHECK(m.totals[0].head_dropped > 0);
  CHECK(m.conservation_violations == 0);
  // offered 20 Mbps against a 10 Mbps cap: the rest is dropped
  CHECK(m.mean(m.series[0].drop_bps, 2.0, 4.0) == doctest::Approx(10e6).epsilon(0.1));
}

TEST_CASE("hardware engine runs scenarios") {
  const auto sc = small_controller(1e6, 1.0, 100);
  RunConfig cfg;
  cfg.engine = EngineKind::hw;
  const auto hw = run_scenario(sc, cfg);
  const auto ref = run_scenario(sc);
  CHECK(hw.header.engine == "hw");
  CHECK(hw.cycles > 0);
  CHECK_FALSE(hw.saturated);
  CHECK(hw.firings == ref.firings);
  CHECK(hw.totals[0].departed == ref.totals[0].departed);
}

TEST_CASE("built-in scenarios resolve") {
  for (const auto& name : builtin_names()) {
    const auto sc = builtin_scenario(name);
    REQUIRE(sc);
    CHECK_NOTHROW(sc->validate());
  }
  CHECK_FALSE(builtin_scenario("fig99"));
}

TEST_CASE("metrics outputs carry run identity") {
  const auto m = run_scenario(small_controller(1e6, 0.3));
  const auto csv = csv_of(m);
  CHECK(csv.find("seed=3") != std::string::npos);
  CHECK(csv.find("rng=mt19937_64/u53/neg-log1p/v1") != std::string::npos);
  CHECK(csv.find("network_hash=" + m.header.network_hash) != std::string::npos);
  std::ostringstream js, jl;
  write_json(js, m);
  write_jsonl(jl, m);
  CHECK(js.str().find("\"network_hash\"") != std::string::npos);
  CHECK(jl.str().rfind("{\"kind\":\"header\"", 0) == 0);
}

TEST_CASE("high-band energy") {
  std::vector<double> fast, slow;
  for (int i = 0; i < 1000; ++i) {
    fast.push_back(std::sin(2 * std::numbers::pi * 20.0 * i * 0.01));
    slow.push_back(std::sin(2 * std::numbers::pi * 2.0 * i * 0.01));
  }
  CHECK(high_band_energy(fast, 0.01, 5.0) > 100.0);
  CHECK(high_band_energy(slow, 0.01, 5.0) < 1e-6);
  const std::vector<double> flat(100, 3.0);
  CHECK(high_band_energy(flat, 0.01, 5.0) == doctest::Approx(0.0));
}
