// chemkernel command line: compile, run, analyze, compare.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "chemkernel/cadl.hpp"
#include "chemkernel/fluid.hpp"
#include "chemkernel/hw.hpp"
#include "chemkernel/network.hpp"
#include "chemkernel/rng.hpp"
#include "chemkernel/ssa.hpp"
#include "chemkernel/trace.hpp"
#include "chemkernel/traffic.hpp"

namespace fs = std::filesystem;
namespace ck = chemkernel;
namespace tr = chemkernel::traffic;

namespace {

enum Exit { kOk = 0, kInput = 1, kResource = 2, kRuntime = 3 };

/// Bad flags, missing files or inconsistent inputs.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Identity {
  std::optional<std::uint64_t> seed;
  std::string network_hash;
  std::string engine;
};

std::string identity_line(const Identity& id) {
  std::ostringstream os;
  os << "# tool=chemkernel version=" << ck::kToolVersion;
  if (!id.engine.empty()) os << " engine=" << id.engine;
  os << " seed=" << (id.seed ? std::to_string(*id.seed) : std::string("none"))
     << " rng=" << ck::VariateStream::algorithm << " network_hash=" << id.network_hash;
  return os.str();
}

nlohmann::ordered_json identity_json(const Identity& id) {
  nlohmann::ordered_json j{{"kind", "header"}, {"tool", "chemkernel"}, {"version", ck::kToolVersion}};
  if (!id.engine.empty()) j["engine"] = id.engine;
  j["seed"] = id.seed ? nlohmann::ordered_json(*id.seed) : nlohmann::ordered_json(nullptr);
  j["rng"] = ck::VariateStream::algorithm;
  j["network_hash"] = id.network_hash;
  return j;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write '" + p.string() + "'");
  return out;
}

ck::EngineLimits parse_limits(const std::string& text) {
  ck::EngineLimits lim;
  if (text.empty()) return lim;
  const std::map<std::string, std::uint32_t ck::EngineLimits::*> keys{
      {"R", &ck::EngineLimits::max_reactions},       {"Psi", &ck::EngineLimits::max_slots},
      {"slots", &ck::EngineLimits::max_slots},       {"S", &ck::EngineLimits::max_species},
      {"C", &ck::EngineLimits::concentration_bits},  {"alpha", &ck::EngineLimits::max_reactant_order},
      {"beta", &ck::EngineLimits::max_product_order}, {"k", &ck::EngineLimits::k_bits}};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InputError("--limits entries are KEY=VALUE, got '" + item + "'");
    const auto key = item.substr(0, eq);
    const auto it = keys.find(key);
    if (it == keys.end())
      throw InputError("unknown limit '" + key + "' (use R, Psi, S, C, alpha, beta, k)");
    try {
      const auto v = std::stoul(item.substr(eq + 1));
      if (v == 0 || v > 65535) throw std::out_of_range("limit");
      lim.*(it->second) = static_cast<std::uint32_t>(v);
    } catch (const std::logic_error&) {
      throw InputError("bad value in --limits entry '" + item + "'");
    }
  }
  if (lim.concentration_bits > 32) throw InputError("C is at most 32 bits");
  return lim;
}

std::vector<std::pair<std::string, double>> parse_inflows(const std::vector<std::string>& items) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw InputError("--inflow is SPECIES=RATE, got '" + item + "'");
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw InputError("bad rate in --inflow '" + item + "'");
    }
    if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("inflow rate must be finite and >= 0");
    out.emplace_back(item.substr(0, eq), v);
  }
  return out;
}

void check_inflow_species(const ck::ReactionNetwork& net,
                          const std::vector<std::pair<std::string, double>>& inflows) {
  for (const auto& [name, rate] : inflows)
    if (!net.find_species(name)) throw InputError("inflow names unknown species '" + name + "'");
}

struct LoadedNetwork {
  ck::ReactionNetwork network;
  std::optional<ck::hw::RegisterMap> map;
};

/// `.cahw` register images are decompiled; anything else is read as CADL.
LoadedNetwork load_network_file(const std::string& path) {
  if (!fs::exists(path)) throw InputError("no such network file '" + path + "'");
  if (fs::path(path).extension() == ".cahw") {
    std::ifstream in(path, std::ios::binary);
    auto map = ck::hw::read_binary(in);
    auto net = ck::hw::decompile(map);
    return {std::move(net), std::move(map)};
  }
  return {ck::cadl::load_network(path), std::nullopt};
}

tr::Scenario resolve_scenario(const std::string& name) {
  if (auto sc = tr::builtin_scenario(name)) return *sc;
  if (!fs::exists(name)) {
    std::string known;
    for (const auto& n : tr::builtin_names()) known += (known.empty() ? "" : ", ") + n;
    throw InputError("no scenario file or built-in named '" + name + "' (built-ins: " + known + ")");
  }
  return tr::load_scenario(name);
}

ck::TimedPatch parse_patch_flag(const std::string& flag) {
  static const std::regex re(R"(^t=([^:]+):(.+)$)");
  std::smatch m;
  if (!std::regex_match(flag, m, re)) throw InputError("--patch is t=<sec>:<file>, got '" + flag + "'");
  double t = 0.0;
  try {
    t = std::stod(m[1].str());
  } catch (const std::logic_error&) {
    throw InputError("bad time in --patch '" + flag + "'");
  }
  const auto file = m[2].str();
  if (!fs::exists(file)) throw InputError("no such patch file '" + file + "'");
  return ck::TimedPatch{t, ck::cadl::load_patch(file)};
}

/// Adds the command-line patches and checks the whole schedule against the
/// network up front, so a conflict is reported before anything runs.
void schedule_patches(tr::Scenario& sc, const std::vector<std::string>& flags) {
  for (const auto& f : flags) {
    auto p = parse_patch_flag(f);
    if (!(p.time >= 0.0) || p.time > sc.duration)
      throw InputError("patch time " + ck::cadl::format_real(p.time) + " s is outside the scenario [0, " +
                       ck::cadl::format_real(sc.duration) + "] s");
    sc.patches.push_back(std::move(p));
  }
  std::stable_sort(sc.patches.begin(), sc.patches.end(),
                   [](const ck::TimedPatch& a, const ck::TimedPatch& b) { return a.time < b.time; });
  auto net = sc.network;
  for (const auto& p : sc.patches) {
    try {
      net = ck::cadl::apply(net, p.patch);
    } catch (const ck::PatchConflict& e) {
      throw ck::PatchConflict("patch at t=" + ck::cadl::format_real(p.time) + " s: " + e.what());
    }
  }
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t fallback) {
  return flag ? *flag : fallback;
}

// --- compile -------------------------------------------------------------------

struct CompileArgs {
  std::string input, output, listing, limits;
};

int cmd_compile(const CompileArgs& a) {
  if (!fs::exists(a.input)) throw InputError("no such network file '" + a.input + "'");
  const auto net = ck::cadl::load_network(a.input);
  const auto lim = parse_limits(a.limits);
  const auto map = ck::hw::compile(net, lim);

  const fs::path bin = a.output.empty() ? fs::path(a.input).replace_extension(".cahw") : fs::path(a.output);
  const fs::path lst = a.listing.empty() ? fs::path(bin).replace_extension(".lst") : fs::path(a.listing);
  {
    auto out = open_out(bin);
    ck::hw::write_binary(out, map);
  }
  {
    auto out = open_out(lst);
    out << identity_line({std::nullopt, ck::cadl::network_hash(net), ""}) << '\n';
    ck::hw::write_listing(out, map, &net);
  }
  std::cout << "compiled " << a.input << ": " << net.reaction_count() << " reactions, "
            << net.species_count() << " species into |R|=" << lim.max_reactions
            << " |S|=" << lim.max_species << " |C|=" << lim.concentration_bits << "\n"
            << "  " << bin.string() << " (" << fs::file_size(bin) << " bytes)\n"
            << "  " << lst.string() << "\n";
  return kOk;
}

// --- run -----------------------------------------------------------------------

struct RunArgs {
  std::string scenario, network, engine = "ssa", format = "csv", out_dir = ".", prefix;
  std::string limits, topology = "linear", trace_detail = "reconfig";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> patches;
  double window = 0.0, duration = 1.0;
};

tr::Scenario scenario_for(const std::string& scenario, const std::string& network, double duration,
                          std::optional<ck::hw::RegisterMap>* map_out = nullptr) {
  if (scenario.empty() && network.empty()) throw InputError("give --scenario or --network");
  tr::Scenario sc;
  if (!scenario.empty()) sc = resolve_scenario(scenario);
  if (!network.empty()) {
    auto loaded = load_network_file(network);
    sc.network = std::move(loaded.network);
    if (map_out) *map_out = std::move(loaded.map);
    if (scenario.empty()) {
      sc.name = fs::path(network).stem().string();
      sc.duration = duration;
    }
  }
  return sc;
}

void print_summary(const tr::MetricsReport& m) {
  std::cout << "scenario " << m.scenario << " engine=" << m.header.engine << " seed=" << m.header.seed
            << " duration=" << fmt(m.duration) << " s\n";
  std::cout << "  firings=" << m.firings << " injections=" << m.injections << " patches=" << m.patches
            << " conservation_violations=" << m.conservation_violations
            << " fifo_violations=" << m.fifo_violations << "\n";
  if (m.header.engine == "hw") {
    std::cout << "  cycles=" << m.cycles << " saturated=" << (m.saturated ? "yes" : "no");
    if (m.first_saturation)
      std::cout << " (first at t=" << fmt(m.first_saturation->time) << " s, species id "
                << m.first_saturation->species.value << ")";
    std::cout << "\n";
  }
  for (std::size_t q = 0; q < m.queues.size(); ++q) {
    const auto& c = m.totals[q];
    const auto& s = m.series[q];
    std::cout << "  queue " << m.queues[q] << ": arrived=" << c.arrived << " departed=" << c.departed
              << " head_dropped=" << c.head_dropped << " tail_dropped=" << c.tail_dropped
              << " mean offered=" << fmt(m.mean(s.offered_bps, 0, m.duration) / 1e6, 4)
              << " Mbps tx=" << fmt(m.mean(s.tx_bps, 0, m.duration) / 1e6, 4)
              << " Mbps drop=" << fmt(m.mean(s.drop_bps, 0, m.duration) / 1e6, 4) << " Mbps\n";
  }
}

tr::RunConfig run_config(const std::string& engine, const std::string& limits, const std::string& topology,
                         const std::optional<ck::hw::RegisterMap>& map) {
  tr::RunConfig cfg;
  if (engine == "hw") {
    cfg.engine = tr::EngineKind::hw;
    cfg.limits = map && limits.empty() ? map->limits : parse_limits(limits);
    const auto topo = ck::hw::parse_topology(topology);
    if (!topo) throw InputError("unknown topology '" + topology + "'");
    cfg.cost.topology = *topo;
  }
  return cfg;
}

int cmd_run(const RunArgs& a) {
  std::optional<ck::hw::RegisterMap> map;
  auto sc = scenario_for(a.scenario, a.network, a.duration, &map);
  sc.seed = resolve_seed(a.seed, sc.seed);
  if (a.window > 0.0) sc.window = a.window;
  schedule_patches(sc, a.patches);

  auto cfg = run_config(a.engine, a.limits, a.topology, map);
  if (cfg.engine == tr::EngineKind::hw) {
    const auto report = ck::validate_against_limits(sc.network, cfg.limits);
    if (!report.ok()) ck::hw::compile(sc.network, cfg.limits);  // throws with every bound named
  }
  cfg.trace_detail = a.trace_detail == "all" ? tr::TraceDetail::all : tr::TraceDetail::reconfig;

  const auto prefix =
      a.prefix.empty() ? sc.name + "-" + a.engine + "-s" + std::to_string(sc.seed) : a.prefix;
  const fs::path dir(a.out_dir);
  const auto trace_path = dir / (prefix + ".trace.jsonl");
  const auto metrics_path = dir / (prefix + ".metrics." + (a.format == "jsonl" ? "jsonl" : "csv"));
  const auto summary_path = dir / (prefix + ".summary.json");

  auto trace_out = open_out(trace_path);
  ck::write_jsonl_header(trace_out, ck::TraceHeader{sc.seed, std::string(ck::VariateStream::algorithm),
                                                    ck::cadl::network_hash(sc.network), a.engine});
  cfg.trace_sink = [&trace_out](const ck::TraceRecord& r, const ck::ReactionNetwork& names) {
    ck::write_jsonl_record(trace_out, r, names);
  };

  const auto m = tr::run_scenario(sc, cfg);
  {
    auto out = open_out(metrics_path);
    if (a.format == "jsonl")
      tr::write_jsonl(out, m);
    else
      tr::write_csv(out, m);
  }
  {
    auto out = open_out(summary_path);
    tr::write_json(out, m);
  }
  print_summary(m);
  std::cout << "  wrote " << trace_path.string() << ", " << metrics_path.string() << ", "
            << summary_path.string() << "\n";
  return kOk;
}

// --- analyze -------------------------------------------------------------------

struct AnalyzeArgs {
  std::string input, output, format = "csv";
  std::vector<std::string> inflows;
  double t_end = 1.0, period = 0.01;
  std::optional<std::uint64_t> seed;
};

/// Species that only ever accumulate: declared outputs, else pure products.
std::vector<ck::SpeciesId> output_species(const ck::ReactionNetwork& net, const ck::OdeSystem& sys) {
  if (!net.roles.outputs.empty()) return net.roles.outputs;
  std::vector<ck::SpeciesId> out;
  for (const auto& s : net.species)
    if (!sys.reactive()[s.id.index()]) out.push_back(s.id);
  return out;
}

int cmd_analyze(const AnalyzeArgs& a) {
  if (!fs::exists(a.input)) throw InputError("no such network file '" + a.input + "'");
  if (!(a.t_end > 0.0) || !(a.period > 0.0)) throw InputError("--t-end and --period must be positive");
  const auto net = load_network_file(a.input).network;
  const auto inflows = parse_inflows(a.inflows);
  check_inflow_species(net, inflows);
  const auto sys = ck::build_odes(net, inflows);
  const Eigen::VectorXd c0 = ck::initial_counts(net).cast<double>();
  const Identity id{a.seed, ck::cadl::network_hash(net), "fluid"};

  const auto traj = ck::integrate(sys, c0, 0.0, a.t_end, a.period);
  const fs::path path = a.output.empty()
                            ? fs::path(fs::path(a.input).stem().string() + ".trajectory." +
                                       (a.format == "jsonl" ? "jsonl" : "csv"))
                            : fs::path(a.output);
  {
    auto out = open_out(path);
    if (a.format == "jsonl") {
      out << identity_json(id).dump() << '\n';
      for (std::size_t i = 0; i < traj.times.size(); ++i) {
        nlohmann::ordered_json j{{"t", traj.times[i]}};
        for (const auto& s : net.species)
          j[s.name] = traj.states(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s.id.index()));
        out << j.dump() << '\n';
      }
    } else {
      out << identity_line(id) << '\n';
      ck::write_csv(out, traj, net);
    }
  }

  std::cout << identity_line(id) << "\n";
  std::cout << "trajectory: " << traj.times.size() << " samples to t=" << fmt(a.t_end) << " s, "
            << traj.steps << " steps (" << traj.rejected << " rejected) -> " << path.string() << "\n";

  const auto ss = ck::steady_state(sys, c0);
  const auto outputs = output_species(net, sys);
  auto output_rate = [&](const Eigen::VectorXd& c) {
    const Eigen::VectorXd dc = sys.rhs(c);
    double total = 0.0;
    for (auto s : outputs) total += dc(static_cast<Eigen::Index>(s.index()));
    return total;
  };
  std::cout << "steady state: " << ck::to_string(ss.status) << " (residual " << fmt(ss.residual, 3) << ")\n";
  if (ss.status == ck::SteadyStatus::divergent) {
    for (auto s : ss.divergent)
      std::cout << "  " << net.species_at(s).name << " divergent, output -> " << fmt(output_rate(ss.c), 7)
                << " mol/s\n";
  } else {
    for (const auto& s : net.species)
      if (sys.reactive()[s.id.index()])
        std::cout << "  " << s.name << " = " << fmt(ss.c(static_cast<Eigen::Index>(s.id.index())), 8) << "\n";
    std::cout << "  output rate " << fmt(output_rate(ss.c), 7) << " mol/s\n";
  }
  if (ss.status == ck::SteadyStatus::converged) {
    try {
      const auto lin = ck::linearize(sys, ss.c);
      std::cout << "eigenvalues:";
      double slowest = 0.0;
      const double scale = lin.eigenvalues.size() ? lin.eigenvalues.cwiseAbs().maxCoeff() : 0.0;
      auto clean = [&](double x) { return std::abs(x) <= 1e-12 * scale ? 0.0 : x; };
      for (const auto& ev : lin.eigenvalues) {
        std::cout << " " << fmt(clean(ev.real()));
        if (clean(ev.imag()) != 0.0) std::cout << (ev.imag() > 0 ? "+" : "") << fmt(ev.imag()) << "i";
        if (ev.real() < -1e-9) slowest = slowest == 0.0 ? -ev.real() : std::min(slowest, -ev.real());
      }
      std::cout << "\n";
      if (slowest > 0.0)
        std::cout << "  slowest time constant " << fmt(1.0 / slowest) << " s, cutoff "
                  << fmt(slowest / (2.0 * M_PI)) << " Hz\n";
    } catch (const ck::NotAFixedPoint& e) {
      std::cout << "eigenvalues: not available (" << e.what() << ")\n";
    }
  }
  if (const auto mm = ck::match_enzymatic(net)) {
    const auto& sname = net.species_at(mm->substrate).name;
    std::cout << "michaelis-menten: substrate " << sname << ", e0=" << fmt(mm->e0) << " k1=" << fmt(mm->k1)
              << " k2=" << fmt(mm->k2) << " K_M=" << fmt(mm->km()) << " cap=" << fmt(mm->cap(), 7)
              << " mol/s\n";
    double lambda = 0.0;
    for (const auto& [name, rate] : inflows)
      if (name == sname) lambda += rate;
    if (lambda > 0.0) {
      if (lambda < mm->cap())
        std::cout << "  inflow " << fmt(lambda, 7) << " below cap: " << sname << "* = "
                  << fmt(mm->km() * lambda / (mm->cap() - lambda), 7) << ", output = inflow\n";
      else
        std::cout << "  inflow " << fmt(lambda, 7) << " at or above cap: " << sname
                  << " grows without bound, output -> " << fmt(mm->cap(), 7) << " mol/s\n";
    }
  }
  return kOk;
}

// --- compare -------------------------------------------------------------------

struct CompareArgs {
  std::string scenario, network, limits, topology = "linear", format = "csv", out_dir = ".", prefix;
  std::vector<std::string> inflows;
  std::optional<std::uint64_t> seed;
  double duration = 1.0, window = 0.0;
  std::uint64_t max_firings = 5'000'000;
};

struct FiringLog {
  std::vector<std::uint16_t> reaction;
  std::vector<double> time;
  std::uint64_t total = 0;
  std::uint64_t cap = 0;

  void add(std::int64_t r, double t) {
    ++total;
    if (reaction.size() < cap) {
      reaction.push_back(static_cast<std::uint16_t>(r));
      time.push_back(t);
    }
  }
};

struct Divergence {
  std::optional<std::size_t> index;  // 0-based firing index
  std::size_t compared = 0;
};

Divergence first_divergence(const FiringLog& a, const FiringLog& b) {
  Divergence d;
  d.compared = std::min(a.reaction.size(), b.reaction.size());
  for (std::size_t i = 0; i < d.compared; ++i)
    if (a.reaction[i] != b.reaction[i]) {
      d.index = i;
      return d;
    }
  if (a.total != b.total) d.index = d.compared;
  return d;
}

struct Series {
  std::string quantity;
  std::vector<double> ssa, hw, fluid;
};

/// Σ|stochastic − fluid| / Σ|fluid| across every series and window.
double fluid_error(const std::vector<Series>& series) {
  double num = 0.0, den = 0.0;
  for (const auto& s : series)
    for (std::size_t w = 0; w < s.fluid.size() && w < s.ssa.size(); ++w) {
      num += std::abs(s.ssa[w] - s.fluid[w]);
      den += std::abs(s.fluid[w]);
    }
  return den > 0.0 ? num / den : 0.0;
}

void report_divergence(const FiringLog& ssa, const FiringLog& hw, const std::optional<ck::hw::Saturation>& sat,
                       const ck::ReactionNetwork& net) {
  const auto d = first_divergence(ssa, hw);
  auto rname = [&](std::uint16_t r) {
    return r < net.reactions.size() ? net.reactions[r].name : "r" + std::to_string(r);
  };
  if (!d.index) {
    std::cout << "ssa vs hw: no divergence over " << ssa.total << " firings";
    if (d.compared < ssa.total) std::cout << " (first " << d.compared << " compared)";
    std::cout << "\n";
  } else if (*d.index < d.compared) {
    std::cout << "ssa vs hw: first divergence at firing " << *d.index + 1 << " (t=" << fmt(ssa.time[*d.index], 9)
              << " s): ssa fired " << rname(ssa.reaction[*d.index]) << ", hw fired " << rname(hw.reaction[*d.index])
              << "\n";
  } else {
    std::cout << "ssa vs hw: sequences agree for " << d.compared << " firings, then lengths differ (ssa "
              << ssa.total << ", hw " << hw.total << ")\n";
  }
  if (sat) {
    std::cout << "hw saturation: first at t=" << fmt(sat->time, 9) << " s, species "
              << (sat->species.value && sat->species.index() < net.species_count()
                      ? net.species_at(sat->species).name
                      : "S" + std::to_string(sat->species.value))
              << (sat->injection ? " on an injection" : " on a firing") << " after " << sat->firing
              << " firings\n";
    if (d.index && *d.index + 1 >= sat->firing)
      std::cout << "  divergence follows the first saturation event\n";
  }
}

void write_comparison(const fs::path& path, const std::string& format, const Identity& id,
                      const std::vector<double>& starts, const std::vector<Series>& series) {
  auto out = open_out(path);
  if (format == "jsonl") {
    out << identity_json(id).dump() << '\n';
    for (std::size_t w = 0; w < starts.size(); ++w)
      for (const auto& s : series) {
        nlohmann::ordered_json j{{"t_start", starts[w]}, {"quantity", s.quantity}};
        j["ssa"] = w < s.ssa.size() ? s.ssa[w] : 0.0;
        j["hw"] = w < s.hw.size() ? s.hw[w] : 0.0;
        j["fluid"] = w < s.fluid.size() ? s.fluid[w] : 0.0;
        out << j.dump() << '\n';
      }
    return;
  }
  out << identity_line(id) << '\n' << "t_start,quantity,ssa,hw,fluid\n";
  for (std::size_t w = 0; w < starts.size(); ++w)
    for (const auto& s : series)
      out << ck::cadl::format_real(starts[w]) << ',' << s.quantity << ','
          << ck::cadl::format_real(w < s.ssa.size() ? s.ssa[w] : 0.0) << ','
          << ck::cadl::format_real(w < s.hw.size() ? s.hw[w] : 0.0) << ','
          << ck::cadl::format_real(w < s.fluid.size() ? s.fluid[w] : 0.0) << '\n';
}

/// Fluid image of a scenario network: forwarded outputs also feed the
/// target queue's input species, as the harness does packet by packet.
ck::ReactionNetwork forwarded_fluid_network(const ck::ReactionNetwork& net, const tr::Scenario& sc) {
  auto out = net;
  for (const auto& q : sc.queues) {
    if (!q.forward) continue;
    const auto target = std::find_if(sc.queues.begin(), sc.queues.end(),
                                     [&](const tr::QueueSpec& t) { return t.name == *q.forward; });
    const auto from = out.find_species(q.output);
    const auto to = out.find_species(target->input);
    if (!from || !to) continue;
    for (auto& r : out.reactions) {
      const auto n = r.beta(*from);
      if (n == 0) continue;
      auto it = std::find_if(r.products.begin(), r.products.end(),
                             [&](const ck::Term& t) { return t.species == *to; });
      if (it == r.products.end())
        r.products.push_back(ck::Term{*to, n});
      else
        it->count += n;
    }
  }
  return out;
}

/// Windowed tx per queue (bps) from the fluid model driven by the
/// scenario's external arrivals, binned per window.
std::vector<std::vector<double>> fluid_scenario_tx(const tr::Scenario& sc, const std::vector<double>& starts,
                                                   const std::vector<double>& lengths) {
  const auto nq = sc.queues.size();
  const auto nw = starts.size();
  std::vector<std::vector<double>> inflow(nw, std::vector<double>(nq, 0.0));
  auto window_of = [&](double t) {
    auto it = std::upper_bound(starts.begin(), starts.end(), t);
    return static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - starts.begin()) - 1));
  };
  for (std::size_t i = 0; i < sc.arrivals.size(); ++i) {
    const auto& spec = sc.arrivals[i];
    const auto q = static_cast<std::size_t>(
        std::find_if(sc.queues.begin(), sc.queues.end(),
                     [&](const tr::QueueSpec& s) { return s.name == spec.queue; }) -
        sc.queues.begin());
    for (const auto& [t, bytes] : tr::generate_arrivals(spec, sc.seed, i)) {
      if (t < 0.0 || t > sc.duration || nw == 0) continue;
      const auto w = window_of(t);
      inflow[w][q] += static_cast<double>(tr::molecule_cost(bytes, sc.quantum_bits)) / lengths[w];
    }
  }

  auto net = sc.network;
  std::map<std::string, double> state;
  for (const auto& s : net.species) state[s.name] = static_cast<double>(s.initial);
  std::vector<std::vector<double>> tx(nq, std::vector<double>(nw, 0.0));
  std::size_t next_patch = 0;

  for (std::size_t w = 0; w < nw; ++w) {
    std::vector<double> before(nq);
    for (std::size_t q = 0; q < nq; ++q) before[q] = state[sc.queues[q].output];
    double t = starts[w];
    const double t_end = starts[w] + lengths[w];
    while (t < t_end) {
      while (next_patch < sc.patches.size() && sc.patches[next_patch].time <= t) {
        const auto& patch = sc.patches[next_patch++].patch;
        net = ck::cadl::apply(net, patch);
        std::map<std::string, double> next;
        for (const auto& s : net.species) {
          const auto it = state.find(s.name);
          next[s.name] = it != state.end() ? it->second : static_cast<double>(s.initial);
        }
        for (const auto& e : patch.edits)
          if (const auto* sc_edit = std::get_if<ck::cadl::SetConcentration>(&e))
            next[sc_edit->species] = static_cast<double>(sc_edit->value);
        state = std::move(next);
      }
      double t_stop = t_end;
      if (next_patch < sc.patches.size()) t_stop = std::min(t_stop, sc.patches[next_patch].time);
      if (t_stop <= t) t_stop = t_end;

      const auto fnet = forwarded_fluid_network(net, sc);
      std::vector<std::pair<std::string, double>> lam;
      for (std::size_t q = 0; q < nq; ++q)
        if (inflow[w][q] > 0.0) lam.emplace_back(sc.queues[q].input, inflow[w][q]);
      const auto sys = ck::build_odes(fnet, lam);
      Eigen::VectorXd c(static_cast<Eigen::Index>(fnet.species_count()));
      for (const auto& s : fnet.species) c(static_cast<Eigen::Index>(s.id.index())) = state[s.name];
      const double sample[] = {t_stop};
      const auto traj = ck::integrate(sys, c, t, sample);
      const auto cf = traj.final_state();
      for (const auto& s : fnet.species) state[s.name] = cf(static_cast<Eigen::Index>(s.id.index()));
      t = t_stop;
    }
    for (std::size_t q = 0; q < nq; ++q)
      tx[q][w] = (state[sc.queues[q].output] - before[q]) * sc.quantum_bits / lengths[w];
  }
  return tx;
}

int compare_scenario(const CompareArgs& a) {
  auto sc = scenario_for(a.scenario, a.network, a.duration);
  sc.seed = resolve_seed(a.seed, sc.seed);
  if (a.window > 0.0) sc.window = a.window;
  schedule_patches(sc, {});
  const auto lim = parse_limits(a.limits);
  ck::hw::compile(sc.network, lim);

  auto run_one = [&](tr::EngineKind kind, FiringLog& log) {
    tr::RunConfig cfg;
    cfg.engine = kind;
    cfg.limits = lim;
    if (const auto topo = ck::hw::parse_topology(a.topology)) cfg.cost.topology = *topo;
    cfg.trace_detail = tr::TraceDetail::all;
    cfg.trace_sink = [&log](const ck::TraceRecord& r, const ck::ReactionNetwork&) {
      if (r.kind == ck::RecordKind::fire) log.add(r.index, r.t);
    };
    return tr::run_scenario(sc, cfg);
  };
  FiringLog ssa_log{{}, {}, 0, a.max_firings}, hw_log{{}, {}, 0, a.max_firings};
  auto ssa_f = std::async(std::launch::async, run_one, tr::EngineKind::ssa, std::ref(ssa_log));
  auto hw_f = std::async(std::launch::async, run_one, tr::EngineKind::hw, std::ref(hw_log));
  const auto ssa = ssa_f.get();
  const auto hw = hw_f.get();

  const auto fluid = fluid_scenario_tx(sc, ssa.window_start, ssa.window_length);
  std::vector<Series> series;
  for (std::size_t q = 0; q < ssa.queues.size(); ++q)
    series.push_back({ssa.queues[q] + ".tx_bps", ssa.series[q].tx_bps, hw.series[q].tx_bps, fluid[q]});

  const Identity id{sc.seed, ck::cadl::network_hash(sc.network), "ssa+hw+fluid"};
  const auto prefix = a.prefix.empty() ? sc.name + "-compare-s" + std::to_string(sc.seed) : a.prefix;
  const auto path = fs::path(a.out_dir) / (prefix + ".compare." + (a.format == "jsonl" ? "jsonl" : "csv"));
  write_comparison(path, a.format, id, ssa.window_start, series);

  std::cout << identity_line(id) << "\n" << "scenario " << sc.name << "\n";
  report_divergence(ssa_log, hw_log, hw.first_saturation, sc.network);
  std::cout << "fluid error: " << fmt(100.0 * fluid_error(series), 3) << "% (windowed tx over "
            << ssa.window_start.size() << " windows x " << ssa.queues.size() << " queues)\n"
            << "  wrote " << path.string() << "\n";
  return kOk;
}

struct DirectRun {
  FiringLog log;
  std::vector<Eigen::VectorXd> samples;  // counts at each window end
  Eigen::VectorXd final_counts;
  std::optional<ck::hw::Saturation> saturation;
};

/// Steps an engine through the injections, logging firings and sampling the
/// counts at every window boundary. Molecules landing in a `drained` species
/// are taken out at once and tallied, as the queue harness does, so outputs
/// never pile up against the register width.
template <typename EngineT>
DirectRun drive(EngineT& engine, const std::vector<ck::InjectionEvent>& events, const std::vector<double>& ends,
                const std::vector<bool>& drained, std::uint64_t cap) {
  DirectRun out;
  out.log.cap = cap;
  const auto n = static_cast<Eigen::Index>(engine.network().species_count());
  Eigen::VectorXd tally = Eigen::VectorXd::Zero(n);
  std::vector<ck::SpeciesDelta> pending;
  auto on_fire = [&](const auto& ev) {
    out.log.add(ev.reaction, ev.time);
    pending.clear();
    for (const auto& d : ev.delta)
      if (d.amount > 0 && drained[d.species.index()]) pending.push_back({d.species, d.amount});
    for (const auto& d : pending) {
      engine.inject({ev.time, d.species, -d.amount});
      tally(static_cast<Eigen::Index>(d.species.index())) += static_cast<double>(d.amount);
    }
  };
  std::size_t next_event = 0;
  for (const double t_end : ends) {
    while (true) {
      const double t_ev = next_event < events.size() ? events[next_event].time : ck::kNever;
      const double t_next = std::min(t_ev, t_end);
      while (auto ev = engine.step_before(t_next)) on_fire(*ev);
      if (t_ev < t_end) {
        engine.inject(events[next_event++]);
      } else {
        engine.advance_to(t_end);
        break;
      }
    }
    Eigen::VectorXd c(n);
    for (const auto& s : engine.network().species)
      c(static_cast<Eigen::Index>(s.id.index())) = static_cast<double>(engine.count(s.id));
    out.samples.push_back(c + tally);
  }
  out.final_counts = out.samples.empty() ? Eigen::VectorXd() : out.samples.back();
  return out;
}

int compare_network(const CompareArgs& a) {
  if (!(a.duration > 0.0)) throw InputError("--duration must be positive");
  const auto loaded = load_network_file(a.network);
  const auto& net = loaded.network;
  const auto inflows = parse_inflows(a.inflows);
  check_inflow_species(net, inflows);
  const auto seed = resolve_seed(a.seed, 1);
  const auto lim = loaded.map && a.limits.empty() ? loaded.map->limits : parse_limits(a.limits);
  ck::hw::compile(net, lim);
  const double window = a.window > 0.0 ? a.window : a.duration / 100.0;

  std::vector<ck::InjectionEvent> events;
  for (std::size_t i = 0; i < inflows.size(); ++i) {
    const auto& [name, rate] = inflows[i];
    if (rate <= 0.0) continue;
    ck::VariateStream rng(ck::splitmix64(seed ^ ck::splitmix64(i + 1)));
    for (double t = rng.exponential() / rate; t < a.duration; t += rng.exponential() / rate)
      events.push_back({t, net.species_id(name), 1});
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const ck::InjectionEvent& x, const ck::InjectionEvent& y) { return x.time < y.time; });
  std::vector<double> starts, ends;
  for (std::uint64_t w = 0;; ++w) {
    const double s = static_cast<double>(w) * window;
    if (s >= a.duration * (1 - 1e-12)) break;
    starts.push_back(s);
    ends.push_back(std::min(s + window, a.duration));
  }

  ck::hw::CycleCostModel cost;
  if (const auto topo = ck::hw::parse_topology(a.topology)) cost.topology = *topo;
  const auto sys = ck::build_odes(net, inflows);
  const auto outs = output_species(net, sys);
  std::vector<bool> drained(net.species_count(), false);
  for (auto s : outs) drained[s.index()] = true;
  for (auto s : net.roles.drops) drained[s.index()] = true;

  auto ssa_f = std::async(std::launch::async, [&] {
    ck::Engine e(net, seed);
    return drive(e, events, ends, drained, a.max_firings);
  });
  auto hw_f = std::async(std::launch::async, [&] {
    ck::hw::HwEngine e(net, lim, seed, cost);
    auto r = drive(e, events, ends, drained, a.max_firings);
    r.saturation = e.first_saturation();
    return r;
  });
  auto fluid_f = std::async(std::launch::async, [&] {
    std::vector<double> times{0.0};
    times.insert(times.end(), ends.begin(), ends.end());
    return ck::integrate(sys, ck::initial_counts(net).cast<double>(), 0.0, times);
  });
  const auto ssa = ssa_f.get();
  const auto hw = hw_f.get();
  const auto traj = fluid_f.get();

  // outputs compare as windowed rates, other species as levels
  const Eigen::VectorXd c0 = ck::initial_counts(net).cast<double>();
  std::vector<Series> series;
  auto level = [&](const std::vector<Eigen::VectorXd>& s, std::size_t w, Eigen::Index i) { return s[w](i); };
  for (const auto& sp : net.species) {
    const auto i = static_cast<Eigen::Index>(sp.id.index());
    const bool is_out = std::find(outs.begin(), outs.end(), sp.id) != outs.end();
    Series s{sp.name + (is_out ? ".rate" : ""), {}, {}, {}};
    for (std::size_t w = 0; w < ends.size(); ++w) {
      const double len = ends[w] - starts[w];
      const auto fw = static_cast<Eigen::Index>(w + 1);
      if (is_out) {
        const double prev_s = w ? level(ssa.samples, w - 1, i) : c0(i);
        const double prev_h = w ? level(hw.samples, w - 1, i) : c0(i);
        s.ssa.push_back((level(ssa.samples, w, i) - prev_s) / len);
        s.hw.push_back((level(hw.samples, w, i) - prev_h) / len);
        s.fluid.push_back((traj.states(fw, i) - traj.states(fw - 1, i)) / len);
      } else {
        s.ssa.push_back(level(ssa.samples, w, i));
        s.hw.push_back(level(hw.samples, w, i));
        s.fluid.push_back(traj.states(fw, i));
      }
    }
    if (is_out || outs.empty()) series.push_back(std::move(s));
  }

  const Identity id{seed, ck::cadl::network_hash(net), "ssa+hw+fluid"};
  const auto prefix =
      a.prefix.empty() ? fs::path(a.network).stem().string() + "-compare-s" + std::to_string(seed) : a.prefix;
  const auto path = fs::path(a.out_dir) / (prefix + ".compare." + (a.format == "jsonl" ? "jsonl" : "csv"));
  write_comparison(path, a.format, id, starts, series);

  std::cout << identity_line(id) << "\n";
  report_divergence(ssa.log, hw.log, hw.saturation, net);
  if (ssa.final_counts != hw.final_counts) std::cout << "final concentrations differ between ssa and hw\n";
  std::cout << "fluid error: " << fmt(100.0 * fluid_error(series), 3) << "% (" << (outs.empty() ? "levels" : "output rates")
            << " over " << starts.size() << " windows)\n"
            << "  wrote " << path.string() << "\n";
  return kOk;
}

int cmd_compare(const CompareArgs& a) {
  if (a.scenario.empty() && a.network.empty()) throw InputError("give --scenario or --network");
  if (!a.scenario.empty() && !a.inflows.empty())
    throw InputError("--inflow applies to network comparisons; scenarios bring their own arrivals");
  return a.scenario.empty() ? compare_network(a) : compare_scenario(a);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chemkernel: chemical algorithms for traffic control"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ck::kToolVersion));

  const std::vector<std::string> formats{"csv", "jsonl"};
  const std::vector<std::string> topologies{"linear", "per-reaction", "log-pipeline"};

  CompileArgs ca;
  auto* compile = app.add_subcommand("compile", "Compile a CADL network into a register map");
  compile->add_option("network", ca.input, "CADL file")->required();
  compile->add_option("-o,--output", ca.output, "register map path (default <network>.cahw)");
  compile->add_option("--listing", ca.listing, "listing path (default <output>.lst)");
  compile->add_option("--limits", ca.limits, "engine limits, e.g. R=32,S=255,C=16");
  std::string compile_format = "csv";
  compile->add_option("--format", compile_format, "accepted for symmetry")->check(CLI::IsMember(formats));

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Run a scenario on the reference or hardware engine");
  run->add_option("--scenario", ra.scenario, "built-in scenario name or scenario file");
  run->add_option("--network", ra.network, "network (.cadl or .cahw); replaces the scenario's");
  run->add_option("--engine", ra.engine, "ssa or hw")->check(CLI::IsMember({"ssa", "hw"}));
  run->add_option("--seed", ra.seed, "run seed")->envname("CHEMKERNEL_SEED");
  run->add_option("--patch", ra.patches, "t=<sec>:<file.capatch>, repeatable");
  run->add_option("--format", ra.format, "metrics format")->check(CLI::IsMember(formats));
  run->add_option("--out-dir", ra.out_dir, "output directory");
  run->add_option("--prefix", ra.prefix, "output file prefix");
  run->add_option("--window", ra.window, "metrics window in seconds");
  run->add_option("--duration", ra.duration, "duration when running a bare network");
  run->add_option("--limits", ra.limits, "hw engine limits");
  run->add_option("--topology", ra.topology, "hw cost topology")->check(CLI::IsMember(topologies));
  run->add_option("--trace", ra.trace_detail, "trace detail: all or reconfig")
      ->check(CLI::IsMember({"all", "reconfig"}));

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "Fluid analysis: trajectory, steady state, eigenvalues");
  analyze->add_option("network", aa.input, "network file")->required();
  analyze->add_option("--inflow", aa.inflows, "SPECIES=RATE in mol/s, repeatable");
  analyze->add_option("--t-end", aa.t_end, "trajectory end time");
  analyze->add_option("--period", aa.period, "trajectory sample period");
  analyze->add_option("-o,--output", aa.output, "trajectory path");
  analyze->add_option("--format", aa.format, "trajectory format")->check(CLI::IsMember(formats));
  analyze->add_option("--seed", aa.seed, "recorded in outputs")->envname("CHEMKERNEL_SEED");

  CompareArgs cpa;
  auto* compare = app.add_subcommand("compare", "Compare ssa, hw and fluid on one input");
  compare->add_option("--scenario", cpa.scenario, "built-in scenario name or scenario file");
  compare->add_option("--network", cpa.network, "network file (bare-network comparison)");
  compare->add_option("--inflow", cpa.inflows, "SPECIES=RATE Poisson molecule inflow, repeatable");
  compare->add_option("--duration", cpa.duration, "duration of a bare-network comparison");
  compare->add_option("--window", cpa.window, "comparison window");
  compare->add_option("--seed", cpa.seed, "run seed")->envname("CHEMKERNEL_SEED");
  compare->add_option("--limits", cpa.limits, "hw engine limits");
  compare->add_option("--topology", cpa.topology, "hw cost topology")->check(CLI::IsMember(topologies));
  compare->add_option("--max-firings", cpa.max_firings, "firings kept per engine for the sequence check");
  compare->add_option("--format", cpa.format, "comparison format")->check(CLI::IsMember(formats));
  compare->add_option("--out-dir", cpa.out_dir, "output directory");
  compare->add_option("--prefix", cpa.prefix, "output file prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInput;
  }

  try {
    if (*compile) return cmd_compile(ca);
    if (*run) return cmd_run(ra);
    if (*analyze) return cmd_analyze(aa);
    if (*compare) return cmd_compare(cpa);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const ck::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kInput;
  } catch (const ck::InvalidNetwork& e) {
    std::cerr << "invalid network: " << e.what() << "\n";
    return kInput;
  } catch (const ck::MalformedMap& e) {
    std::cerr << "malformed register map: " << e.what() << "\n";
    return kInput;
  } catch (const ck::PatchConflict& e) {
    std::cerr << "patch conflict: " << e.what() << "\n";
    return kInput;
  } catch (const ck::ResourceExceeded& e) {
    std::cerr << "resource limits: " << e.what() << "\n";
    return kResource;
  } catch (const ck::Error& e) {
    std::cerr << "engine error: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kInput;
}
