#include "chemkernel/trace.hpp"

#include <ostream>

#include "json.hpp"

namespace chemkernel {

std::vector<std::int64_t> Trace::firing_sequence() const {
  std::vector<std::int64_t> seq;
  for (const auto& r : records)
    if (r.kind == RecordKind::fire) seq.push_back(r.index);
  return seq;
}

namespace {

std::string species_name(const ReactionNetwork& net, SpeciesId id) {
  if (id.value != 0 && id.index() < net.species.size()) return net.species_at(id).name;
  return "S" + std::to_string(id.value);
}

const char* kind_name(RecordKind k) {
  switch (k) {
    case RecordKind::fire: return "fire";
    case RecordKind::inject: return "inject";
    case RecordKind::sample: return "sample";
    case RecordKind::reconfig: return "reconfig";
  }
  return "?";
}

}  // namespace

void write_jsonl_header(std::ostream& os, const TraceHeader& h) {
  nlohmann::ordered_json header{{"kind", "header"},
                                {"tool", "chemkernel"},
                                {"version", kToolVersion},
                                {"engine", h.engine},
                                {"seed", h.seed},
                                {"rng", h.rng},
                                {"network_hash", h.network_hash}};
  os << header.dump() << '\n';
}

void write_jsonl_record(std::ostream& os, const TraceRecord& r, const ReactionNetwork& names) {
  nlohmann::ordered_json j{{"t", r.t}, {"kind", kind_name(r.kind)}};
  if (r.kind == RecordKind::fire) {
    const auto id = static_cast<std::size_t>(r.index);
    j["reaction"] = id < names.reactions.size() ? names.reactions[id].name
                                                : "r" + std::to_string(r.index);
  } else if (r.kind == RecordKind::inject) {
    j["species"] = species_name(names, SpeciesId{static_cast<std::uint16_t>(r.index)});
  }
  if (!r.delta.empty()) {
    nlohmann::ordered_json d = nlohmann::ordered_json::object();
    for (const auto& [s, v] : r.delta) d[species_name(names, s)] = v;
    j["delta"] = std::move(d);
  }
  if (!r.snapshot.empty()) {
    nlohmann::ordered_json c = nlohmann::ordered_json::object();
    for (const auto& [s, v] : r.snapshot) c[species_name(names, s)] = v;
    j["c_snapshot"] = std::move(c);
  }
  if (!r.note.empty()) j["note"] = r.note;
  os << j.dump() << '\n';
}

void write_jsonl(std::ostream& os, const Trace& trace, const ReactionNetwork& names) {
  write_jsonl_header(os, trace.header);
  for (const auto& r : trace.records) write_jsonl_record(os, r, names);
}

}  // namespace chemkernel
