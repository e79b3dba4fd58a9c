#include "chemkernel/cadl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace chemkernel::cadl {

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

/// Cursor over one line; columns are 1-based.
class LineCursor {
 public:
  LineCursor(std::string_view text, std::size_t line) : text_(text), line_(line) {}

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r'))
      ++pos_;
  }
  bool at_end() {
    skip_ws();
    return pos_ >= text_.size();
  }
  std::size_t column() const { return pos_ + 1; }
  SourceSpan span() const { return SourceSpan{line_, column()}; }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("syntax error: " + what, line_, column());
  }
  [[noreturn]] void fail_semantic(const std::string& what, SourceSpan at) const {
    throw SemanticError("semantic error: " + what, at.line, at.column);
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == c;
  }
  bool peek(std::string_view s) {
    skip_ws();
    return text_.substr(pos_, s.size()) == s;
  }
  void expect(std::string_view s) {
    if (!peek(s)) fail("expected '" + std::string(s) + "'");
    pos_ += s.size();
  }
  bool accept(std::string_view s) {
    if (!peek(s)) return false;
    pos_ += s.size();
    return true;
  }

  bool peek_identifier() {
    skip_ws();
    return pos_ < text_.size() && is_ident_start(text_[pos_]);
  }
  std::string identifier() {
    skip_ws();
    if (pos_ >= text_.size() || !is_ident_start(text_[pos_])) fail("expected identifier");
    const auto start = pos_;
    while (pos_ < text_.size() && is_ident_char(text_[pos_])) ++pos_;
    return std::string(text_.substr(start, pos_ - start));
  }

  bool peek_digit() {
    skip_ws();
    return pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])) != 0;
  }
  std::uint64_t uint() {
    skip_ws();
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
    if (ec != std::errc() || end == text_.data() + pos_) fail("expected unsigned integer");
    pos_ = static_cast<std::size_t>(end - text_.data());
    if (pos_ < text_.size() && (is_ident_char(text_[pos_]) || text_[pos_] == '.'))
      fail("expected unsigned integer");
    return v;
  }
  double real() {
    skip_ws();
    double v = 0;
    auto [end, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
    if (ec != std::errc() || end == text_.data() + pos_) fail("expected number");
    pos_ = static_cast<std::size_t>(end - text_.data());
    return v;
  }

 private:
  std::string_view text_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

using NamedTerms = std::vector<std::pair<std::string, std::uint32_t>>;

struct NamedTermSpan {
  std::string name;
  std::uint32_t count;
  SourceSpan span;
};

std::vector<NamedTermSpan> parse_side(LineCursor& cur) {
  std::vector<NamedTermSpan> terms;
  if (cur.peek_digit()) {
    const auto at = cur.span();
    const auto n = cur.uint();
    if (!cur.peek_identifier()) {
      if (n != 0) cur.fail("a bare number is only allowed as the empty side '0'");
      return terms;
    }
    if (n == 0 || n > 0xFFFFFFFFu) cur.fail("multiplicity must be a positive integer");
    terms.push_back({cur.identifier(), static_cast<std::uint32_t>(n), at});
  } else {
    const auto at = cur.span();
    terms.push_back({cur.identifier(), 1, at});
  }
  while (cur.accept("+")) {
    const auto at = cur.span();
    std::uint32_t n = 1;
    if (cur.peek_digit()) {
      const auto v = cur.uint();
      if (v == 0 || v > 0xFFFFFFFFu) cur.fail("multiplicity must be a positive integer");
      n = static_cast<std::uint32_t>(v);
    }
    terms.push_back({cur.identifier(), n, at});
  }
  return terms;
}

struct ReactionStatement {
  std::string name;
  std::vector<NamedTermSpan> reactants;
  std::vector<NamedTermSpan> products;
  double k = 0;
  SourceSpan name_span;
  SourceSpan k_span;
};

// Parses `<name>: <side> -> <side> @ k=<float>` (after the keyword).
ReactionStatement parse_reaction_body(LineCursor& cur) {
  ReactionStatement st;
  st.name_span = cur.span();
  st.name = cur.identifier();
  cur.expect(":");
  st.reactants = parse_side(cur);
  cur.expect("->");
  st.products = parse_side(cur);
  cur.expect("@");
  cur.expect("k");
  cur.expect("=");
  st.k_span = cur.span();
  st.k = cur.real();
  if (!cur.at_end()) cur.fail("unexpected trailing input");
  return st;
}

std::string_view strip_comment(std::string_view line) {
  auto hash = line.find('#');
  return hash == std::string_view::npos ? line : line.substr(0, hash);
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void render_side(std::ostream& os, const ReactionNetwork& net, const std::vector<Term>& side) {
  if (side.empty()) {
    os << '0';
    return;
  }
  for (std::size_t i = 0; i < side.size(); ++i) {
    if (i) os << " + ";
    if (side[i].count != 1) os << side[i].count << ' ';
    os << net.species_at(side[i].species).name;
  }
}

void render_named_side(std::ostream& os, const NamedTerms& side) {
  if (side.empty()) {
    os << '0';
    return;
  }
  for (std::size_t i = 0; i < side.size(); ++i) {
    if (i) os << " + ";
    if (side[i].second != 1) os << side[i].second << ' ';
    os << side[i].first;
  }
}

}  // namespace

SpecDocument parse(std::string_view text) {
  SpecDocument doc;
  doc.source = std::string(text);
  auto& net = doc.network;
  std::set<std::string> reaction_names;

  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    LineCursor cur(strip_comment(lines[i]), i + 1);
    if (cur.at_end()) continue;
    const auto kw_span = cur.span();
    const auto keyword = cur.identifier();
    if (keyword == "species") {
      const auto at = cur.span();
      auto name = cur.identifier();
      cur.expect("init");
      const auto init = cur.uint();
      if (!cur.at_end()) cur.fail("unexpected trailing input");
      if (net.find_species(name)) cur.fail_semantic("duplicate species name '" + name + "'", at);
      net.add_species(std::move(name), init);
      doc.species_spans.push_back(at);
    } else if (keyword == "reaction") {
      auto st = parse_reaction_body(cur);
      if (!reaction_names.insert(st.name).second)
        cur.fail_semantic("duplicate reaction name '" + st.name + "'", st.name_span);
      if (!(st.k > 0.0) || !std::isfinite(st.k))
        cur.fail_semantic("k must be positive", st.k_span);
      auto resolve = [&](const std::vector<NamedTermSpan>& side) {
        std::vector<Term> out;
        for (const auto& t : side) {
          auto id = net.find_species(t.name);
          if (!id) cur.fail_semantic("unknown species '" + t.name + "'", t.span);
          out.push_back(Term{*id, t.count});
        }
        return out;
      };
      auto reactants = resolve(st.reactants);
      auto products = resolve(st.products);
      if (reactants.empty() && products.empty())
        cur.fail_semantic("reaction '" + st.name + "' has neither reactants nor products",
                          st.name_span);
      net.add_reaction(st.name, std::move(reactants), std::move(products), st.k);
      doc.reaction_spans.push_back(st.name_span);
    } else if (keyword == "input" || keyword == "output" || keyword == "drop") {
      const auto at = cur.span();
      const auto name = cur.identifier();
      if (!cur.at_end()) cur.fail("unexpected trailing input");
      auto id = net.find_species(name);
      if (!id) cur.fail_semantic("unknown species '" + name + "'", at);
      auto& list = keyword == "input"    ? net.roles.inputs
                   : keyword == "output" ? net.roles.outputs
                                         : net.roles.drops;
      if (std::find(list.begin(), list.end(), *id) == list.end()) list.push_back(*id);
    } else {
      throw ParseError("syntax error: unknown statement '" + keyword + "'", kw_span.line,
                       kw_span.column);
    }
  }
  return doc;
}

ReactionNetwork parse_network(std::string_view text) { return parse(text).network; }

ReactionNetwork load_network(const std::string& path) { return parse_network(read_file(path)); }

std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("cannot format number");
  return std::string(buf, end);
}

std::string serialize(const ReactionNetwork& net) {
  std::ostringstream os;
  for (const auto& s : net.species) os << "species " << s.name << " init " << s.initial << '\n';
  for (const auto& r : net.reactions) {
    os << "reaction " << r.name << ": ";
    render_side(os, net, r.reactants);
    os << " -> ";
    render_side(os, net, r.products);
    os << " @ k=" << format_real(r.k) << '\n';
  }
  for (auto id : net.roles.inputs) os << "input " << net.species_at(id).name << '\n';
  for (auto id : net.roles.outputs) os << "output " << net.species_at(id).name << '\n';
  for (auto id : net.roles.drops) os << "drop " << net.species_at(id).name << '\n';
  return os.str();
}

std::string network_hash(const ReactionNetwork& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize(net)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --- patches ----------------------------------------------------------------

bool ReconfigPatch::is_pure_parameter() const {
  return std::all_of(edits.begin(), edits.end(), [](const Edit& e) {
    return std::holds_alternative<SetK>(e) || std::holds_alternative<SetConcentration>(e);
  });
}

std::string_view edit_name(const Edit& e) {
  static constexpr std::string_view names[] = {"set-k",           "set-conc",       "add-species",
                                               "add-reaction",    "remove-reaction", "remove-species",
                                               "replace-network"};
  return names[e.index()];
}

AddReaction describe(const ReactionNetwork& net, const Reaction& r) {
  AddReaction out{r.name, {}, {}, r.k};
  for (const auto& t : r.reactants) out.reactants.emplace_back(net.species_at(t.species).name, t.count);
  for (const auto& t : r.products) out.products.emplace_back(net.species_at(t.species).name, t.count);
  return out;
}

namespace {

bool same_shape(const AddReaction& a, const AddReaction& b) {
  auto as_map = [](const NamedTerms& side) {
    std::map<std::string, std::uint32_t> m;
    for (const auto& [n, c] : side) m[n] += c;
    return m;
  };
  return as_map(a.reactants) == as_map(b.reactants) && as_map(a.products) == as_map(b.products);
}

std::vector<std::string> names_of(const ReactionNetwork& net, const std::vector<SpeciesId>& ids) {
  std::vector<std::string> out;
  for (auto id : ids) out.push_back(net.species_at(id).name);
  std::sort(out.begin(), out.end());
  return out;
}

bool same_roles(const ReactionNetwork& a, const ReactionNetwork& b) {
  return names_of(a, a.roles.inputs) == names_of(b, b.roles.inputs) &&
         names_of(a, a.roles.outputs) == names_of(b, b.roles.outputs) &&
         names_of(a, a.roles.drops) == names_of(b, b.roles.drops);
}

}  // namespace

ReconfigPatch diff(const ReactionNetwork& from, const ReactionNetwork& to) {
  ReconfigPatch patch;
  bool shared = false;
  for (const auto& s : from.species) shared = shared || to.find_species(s.name).has_value();
  for (const auto& r : from.reactions) shared = shared || to.find_reaction(r.name).has_value();
  const bool both_empty = from.species.empty() && from.reactions.empty() && to.species.empty() &&
                          to.reactions.empty();
  if (both_empty) return patch;
  if (!shared || !same_roles(from, to)) {
    patch.edits.emplace_back(ReplaceNetwork{to});
    return patch;
  }

  std::vector<Edit> remove_reactions, remove_species, add_species, add_reactions, set_k, set_conc;
  for (const auto& r : from.reactions) {
    auto other = to.find_reaction(r.name);
    if (!other || !same_shape(describe(from, r), describe(to, to.reactions[*other])))
      remove_reactions.emplace_back(RemoveReaction{r.name});
  }
  for (const auto& s : from.species) {
    auto other = to.find_species(s.name);
    if (!other)
      remove_species.emplace_back(RemoveSpecies{s.name});
    else if (to.species_at(*other).initial != s.initial)
      set_conc.emplace_back(SetConcentration{s.name, to.species_at(*other).initial});
  }
  for (const auto& s : to.species)
    if (!from.find_species(s.name)) add_species.emplace_back(AddSpecies{s.name, s.initial});
  for (const auto& r : to.reactions) {
    auto other = from.find_reaction(r.name);
    const auto desc = describe(to, r);
    if (!other || !same_shape(describe(from, from.reactions[*other]), desc))
      add_reactions.emplace_back(desc);
    else if (from.reactions[*other].k != r.k)
      set_k.emplace_back(SetK{r.name, r.k});
  }
  for (auto* group : {&remove_reactions, &remove_species, &add_species, &add_reactions, &set_k,
                      &set_conc})
    for (auto& e : *group) patch.edits.push_back(std::move(e));
  return patch;
}

namespace {

// Drops the marked species and reactions, re-densifying ids.
ReactionNetwork compact(const ReactionNetwork& net, const std::vector<bool>& drop_species,
                        const std::vector<bool>& drop_reactions) {
  ReactionNetwork out;
  std::vector<SpeciesId> remap(net.species.size());
  for (const auto& s : net.species) {
    if (drop_species[s.id.index()]) continue;
    remap[s.id.index()] = out.add_species(s.name, s.initial);
  }
  auto map_side = [&](const std::vector<Term>& side) {
    std::vector<Term> terms;
    for (const auto& t : side) terms.push_back(Term{remap[t.species.index()], t.count});
    return terms;
  };
  for (const auto& r : net.reactions) {
    if (drop_reactions[r.id]) continue;
    out.add_reaction(r.name, map_side(r.reactants), map_side(r.products), r.k);
  }
  auto map_roles = [&](const std::vector<SpeciesId>& ids) {
    std::vector<SpeciesId> res;
    for (auto id : ids) res.push_back(remap[id.index()]);
    return res;
  };
  out.roles = IoRoles{map_roles(net.roles.inputs), map_roles(net.roles.outputs),
                      map_roles(net.roles.drops)};
  return out;
}

struct Applier {
  ReactionNetwork net;

  void operator()(const SetK& e) {
    auto id = net.find_reaction(e.reaction);
    if (!id) throw PatchConflict("set-k: no reaction '" + e.reaction + "'");
    if (!(e.k > 0.0) || !std::isfinite(e.k))
      throw PatchConflict("set-k: k must be positive for '" + e.reaction + "'");
    net.reactions[*id].k = e.k;
  }
  void operator()(const SetConcentration& e) {
    auto id = net.find_species(e.species);
    if (!id) throw PatchConflict("set-conc: no species '" + e.species + "'");
    net.species[id->index()].initial = e.value;
  }
  void operator()(const AddSpecies& e) {
    if (net.find_species(e.name)) throw PatchConflict("add-species: '" + e.name + "' exists");
    net.add_species(e.name, e.initial);
  }
  void operator()(const AddReaction& e) {
    if (net.find_reaction(e.name)) throw PatchConflict("add-reaction: '" + e.name + "' exists");
    if (!(e.k > 0.0) || !std::isfinite(e.k))
      throw PatchConflict("add-reaction: k must be positive for '" + e.name + "'");
    auto resolve = [&](const NamedTerms& side) {
      std::vector<Term> out;
      for (const auto& [name, count] : side) {
        auto id = net.find_species(name);
        if (!id) throw PatchConflict("add-reaction '" + e.name + "': no species '" + name + "'");
        out.push_back(Term{*id, count});
      }
      return out;
    };
    auto reactants = resolve(e.reactants);
    auto products = resolve(e.products);
    if (reactants.empty() && products.empty())
      throw PatchConflict("add-reaction '" + e.name + "' is empty");
    net.add_reaction(e.name, std::move(reactants), std::move(products), e.k);
  }
  void operator()(const RemoveReaction& e) {
    auto id = net.find_reaction(e.name);
    if (!id) throw PatchConflict("remove-reaction: no reaction '" + e.name + "'");
    std::vector<bool> drop_r(net.reactions.size(), false);
    drop_r[*id] = true;
    net = compact(net, std::vector<bool>(net.species.size(), false), drop_r);
  }
  void operator()(const RemoveSpecies& e) {
    auto id = net.find_species(e.name);
    if (!id) throw PatchConflict("remove-species: no species '" + e.name + "'");
    for (const auto& r : net.reactions)
      if (r.alpha(*id) || r.beta(*id))
        throw PatchConflict("remove-species: '" + e.name + "' is still used by '" + r.name + "'");
    for (const auto* roles : {&net.roles.inputs, &net.roles.outputs, &net.roles.drops})
      if (std::find(roles->begin(), roles->end(), *id) != roles->end())
        throw PatchConflict("remove-species: '" + e.name + "' has an io role");
    std::vector<bool> drop_s(net.species.size(), false);
    drop_s[id->index()] = true;
    net = compact(net, drop_s, std::vector<bool>(net.reactions.size(), false));
  }
  void operator()(const ReplaceNetwork& e) {
    e.network.validate();
    net = e.network;
  }
};

std::string join_statements(const ReactionNetwork& net) {
  std::string text = serialize(net);
  std::string out;
  for (char c : text) {
    if (c == '\n')
      out += "; ";
    else
      out += c;
  }
  while (!out.empty() && (out.back() == ' ' || out.back() == ';')) out.pop_back();
  return out;
}

}  // namespace

ReactionNetwork apply(const ReactionNetwork& net, const ReconfigPatch& patch) {
  Applier applier{net};
  for (const auto& e : patch.edits) std::visit(applier, e);
  return std::move(applier.net);
}

std::string serialize_patch(const ReconfigPatch& patch) {
  std::ostringstream os;
  for (const auto& e : patch.edits) {
    std::visit(
        [&](const auto& edit) {
          using T = std::decay_t<decltype(edit)>;
          if constexpr (std::is_same_v<T, SetK>) {
            os << "set-k " << edit.reaction << ' ' << format_real(edit.k);
          } else if constexpr (std::is_same_v<T, SetConcentration>) {
            os << "set-conc " << edit.species << ' ' << edit.value;
          } else if constexpr (std::is_same_v<T, AddSpecies>) {
            os << "add-species " << edit.name << " init " << edit.initial;
          } else if constexpr (std::is_same_v<T, AddReaction>) {
            os << "add-reaction " << edit.name << ": ";
            render_named_side(os, edit.reactants);
            os << " -> ";
            render_named_side(os, edit.products);
            os << " @ k=" << format_real(edit.k);
          } else if constexpr (std::is_same_v<T, RemoveReaction>) {
            os << "remove-reaction " << edit.name;
          } else if constexpr (std::is_same_v<T, RemoveSpecies>) {
            os << "remove-species " << edit.name;
          } else {
            os << "replace-network " << join_statements(edit.network);
          }
        },
        e);
    os << '\n';
  }
  return os.str();
}

ReconfigPatch parse_patch(std::string_view text) {
  ReconfigPatch patch;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line_no = i + 1;
    auto body = strip_comment(lines[i]);
    LineCursor cur(body, line_no);
    if (cur.at_end()) continue;
    const auto kw_span = cur.span();
    // Keywords contain '-', so read them by hand.
    std::string keyword;
    {
      auto rest = body.substr(kw_span.column - 1);
      auto end = rest.find_first_of(" \t");
      keyword = std::string(rest.substr(0, end));
    }
    cur.expect(keyword);
    if (keyword == "set-k") {
      auto name = cur.identifier();
      const auto at = cur.span();
      const auto k = cur.real();
      if (!cur.at_end()) cur.fail("unexpected trailing input");
      if (!(k > 0.0) || !std::isfinite(k)) cur.fail_semantic("k must be positive", at);
      patch.edits.emplace_back(SetK{std::move(name), k});
    } else if (keyword == "set-conc") {
      auto name = cur.identifier();
      const auto v = cur.uint();
      if (!cur.at_end()) cur.fail("unexpected trailing input");
      patch.edits.emplace_back(SetConcentration{std::move(name), v});
    } else if (keyword == "add-species") {
      auto name = cur.identifier();
      cur.expect("init");
      const auto v = cur.uint();
      if (!cur.at_end()) cur.fail("unexpected trailing input");
      patch.edits.emplace_back(AddSpecies{std::move(name), v});
    } else if (keyword == "add-reaction") {
      auto st = parse_reaction_body(cur);
      if (!(st.k > 0.0) || !std::isfinite(st.k)) cur.fail_semantic("k must be positive", st.k_span);
      AddReaction e{st.name, {}, {}, st.k};
      for (const auto& t : st.reactants) e.reactants.emplace_back(t.name, t.count);
      for (const auto& t : st.products) e.products.emplace_back(t.name, t.count);
      patch.edits.emplace_back(std::move(e));
    } else if (keyword == "remove-reaction") {
      auto name = cur.identifier();
      if (!cur.at_end()) cur.fail("unexpected trailing input");
      patch.edits.emplace_back(RemoveReaction{std::move(name)});
    } else if (keyword == "remove-species") {
      auto name = cur.identifier();
      if (!cur.at_end()) cur.fail("unexpected trailing input");
      patch.edits.emplace_back(RemoveSpecies{std::move(name)});
    } else if (keyword == "replace-network") {
      std::string inner(body.substr(kw_span.column - 1 + keyword.size()));
      std::replace(inner.begin(), inner.end(), ';', '\n');
      try {
        patch.edits.emplace_back(ReplaceNetwork{parse_network(inner)});
      } catch (const ParseError& e) {
        throw ParseError(std::string("in replace-network: ") + e.what(), line_no, kw_span.column);
      }
    } else {
      throw ParseError("syntax error: unknown edit '" + keyword + "'", line_no, kw_span.column);
    }
  }
  return patch;
}

ReconfigPatch load_patch(const std::string& path) { return parse_patch(read_file(path)); }

}  // namespace chemkernel::cadl
