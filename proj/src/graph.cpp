#include "kbc/graph.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <string>

#include "kbc/util.hpp"

namespace kbc {

namespace {

constexpr std::string_view kGraphMagic = "KBCGRAPH";
constexpr std::uint32_t kGraphVersion = 1;

std::pair<std::string_view, bool> split_inverse(std::string_view name) {
  if (name.size() > kInverseSuffix.size() && name.ends_with(kInverseSuffix))
    return {name.substr(0, name.size() - kInverseSuffix.size()), true};
  return {name, false};
}

}  // namespace

SurfaceTriple parse_triple_line(std::string_view line, std::size_t line_number) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto fields = split(line, '\t');
  if (fields.size() != 3)
    throw ParseError(line_number, "expected 3 tab-separated fields, got " +
                                      std::to_string(fields.size()));
  SurfaceTriple t{std::string(trim(fields[0])), std::string(trim(fields[1])),
                  std::string(trim(fields[2]))};
  if (t.subject.empty() || t.relation.empty() || t.object.empty())
    throw ParseError(line_number, "empty field");
  return t;
}

std::vector<SurfaceTriple> read_triples(std::istream& in) {
  std::vector<SurfaceTriple> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.push_back(parse_triple_line(line, n));
  }
  return out;
}

std::string normalize_textual_relation(std::span<const std::string> words) {
  if (words.empty()) throw Error("empty textual relation phrase");
  std::vector<std::string_view> kept;
  if (words.size() <= 4) {
    kept.assign(words.begin(), words.end());
  } else {
    kept = {words[0], words[1], words[words.size() - 2], words.back()};
  }
  std::string out;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i) out += ',';
    out += kept[i];
  }
  return out;
}

std::string canonical_relation_name(std::string_view surface) {
  surface = trim(surface);
  if (surface.empty()) throw Error("empty relation name");
  if (surface.front() == '/') return std::string(surface);
  std::vector<std::string> words;
  std::string cur;
  for (char c : surface) {
    if (c == '"') continue;
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return "\"" + normalize_textual_relation(words) + "\"";
}

RelationKind kind_of_name(std::string_view canonical_name) {
  return !canonical_name.empty() && canonical_name.front() == '"'
             ? RelationKind::textual
             : RelationKind::kb;
}

// ---------------------------------------------------------------- EntityTable

EntityId EntityTable::intern(std::string_view name) {
  if (auto it = ids_.find(std::string(name)); it != ids_.end()) return it->second;
  const auto id = static_cast<EntityId>(names_.size());
  names_.emplace_back(name);
  ids_.emplace(names_.back(), id);
  return id;
}

std::optional<EntityId> EntityTable::find(std::string_view name) const {
  if (auto it = ids_.find(std::string(name)); it != ids_.end()) return it->second;
  return std::nullopt;
}

EntityId EntityTable::at(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw Error("unknown entity: " + std::string(name));
}

const std::string& EntityTable::name(EntityId id) const {
  if (id >= names_.size()) throw Error("unknown entity id " + std::to_string(id));
  return names_[id];
}

// -------------------------------------------------------------- RelationTable

RelationId RelationTable::intern(std::string_view canonical_name, RelationKind kind) {
  if (auto it = ids_.find(std::string(canonical_name)); it != ids_.end())
    return it->second;
  const auto id = static_cast<RelationId>(2 * base_names_.size());
  base_names_.emplace_back(canonical_name);
  kinds_.push_back(kind);
  ids_.emplace(base_names_.back(), id);
  return id;
}

RelationId RelationTable::intern_name(std::string_view name) {
  const auto [base, inv] = split_inverse(name);
  const RelationId id = intern(base, kind_of_name(base));
  return inv ? id ^ 1U : id;
}

std::optional<RelationId> RelationTable::find(std::string_view name) const {
  const auto [base, inv] = split_inverse(name);
  auto it = ids_.find(std::string(base));
  if (it == ids_.end()) return std::nullopt;
  return inv ? it->second ^ 1U : it->second;
}

RelationId RelationTable::at(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw Error("unknown relation: " + std::string(name));
}

std::string RelationTable::name(RelationId id) const {
  if (!contains(id)) throw Error("unknown relation id " + std::to_string(id));
  std::string n = base_names_[id / 2];
  if (is_inverse(id)) n += kInverseSuffix;
  return n;
}

RelationKind RelationTable::kind(RelationId id) const {
  if (!contains(id)) throw Error("unknown relation id " + std::to_string(id));
  return kinds_[id / 2];
}

RelationId RelationTable::inverse(RelationId id) const {
  if (!contains(id)) throw Error("unknown relation id " + std::to_string(id));
  return id ^ 1U;
}

// -------------------------------------------------------------------- KBGraph

KBGraph KBGraph::from_edges(EntityTable entities, RelationTable relations,
                            std::vector<Triple> forward_edges) {
  KBGraph g;
  g.entities_ = std::move(entities);
  g.relations_ = std::move(relations);
  const std::size_t n = g.entities_.size();

  std::vector<Triple> all;
  all.reserve(2 * forward_edges.size());
  for (const auto& t : forward_edges) {
    if (t.source >= n || t.target >= n) throw Error("edge references unknown entity");
    if (!g.relations_.contains(t.relation)) throw Error("edge references unknown relation");
    all.push_back(t);
    all.push_back({t.target, t.relation ^ 1U, t.source});
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  g.offsets_.assign(n + 1, 0);
  for (const auto& t : all) ++g.offsets_[t.source + 1];
  for (std::size_t i = 0; i < n; ++i) g.offsets_[i + 1] += g.offsets_[i];
  g.edges_.reserve(all.size());
  g.by_relation_.assign(g.relations_.size(), {});
  for (const auto& t : all) {
    g.edges_.push_back({t.relation, t.target});
    g.by_relation_[t.relation].emplace_back(t.source, t.target);
  }
  g.edge_count_ = all.size();
  return g;
}

std::span<const Edge> KBGraph::neighbors(EntityId e) const {
  if (e >= entities_.size()) throw Error("unknown entity id " + std::to_string(e));
  return {edges_.data() + offsets_[e], edges_.data() + offsets_[e + 1]};
}

bool KBGraph::has_fact(EntityId source, RelationId relation, EntityId target) const {
  if (source >= entities_.size()) return false;
  const auto adj = neighbors(source);
  return std::binary_search(adj.begin(), adj.end(), Edge{relation, target});
}

std::span<const std::pair<EntityId, EntityId>> KBGraph::facts(RelationId relation) const {
  if (relation >= by_relation_.size()) return {};
  return by_relation_[relation];
}

std::vector<Triple> KBGraph::forward_edges() const {
  std::vector<Triple> out;
  for (RelationId r = 0; r < by_relation_.size(); r += 2)
    for (const auto& [s, t] : by_relation_[r]) out.push_back({s, r, t});
  std::sort(out.begin(), out.end());
  return out;
}

void KBGraph::save(std::ostream& out) const {
  out.write(kGraphMagic.data(), kGraphMagic.size());
  bin::write_u32(out, kGraphVersion);
  bin::write_u32(out, static_cast<std::uint32_t>(entities_.size()));
  for (EntityId e = 0; e < entities_.size(); ++e) bin::write_string(out, entities_.name(e));
  bin::write_u32(out, static_cast<std::uint32_t>(relations_.size() / 2));
  for (RelationId r = 0; r < relations_.size(); r += 2) {
    bin::write_u8(out, static_cast<std::uint8_t>(relations_.kind(r)));
    bin::write_string(out, relations_.name(r));
  }
  const auto fwd = forward_edges();
  bin::write_u64(out, fwd.size());
  for (const auto& t : fwd) {
    bin::write_u32(out, t.source);
    bin::write_u32(out, t.relation);
    bin::write_u32(out, t.target);
  }
}

KBGraph KBGraph::load(std::istream& in) {
  bin::expect_magic(in, kGraphMagic);
  const auto version = bin::read_u32(in);
  if (version != kGraphVersion)
    throw Error("unsupported graph snapshot version " + std::to_string(version));
  EntityTable entities;
  const auto ne = bin::read_u32(in);
  for (std::uint32_t i = 0; i < ne; ++i) entities.intern(bin::read_string(in));
  if (entities.size() != ne) throw Error("duplicate entity in snapshot");
  RelationTable relations;
  const auto nr = bin::read_u32(in);
  for (std::uint32_t i = 0; i < nr; ++i) {
    const auto kind = static_cast<RelationKind>(bin::read_u8(in));
    relations.intern(bin::read_string(in), kind);
  }
  const auto m = bin::read_u64(in);
  std::vector<Triple> fwd;
  fwd.reserve(m);
  for (std::uint64_t i = 0; i < m; ++i) {
    Triple t{};
    t.source = bin::read_u32(in);
    t.relation = bin::read_u32(in);
    t.target = bin::read_u32(in);
    fwd.push_back(t);
  }
  return from_edges(std::move(entities), std::move(relations), std::move(fwd));
}

KBGraph build_graph(std::span<const SurfaceTriple> triples, const BuildOptions& options,
                    BuildStats* stats) {
  BuildStats local;
  local.input_triples = triples.size();

  struct Resolved {
    std::string relation;  // canonical base name
    bool inverse;
  };
  std::vector<Resolved> resolved;
  resolved.reserve(triples.size());
  std::unordered_map<std::string, std::size_t> textual_count;
  for (const auto& t : triples) {
    const auto [base, inv] = split_inverse(trim(t.relation));
    Resolved r{canonical_relation_name(base), inv};
    if (kind_of_name(r.relation) == RelationKind::textual) ++textual_count[r.relation];
    resolved.push_back(std::move(r));
  }

  EntityTable entities;
  RelationTable relations;
  std::vector<Triple> edges;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& r = resolved[i];
    const auto kind = kind_of_name(r.relation);
    if (kind == RelationKind::kb && r.relation == kTypeRelation) {
      ++local.dropped_type_facts;
      continue;
    }
    if (kind == RelationKind::textual &&
        textual_count[r.relation] < options.min_textual_freq) {
      ++local.dropped_rare_textual;
      continue;
    }
    EntityId s = entities.intern(triples[i].subject);
    EntityId o = entities.intern(triples[i].object);
    if (r.inverse) std::swap(s, o);
    edges.push_back({s, relations.intern(r.relation, kind), o});
    ++local.kept_triples;
  }
  if (stats) *stats = local;
  return KBGraph::from_edges(std::move(entities), std::move(relations), std::move(edges));
}

}  // namespace kbc
