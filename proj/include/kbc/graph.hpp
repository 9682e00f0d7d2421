#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kbc {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

enum class RelationKind : std::uint8_t { kb = 0, textual = 1 };

// Suffix marking an inverse relation in every text format.
inline constexpr std::string_view kInverseSuffix = "^-1";
// KB facts with this relation carry no predictive signal and are dropped.
inline constexpr std::string_view kTypeRelation = "/type/object/type";

struct SurfaceTriple {
  std::string subject;
  std::string relation;
  std::string object;
  bool operator==(const SurfaceTriple&) const = default;
};

struct Triple {
  EntityId source;
  RelationId relation;
  EntityId target;
  auto operator<=>(const Triple&) const = default;
};

struct Edge {
  RelationId relation;
  EntityId neighbor;
  auto operator<=>(const Edge&) const = default;
};

/// Splits `subject<TAB>relation<TAB>object`, trimming each field.
SurfaceTriple parse_triple_line(std::string_view line, std::size_t line_number);

/// Reads a triple file; blank lines and `#` comments are skipped.
std::vector<SurfaceTriple> read_triples(std::istream& in);

/// Phrases longer than four words keep only their first two and last two
/// words. The result is comma-joined.
std::string normalize_textual_relation(std::span<const std::string> words);

/// Canonical stored name for a surface relation. Slash-prefixed names are KB
/// relations and are kept verbatim; anything else is a textual phrase, split on
/// whitespace/commas, normalized and wrapped in double quotes.
std::string canonical_relation_name(std::string_view surface);

RelationKind kind_of_name(std::string_view canonical_name);

class EntityTable {
 public:
  EntityId intern(std::string_view name);
  std::optional<EntityId> find(std::string_view name) const;
  EntityId at(std::string_view name) const;  // throws on unknown
  const std::string& name(EntityId id) const;
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, EntityId> ids_;
};

/// Relations are allocated in forward/inverse pairs: a forward relation has an
/// even id and its inverse is `id ^ 1`.
class RelationTable {
 public:
  /// Interns a forward relation by canonical name; returns its (even) id.
  RelationId intern(std::string_view canonical_name, RelationKind kind);
  /// Interns a name that may carry the inverse suffix.
  RelationId intern_name(std::string_view name);
  std::optional<RelationId> find(std::string_view name) const;
  RelationId at(std::string_view name) const;  // throws on unknown

  std::string name(RelationId id) const;
  RelationKind kind(RelationId id) const;
  RelationId inverse(RelationId id) const;
  bool contains(RelationId id) const { return id < size(); }
  static bool is_inverse(RelationId id) { return (id & 1U) != 0; }
  static RelationId forward_of(RelationId id) { return id & ~1U; }
  std::size_t size() const { return 2 * base_names_.size(); }

 private:
  std::vector<std::string> base_names_;
  std::vector<RelationKind> kinds_;
  std::unordered_map<std::string, RelationId> ids_;
};

class KBGraph {
 public:
  KBGraph() = default;

  /// Builds from forward edges (inverse edges are materialized here). Duplicate
  /// edges collapse.
  static KBGraph from_edges(EntityTable entities, RelationTable relations,
                            std::vector<Triple> forward_edges);

  const EntityTable& entities() const { return entities_; }
  const RelationTable& relations() const { return relations_; }
  std::size_t entity_count() const { return entities_.size(); }

  /// Outgoing edges of `e`, sorted by (relation, neighbor).
  std::span<const Edge> neighbors(EntityId e) const;
  bool has_fact(EntityId source, RelationId relation, EntityId target) const;
  /// All stored (source, target) pairs of `relation`, sorted.
  std::span<const std::pair<EntityId, EntityId>> facts(RelationId relation) const;
  /// Stored edges counting both directions.
  std::size_t edge_count() const { return edge_count_; }
  std::vector<Triple> forward_edges() const;

  void save(std::ostream& out) const;
  static KBGraph load(std::istream& in);

 private:
  EntityTable entities_;
  RelationTable relations_;
  std::vector<std::size_t> offsets_;  // CSR row starts, size entity_count+1
  std::vector<Edge> edges_;
  std::vector<std::vector<std::pair<EntityId, EntityId>>> by_relation_;
  std::size_t edge_count_ = 0;
};

struct BuildOptions {
  std::size_t min_textual_freq = 50;
};

struct BuildStats {
  std::size_t input_triples = 0;
  std::size_t dropped_type_facts = 0;
  std::size_t dropped_rare_textual = 0;
  std::size_t kept_triples = 0;
};

/// Applies the preprocessing rules (type facts removed, rare textual relations
/// filtered by forward occurrence count) and builds the graph. Ids are assigned
/// in first-appearance order of the surviving triples.
KBGraph build_graph(std::span<const SurfaceTriple> triples,
                    const BuildOptions& options = {},
                    BuildStats* stats = nullptr);

}  // namespace kbc
