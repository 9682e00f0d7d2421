#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kbc/graph.hpp"
#include "kbc/util.hpp"

namespace kbc {

/// A relation sequence traversable from one entity to another.
using PathType = std::vector<RelationId>;
using PathCounts = std::map<PathType, std::uint64_t>;

struct EntityPair {
  EntityId source;
  EntityId target;
  auto operator<=>(const EntityPair&) const = default;
};

struct LabeledPair {
  EntityPair pair;
  int label;  // 1 = observed fact, 0 = unobserved
};

struct WalkConfig {
  int max_len = 4;
  int walks_per_node = 100;
  int max_paths_per_pair = 200;
  std::uint64_t seed = 1;

  void validate() const;
};

/// One (entity pair, target relation) example with its connecting path types.
/// `paths` is sorted and duplicate-free.
struct FactInstance {
  EntityPair pair;
  int label = 0;
  std::vector<PathType> paths;
};

struct PathDataset {
  RelationId target = 0;
  std::vector<FactInstance> instances;
  /// Number of instances whose path set contains each path type.
  std::map<PathType, std::size_t> vocabulary;

  std::size_t positives() const;
  std::size_t negatives() const;
};

void rebuild_vocabulary(PathDataset& ds);

/// Random-walk path discovery between `pair.source` and `pair.target`.
///
/// Forward walks of up to ceil(max_len/2) hops leave the source, walks of up to
/// floor(max_len/2) hops leave the target, and the two meet at shared
/// intermediate entities; the target-side part is inverted and reversed. Walks
/// and joins never step straight back over the edge just traversed. The
/// edge being predicted (the target relation or its inverse directly between
/// the pair, either orientation) is never traversed. Counts are joint walk hit
/// products, used only to keep the `max_paths_per_pair` most common types.
PathCounts extract_paths(const KBGraph& graph, EntityPair pair, RelationId target,
                         const WalkConfig& cfg, Rng& rng);

struct NegativeSample {
  std::vector<EntityPair> pairs;
  bool exhausted = false;  // fewer than ratio * |positives| could be drawn
};

/// Corrupts the target entity of each positive with another entity from the
/// relation's observed range, rejecting known facts, positives and repeats.
NegativeSample sample_negatives(const KBGraph& graph, RelationId target,
                                std::span<const EntityPair> positives, std::size_t ratio,
                                Rng& rng);

/// Keeps the k most frequent path types (ties: lexicographic relation ids) and
/// drops instances left without paths.
PathDataset top_k_paths(const PathDataset& ds, std::size_t k);

/// Extracts paths for the given labeled pairs; pair i draws from the stream
/// (cfg.seed, i) so results do not depend on `workers`.
PathDataset extract_dataset(const KBGraph& graph, RelationId target,
                            std::span<const LabeledPair> pairs, const WalkConfig& cfg,
                            int workers = 1, bool keep_empty = false);

/// Samples negatives for the positives, extracts paths for everything and drops
/// pairs with no extracted path.
PathDataset collect_path_dataset(const KBGraph& graph, RelationId target,
                                 std::span<const EntityPair> positives,
                                 const WalkConfig& cfg, std::size_t negative_ratio,
                                 int workers = 1, bool* negatives_exhausted = nullptr);

// ---------------------------------------------------------------- file format

std::string path_to_string(const PathType& path, const RelationTable& relations);
PathType parse_path(std::string_view text, RelationTable& relations);

/// Records: `source<TAB>target<TAB>label<TAB>path1;path2;...`, grouped under
/// `# target<TAB><relation>` headers. Vocabulary: `pathtype<TAB>count` under the
/// same headers.
void write_path_records(std::ostream& out, std::span<const PathDataset> datasets,
                        const EntityTable& entities, const RelationTable& relations);
void write_path_vocabulary(std::ostream& out, std::span<const PathDataset> datasets,
                           const RelationTable& relations);

struct DatasetFile {
  EntityTable entities;
  RelationTable relations;
  std::vector<PathDataset> datasets;
};

/// Reads path records; the vocabulary is recomputed from the instances.
DatasetFile read_path_records(std::istream& in);

}  // namespace kbc
