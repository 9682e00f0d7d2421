// Exhaustive path enumeration used as an oracle for walk-based extraction.
#pragma once

#include <set>
#include <string>
#include <vector>

#include "kbc/graph.hpp"
#include "kbc/paths.hpp"

namespace kbc::testing {

// Random multigraph over `relations` KB relations named /r0, /r1, ...
inline KBGraph random_graph(std::uint64_t seed, int entities, int edges, int relations) {
  Rng rng(seed, 77);
  std::vector<SurfaceTriple> ts;
  // Touch every relation and entity first so ids are predictable.
  for (int r = 0; r < relations; ++r)
    ts.push_back({"n" + std::to_string(r % entities), "/r" + std::to_string(r),
                  "n" + std::to_string((r + 1) % entities)});
  for (int e = 0; e < entities; ++e)
    ts.push_back({"n" + std::to_string(e), "/r" + std::to_string(rng.index(relations)),
                  "n" + std::to_string(rng.index(entities))});
  for (int i = 0; i < edges; ++i)
    ts.push_back({"n" + std::to_string(rng.index(entities)),
                  "/r" + std::to_string(rng.index(relations)),
                  "n" + std::to_string(rng.index(entities))});
  return build_graph(ts);
}

// Every relation sequence of length 1..max_len along a walk from s to t that
// never uses the predicted edge (target or its inverse between s and t) and
// never steps back over the edge it just took.
inline std::set<PathType> enumerate_paths(const KBGraph& g, EntityId s, EntityId t,
                                          RelationId target, int max_len) {
  const RelationId fwd = target & ~1U;
  std::set<PathType> out;
  PathType seq;
  std::vector<EntityId> visited{s};
  auto rec = [&](auto&& self, EntityId cur) -> void {
    if (!seq.empty() && cur == t) out.insert(seq);
    if (static_cast<int>(seq.size()) == max_len) return;
    for (const auto& e : g.neighbors(cur)) {
      const bool predicted = ((cur == s && e.neighbor == t) || (cur == t && e.neighbor == s)) &&
                             (e.relation == fwd || e.relation == (fwd ^ 1U));
      if (predicted) continue;
      if (!seq.empty() && e.neighbor == visited[visited.size() - 2] &&
          e.relation == (seq.back() ^ 1U))
        continue;
      seq.push_back(e.relation);
      visited.push_back(e.neighbor);
      self(self, e.neighbor);
      seq.pop_back();
      visited.pop_back();
    }
  };
  rec(rec, s);
  return out;
}

}  // namespace kbc::testing
