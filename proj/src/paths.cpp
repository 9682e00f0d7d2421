#include "kbc/paths.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>
#include <unordered_map>

namespace kbc {

void WalkConfig::validate() const {
  if (max_len < 1) throw Error("max_len must be >= 1");
  if (max_len > 5) throw Error("max_len must be <= 5");
  if (walks_per_node < 1) throw Error("walks_per_node must be >= 1");
  if (max_paths_per_pair < 1) throw Error("max_paths_per_pair must be >= 1");
}

std::size_t PathDataset::positives() const {
  return static_cast<std::size_t>(std::count_if(
      instances.begin(), instances.end(), [](const auto& i) { return i.label == 1; }));
}

std::size_t PathDataset::negatives() const { return instances.size() - positives(); }

void rebuild_vocabulary(PathDataset& ds) {
  ds.vocabulary.clear();
  for (const auto& inst : ds.instances)
    for (const auto& p : inst.paths) ++ds.vocabulary[p];
}

namespace {

// Walk prefixes by end entity: (relation sequence, entity before the end) ->
// hit count. The penultimate entity lets the join reject a step back over the
// edge just taken.
constexpr EntityId kNoEntity = 0xFFFFFFFFU;
using WalkEnds = std::map<EntityId, std::map<std::pair<PathType, EntityId>, std::uint64_t>>;

struct BannedEdge {
  EntityId a, b;
  RelationId forward, inverse;
  bool operator()(EntityId from, const Edge& e) const {
    const bool between = (from == a && e.neighbor == b) || (from == b && e.neighbor == a);
    return between && (e.relation == forward || e.relation == inverse);
  }
};

// Non-backtracking walks: a step never returns over the edge it arrived by.
void sample_walks(const KBGraph& graph, EntityId start, int hops, int walks,
                  const BannedEdge& banned, Rng& rng, WalkEnds& ends) {
  std::vector<std::size_t> allowed;
  PathType seq;
  for (int w = 0; w < walks; ++w) {
    EntityId cur = start, prev = kNoEntity;
    seq.clear();
    for (int h = 0; h < hops; ++h) {
      const auto adj = graph.neighbors(cur);
      allowed.clear();
      for (std::size_t i = 0; i < adj.size(); ++i) {
        if (banned(cur, adj[i])) continue;
        if (prev != kNoEntity && adj[i].neighbor == prev && adj[i].relation == (seq.back() ^ 1U))
          continue;
        allowed.push_back(i);
      }
      if (allowed.empty()) break;
      const Edge& e = adj[allowed[rng.index(allowed.size())]];
      seq.push_back(e.relation);
      prev = cur;
      cur = e.neighbor;
      ++ends[cur][{seq, prev}];
    }
  }
}

bool by_count_then_lex(const std::pair<PathType, std::uint64_t>& a,
                       const std::pair<PathType, std::uint64_t>& b) {
  if (a.second != b.second) return a.second > b.second;
  return a.first < b.first;
}

}  // namespace

PathCounts extract_paths(const KBGraph& graph, EntityPair pair, RelationId target,
                         const WalkConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto n = graph.entity_count();
  if (pair.source >= n || pair.target >= n)
    throw Error("extract_paths: unknown entity id");
  const BannedEdge banned{pair.source, pair.target, RelationTable::forward_of(target),
                          RelationTable::forward_of(target) ^ 1U};
  const int fwd_hops = (cfg.max_len + 1) / 2;
  const int bwd_hops = cfg.max_len / 2;

  WalkEnds from_source, from_target;
  sample_walks(graph, pair.source, fwd_hops, cfg.walks_per_node, banned, rng, from_source);
  if (bwd_hops > 0)
    sample_walks(graph, pair.target, bwd_hops, cfg.walks_per_node, banned, rng, from_target);
  // The empty target-side walk joins forward walks that reach the target.
  from_target[pair.target][{PathType{}, kNoEntity}] +=
      static_cast<std::uint64_t>(cfg.walks_per_node);

  PathCounts counts;
  PathType joined;
  for (const auto& [meet, prefixes] : from_source) {
    auto it = from_target.find(meet);
    if (it == from_target.end()) continue;
    for (const auto& [pkey, c1] : prefixes) {
      const auto& [prefix, before_meet] = pkey;
      for (const auto& [skey, c2] : it->second) {
        const auto& [suffix, after_meet] = skey;
        // Both halves entering the meeting entity over the same edge.
        if (!suffix.empty() && after_meet == before_meet && suffix.back() == prefix.back())
          continue;
        joined = prefix;
        for (auto r = suffix.rbegin(); r != suffix.rend(); ++r) joined.push_back(*r ^ 1U);
        counts[joined] += c1 * c2;
      }
    }
  }

  if (counts.size() > static_cast<std::size_t>(cfg.max_paths_per_pair)) {
    std::vector<std::pair<PathType, std::uint64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), by_count_then_lex);
    ranked.resize(static_cast<std::size_t>(cfg.max_paths_per_pair));
    counts = PathCounts(ranked.begin(), ranked.end());
  }
  return counts;
}

NegativeSample sample_negatives(const KBGraph& graph, RelationId target,
                                std::span<const EntityPair> positives, std::size_t ratio,
                                Rng& rng) {
  if (ratio < 1) throw Error("sample_negatives: ratio must be >= 1");
  NegativeSample out;
  std::set<EntityId> range_set;
  for (const auto& [s, t] : graph.facts(target)) range_set.insert(t);
  for (const auto& p : positives) range_set.insert(p.target);
  const std::vector<EntityId> range(range_set.begin(), range_set.end());
  const std::set<EntityPair> positive_set(positives.begin(), positives.end());
  std::set<EntityPair> chosen;

  auto excluded = [&](EntityId s, EntityId t) {
    return t == s || graph.has_fact(s, target, t) || positive_set.count({s, t}) > 0 ||
           chosen.count({s, t}) > 0;
  };

  if (range.empty()) {
    out.exhausted = !positives.empty();
    return out;
  }
  constexpr int kRejectionAttempts = 32;
  std::vector<EntityId> candidates;
  for (const auto& p : positives) {
    for (std::size_t k = 0; k < ratio; ++k) {
      bool found = false;
      for (int a = 0; a < kRejectionAttempts && !found; ++a) {
        const EntityId t = range[rng.index(range.size())];
        if (!excluded(p.source, t)) {
          chosen.insert({p.source, t});
          out.pairs.push_back({p.source, t});
          found = true;
        }
      }
      if (found) continue;
      candidates.clear();
      for (EntityId t : range)
        if (!excluded(p.source, t)) candidates.push_back(t);
      if (candidates.empty()) {
        out.exhausted = true;
        break;
      }
      const EntityId t = candidates[rng.index(candidates.size())];
      chosen.insert({p.source, t});
      out.pairs.push_back({p.source, t});
    }
  }
  return out;
}

PathDataset top_k_paths(const PathDataset& ds, std::size_t k) {
  if (k < 1) throw Error("top_k_paths: k must be >= 1");
  if (k >= ds.vocabulary.size()) return ds;
  std::vector<std::pair<PathType, std::uint64_t>> ranked;
  ranked.reserve(ds.vocabulary.size());
  for (const auto& [p, c] : ds.vocabulary) ranked.emplace_back(p, c);
  std::sort(ranked.begin(), ranked.end(), by_count_then_lex);
  ranked.resize(k);
  std::set<PathType> keep;
  for (auto& [p, c] : ranked) keep.insert(std::move(p));

  PathDataset out;
  out.target = ds.target;
  for (const auto& inst : ds.instances) {
    FactInstance f{inst.pair, inst.label, {}};
    for (const auto& p : inst.paths)
      if (keep.count(p)) f.paths.push_back(p);
    if (!f.paths.empty()) out.instances.push_back(std::move(f));
  }
  rebuild_vocabulary(out);
  return out;
}

PathDataset extract_dataset(const KBGraph& graph, RelationId target,
                            std::span<const LabeledPair> pairs, const WalkConfig& cfg,
                            int workers, bool keep_empty) {
  cfg.validate();
  if (!graph.relations().contains(target)) throw Error("extract: unknown target relation");
  std::vector<PathCounts> found(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t i) {
    Rng rng(cfg.seed, i);
    found[i] = extract_paths(graph, pairs[i].pair, target, cfg, rng);
  });
  PathDataset ds;
  ds.target = target;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (found[i].empty() && !keep_empty) continue;
    FactInstance inst{pairs[i].pair, pairs[i].label, {}};
    inst.paths.reserve(found[i].size());
    for (auto& [p, c] : found[i]) inst.paths.push_back(p);
    ds.instances.push_back(std::move(inst));
  }
  rebuild_vocabulary(ds);
  return ds;
}

PathDataset collect_path_dataset(const KBGraph& graph, RelationId target,
                                 std::span<const EntityPair> positives,
                                 const WalkConfig& cfg, std::size_t negative_ratio,
                                 int workers, bool* negatives_exhausted) {
  if (positives.empty()) throw Error("collect_path_dataset: no positive pairs");
  // Stream index past any pair index, reserved for negative sampling.
  Rng rng(cfg.seed, ~std::uint64_t{0});
  const auto neg = sample_negatives(graph, target, positives, negative_ratio, rng);
  if (negatives_exhausted) *negatives_exhausted = neg.exhausted;
  std::vector<LabeledPair> pairs;
  pairs.reserve(positives.size() + neg.pairs.size());
  for (const auto& p : positives) pairs.push_back({p, 1});
  for (const auto& p : neg.pairs) pairs.push_back({p, 0});
  return extract_dataset(graph, target, pairs, cfg, workers, false);
}

// ---------------------------------------------------------------- file format

std::string path_to_string(const PathType& path, const RelationTable& relations) {
  std::string out;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i) out += ',';
    out += relations.name(path[i]);
  }
  return out;
}

PathType parse_path(std::string_view text, RelationTable& relations) {
  PathType p;
  for (auto part : split_unquoted(text, ',')) {
    part = trim(part);
    if (part.empty()) throw Error("empty relation in path: " + std::string(text));
    p.push_back(relations.intern_name(part));
  }
  return p;
}

void write_path_records(std::ostream& out, std::span<const PathDataset> datasets,
                        const EntityTable& entities, const RelationTable& relations) {
  for (const auto& ds : datasets) {
    out << "# target\t" << relations.name(ds.target) << '\n';
    for (const auto& inst : ds.instances) {
      out << entities.name(inst.pair.source) << '\t' << entities.name(inst.pair.target)
          << '\t' << inst.label << '\t';
      for (std::size_t i = 0; i < inst.paths.size(); ++i) {
        if (i) out << ';';
        out << path_to_string(inst.paths[i], relations);
      }
      out << '\n';
    }
  }
}

void write_path_vocabulary(std::ostream& out, std::span<const PathDataset> datasets,
                           const RelationTable& relations) {
  for (const auto& ds : datasets) {
    out << "# target\t" << relations.name(ds.target) << '\n';
    for (const auto& [p, c] : ds.vocabulary)
      out << path_to_string(p, relations) << '\t' << c << '\n';
  }
}

DatasetFile read_path_records(std::istream& in) {
  DatasetFile file;
  std::string line;
  std::size_t n = 0;
  PathDataset* cur = nullptr;
  while (std::getline(in, line)) {
    ++n;
    std::string_view v = line;
    if (!v.empty() && v.back() == '\r') v.remove_suffix(1);
    if (trim(v).empty()) continue;
    if (v.front() == '#') {
      const auto fields = split(v, '\t');
      if (fields.size() == 2 && trim(fields[0]) == "# target") {
        file.datasets.emplace_back();
        cur = &file.datasets.back();
        cur->target = file.relations.intern_name(trim(fields[1]));
      }
      continue;
    }
    if (!cur) throw ParseError(n, "record before any '# target' header");
    const auto fields = split(v, '\t');
    if (fields.size() != 4) throw ParseError(n, "expected 4 tab-separated fields");
    FactInstance inst;
    inst.pair = {file.entities.intern(trim(fields[0])), file.entities.intern(trim(fields[1]))};
    const auto label = trim(fields[2]);
    if (label != "0" && label != "1") throw ParseError(n, "label must be 0 or 1");
    inst.label = label == "1" ? 1 : 0;
    const auto paths = trim(fields[3]);
    if (!paths.empty()) {
      try {
        for (auto p : split_unquoted(paths, ';')) inst.paths.push_back(parse_path(p, file.relations));
      } catch (const ParseError&) {
        throw;
      } catch (const Error& e) {
        throw ParseError(n, e.what());
      }
    }
    std::sort(inst.paths.begin(), inst.paths.end());
    inst.paths.erase(std::unique(inst.paths.begin(), inst.paths.end()), inst.paths.end());
    cur->instances.push_back(std::move(inst));
  }
  for (auto& ds : file.datasets) rebuild_vocabulary(ds);
  return file;
}

}  // namespace kbc
