#include "kbc/classifier.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

namespace kbc {

namespace {

constexpr std::string_view kStartName = "<s>";
constexpr std::string_view kStopName = "</s>";
constexpr std::string_view kBiasName = "<bias>";
constexpr std::string_view kLogRegMagic = "# kbc-logreg v1";

void sort_unique(SparseFeatureVector& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

std::vector<FeatureKey> path_feature_keys(std::span<const PathType> paths) {
  std::set<FeatureKey> keys;
  for (const auto& p : paths) keys.insert({FeatureKey::Kind::path, p});
  return {keys.begin(), keys.end()};
}

std::vector<std::array<RelationId, 2>> path_bigrams(const PathType& path) {
  std::vector<std::array<RelationId, 2>> out;
  if (path.empty()) return out;
  RelationId prev = kStartSymbol;
  for (RelationId r : path) {
    out.push_back({prev, r});
    prev = r;
  }
  out.push_back({prev, kStopSymbol});
  return out;
}

std::vector<FeatureKey> bigram_feature_keys(std::span<const PathType> paths) {
  std::set<FeatureKey> keys;
  for (const auto& p : paths)
    for (const auto& [a, b] : path_bigrams(p)) keys.insert({FeatureKey::Kind::bigram, {a, b}});
  return {keys.begin(), keys.end()};
}

std::uint32_t FeatureVocabulary::add(const FeatureKey& key) {
  if (auto it = ids_.find(key); it != ids_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(keys_.size());
  keys_.push_back(key);
  ids_.emplace(key, id);
  return id;
}

std::optional<std::uint32_t> FeatureVocabulary::find(const FeatureKey& key) const {
  if (auto it = ids_.find(key); it != ids_.end()) return it->second;
  return std::nullopt;
}

FeatureVocabulary build_feature_vocabulary(const PathDataset& ds, FeatureSet set) {
  FeatureVocabulary vocab;
  for (const auto& inst : ds.instances) {
    for (const auto& k : path_feature_keys(inst.paths)) vocab.add(k);
    if (set == FeatureSet::paths_and_bigrams)
      for (const auto& k : bigram_feature_keys(inst.paths)) vocab.add(k);
  }
  return vocab;
}

SparseFeatureVector path_type_features(std::span<const PathType> paths,
                                       const FeatureVocabulary& vocab) {
  SparseFeatureVector out;
  for (const auto& k : path_feature_keys(paths))
    if (auto id = vocab.find(k)) out.push_back(*id);
  sort_unique(out);
  return out;
}

SparseFeatureVector bigram_features(std::span<const PathType> paths,
                                    const FeatureVocabulary& vocab) {
  SparseFeatureVector out = path_type_features(paths, vocab);
  for (const auto& k : bigram_feature_keys(paths))
    if (auto id = vocab.find(k)) out.push_back(*id);
  sort_unique(out);
  return out;
}

SparseFeatureVector featurize(std::span<const PathType> paths, const FeatureVocabulary& vocab,
                              FeatureSet set) {
  return set == FeatureSet::paths ? path_type_features(paths, vocab)
                                  : bigram_features(paths, vocab);
}

// ----------------------------------------------------------- logistic model

double SparseLinearModel::margin(const SparseFeatureVector& x) const {
  double m = bias;
  for (auto f : x)
    if (f < weights.size()) m += weights[f];
  return m;
}

LogRegLoss logreg_loss(const SparseLinearModel& model, std::span<const LabeledFeatures> batch,
                       double l2) {
  LogRegLoss out;
  const std::size_t n = model.weights.size();
  out.gradient.assign(n + 1, 0.0);
  constexpr double eps = LossConfig::kProbabilityClamp;
  for (const auto& inst : batch) {
    const double p = model.probability(inst.features);
    const double pc = std::clamp(p, eps, 1 - eps);
    const double y = inst.label;
    out.loss -= y * std::log(pc) + (1 - y) * std::log(1 - pc);
    const double dz = p - y;
    for (auto f : inst.features) out.gradient[f] += dz;
    out.gradient[n] += dz;
  }
  // Only weights of features active in the batch are penalized.
  std::vector<char> active(n, 0);
  for (const auto& inst : batch)
    for (auto f : inst.features) active[f] = 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (!active[i]) continue;
    out.loss += l2 * model.weights[i] * model.weights[i];
    out.gradient[i] += 2 * l2 * model.weights[i];
  }
  return out;
}

SparseLinearModel train_logreg(std::span<const LabeledFeatures> instances,
                               std::size_t num_features, const TrainConfig& cfg,
                               TrainStats* stats) {
  cfg.validate();
  std::size_t pos = 0;
  for (const auto& inst : instances) {
    if (inst.label != 0 && inst.label != 1) throw Error("train_logreg: labels must be 0/1");
    pos += inst.label == 1;
    for (auto f : inst.features)
      if (f >= num_features) throw Error("train_logreg: feature id out of range");
  }
  if (pos == 0 || pos == instances.size())
    throw Error("train_logreg: need instances of both labels");

  SparseLinearModel model;
  model.weights.assign(num_features, 0.0);
  std::vector<double> accum(num_features + 1, 0.0);
  std::vector<std::size_t> order(instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng order_rng(cfg.seed, 3);
  std::vector<LabeledFeatures> batch;
  const double eps = AdaGradState::kEpsilon;

  auto flush = [&](double lr) {
    const auto lg = logreg_loss(model, batch, cfg.l2);
    for (std::size_t i = 0; i <= num_features; ++i) {
      const double g = lg.gradient[i];
      if (g == 0.0) continue;
      accum[i] += g * g;
      const double step = lr * g / (std::sqrt(accum[i]) + eps);
      if (i == num_features)
        model.bias -= step;
      else
        model.weights[i] -= step;
    }
    batch.clear();
  };

  for (int t = 1; t <= cfg.iterations; ++t) {
    const double lr = cfg.learning_rate_at(t);
    if (cfg.shuffle) order_rng.shuffle(order);
    for (auto i : order) {
      batch.push_back(instances[i]);
      if (batch.size() == static_cast<std::size_t>(cfg.batch_size)) flush(lr);
    }
    if (!batch.empty()) flush(lr);
    if (stats) stats->epoch_losses.push_back(logreg_loss(model, instances, cfg.l2).loss);
  }
  return model;
}

// ------------------------------------------------------------------- k-means

namespace {

double sq_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

KMeansResult kmeans(std::span<const std::vector<double>> points, int k, int iterations,
                    std::uint64_t seed, bool plus_plus) {
  const std::size_t n = points.size();
  if (k < 1) throw Error("kmeans: k must be >= 1");
  if (static_cast<std::size_t>(k) > n)
    throw Error("kmeans: k = " + std::to_string(k) + " exceeds the number of points " +
                std::to_string(n));
  const std::size_t dim = points[0].size();
  for (const auto& p : points)
    if (p.size() != dim) throw Error("kmeans: inconsistent dimensions");

  Rng rng(seed, 7);
  KMeansResult res;
  const std::size_t kk = static_cast<std::size_t>(k);
  if (!plus_plus) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < kk; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
    for (std::size_t i = 0; i < kk; ++i) res.centroids.push_back(points[idx[i]]);
  } else {
    res.centroids.push_back(points[rng.index(n)]);
    std::vector<double> d2(n);
    while (res.centroids.size() < kk) {
      double total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        d2[i] = std::numeric_limits<double>::infinity();
        for (const auto& c : res.centroids) d2[i] = std::min(d2[i], sq_distance(points[i], c));
        total += d2[i];
      }
      std::size_t pick = 0;
      if (total <= 0) {
        pick = rng.index(n);
      } else {
        double u = rng.uniform() * total;
        for (pick = 0; pick + 1 < n; ++pick) {
          u -= d2[pick];
          if (u < 0) break;
        }
      }
      res.centroids.push_back(points[pick]);
    }
  }

  res.assignment.assign(n, -1);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_distance(points[i], res.centroids[0]);
      for (std::size_t c = 1; c < kk; ++c) {
        const double d = sq_distance(points[i], res.centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      if (res.assignment[i] != best) changed = true;
      res.assignment[i] = best;
    }
    if (!changed && it > 0) break;

    std::vector<std::vector<double>> sums(kk, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(kk, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(res.assignment[i]);
      ++counts[c];
      for (std::size_t j = 0; j < dim; ++j) sums[c][j] += points[i][j];
    }
    for (std::size_t c = 0; c < kk; ++c)
      if (counts[c] > 0)
        for (std::size_t j = 0; j < dim; ++j) res.centroids[c][j] = sums[c][j] / counts[c];

    for (std::size_t c = 0; c < kk; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = 0;
      double far_d = -1;
      for (std::size_t i = 0; i < n; ++i) {
        const auto a = static_cast<std::size_t>(res.assignment[i]);
        if (counts[a] <= 1) continue;  // leave singleton clusters intact
        const double d = sq_distance(points[i], res.centroids[a]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far_d < 0) continue;
      --counts[static_cast<std::size_t>(res.assignment[far])];
      res.assignment[far] = static_cast<int>(c);
      counts[c] = 1;
      res.centroids[c] = points[far];
    }

    double distortion = 0;
    for (std::size_t i = 0; i < n; ++i)
      distortion += sq_distance(points[i], res.centroids[static_cast<std::size_t>(res.assignment[i])]);
    res.distortion.push_back(distortion);
  }
  return res;
}

ClusterAssignment cluster_relations(const RelationTable& relations, const VectorTable& vectors,
                                    int k, int iterations, std::uint64_t seed, bool plus_plus) {
  std::vector<RelationId> ids;
  std::vector<std::vector<double>> points;
  for (RelationId r = 0; r < relations.size(); r += 2) {
    if (relations.kind(r) != RelationKind::textual) continue;
    auto it = vectors.find(r);
    if (it == vectors.end()) continue;
    ids.push_back(r);
    points.push_back(it->second);
  }
  if (points.empty()) throw Error("no textual relation has a vector to cluster");
  auto res = kmeans(points, k, iterations, seed, plus_plus);
  ClusterAssignment out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.cluster_of[ids[i]] = res.assignment[i];
  out.centroids = std::move(res.centroids);
  return out;
}

std::string cluster_relation_name(int cluster) {
  return "\"cluster:" + std::to_string(cluster) + "\"";
}

KBGraph clusterize_graph(const KBGraph& graph, const ClusterAssignment& assignment) {
  const auto& old = graph.relations();
  RelationTable rels;
  std::vector<RelationId> remap(old.size());
  for (RelationId r = 0; r < old.size(); r += 2) {
    RelationId mapped;
    if (old.kind(r) == RelationKind::kb) {
      mapped = rels.intern(old.name(r), RelationKind::kb);
    } else {
      auto it = assignment.cluster_of.find(r);
      if (it == assignment.cluster_of.end())
        throw Error("no cluster assigned to textual relation " + old.name(r));
      mapped = rels.intern(cluster_relation_name(it->second), RelationKind::textual);
    }
    remap[r] = mapped;
    remap[r + 1] = mapped ^ 1U;
  }
  std::vector<Triple> edges = graph.forward_edges();
  for (auto& t : edges) t.relation = remap[t.relation];
  return KBGraph::from_edges(graph.entities(), std::move(rels), std::move(edges));
}

// ---------------------------------------------------------------- file format

std::string feature_to_string(const FeatureKey& key, const RelationTable& relations) {
  auto sym = [&](RelationId r) -> std::string {
    if (r == kStartSymbol) return std::string(kStartName);
    if (r == kStopSymbol) return std::string(kStopName);
    return relations.name(r);
  };
  std::string out = key.kind == FeatureKey::Kind::path ? "path:" : "bigram:";
  for (std::size_t i = 0; i < key.relations.size(); ++i) {
    if (i) out += ',';
    out += sym(key.relations[i]);
  }
  return out;
}

FeatureKey parse_feature(std::string_view text, RelationTable& relations) {
  FeatureKey key;
  std::string_view body;
  if (text.starts_with("path:")) {
    key.kind = FeatureKey::Kind::path;
    body = text.substr(5);
  } else if (text.starts_with("bigram:")) {
    key.kind = FeatureKey::Kind::bigram;
    body = text.substr(7);
  } else {
    throw Error("unknown feature kind: " + std::string(text));
  }
  for (auto part : split_unquoted(body, ',')) {
    part = trim(part);
    if (part == kStartName)
      key.relations.push_back(kStartSymbol);
    else if (part == kStopName)
      key.relations.push_back(kStopSymbol);
    else if (part.empty())
      throw Error("empty symbol in feature: " + std::string(text));
    else
      key.relations.push_back(relations.intern_name(part));
  }
  if (key.kind == FeatureKey::Kind::bigram && key.relations.size() != 2)
    throw Error("bigram feature needs two symbols: " + std::string(text));
  return key;
}

void write_feature_vocabulary(std::ostream& out, const FeatureVocabulary& vocab,
                              const RelationTable& relations) {
  for (std::uint32_t i = 0; i < vocab.size(); ++i)
    out << i << '\t' << feature_to_string(vocab.key(i), relations) << '\n';
}

void write_logreg_bundle(std::ostream& out, const LogRegBundle& bundle,
                         const RelationTable& relations) {
  out << kLogRegMagic << '\t' << bundle.kind << '\n';
  for (const auto& e : bundle.entries) {
    out << "# target\t" << relations.name(e.target) << '\t'
        << (e.feature_set == FeatureSet::paths ? "paths" : "bigrams") << '\n';
    out << kBiasName << '\t' << format_double(e.model.bias) << '\n';
    for (std::uint32_t i = 0; i < e.vocab.size(); ++i)
      out << feature_to_string(e.vocab.key(i), relations) << '\t'
          << format_double(e.model.weights[i]) << '\n';
  }
}

bool is_logreg_bundle(std::string_view head) { return head.starts_with(kLogRegMagic); }

LogRegBundle read_logreg_bundle(std::istream& in, RelationTable& relations) {
  LogRegBundle bundle;
  std::string line;
  std::size_t n = 0;
  LogRegBundleEntry* cur = nullptr;
  while (std::getline(in, line)) {
    ++n;
    std::string_view v = line;
    if (!v.empty() && v.back() == '\r') v.remove_suffix(1);
    if (trim(v).empty()) continue;
    const auto fields = split(v, '\t');
    if (n == 1) {
      if (!is_logreg_bundle(v) || fields.size() != 2) throw ParseError(n, "not a logreg model file");
      bundle.kind = std::string(trim(fields[1]));
      continue;
    }
    if (v.front() == '#' && !v.starts_with("#\t")) {
      if (fields.size() == 3 && trim(fields[0]) == "# target") {
        bundle.entries.emplace_back();
        cur = &bundle.entries.back();
        cur->target = relations.intern_name(trim(fields[1]));
        const auto fs = trim(fields[2]);
        if (fs != "paths" && fs != "bigrams") throw ParseError(n, "bad feature set");
        cur->feature_set = fs == "paths" ? FeatureSet::paths : FeatureSet::paths_and_bigrams;
        continue;
      }
      throw ParseError(n, "unexpected header line");
    }
    if (!cur || fields.size() != 2) throw ParseError(n, "expected feature<TAB>weight");
    double w = 0;
    const auto ws = trim(fields[1]);
    auto [p, ec] = std::from_chars(ws.data(), ws.data() + ws.size(), w);
    if (ec != std::errc() || p != ws.data() + ws.size()) throw ParseError(n, "bad weight");
    const auto name = trim(fields[0]);
    if (name == kBiasName) {
      cur->model.bias = w;
      continue;
    }
    try {
      const auto id = cur->vocab.add(parse_feature(name, relations));
      if (id != cur->model.weights.size()) throw ParseError(n, "duplicate feature");
      cur->model.weights.push_back(w);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(n, e.what());
    }
  }
  return bundle;
}

void write_cluster_assignment(std::ostream& out, const ClusterAssignment& assignment,
                              const RelationTable& relations) {
  std::vector<std::pair<RelationId, int>> rows(assignment.cluster_of.begin(),
                                               assignment.cluster_of.end());
  std::sort(rows.begin(), rows.end());
  for (const auto& [r, c] : rows) out << relations.name(r) << '\t' << c << '\n';
}

ClusterAssignment read_cluster_assignment(std::istream& in, const RelationTable& relations) {
  ClusterAssignment out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    const auto fields = split(v, '\t');
    if (fields.size() != 2) throw ParseError(n, "expected relation<TAB>cluster");
    int c = 0;
    const auto cs = trim(fields[1]);
    auto [p, ec] = std::from_chars(cs.data(), cs.data() + cs.size(), c);
    if (ec != std::errc() || c < 0) throw ParseError(n, "bad cluster id");
    // Relations filtered out of the graph may still appear in the file.
    if (auto r = relations.find(trim(fields[0]))) out.cluster_of[RelationTable::forward_of(*r)] = c;
  }
  return out;
}

}  // namespace kbc
