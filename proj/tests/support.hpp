// Shared helpers for the end-to-end tests: synthetic KB -> datasets -> scores.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kbc/classifier.hpp"
#include "kbc/eval.hpp"
#include "kbc/graph.hpp"
#include "kbc/paths.hpp"
#include "kbc/rnn.hpp"
#include "kbc/synth.hpp"

namespace kbc::testing {

struct Prepared {
  KBGraph graph;
  std::vector<PathDataset> train;  // one per head relation, path-less pairs dropped
  std::vector<PathDataset> test;   // path-less pairs kept
  VectorTable vectors;             // planted vectors resolved against the graph
};

inline std::vector<LabeledPair> to_pairs(const KBGraph& g, RelationId rel,
                                         const std::vector<LabeledFact>& facts) {
  std::vector<LabeledPair> out;
  const auto& name = g.relations().name(rel);
  for (const auto& f : facts) {
    if (canonical_relation_name(f.relation) != name) continue;
    const auto s = g.entities().find(f.source), t = g.entities().find(f.target);
    if (!s || !t) continue;
    out.push_back({{*s, *t}, f.label});
  }
  return out;
}

inline Prepared prepare(const SynthConfig& cfg, const WalkConfig& walk, int workers = 1) {
  const auto manifest = generate_synthetic_kb(cfg);
  const auto split = split_facts(manifest, cfg.train_fraction, cfg.dev_fraction,
                                 cfg.test_fraction, cfg.train_negatives_ratio,
                                 cfg.negatives_ratio, cfg.seed);
  Prepared p;
  BuildOptions opts;
  opts.min_textual_freq = 0;
  p.graph = build_graph(split.graph_triples, opts);
  std::vector<std::string> heads;
  for (const auto& r : cfg.rules)
    if (std::find(heads.begin(), heads.end(), r.head) == heads.end()) heads.push_back(r.head);
  for (const auto& h : heads) {
    const RelationId rel = p.graph.relations().at(canonical_relation_name(h));
    p.train.push_back(extract_dataset(p.graph, rel, to_pairs(p.graph, rel, split.train), walk,
                                      workers, false));
    p.test.push_back(extract_dataset(p.graph, rel, to_pairs(p.graph, rel, split.test), walk,
                                     workers, true));
  }
  RelationTable rels = p.graph.relations();
  for (auto& [r, v] : resolve_vectors(manifest.vectors, rels))
    if (p.graph.relations().contains(r)) p.vectors.emplace(r, std::move(v));
  return p;
}

using Scorer = std::function<double(const FactInstance&)>;

inline EvalRanking rank_with(const PathDataset& test, const std::string& name,
                             const Scorer& score) {
  EvalRanking r{name, {}};
  for (std::size_t i = 0; i < test.instances.size(); ++i)
    r.entries.push_back({i, score(test.instances[i]), test.instances[i].label});
  return r;
}

inline std::vector<EvalRanking> rnn_rankings(const Prepared& p, const TrainConfig& cfg,
                                             Composition comp, const VectorTable* vectors) {
  std::vector<EvalRanking> out;
  for (std::size_t i = 0; i < p.train.size(); ++i) {
    const auto model = train_relation_model(p.train[i], cfg, comp, vectors);
    const auto target = p.train[i].target;
    out.push_back(rank_with(p.test[i], p.graph.relations().name(target),
                            [&](const FactInstance& f) {
                              return predict_probability(f.paths, model, target);
                            }));
  }
  return out;
}

inline std::vector<EvalRanking> logreg_rankings(const Prepared& p, const TrainConfig& cfg,
                                                FeatureSet set) {
  std::vector<EvalRanking> out;
  for (std::size_t i = 0; i < p.train.size(); ++i) {
    const auto vocab = build_feature_vocabulary(p.train[i], set);
    std::vector<LabeledFeatures> xs;
    for (const auto& inst : p.train[i].instances)
      xs.push_back({featurize(inst.paths, vocab, set), inst.label});
    const auto model = train_logreg(xs, vocab.size(), cfg);
    out.push_back(rank_with(p.test[i], p.graph.relations().name(p.train[i].target),
                            [&](const FactInstance& f) {
                              return model.probability(featurize(f.paths, vocab, set));
                            }));
  }
  return out;
}

inline std::vector<EvalRanking> random_rankings(const Prepared& p, std::uint64_t seed) {
  std::vector<EvalRanking> out;
  Rng rng(seed, 99);
  for (const auto& ds : p.test)
    out.push_back(rank_with(ds, p.graph.relations().name(ds.target),
                            [&](const FactInstance&) { return rng.uniform(); }));
  return out;
}

inline std::vector<EvalRanking> ensemble_rankings(const std::vector<EvalRanking>& a,
                                                  const std::vector<EvalRanking>& b) {
  std::vector<EvalRanking> out;
  for (std::size_t i = 0; i < a.size(); ++i)
    out.push_back({a[i].relation, rank_sum_ensemble(a[i].entries, b[i].entries)});
  return out;
}

}  // namespace kbc::testing
