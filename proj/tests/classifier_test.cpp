#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <sstream>

#include "kbc/classifier.hpp"
#include "path_oracle.hpp"

using namespace kbc;

namespace {

PathDataset dataset_of(RelationId target, std::vector<FactInstance> xs) {
  PathDataset ds;
  ds.target = target;
  ds.instances = std::move(xs);
  rebuild_vocabulary(ds);
  return ds;
}

const FeatureKey& key_of(const FeatureVocabulary& v, std::uint32_t id) { return v.key(id); }

}  // namespace

TEST_CASE("path type features are indicators") {
  const auto ds = dataset_of(0, {{{0, 1}, 1, {{2, 4}, {6}}}, {{0, 2}, 0, {{8}}}});
  const auto vocab = build_feature_vocabulary(ds, FeatureSet::paths);
  CHECK(path_type_features(std::vector<PathType>{{2, 4}, {6}}, vocab).size() == 2);
  CHECK(path_type_features(std::vector<PathType>{}, vocab).empty());
  CHECK(path_type_features(std::vector<PathType>{{10}}, vocab).empty());
}

TEST_CASE("bigram features with boundary symbols") {
  const std::vector<PathType> paths = {{2, 4}};
  const auto ds = dataset_of(0, {{{0, 1}, 1, paths}});
  const auto vocab = build_feature_vocabulary(ds, FeatureSet::paths_and_bigrams);
  const auto x = bigram_features(paths, vocab);
  std::set<FeatureKey> got;
  for (auto id : x) got.insert(key_of(vocab, id));
  using K = FeatureKey::Kind;
  const std::set<FeatureKey> want = {{K::path, {2, 4}},
                                     {K::bigram, {kStartSymbol, 2}},
                                     {K::bigram, {2, 4}},
                                     {K::bigram, {4, kStopSymbol}}};
  CHECK(got == want);
  const std::vector<PathType> single = {{6}};
  CHECK(bigram_feature_keys(single).size() == 2);
  // A shared bigram is emitted once.
  const std::vector<PathType> two = {{2, 4}, {2, 4, 6}};
  const auto keys = bigram_feature_keys(two);
  CHECK(std::count(keys.begin(), keys.end(), FeatureKey{K::bigram, {2, 4}}) == 1);
  CHECK(keys.size() == 5);  // <s>2, 24, 4</s>, 46, 6</s>
}

TEST_CASE("bigram features contain the base features and count length + 1 per path") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PathType> paths;
    const std::size_t n = 1 + rng.index(6);
    for (std::size_t i = 0; i < n; ++i) {
      PathType p(1 + rng.index(4));
      for (auto& r : p) r = static_cast<RelationId>(rng.index(8));
      paths.push_back(p);
    }
    std::sort(paths.begin(), paths.end());
    paths.erase(std::unique(paths.begin(), paths.end()), paths.end());
    const auto ds = dataset_of(0, {{{0, 1}, 1, paths}});
    const auto base = build_feature_vocabulary(ds, FeatureSet::paths);
    const auto full = build_feature_vocabulary(ds, FeatureSet::paths_and_bigrams);
    std::set<FeatureKey> fb, ff;
    for (auto id : featurize(paths, base, FeatureSet::paths)) fb.insert(base.key(id));
    for (auto id : featurize(paths, full, FeatureSet::paths_and_bigrams)) ff.insert(full.key(id));
    CHECK(std::includes(ff.begin(), ff.end(), fb.begin(), fb.end()));
    for (const auto& p : paths) {
      std::vector<RelationId> padded{kStartSymbol};
      padded.insert(padded.end(), p.begin(), p.end());
      padded.push_back(kStopSymbol);
      std::set<FeatureKey> oracle;
      for (std::size_t i = 0; i + 1 < padded.size(); ++i)
        oracle.insert({FeatureKey::Kind::bigram, {padded[i], padded[i + 1]}});
      const auto got = bigram_feature_keys(std::vector<PathType>{p});
      CHECK(std::set<FeatureKey>(got.begin(), got.end()) == oracle);
      if (std::set<RelationId>(p.begin(), p.end()).size() == p.size())
        CHECK(got.size() == p.size() + 1);
    }
  }
}

TEST_CASE("logistic loss gradient matches finite differences") {
  SparseLinearModel m;
  Rng rng(3);
  for (int i = 0; i < 5; ++i) m.weights.push_back(rng.uniform(-1, 1));
  m.bias = 0.2;
  const std::vector<LabeledFeatures> batch = {{{0, 2}, 1}, {{1, 3, 4}, 0}, {{4}, 1}, {{}, 0}};
  const double l2 = 1e-2;
  const auto lg = logreg_loss(m, batch, l2);
  REQUIRE(lg.gradient.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    auto up = m, down = m;
    double& pu = i < 5 ? up.weights[i] : up.bias;
    double& pd = i < 5 ? down.weights[i] : down.bias;
    pu += 1e-6;
    pd -= 1e-6;
    const double num = (logreg_loss(up, batch, l2).loss - logreg_loss(down, batch, l2).loss) / 2e-6;
    CHECK(std::abs(num - lg.gradient[i]) <= 1e-6 * std::max(std::abs(num), 1e-3));
  }
  // Hand value of the loss.
  double want = 0;
  for (const auto& x : batch) {
    double z = m.bias;
    for (auto f : x.features) z += m.weights[f];
    const double p = 1 / (1 + std::exp(-z));
    want -= x.label ? std::log(p) : std::log(1 - p);
  }
  for (auto f : {0, 1, 2, 3, 4}) want += l2 * m.weights[f] * m.weights[f];
  CHECK(lg.loss == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("logistic regression on separable data") {
  std::vector<LabeledFeatures> xs;
  for (int i = 0; i < 40; ++i) xs.push_back({i % 2 ? SparseFeatureVector{0} : SparseFeatureVector{}, i % 2});
  TrainConfig cfg;
  cfg.iterations = 50;
  const auto m = train_logreg(xs, 1, cfg);
  CHECK(m.probability({0}) > 0.5);
  CHECK(m.probability({}) < 0.5);

  // All-zero features: the bias learns the base rate.
  std::vector<LabeledFeatures> zs;
  for (int i = 0; i < 40; ++i) zs.push_back({{}, i % 4 == 0});
  cfg.iterations = 150;
  const auto z = train_logreg(zs, 0, cfg);
  CHECK(z.probability({}) == doctest::Approx(0.25).epsilon(0.05));

  std::vector<LabeledFeatures> one_class = {{{0}, 1}, {{}, 1}};
  CHECK_THROWS_AS(train_logreg(one_class, 1, cfg), Error);
  std::vector<LabeledFeatures> out_of_range = {{{3}, 1}, {{}, 0}};
  CHECK_THROWS_AS(train_logreg(out_of_range, 1, cfg), Error);
}

TEST_CASE("k-means") {
  SUBCASE("well separated") {
    const std::vector<std::vector<double>> pts = {{0, 0}, {0, 0.1}, {5, 5}, {5, 5.1}};
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto r = kmeans(pts, 2, 20, seed);
      CHECK(r.assignment[0] == r.assignment[1]);
      CHECK(r.assignment[2] == r.assignment[3]);
      CHECK(r.assignment[0] != r.assignment[2]);
    }
  }
  SUBCASE("k = n") {
    const std::vector<std::vector<double>> pts = {{0, 0}, {1, 0}, {0, 1}, {3, 3}};
    const auto r = kmeans(pts, 4, 10, 2);
    std::set<int> distinct(r.assignment.begin(), r.assignment.end());
    CHECK(distinct.size() == 4);
    CHECK(r.distortion.back() == 0);
  }
  SUBCASE("distortion never increases and matches a recomputation") {
    Rng rng(8);
    std::vector<std::vector<double>> pts(200, std::vector<double>(3));
    for (auto& p : pts)
      for (auto& x : p) x = rng.normal();
    for (bool pp : {false, true}) {
      const auto r = kmeans(pts, 6, 50, 4, pp);
      for (std::size_t i = 1; i < r.distortion.size(); ++i)
        CHECK(r.distortion[i] <= r.distortion[i - 1] + 1e-9);
      double d = 0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& c = r.centroids[r.assignment[i]];
        double best = 1e300;
        for (const auto& other : r.centroids) {
          double s = 0;
          for (int j = 0; j < 3; ++j) s += (pts[i][j] - other[j]) * (pts[i][j] - other[j]);
          best = std::min(best, s);
        }
        double own = 0;
        for (int j = 0; j < 3; ++j) own += (pts[i][j] - c[j]) * (pts[i][j] - c[j]);
        CHECK(own <= best + 1e-9);
        d += own;
      }
      CHECK(d == doctest::Approx(r.distortion.back()).epsilon(1e-9));
    }
  }
  SUBCASE("errors") {
    const std::vector<std::vector<double>> pts = {{0}, {1}};
    CHECK_THROWS_AS(kmeans(pts, 3, 10, 1), Error);
    CHECK_THROWS_AS(kmeans(pts, 0, 10, 1), Error);
  }
}

TEST_CASE("clusterizing merges synonymous textual relations") {
  const auto g = build_graph(std::vector<SurfaceTriple>{{"a", "lives in", "b"},
                                                        {"c", "resides in", "d"},
                                                        {"a", "/kb/p", "c"},
                                                        {"b", "born in", "d"}},
                             {.min_textual_freq = 0});
  const auto& rels = g.relations();
  VectorTable vt = {{rels.at("\"lives,in\""), {1, 0}},
                    {rels.at("\"resides,in\""), {1, 0.01}},
                    {rels.at("\"born,in\""), {-1, 5}},
                    {rels.at("/kb/p"), {0, 0}}};
  const auto asg = cluster_relations(rels, vt, 2, 20, 1);
  CHECK(asg.cluster_of.size() == 3);  // KB relations are not clustered
  CHECK(asg.cluster_of.at(rels.at("\"lives,in\"")) == asg.cluster_of.at(rels.at("\"resides,in\"")));
  const auto cg = clusterize_graph(g, asg);
  const auto& cr = cg.relations();
  const auto merged = cr.at(cluster_relation_name(asg.cluster_of.at(rels.at("\"lives,in\""))));
  CHECK(cg.facts(merged).size() == 2);
  CHECK(cr.find("/kb/p").has_value());
  CHECK_FALSE(cr.find("\"lives,in\"").has_value());
  // Inverses commute with clustering.
  const auto an = cg.entities().at("b");
  const auto adj = cg.neighbors(an);
  CHECK(std::count(adj.begin(), adj.end(), Edge{merged ^ 1U, cg.entities().at("a")}) == 1);
  for (RelationId r = 0; r < cr.size(); ++r) CHECK(cr.inverse(r) == (r ^ 1U));

  // Synonymous paths collapse to one path type.
  const auto g2 = build_graph(std::vector<SurfaceTriple>{{"s", "lives in", "m1"},
                                                         {"s", "resides in", "m2"},
                                                         {"m1", "/kb/p", "t"},
                                                         {"m2", "/kb/p", "t"}},
                              {.min_textual_freq = 0});
  VectorTable vt2 = {{g2.relations().at("\"lives,in\""), {1, 0}},
                     {g2.relations().at("\"resides,in\""), {1, 0}}};
  const auto c2 = clusterize_graph(g2, cluster_relations(g2.relations(), vt2, 1, 5, 1));
  WalkConfig walk;
  walk.walks_per_node = 2000;
  Rng r1(1), r2(1);
  const auto before = extract_paths(g2, {g2.entities().at("s"), g2.entities().at("t")}, 0, walk, r1);
  const auto after = extract_paths(c2, {c2.entities().at("s"), c2.entities().at("t")}, 0, walk, r2);
  CHECK(before.size() == 2);
  CHECK(after.size() == 1);
}

TEST_CASE("clusterizing a KB-only graph is the identity") {
  const auto g = testing::random_graph(3, 15, 30, 3);
  const auto c = clusterize_graph(g, ClusterAssignment{});
  CHECK(c.forward_edges() == g.forward_edges());
}

TEST_CASE("feature strings and bundle files round trip") {
  RelationTable rels;
  rels.intern("/a", RelationKind::kb);
  rels.intern("\"x,y\"", RelationKind::textual);
  using K = FeatureKey::Kind;
  for (const FeatureKey& k : {FeatureKey{K::path, {0, 3}}, FeatureKey{K::bigram, {kStartSymbol, 2}},
                              FeatureKey{K::bigram, {1, kStopSymbol}}, FeatureKey{K::bigram, {2, 0}}}) {
    const auto s = feature_to_string(k, rels);
    CHECK(parse_feature(s, rels) == k);
  }
  const auto ds = dataset_of(0, {{{0, 1}, 1, {{2}, {0, 3}}}, {{0, 2}, 0, {{3}}}});
  LogRegBundle bundle{"pra-b", {}};
  auto vocab = build_feature_vocabulary(ds, FeatureSet::paths_and_bigrams);
  SparseLinearModel m;
  for (std::size_t i = 0; i < vocab.size(); ++i) m.weights.push_back(0.125 * (double)i - 0.3);
  m.bias = -0.7;
  bundle.entries.push_back({0, FeatureSet::paths_and_bigrams, vocab, m});
  std::stringstream buf;
  write_logreg_bundle(buf, bundle, rels);
  CHECK(is_logreg_bundle(buf.str()));
  RelationTable fresh;
  const auto back = read_logreg_bundle(buf, fresh);
  REQUIRE(back.entries.size() == 1);
  CHECK(back.kind == "pra-b");
  const auto& e = back.entries[0];
  CHECK(e.model.bias == m.bias);
  CHECK(e.model.weights == m.weights);
  CHECK(e.vocab.size() == vocab.size());
  CHECK(fresh.name(e.target) == "/a");
  for (const auto& inst : ds.instances) {
    std::vector<PathType> mapped;
    for (const auto& p : inst.paths) mapped.push_back(parse_path(path_to_string(p, rels), fresh));
    CHECK(e.model.probability(featurize(mapped, e.vocab, e.feature_set)) ==
          m.probability(featurize(inst.paths, vocab, FeatureSet::paths_and_bigrams)));
  }

  ClusterAssignment asg;
  asg.cluster_of[2] = 4;
  std::stringstream cb;
  write_cluster_assignment(cb, asg, rels);
  const auto ab = read_cluster_assignment(cb, rels);
  CHECK(ab.cluster_of == asg.cluster_of);
}
