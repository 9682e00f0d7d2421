#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kbc/graph.hpp"
#include "kbc/paths.hpp"
#include "kbc/rnn.hpp"

namespace kbc {

// Path boundary symbols for bigram features.
inline constexpr RelationId kStartSymbol = 0xFFFFFFFEU;
inline constexpr RelationId kStopSymbol = 0xFFFFFFFFU;

enum class FeatureSet { paths, paths_and_bigrams };

struct FeatureKey {
  enum class Kind : std::uint8_t { path = 0, bigram = 1 };
  Kind kind = Kind::path;
  std::vector<RelationId> relations;  // whole path, or exactly two symbols
  auto operator<=>(const FeatureKey&) const = default;
};

std::vector<FeatureKey> path_feature_keys(std::span<const PathType> paths);
/// START r1, r1 r2, ..., rk STOP; repeats kept, so a length-k path gives k + 1.
std::vector<std::array<RelationId, 2>> path_bigrams(const PathType& path);
/// START/STOP-padded bigrams of every path, deduplicated.
std::vector<FeatureKey> bigram_feature_keys(std::span<const PathType> paths);

class FeatureVocabulary {
 public:
  std::uint32_t add(const FeatureKey& key);
  std::optional<std::uint32_t> find(const FeatureKey& key) const;
  const FeatureKey& key(std::uint32_t id) const { return keys_.at(id); }
  std::size_t size() const { return keys_.size(); }

 private:
  std::vector<FeatureKey> keys_;
  std::map<FeatureKey, std::uint32_t> ids_;
};

FeatureVocabulary build_feature_vocabulary(const PathDataset& ds, FeatureSet set);

/// Sorted ids of active binary features.
using SparseFeatureVector = std::vector<std::uint32_t>;

/// One indicator per distinct path type known to the vocabulary.
SparseFeatureVector path_type_features(std::span<const PathType> paths,
                                       const FeatureVocabulary& vocab);
/// Path-type indicators plus START/STOP-padded bigram indicators.
SparseFeatureVector bigram_features(std::span<const PathType> paths,
                                    const FeatureVocabulary& vocab);
SparseFeatureVector featurize(std::span<const PathType> paths, const FeatureVocabulary& vocab,
                              FeatureSet set);

struct LabeledFeatures {
  SparseFeatureVector features;
  int label;
};

struct SparseLinearModel {
  std::vector<double> weights;
  double bias = 0;

  double margin(const SparseFeatureVector& x) const;
  double probability(const SparseFeatureVector& x) const { return sigmoid(margin(x)); }
};

/// Summed logistic loss of the batch plus l2 * ||w||^2 over the features active
/// in the batch (bias unregularized),
/// with its gradient (last entry of `gradient` is the bias).
struct LogRegLoss {
  double loss = 0;
  std::vector<double> gradient;
};
LogRegLoss logreg_loss(const SparseLinearModel& model, std::span<const LabeledFeatures> batch,
                       double l2);

/// Minibatch AdaGrad with the same schedule as the recurrent models.
SparseLinearModel train_logreg(std::span<const LabeledFeatures> instances,
                               std::size_t num_features, const TrainConfig& cfg,
                               TrainStats* stats = nullptr);

// ------------------------------------------------------------------- k-means

struct KMeansResult {
  std::vector<int> assignment;
  std::vector<std::vector<double>> centroids;
  std::vector<double> distortion;  // after each iteration
};

/// Lloyd iterations from k distinct seeded random points (or k-means++).
/// Empty clusters are re-seeded with the point farthest from its centroid.
KMeansResult kmeans(std::span<const std::vector<double>> points, int k, int iterations,
                    std::uint64_t seed, bool plus_plus = false);

struct ClusterAssignment {
  std::unordered_map<RelationId, int> cluster_of;  // forward textual relations
  std::vector<std::vector<double>> centroids;
};

/// Clusters the forward textual relations that have vectors.
ClusterAssignment cluster_relations(const RelationTable& relations, const VectorTable& vectors,
                                    int k, int iterations, std::uint64_t seed,
                                    bool plus_plus = false);

std::string cluster_relation_name(int cluster);

/// Rewrites every textual relation to its cluster relation; KB relations keep
/// their identity. Parallel edges that become identical collapse.
KBGraph clusterize_graph(const KBGraph& graph, const ClusterAssignment& assignment);

// ---------------------------------------------------------------- file format

std::string feature_to_string(const FeatureKey& key, const RelationTable& relations);
FeatureKey parse_feature(std::string_view text, RelationTable& relations);

/// `feature_id<TAB>feature_string`
void write_feature_vocabulary(std::ostream& out, const FeatureVocabulary& vocab,
                              const RelationTable& relations);

struct LogRegBundleEntry {
  RelationId target;
  FeatureSet feature_set;
  FeatureVocabulary vocab;
  SparseLinearModel model;
};

struct LogRegBundle {
  std::string kind;  // "pra", "pra-b", ...
  std::vector<LogRegBundleEntry> entries;
};

/// `feature_string<TAB>weight` lines under a `# target` header per relation.
void write_logreg_bundle(std::ostream& out, const LogRegBundle& bundle,
                         const RelationTable& relations);
LogRegBundle read_logreg_bundle(std::istream& in, RelationTable& relations);
bool is_logreg_bundle(std::string_view head);

/// `relation_name<TAB>cluster_id`
void write_cluster_assignment(std::ostream& out, const ClusterAssignment& assignment,
                              const RelationTable& relations);
ClusterAssignment read_cluster_assignment(std::istream& in, const RelationTable& relations);

}  // namespace kbc
