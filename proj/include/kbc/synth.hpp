#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kbc/graph.hpp"
#include "kbc/rnn.hpp"

namespace kbc {

struct SynthRelation {
  std::string name;  // surface name; textual names may contain spaces
  RelationKind kind = RelationKind::kb;
};

struct SynonymGroup {
  std::string name;
  std::vector<std::string> members;
};

/// body => head. A body element `@group` is drawn per chain from the group's
/// members, so one rule realizes many synonymous paths.
struct SynthRule {
  std::vector<std::string> body;
  std::string head;
  double noise = 0;  // probability of dropping each head fact
  int chains = 100;
};

struct SynthConfig {
  int num_entities = 1000;
  std::vector<SynthRelation> relations;
  std::vector<SynthRule> rules;
  std::vector<SynonymGroup> synonym_groups;
  double distractor_factor = 3.0;  // distractor edges per rule edge
  int vector_dim = 50;
  double vector_noise = 0.05;
  std::size_t train_negatives_ratio = 1;
  std::size_t negatives_ratio = 10;  // dev and test
  double train_fraction = 0.7;
  double dev_fraction = 0.0;
  double test_fraction = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct HeadFact {
  std::string relation;
  std::string source;
  std::string target;
};

struct SynthManifest {
  std::vector<SurfaceTriple> triples;  // every generated fact, heads included
  std::vector<SynthRule> rules;
  std::vector<HeadFact> head_facts;
  RelationVectors vectors;  // canonical names, inverses included
};

/// Chains of distinct random entities realize each rule body; each chain's head
/// fact is kept with probability 1 - noise; distractor edges over non-head
/// relations are added at random. Deterministic per seed.
SynthManifest generate_synthetic_kb(const SynthConfig& cfg);

enum class Split : std::uint8_t { train, dev, test };
const char* split_name(Split s);

struct LabeledFact {
  std::string relation;
  std::string source;
  std::string target;
  int label;
};

struct SplitResult {
  /// Facts for path extraction: dev and test head facts removed.
  std::vector<SurfaceTriple> graph_triples;
  std::vector<LabeledFact> train, dev, test;
  std::vector<std::pair<HeadFact, Split>> assignment;
};

/// Partitions head facts per relation, removes dev/test facts from the graph
/// and draws target-corrupted negatives per split that avoid every true fact.
SplitResult split_facts(const SynthManifest& manifest, double train, double dev, double test,
                        std::size_t train_negatives_ratio, std::size_t negatives_ratio,
                        std::uint64_t seed);

/// Presets. `single_rule`: one KB rule over two relations. `multi_rule`: one
/// textual rule plus one KB chain rule per head. `zero_shot`: head pairs whose
/// rules draw on the same groups, with synonymous head relations.
SynthConfig single_rule_config(std::uint64_t seed = 1);
SynthConfig multi_rule_config(int heads = 24, std::uint64_t seed = 1);
SynthConfig zero_shot_config(int head_pairs = 12, std::uint64_t seed = 1);

/// Tab-separated, `#` comments:
///   entities<TAB>N          chains are per rule
///   relation<TAB>kb|textual<TAB>name
///   group<TAB>name<TAB>member...
///   rule<TAB>head<TAB>noise<TAB>chains<TAB>body...
///   key<TAB>value           for the remaining scalar fields
SynthConfig read_synth_config(std::istream& in);
void write_synth_config(std::ostream& out, const SynthConfig& cfg);

/// `relation<TAB>source<TAB>target<TAB>label`
void write_labeled_facts(std::ostream& out, const std::vector<LabeledFact>& facts);
std::vector<LabeledFact> read_labeled_facts(std::istream& in);
void write_triples(std::ostream& out, const std::vector<SurfaceTriple>& triples);
/// `key=value` lines documenting the config, rules and split assignment.
void write_manifest(std::ostream& out, const SynthConfig& cfg, const SynthManifest& manifest,
                    const SplitResult& split);

}  // namespace kbc
