#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kbc {

struct RankedFact {
  std::uint64_t id;
  double score;
  int label;
};

/// Scored test facts of one relation.
struct EvalRanking {
  std::string relation;
  std::vector<RankedFact> entries;
};

/// Mean over positives of precision at the positive's rank. Entries are sorted
/// by descending score, equal scores by ascending fact id. Throws without a
/// positive or on duplicate ids.
double average_precision(std::span<const RankedFact> entries);
/// Unweighted mean of per-relation AP.
double mean_average_precision(std::span<const EvalRanking> rankings, int workers = 1);

/// Ranks 1..n in ascending score order; tied scores share their average rank.
std::vector<double> average_ranks(std::span<const double> scores);

/// Combined score rank_a + rank_b per fact, in the order of `a`. Both lists
/// must cover the same fact ids with the same labels.
std::vector<RankedFact> rank_sum_ensemble(std::span<const RankedFact> a,
                                          std::span<const RankedFact> b);

struct PermutationTest {
  double p_value = 1;
  double mean_difference = 0;  // mean of a - b
  std::size_t pairs = 0;
  bool exact = true;
  std::size_t permutations = 0;  // Monte Carlo draws; 0 when exact
};

/// Two-sided paired sign-flip permutation test on a - b. Every sign pattern is
/// enumerated for up to 20 pairs; otherwise `permutations` random patterns are
/// drawn and p = (1 + hits) / (1 + permutations).
PermutationTest paired_permutation_test(std::span<const double> a, std::span<const double> b,
                                        std::size_t permutations = 10000,
                                        std::uint64_t seed = 1);

// ---------------------------------------------------------------- file format

struct Prediction {
  std::string relation;
  std::string source;
  std::string target;
  int label;
  double score;
};

/// `relation<TAB>source<TAB>target<TAB>label<TAB>score`
void write_predictions(std::ostream& out, std::span<const Prediction> rows);
std::vector<Prediction> read_predictions(std::istream& in);

/// Groups rows by relation in first-appearance order. A fact's id is its row
/// ordinal within the relation.
std::vector<EvalRanking> group_predictions(std::span<const Prediction> rows);

struct RelationResult {
  std::string relation;
  double ap;
  std::size_t positives;
  std::size_t negatives;
};

struct EvalReport {
  std::vector<RelationResult> relations;
  double map = 0;
};

/// Relations without a positive are skipped (AP undefined) and reported by
/// name through `skipped`.
EvalReport evaluate(std::span<const EvalRanking> rankings, int workers = 1,
                    std::vector<std::string>* skipped = nullptr);

/// Pairs the per-relation AP of two reports by relation name; both must cover
/// the same relations.
PermutationTest compare_reports(const EvalReport& a, const EvalReport& b,
                                std::size_t permutations, std::uint64_t seed);

struct Significance {
  std::string baseline;  // label of the compared system
  PermutationTest test;
};

void write_report_text(std::ostream& out, const EvalReport& report,
                       const std::optional<Significance>& sig = std::nullopt);
/// `key=value` lines: `map=`, `relations=`, `ap.<relation>=`, `significance.*=`.
void write_report_records(std::ostream& out, const EvalReport& report,
                          const std::optional<Significance>& sig = std::nullopt);

}  // namespace kbc
