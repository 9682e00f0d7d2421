#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "kbc/eval.hpp"
#include "kbc/util.hpp"

using namespace kbc;

namespace {

std::vector<RankedFact> from_order(const std::vector<int>& labels_in_score_order) {
  std::vector<RankedFact> out;
  const auto n = labels_in_score_order.size();
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({i, static_cast<double>(n - i), labels_in_score_order[i]});
  return out;
}

// Precision@k at every positive, by definition, on an explicit ordering.
double brute_ap(std::vector<RankedFact> xs) {
  std::stable_sort(xs.begin(), xs.end(), [](const RankedFact& a, const RankedFact& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  double sum = 0;
  int pos = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (xs[k].label != 1) continue;
    int hits = 0;
    for (std::size_t j = 0; j <= k; ++j) hits += xs[j].label;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    ++pos;
  }
  return sum / pos;
}

}  // namespace

TEST_CASE("average precision closed forms") {
  CHECK(average_precision(from_order({1, 0, 1})) == doctest::Approx((1 + 2.0 / 3) / 2));
  CHECK(average_precision(from_order({1, 1, 0, 0})) == 1.0);
  CHECK(average_precision(from_order({0, 0, 0, 0, 1})) == doctest::Approx(1.0 / 5));
  CHECK_THROWS_AS(average_precision(from_order({0, 0})), Error);
  std::vector<RankedFact> dup = {{1, 0.5, 1}, {1, 0.4, 0}};
  CHECK_THROWS_AS(average_precision(dup), Error);
  std::vector<RankedFact> nan = {{1, std::nan(""), 1}};
  CHECK_THROWS_AS(average_precision(nan), Error);
}

TEST_CASE("average precision equals brute force on every arrangement up to length 8") {
  Rng rng(5);
  for (std::size_t n = 1; n <= 8; ++n) {
    for (std::uint32_t mask = 1; mask < (1U << n); ++mask) {
      std::vector<RankedFact> xs;
      for (std::size_t i = 0; i < n; ++i)
        // Coarse scores so that ties occur.
        xs.push_back({(i * 7 + 3) % 11, static_cast<double>(rng.index(4)), (mask >> i) & 1U ? 1 : 0});
      CHECK(std::abs(average_precision(xs) - brute_ap(xs)) <= 1e-12);
    }
  }
}

TEST_CASE("ties are ordered by ascending id") {
  const std::vector<RankedFact> a = {{2, 1.0, 1}, {1, 1.0, 0}};
  const std::vector<RankedFact> b = {{1, 1.0, 1}, {2, 1.0, 0}};
  CHECK(average_precision(a) == 0.5);
  CHECK(average_precision(b) == 1.0);
}

TEST_CASE("mean average precision") {
  EvalRanking r1{"a", from_order({1, 0, 0, 0, 1})};  // (1 + 2/5)/2 = 0.7
  EvalRanking r2{"b", from_order({0, 1, 0, 0, 0})};  // 0.5
  const std::vector<EvalRanking> both = {r1, r2};
  CHECK(mean_average_precision(both) == doctest::Approx(0.6));
  CHECK(mean_average_precision(both, 4) == mean_average_precision(both, 1));
  CHECK(mean_average_precision(std::vector<EvalRanking>{r2}) == doctest::Approx(0.5));
}

TEST_CASE("average ranks share ties") {
  const std::vector<double> s = {0.9, 0.5, 0.1, 0.5};
  const auto r = average_ranks(s);
  CHECK(r == std::vector<double>{4, 2.5, 1, 2.5});
}

TEST_CASE("rank-sum ensemble") {
  std::vector<RankedFact> a = {{0, 0.9, 1}, {1, 0.5, 0}, {2, 0.1, 0}};
  std::vector<RankedFact> b = {{0, 0.7, 1}, {1, 0.1, 0}, {2, 0.3, 0}};
  const auto c = rank_sum_ensemble(a, b);
  REQUIRE(c.size() == 3);
  CHECK(c[0].score == 6);
  CHECK(c[1].score == 3);
  CHECK(c[2].score == 3);

  // Identical inputs keep the order; a constant model defers to the other.
  Rng rng(2);
  std::vector<RankedFact> x, k;
  for (std::uint64_t i = 0; i < 30; ++i) {
    x.push_back({i, rng.uniform(), static_cast<int>(i % 3 == 0)});
    k.push_back({i, 0.25, static_cast<int>(i % 3 == 0)});
  }
  const auto same = rank_sum_ensemble(x, x);
  const auto with_const = rank_sum_ensemble(x, k);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) {
      CHECK((same[i].score < same[j].score) == (x[i].score < x[j].score));
      CHECK((with_const[i].score < with_const[j].score) == (x[i].score < x[j].score));
    }
  CHECK(average_precision(same) == average_precision(x));

  // Input order does not matter; output follows a.
  std::vector<RankedFact> b_rev(b.rbegin(), b.rend());
  const auto c2 = rank_sum_ensemble(a, b_rev);
  for (std::size_t i = 0; i < 3; ++i) CHECK(c2[i].score == c[i].score);
  std::vector<RankedFact> bad = b;
  bad[1].label = 1;
  CHECK_THROWS_AS(rank_sum_ensemble(a, bad), Error);
  bad = b;
  bad[2].id = 9;
  CHECK_THROWS_AS(rank_sum_ensemble(a, bad), Error);
}

TEST_CASE("paired permutation test") {
  SUBCASE("identical lists") {
    const std::vector<double> a = {0.1, 0.5, 0.7};
    const auto t = paired_permutation_test(a, a);
    CHECK(t.p_value == 1.0);
    CHECK(t.exact);
  }
  SUBCASE("uniform margin over 10 pairs") {
    std::vector<double> a(10), b(10);
    for (int i = 0; i < 10; ++i) {
      b[i] = 0.1 * i;
      a[i] = b[i] + 0.05;
    }
    const auto t = paired_permutation_test(a, b);
    CHECK(t.p_value == doctest::Approx(2.0 / 1024).epsilon(1e-12));
    CHECK(t.mean_difference == doctest::Approx(0.05));
  }
  SUBCASE("exact p equals enumeration of sign patterns") {
    Rng rng(3);
    std::vector<double> a(9), b(9);
    for (int i = 0; i < 9; ++i) {
      a[i] = rng.uniform();
      b[i] = rng.uniform();
    }
    double obs = 0;
    for (int i = 0; i < 9; ++i) obs += a[i] - b[i];
    int hits = 0;
    for (int mask = 0; mask < 512; ++mask) {
      double s = 0;
      for (int i = 0; i < 9; ++i) s += ((mask >> i) & 1 ? -1 : 1) * (a[i] - b[i]);
      hits += std::abs(s) >= std::abs(obs) - 1e-12;
    }
    CHECK(paired_permutation_test(a, b).p_value == doctest::Approx(hits / 512.0));
  }
  SUBCASE("Monte Carlo mode") {
    std::vector<double> a(30), b(30);
    for (int i = 0; i < 30; ++i) {
      a[i] = 0.5 + 0.01 * (i % 3);
      b[i] = 0.5;
    }
    const auto t = paired_permutation_test(a, b, 2000, 4);
    CHECK_FALSE(t.exact);
    CHECK(t.permutations == 2000);
    CHECK(t.p_value < 0.01);
    CHECK(t.p_value >= 1.0 / 2001);
    CHECK(paired_permutation_test(a, b, 2000, 4).p_value == t.p_value);
  }
  SUBCASE("calibration under the null") {
    // Random sign noise: p should be roughly uniform.
    int below = 0;
    const int trials = 400;
    for (int s = 0; s < trials; ++s) {
      Rng rng(100 + s);
      std::vector<double> a(12), b(12);
      for (int i = 0; i < 12; ++i) {
        a[i] = rng.uniform();
        b[i] = rng.uniform();
      }
      below += paired_permutation_test(a, b).p_value < 0.2;
    }
    CHECK(below / double(trials) == doctest::Approx(0.2).epsilon(0.35));
  }
  CHECK_THROWS_AS(paired_permutation_test(std::vector<double>{1}, std::vector<double>{1, 2}), Error);
}

TEST_CASE("random scoring at a fixed positive rate gives MAP near that rate") {
  // 46 relations with AP averaged; expected AP of a random ranking is close to
  // the positive fraction when positives are plentiful.
  Rng rng(9);
  std::vector<EvalRanking> rs;
  for (int r = 0; r < 46; ++r) {
    EvalRanking er{"r" + std::to_string(r), {}};
    for (std::uint64_t i = 0; i < 1000; ++i)
      er.entries.push_back({i, rng.uniform(), i < 75 ? 1 : 0});
    rs.push_back(std::move(er));
  }
  CHECK(mean_average_precision(rs) == doctest::Approx(0.075).epsilon(0.1));
}

TEST_CASE("predictions and reports") {
  const std::vector<Prediction> rows = {{"/r", "a", "b", 1, 0.9},  {"/r", "a", "c", 0, 0.3},
                                        {"/s", "x", "y", 0, 0.8},  {"/s", "x", "z", 1, 0.4},
                                        {"/t", "u", "v", 0, 0.5}};
  std::stringstream buf;
  write_predictions(buf, rows);
  const auto back = read_predictions(buf);
  REQUIRE(back.size() == rows.size());
  CHECK(back[3].score == 0.4);
  CHECK(back[2].relation == "/s");
  const auto groups = group_predictions(back);
  REQUIRE(groups.size() == 3);
  CHECK(groups[1].relation == "/s");
  CHECK(groups[1].entries[1].id == 1);
  std::vector<std::string> skipped;
  const auto rep = evaluate(groups, 1, &skipped);
  CHECK(skipped == std::vector<std::string>{"/t"});
  REQUIRE(rep.relations.size() == 2);
  CHECK(rep.map == doctest::Approx(0.75));
  std::stringstream rec;
  write_report_records(rec, rep, Significance{"base", paired_permutation_test(std::vector<double>{1, 0.5}, std::vector<double>{0.5, 0.5})});
  const auto text = rec.str();
  CHECK(text.find("map=0.75\n") != std::string::npos);
  CHECK(text.find("ap./r=1\n") != std::string::npos);
  CHECK(text.find("significance.p_value=") != std::string::npos);
  std::stringstream tx;
  write_report_text(tx, rep);
  CHECK(tx.str().find("MAP") != std::string::npos);

  std::stringstream broken("/r\ta\tb\t1\n");
  CHECK_THROWS_AS(read_predictions(broken), Error);
}

TEST_CASE("compare_reports pairs relations by name") {
  EvalReport a{{{"/x", 0.9, 1, 1}, {"/y", 0.6, 1, 1}}, 0.75};
  EvalReport b{{{"/y", 0.5, 1, 1}, {"/x", 0.4, 1, 1}}, 0.45};
  const auto t = compare_reports(a, b, 100, 1);
  CHECK(t.pairs == 2);
  CHECK(t.mean_difference == doctest::Approx(0.3));
  EvalReport c{{{"/z", 0.5, 1, 1}, {"/x", 0.4, 1, 1}}, 0.45};
  CHECK_THROWS_AS(compare_reports(a, c, 100, 1), Error);
}
