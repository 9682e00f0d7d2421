#include "kbc/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "kbc/util.hpp"

namespace kbc {

double average_precision(std::span<const RankedFact> entries) {
  std::vector<const RankedFact*> order;
  order.reserve(entries.size());
  for (const auto& e : entries) {
    if (std::isnan(e.score)) throw Error("average_precision: NaN score");
    order.push_back(&e);
  }
  std::sort(order.begin(), order.end(), [](const RankedFact* x, const RankedFact* y) {
    if (x->score != y->score) return x->score > y->score;
    return x->id < y->id;
  });
  double sum = 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i]->label != 1) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  if (hits == 0) throw Error("average_precision: ranking has no positive");
  std::vector<std::uint64_t> ids;
  ids.reserve(entries.size());
  for (const auto& e : entries) ids.push_back(e.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw Error("average_precision: duplicate fact ids");
  return sum / static_cast<double>(hits);
}

double mean_average_precision(std::span<const EvalRanking> rankings, int workers) {
  if (rankings.empty()) throw Error("mean_average_precision: no rankings");
  std::vector<double> ap(rankings.size());
  parallel_for(rankings.size(), workers,
               [&](std::size_t i) { ap[i] = average_precision(rankings[i].entries); });
  double s = 0;
  for (double v : ap) s += v;
  return s / static_cast<double>(ap.size());
}

std::vector<double> average_ranks(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return scores[x] < scores[y]; });
  std::vector<double> ranks(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::vector<RankedFact> rank_sum_ensemble(std::span<const RankedFact> a,
                                          std::span<const RankedFact> b) {
  if (a.size() != b.size())
    throw Error("rank_sum_ensemble: inputs cover " + std::to_string(a.size()) + " and " +
                std::to_string(b.size()) + " facts");
  std::unordered_map<std::uint64_t, std::size_t> pos_b;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (!pos_b.emplace(b[i].id, i).second) throw Error("rank_sum_ensemble: duplicate fact id");
  std::vector<double> sa, sb(b.size());
  for (const auto& e : a) sa.push_back(e.score);
  std::vector<std::size_t> match(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto it = pos_b.find(a[i].id);
    if (it == pos_b.end())
      throw Error("rank_sum_ensemble: fact id " + std::to_string(a[i].id) + " missing from one input");
    if (b[it->second].label != a[i].label)
      throw Error("rank_sum_ensemble: labels disagree for fact id " + std::to_string(a[i].id));
    match[i] = it->second;
  }
  for (std::size_t i = 0; i < b.size(); ++i) sb[i] = b[i].score;
  const auto ra = average_ranks(sa);
  const auto rb = average_ranks(sb);
  std::vector<RankedFact> out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.push_back({a[i].id, ra[i] + rb[match[i]], a[i].label});
  return out;
}

PermutationTest paired_permutation_test(std::span<const double> a, std::span<const double> b,
                                        std::size_t permutations, std::uint64_t seed) {
  if (a.size() != b.size())
    throw Error("paired_permutation_test: lists of length " + std::to_string(a.size()) +
                " and " + std::to_string(b.size()));
  PermutationTest res;
  const std::size_t n = a.size();
  res.pairs = n;
  if (n == 0) return res;
  std::vector<double> d(n);
  double obs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = a[i] - b[i];
    obs += d[i];
  }
  res.mean_difference = obs / static_cast<double>(n);
  const double thresh = std::abs(obs) - 1e-12;
  std::uint64_t hits = 0;
  if (n <= 20) {
    const std::uint64_t total = 1ULL << n;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += (mask >> i & 1U) ? -d[i] : d[i];
      if (std::abs(s) >= thresh) ++hits;
    }
    res.p_value = static_cast<double>(hits) / static_cast<double>(total);
    return res;
  }
  if (permutations == 0) throw Error("paired_permutation_test: need at least one permutation");
  res.exact = false;
  res.permutations = permutations;
  Rng rng(seed, 11);
  for (std::size_t p = 0; p < permutations; ++p) {
    double s = 0;
    for (std::size_t i = 0; i < n; i += 64) {
      std::uint64_t bits = rng();
      for (std::size_t j = i; j < std::min(n, i + 64); ++j, bits >>= 1)
        s += (bits & 1U) ? -d[j] : d[j];
    }
    if (std::abs(s) >= thresh) ++hits;
  }
  res.p_value = static_cast<double>(1 + hits) / static_cast<double>(1 + permutations);
  return res;
}

// ---------------------------------------------------------------- file format

void write_predictions(std::ostream& out, std::span<const Prediction> rows) {
  for (const auto& r : rows)
    out << r.relation << '\t' << r.source << '\t' << r.target << '\t' << r.label << '\t'
        << format_double(r.score) << '\n';
}

std::vector<Prediction> read_predictions(std::istream& in) {
  std::vector<Prediction> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    const auto f = split(v, '\t');
    if (f.size() != 5) throw ParseError(n, "expected 5 tab-separated fields");
    Prediction p;
    p.relation = std::string(trim(f[0]));
    p.source = std::string(trim(f[1]));
    p.target = std::string(trim(f[2]));
    const auto ls = trim(f[3]);
    if (ls != "0" && ls != "1") throw ParseError(n, "label must be 0 or 1");
    p.label = ls == "1";
    const auto ss = trim(f[4]);
    auto [ptr, ec] = std::from_chars(ss.data(), ss.data() + ss.size(), p.score);
    if (ec != std::errc() || ptr != ss.data() + ss.size() || std::isnan(p.score))
      throw ParseError(n, "bad score '" + std::string(ss) + "'");
    rows.push_back(std::move(p));
  }
  return rows;
}

std::vector<EvalRanking> group_predictions(std::span<const Prediction> rows) {
  std::vector<EvalRanking> out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    auto [it, fresh] = index.emplace(r.relation, out.size());
    if (fresh) out.push_back({r.relation, {}});
    auto& ranking = out[it->second];
    ranking.entries.push_back({ranking.entries.size(), r.score, r.label});
  }
  return out;
}

EvalReport evaluate(std::span<const EvalRanking> rankings, int workers,
                    std::vector<std::string>* skipped) {
  std::vector<const EvalRanking*> usable;
  for (const auto& r : rankings) {
    const bool any = std::any_of(r.entries.begin(), r.entries.end(),
                                 [](const RankedFact& e) { return e.label == 1; });
    if (any)
      usable.push_back(&r);
    else if (skipped)
      skipped->push_back(r.relation);
  }
  if (usable.empty()) throw Error("evaluate: no relation has a positive test fact");
  EvalReport rep;
  rep.relations.resize(usable.size());
  parallel_for(usable.size(), workers, [&](std::size_t i) {
    const auto& r = *usable[i];
    auto& res = rep.relations[i];
    res.relation = r.relation;
    res.ap = average_precision(r.entries);
    res.positives = static_cast<std::size_t>(std::count_if(
        r.entries.begin(), r.entries.end(), [](const RankedFact& e) { return e.label == 1; }));
    res.negatives = r.entries.size() - res.positives;
  });
  double s = 0;
  for (const auto& r : rep.relations) s += r.ap;
  rep.map = s / static_cast<double>(rep.relations.size());
  return rep;
}

PermutationTest compare_reports(const EvalReport& a, const EvalReport& b,
                                std::size_t permutations, std::uint64_t seed) {
  std::unordered_map<std::string, double> ap_b;
  for (const auto& r : b.relations) ap_b.emplace(r.relation, r.ap);
  if (ap_b.size() != a.relations.size())
    throw Error("compare_reports: reports cover different relation sets");
  std::vector<double> xa, xb;
  for (const auto& r : a.relations) {
    auto it = ap_b.find(r.relation);
    if (it == ap_b.end()) throw Error("compare_reports: relation " + r.relation + " missing");
    xa.push_back(r.ap);
    xb.push_back(it->second);
  }
  return paired_permutation_test(xa, xb, permutations, seed);
}

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string test_label(const PermutationTest& t) {
  return t.exact ? "exact" : "monte-carlo " + std::to_string(t.permutations);
}

}  // namespace

void write_report_text(std::ostream& out, const EvalReport& report,
                       const std::optional<Significance>& sig) {
  std::size_t w = 8;
  for (const auto& r : report.relations) w = std::max(w, r.relation.size());
  out << std::left << std::setw(static_cast<int>(w)) << "relation" << std::right
      << std::setw(10) << "AP" << std::setw(10) << "pos" << std::setw(10) << "neg" << '\n';
  for (const auto& r : report.relations)
    out << std::left << std::setw(static_cast<int>(w)) << r.relation << std::right
        << std::setw(10) << fixed(r.ap, 4) << std::setw(10) << r.positives << std::setw(10)
        << r.negatives << '\n';
  out << std::left << std::setw(static_cast<int>(w)) << "MAP" << std::right << std::setw(10)
      << fixed(report.map, 4) << std::setw(10) << report.relations.size() << " relations\n";
  if (sig) {
    out << "\nsignificance: paired sign-flip permutation test on per-relation AP ("
        << test_label(sig->test) << ")\n";
    out << "  compared with   " << sig->baseline << '\n';
    out << "  paired relations " << sig->test.pairs << '\n';
    out << "  mean AP diff    " << fixed(sig->test.mean_difference, 4) << '\n';
    out << "  p-value         " << format_double(sig->test.p_value) << '\n';
  }
}

void write_report_records(std::ostream& out, const EvalReport& report,
                          const std::optional<Significance>& sig) {
  out << "map=" << format_double(report.map) << '\n';
  out << "relations=" << report.relations.size() << '\n';
  for (const auto& r : report.relations) {
    out << "ap." << r.relation << '=' << format_double(r.ap) << '\n';
    out << "positives." << r.relation << '=' << r.positives << '\n';
    out << "negatives." << r.relation << '=' << r.negatives << '\n';
  }
  if (sig) {
    out << "significance.test=paired-sign-flip-permutation\n";
    out << "significance.mode=" << (sig->test.exact ? "exact" : "monte-carlo") << '\n';
    out << "significance.baseline=" << sig->baseline << '\n';
    out << "significance.pairs=" << sig->test.pairs << '\n';
    out << "significance.mean_difference=" << format_double(sig->test.mean_difference) << '\n';
    out << "significance.p_value=" << format_double(sig->test.p_value) << '\n';
  }
}

}  // namespace kbc
