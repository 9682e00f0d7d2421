#include "kbc/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "kbc/util.hpp"

namespace kbc {

namespace {

std::string entity_name(int i) { return "e" + std::to_string(i); }

bool is_group_ref(std::string_view s) { return !s.empty() && s.front() == '@'; }

double parse_double(std::string_view s, std::size_t line) {
  double v = 0;
  s = trim(s);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ParseError(line, "bad number '" + std::string(s) + "'");
  return v;
}

long long parse_int(std::string_view s, std::size_t line) {
  long long v = 0;
  s = trim(s);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ParseError(line, "bad integer '" + std::string(s) + "'");
  return v;
}

std::vector<double> random_unit(Rng& rng, int dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0;
  while (norm == 0) {
    norm = 0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::vector<double> perturb(const std::vector<double>& dir, double sigma, Rng& rng) {
  auto v = dir;
  for (auto& x : v) x += sigma * rng.normal();
  return v;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_entities < 2) throw Error("synth: need at least 2 entities");
  std::unordered_set<std::string> rels;
  for (const auto& r : relations) {
    if (trim(r.name).empty()) throw Error("synth: empty relation name");
    if (!rels.insert(r.name).second) throw Error("synth: duplicate relation " + r.name);
    const bool slash = r.name.front() == '/';
    if (slash != (r.kind == RelationKind::kb))
      throw Error("synth: relation " + r.name +
                  (slash ? " looks like a KB relation but is declared textual"
                         : " is declared kb but is not slash-prefixed"));
  }
  std::unordered_map<std::string, const SynonymGroup*> groups;
  for (const auto& g : synonym_groups) {
    if (!groups.emplace(g.name, &g).second) throw Error("synth: duplicate group " + g.name);
    if (g.members.empty()) throw Error("synth: group " + g.name + " has no members");
    for (const auto& m : g.members)
      if (!rels.count(m)) throw Error("synth: group " + g.name + " uses undeclared relation " + m);
  }
  std::unordered_set<std::string> heads, body_rels;
  for (const auto& rule : rules) {
    if (!rels.count(rule.head)) throw Error("synth: undeclared head relation " + rule.head);
    heads.insert(rule.head);
    if (rule.body.size() < 2 || rule.body.size() > 4)
      throw Error("synth: rule bodies must have 2 to 4 relations");
    if (!(rule.noise >= 0 && rule.noise < 1)) throw Error("synth: noise must be in [0, 1)");
    if (rule.chains < 0) throw Error("synth: chain count must be >= 0");
    if (static_cast<std::size_t>(num_entities) < rule.body.size() + 1)
      throw Error("synth: too few entities for a rule chain");
    for (const auto& b : rule.body) {
      if (is_group_ref(b)) {
        auto it = groups.find(b.substr(1));
        if (it == groups.end()) throw Error("synth: unknown group " + b);
        body_rels.insert(it->second->members.begin(), it->second->members.end());
      } else {
        if (!rels.count(b)) throw Error("synth: undeclared body relation " + b);
        body_rels.insert(b);
      }
    }
  }
  for (const auto& h : heads)
    if (body_rels.count(h)) throw Error("synth: head relation " + h + " also appears in a rule body");
  if (distractor_factor < 0) throw Error("synth: distractor factor must be >= 0");
  if (vector_dim < 1) throw Error("synth: vector dimension must be >= 1");
  if (vector_noise < 0) throw Error("synth: vector noise must be >= 0");
  if (negatives_ratio < 1) throw Error("synth: negatives ratio must be >= 1");
  for (double f : {train_fraction, dev_fraction, test_fraction})
    if (f < 0 || f > 1) throw Error("synth: split fractions must be in [0, 1]");
  if (std::abs(train_fraction + dev_fraction + test_fraction - 1) > 1e-9)
    throw Error("synth: split fractions must sum to 1");
}

SynthManifest generate_synthetic_kb(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, 21);
  std::unordered_map<std::string, const SynonymGroup*> groups;
  for (const auto& g : cfg.synonym_groups) groups.emplace(g.name, &g);

  SynthManifest m;
  m.rules = cfg.rules;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  auto add = [&](std::string s, const std::string& r, std::string t) {
    if (seen.emplace(s, r, t).second) m.triples.push_back({std::move(s), r, std::move(t)});
  };

  std::unordered_set<std::string> heads;
  for (const auto& rule : cfg.rules) heads.insert(rule.head);
  // relation -> source -> targets, over body and distractor edges.
  std::unordered_map<std::string, std::map<int, std::set<int>>> adj;
  auto add_edge = [&](int s, const std::string& r, int t) {
    adj[r][s].insert(t);
    add(entity_name(s), r, entity_name(t));
  };

  std::size_t rule_edges = 0;
  std::vector<int> chain;
  for (const auto& rule : cfg.rules) {
    const std::size_t len = rule.body.size();
    for (int c = 0; c < rule.chains; ++c) {
      chain.clear();
      while (chain.size() < len + 1) {
        const int e = static_cast<int>(rng.index(static_cast<std::size_t>(cfg.num_entities)));
        if (std::find(chain.begin(), chain.end(), e) == chain.end()) chain.push_back(e);
      }
      for (std::size_t i = 0; i < len; ++i) {
        const auto& b = rule.body[i];
        const std::string* rel = &b;
        if (is_group_ref(b)) {
          const auto& members = groups.at(b.substr(1))->members;
          rel = &members[rng.index(members.size())];
        }
        add_edge(chain[i], *rel, chain[i + 1]);
        ++rule_edges;
      }
    }
  }

  std::vector<const std::string*> free_rels;
  for (const auto& r : cfg.relations)
    if (!heads.count(r.name)) free_rels.push_back(&r.name);
  const auto distractors =
      static_cast<std::size_t>(std::llround(cfg.distractor_factor * static_cast<double>(rule_edges)));
  if (!free_rels.empty()) {
    const auto n = static_cast<std::size_t>(cfg.num_entities);
    for (std::size_t i = 0; i < distractors; ++i) {
      const auto& rel = *free_rels[rng.index(free_rels.size())];
      const auto s = rng.index(n);
      auto t = rng.index(n - 1);
      if (t >= s) ++t;
      add_edge(static_cast<int>(s), rel, static_cast<int>(t));
    }
  }

  // Rules hold over the whole graph: every pair joined by a body realization,
  // planted or accidental, gets the head fact unless the noise drops it.
  std::set<std::tuple<std::string, int, int>> decided;
  for (const auto& rule : cfg.rules) {
    std::vector<std::vector<const std::string*>> steps;
    for (const auto& b : rule.body) {
      std::vector<const std::string*> opts;
      if (is_group_ref(b))
        for (const auto& mbr : groups.at(b.substr(1))->members) opts.push_back(&mbr);
      else
        opts.push_back(&b);
      steps.push_back(std::move(opts));
    }
    std::set<int> sources;
    for (const auto* r : steps[0])
      if (auto it = adj.find(*r); it != adj.end())
        for (const auto& [src, tgts] : it->second) sources.insert(src);
    for (int src : sources) {
      std::set<int> frontier{src};
      for (const auto& opts : steps) {
        std::set<int> next;
        for (int e : frontier)
          for (const auto* r : opts) {
            auto it = adj.find(*r);
            if (it == adj.end()) continue;
            auto jt = it->second.find(e);
            if (jt != it->second.end()) next.insert(jt->second.begin(), jt->second.end());
          }
        frontier.swap(next);
      }
      for (int t : frontier) {
        if (t == src || !decided.emplace(rule.head, src, t).second) continue;
        if (!rng.bernoulli(1 - rule.noise)) continue;
        const auto sn = entity_name(src), tn = entity_name(t);
        add(sn, rule.head, tn);
        m.head_facts.push_back({rule.head, sn, tn});
      }
    }
  }

  // Planted geometry: one direction per group (and one per inverse group),
  // members perturbed around it; ungrouped relations get their own direction.
  Rng vrng(cfg.seed, 22);
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> dirs;
  std::unordered_map<std::string, std::string> group_of;
  for (const auto& g : cfg.synonym_groups) {
    auto fwd = random_unit(vrng, cfg.vector_dim);
    auto inv = random_unit(vrng, cfg.vector_dim);
    dirs.emplace(g.name, std::make_pair(std::move(fwd), std::move(inv)));
    for (const auto& mbr : g.members) group_of.emplace(mbr, g.name);
  }
  m.vectors.dim = cfg.vector_dim;
  for (const auto& r : cfg.relations) {
    std::vector<double> fwd, inv;
    if (auto it = group_of.find(r.name); it != group_of.end()) {
      const auto& d = dirs.at(it->second);
      fwd = perturb(d.first, cfg.vector_noise, vrng);
      inv = perturb(d.second, cfg.vector_noise, vrng);
    } else {
      fwd = random_unit(vrng, cfg.vector_dim);
      inv = random_unit(vrng, cfg.vector_dim);
    }
    const auto name = canonical_relation_name(r.name);
    m.vectors.rows.emplace_back(name, std::move(fwd));
    m.vectors.rows.emplace_back(name + std::string(kInverseSuffix), std::move(inv));
  }
  return m;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::dev:
      return "dev";
    case Split::test:
      return "test";
  }
  return "?";
}

SplitResult split_facts(const SynthManifest& manifest, double train, double dev, double test,
                        std::size_t train_negatives_ratio, std::size_t negatives_ratio,
                        std::uint64_t seed) {
  for (double f : {train, dev, test})
    if (f < 0 || f > 1) throw Error("split_facts: fractions must be in [0, 1]");
  if (std::abs(train + dev + test - 1) > 1e-9) throw Error("split_facts: fractions must sum to 1");

  std::vector<std::string> order;
  std::map<std::string, std::vector<const HeadFact*>> by_rel;
  for (const auto& f : manifest.head_facts) {
    auto& v = by_rel[f.relation];
    if (v.empty()) order.push_back(f.relation);
    v.push_back(&f);
  }
  // Truth and range per relation, hidden facts included.
  std::map<std::string, std::set<std::pair<std::string, std::string>>> truth;
  std::map<std::string, std::vector<std::string>> range;
  for (const auto& t : manifest.triples) truth[t.relation].emplace(t.subject, t.object);
  for (const auto& rel : order) {
    std::set<std::string> r;
    for (const auto& [s, o] : truth[rel]) r.insert(o);
    range[rel].assign(r.begin(), r.end());
  }

  SplitResult out;
  std::set<std::tuple<std::string, std::string, std::string>> hidden;
  Rng rng(seed, 31);
  for (const auto& rel : order) {
    auto facts = by_rel[rel];
    rng.shuffle(facts);
    const std::size_t n = facts.size();
    const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(train * n)));
    const auto n_dev =
        std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(dev * n)));
    const auto& rg = range[rel];
    const auto& tr = truth[rel];
    std::set<std::pair<std::string, std::string>> chosen;

    auto negatives_for = [&](const HeadFact& f, std::size_t ratio, std::vector<LabeledFact>& dst) {
      std::size_t drawn = 0;
      auto ok = [&](const std::string& t) {
        return t != f.source && !tr.count({f.source, t}) && !chosen.count({f.source, t});
      };
      for (int attempt = 0; attempt < 32 * static_cast<int>(ratio) && drawn < ratio; ++attempt) {
        const auto& t = rg[rng.index(rg.size())];
        if (!ok(t)) continue;
        chosen.emplace(f.source, t);
        dst.push_back({rel, f.source, t, 0});
        ++drawn;
      }
      for (std::size_t i = 0; i < rg.size() && drawn < ratio; ++i) {
        if (!ok(rg[i])) continue;
        chosen.emplace(f.source, rg[i]);
        dst.push_back({rel, f.source, rg[i], 0});
        ++drawn;
      }
    };

    for (std::size_t i = 0; i < n; ++i) {
      const auto& f = *facts[i];
      const Split s = i < n_train ? Split::train : i < n_train + n_dev ? Split::dev : Split::test;
      out.assignment.emplace_back(f, s);
      auto& dst = s == Split::train ? out.train : s == Split::dev ? out.dev : out.test;
      dst.push_back({rel, f.source, f.target, 1});
      negatives_for(f, s == Split::train ? train_negatives_ratio : negatives_ratio, dst);
      if (s != Split::train) hidden.emplace(f.relation, f.source, f.target);
    }
  }
  for (const auto& t : manifest.triples)
    if (!hidden.count({t.relation, t.subject, t.object})) out.graph_triples.push_back(t);
  return out;
}

// -------------------------------------------------------------------- presets

SynthConfig single_rule_config(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.num_entities = 1000;
  for (const char* r : {"/synth/r1", "/synth/r2", "/synth/delta"})
    cfg.relations.push_back({r, RelationKind::kb});
  for (int i = 0; i < 8; ++i)
    cfg.relations.push_back({"/synth/noise" + std::to_string(i), RelationKind::kb});
  cfg.rules.push_back({{"/synth/r1", "/synth/r2"}, "/synth/delta", 0.0, 200});
  cfg.train_fraction = 2.0 / 3;
  cfg.dev_fraction = 0;
  cfg.test_fraction = 1.0 / 3;
  cfg.train_negatives_ratio = 1;
  cfg.negatives_ratio = 10;
  return cfg;
}

namespace {

void add_textual_group(SynthConfig& cfg, const std::string& group, int members) {
  SynonymGroup g{group, {}};
  for (int k = 0; k < members; ++k) {
    auto name = group + " v" + std::to_string(k);
    cfg.relations.push_back({name, RelationKind::textual});
    g.members.push_back(std::move(name));
  }
  cfg.synonym_groups.push_back(std::move(g));
}

}  // namespace

SynthConfig multi_rule_config(int heads, std::uint64_t seed) {
  if (heads < 1) throw Error("multi_rule_config: need at least one head");
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.num_entities = 8000;
  for (int i = 0; i < 8; ++i)
    cfg.relations.push_back({"/synth/noise" + std::to_string(i), RelationKind::kb});
  for (int h = 0; h < heads; ++h) {
    const auto head = "/synth/head" + std::to_string(h);
    cfg.relations.push_back({head, RelationKind::kb});
    // Textual rule: many synonymous surface paths, few instances each.
    SynthRule textual{{}, head, 0.0, 40};
    for (int j = 0; j < 3; ++j) {
      const auto group = "t" + std::to_string(h) + "_" + std::to_string(j);
      add_textual_group(cfg, group, 6);
      textual.body.push_back("@" + group);
    }
    cfg.rules.push_back(std::move(textual));
    // A long fixed KB chain with its own relations.
    SynthRule chain{{}, head, 0.0, 15};
    for (int j = 0; j < 4; ++j) {
      const auto r = "/synth/k" + std::to_string(h) + "_" + std::to_string(j);
      cfg.relations.push_back({r, RelationKind::kb});
      chain.body.push_back(r);
    }
    cfg.rules.push_back(std::move(chain));
  }
  cfg.train_fraction = 0.5;
  cfg.dev_fraction = 0;
  cfg.test_fraction = 0.5;
  cfg.train_negatives_ratio = 4;
  return cfg;
}

SynthConfig zero_shot_config(int head_pairs, std::uint64_t seed) {
  if (head_pairs < 1) throw Error("zero_shot_config: need at least one head pair");
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.num_entities = 2000;
  for (int i = 0; i < 8; ++i)
    cfg.relations.push_back({"/synth/noise" + std::to_string(i), RelationKind::kb});
  for (int h = 0; h < head_pairs; ++h) {
    const auto a = "/synth/a" + std::to_string(h), b = "/synth/b" + std::to_string(h);
    cfg.relations.push_back({a, RelationKind::kb});
    cfg.relations.push_back({b, RelationKind::kb});
    cfg.synonym_groups.push_back({"head" + std::to_string(h), {a, b}});
    std::vector<std::string> body;
    for (int j = 0; j < 2; ++j) {
      const auto group = "z" + std::to_string(h) + "_" + std::to_string(j);
      add_textual_group(cfg, group, 4);
      body.push_back("@" + group);
    }
    cfg.rules.push_back({body, a, 0.0, 60});
    cfg.rules.push_back({body, b, 0.0, 60});
  }
  cfg.train_fraction = 0.5;
  cfg.dev_fraction = 0;
  cfg.test_fraction = 0.5;
  return cfg;
}

// ---------------------------------------------------------------- file format

SynthConfig read_synth_config(std::istream& in) {
  SynthConfig cfg;
  cfg.relations.clear();
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    std::vector<std::string_view> f;
    for (auto x : split(v, '\t')) f.push_back(trim(x));
    const auto key = f[0];
    auto need = [&](std::size_t k) {
      if (f.size() < k) throw ParseError(n, "too few fields for '" + std::string(key) + "'");
    };
    if (key == "relation") {
      need(3);
      RelationKind kind;
      if (f[1] == "kb")
        kind = RelationKind::kb;
      else if (f[1] == "textual")
        kind = RelationKind::textual;
      else
        throw ParseError(n, "relation kind must be kb or textual");
      cfg.relations.push_back({std::string(f[2]), kind});
    } else if (key == "group") {
      need(3);
      SynonymGroup g{std::string(f[1]), {}};
      for (std::size_t i = 2; i < f.size(); ++i) g.members.emplace_back(f[i]);
      cfg.synonym_groups.push_back(std::move(g));
    } else if (key == "rule") {
      need(5);
      SynthRule r;
      r.head = std::string(f[1]);
      r.noise = parse_double(f[2], n);
      r.chains = static_cast<int>(parse_int(f[3], n));
      for (std::size_t i = 4; i < f.size(); ++i) r.body.emplace_back(f[i]);
      cfg.rules.push_back(std::move(r));
    } else {
      need(2);
      if (f.size() != 2) throw ParseError(n, "expected key<TAB>value");
      if (key == "entities")
        cfg.num_entities = static_cast<int>(parse_int(f[1], n));
      else if (key == "distractor_factor")
        cfg.distractor_factor = parse_double(f[1], n);
      else if (key == "vector_dim")
        cfg.vector_dim = static_cast<int>(parse_int(f[1], n));
      else if (key == "vector_noise")
        cfg.vector_noise = parse_double(f[1], n);
      else if (key == "train_negatives_ratio")
        cfg.train_negatives_ratio = static_cast<std::size_t>(parse_int(f[1], n));
      else if (key == "negatives_ratio")
        cfg.negatives_ratio = static_cast<std::size_t>(parse_int(f[1], n));
      else if (key == "train_fraction")
        cfg.train_fraction = parse_double(f[1], n);
      else if (key == "dev_fraction")
        cfg.dev_fraction = parse_double(f[1], n);
      else if (key == "test_fraction")
        cfg.test_fraction = parse_double(f[1], n);
      else if (key == "seed")
        cfg.seed = static_cast<std::uint64_t>(parse_int(f[1], n));
      else
        throw ParseError(n, "unknown key '" + std::string(key) + "'");
    }
  }
  return cfg;
}

void write_synth_config(std::ostream& out, const SynthConfig& cfg) {
  out << "entities\t" << cfg.num_entities << '\n';
  out << "distractor_factor\t" << format_double(cfg.distractor_factor) << '\n';
  out << "vector_dim\t" << cfg.vector_dim << '\n';
  out << "vector_noise\t" << format_double(cfg.vector_noise) << '\n';
  out << "train_negatives_ratio\t" << cfg.train_negatives_ratio << '\n';
  out << "negatives_ratio\t" << cfg.negatives_ratio << '\n';
  out << "train_fraction\t" << format_double(cfg.train_fraction) << '\n';
  out << "dev_fraction\t" << format_double(cfg.dev_fraction) << '\n';
  out << "test_fraction\t" << format_double(cfg.test_fraction) << '\n';
  out << "seed\t" << cfg.seed << '\n';
  for (const auto& r : cfg.relations)
    out << "relation\t" << (r.kind == RelationKind::kb ? "kb" : "textual") << '\t' << r.name
        << '\n';
  for (const auto& g : cfg.synonym_groups) {
    out << "group\t" << g.name;
    for (const auto& m : g.members) out << '\t' << m;
    out << '\n';
  }
  for (const auto& r : cfg.rules) {
    out << "rule\t" << r.head << '\t' << format_double(r.noise) << '\t' << r.chains;
    for (const auto& b : r.body) out << '\t' << b;
    out << '\n';
  }
}

void write_labeled_facts(std::ostream& out, const std::vector<LabeledFact>& facts) {
  for (const auto& f : facts)
    out << f.relation << '\t' << f.source << '\t' << f.target << '\t' << f.label << '\n';
}

std::vector<LabeledFact> read_labeled_facts(std::istream& in) {
  std::vector<LabeledFact> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    const auto f = split(v, '\t');
    if (f.size() != 3 && f.size() != 4)
      throw ParseError(n, "expected relation<TAB>source<TAB>target[<TAB>label]");
    LabeledFact lf{std::string(trim(f[0])), std::string(trim(f[1])), std::string(trim(f[2])), -1};
    if (f.size() == 4) {
      const auto l = trim(f[3]);
      if (l != "0" && l != "1") throw ParseError(n, "label must be 0 or 1");
      lf.label = l == "1";
    }
    out.push_back(std::move(lf));
  }
  return out;
}

void write_triples(std::ostream& out, const std::vector<SurfaceTriple>& triples) {
  for (const auto& t : triples) out << t.subject << '\t' << t.relation << '\t' << t.object << '\n';
}

void write_manifest(std::ostream& out, const SynthConfig& cfg, const SynthManifest& manifest,
                    const SplitResult& split) {
  out << "seed=" << cfg.seed << '\n';
  out << "entities=" << cfg.num_entities << '\n';
  out << "triples=" << manifest.triples.size() << '\n';
  out << "graph_triples=" << split.graph_triples.size() << '\n';
  out << "head_facts=" << manifest.head_facts.size() << '\n';
  out << "vector_dim=" << manifest.vectors.dim << '\n';
  for (const auto& r : manifest.rules) {
    out << "rule=" << r.head << " <=";
    for (const auto& b : r.body) out << ' ' << b;
    out << " noise=" << format_double(r.noise) << " chains=" << r.chains << '\n';
  }
  for (const auto& g : cfg.synonym_groups) {
    out << "group=" << g.name << ':';
    for (std::size_t i = 0; i < g.members.size(); ++i) out << (i ? "|" : "") << g.members[i];
    out << '\n';
  }
  for (const char* name : {"train", "dev", "test"}) {
    const auto& v = std::string(name) == "train" ? split.train
                    : std::string(name) == "dev" ? split.dev
                                                 : split.test;
    const auto pos = std::count_if(v.begin(), v.end(), [](const LabeledFact& f) { return f.label == 1; });
    out << "split." << name << ".positives=" << pos << '\n';
    out << "split." << name << ".negatives=" << v.size() - static_cast<std::size_t>(pos) << '\n';
  }
  for (const auto& [f, s] : split.assignment)
    out << "fact=" << split_name(s) << '\t' << f.relation << '\t' << f.source << '\t' << f.target
        << '\n';
}

}  // namespace kbc
