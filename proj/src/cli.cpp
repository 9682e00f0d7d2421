#include "kbc/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "kbc/classifier.hpp"
#include "kbc/eval.hpp"
#include "kbc/graph.hpp"
#include "kbc/paths.hpp"
#include "kbc/rnn.hpp"
#include "kbc/synth.hpp"
#include "kbc/util.hpp"

namespace kbc::cli {
namespace {

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error("cannot open " + path);
  return in;
}

// Splits the flat config file into `--key=value` tokens.
std::vector<std::string> config_tokens(const std::string& path) {
  auto in = open_in(path);
  std::vector<std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) throw ParseError(n, path + ": expected key=value");
    auto key = trim(v.substr(0, eq));
    const auto value = trim(v.substr(eq + 1));
    while (key.starts_with('-')) key.remove_prefix(1);
    if (key.empty()) throw ParseError(n, path + ": empty key");
    out.push_back("--" + std::string(key) + "=" + std::string(value));
  }
  return out;
}

// Moves `--config FILE` contents in front of the explicit flags so that flags
// win under the take-last policy.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::vector<std::string> rest;
  std::optional<std::string> config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a == "--config") {
      if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a file");
      config = args[++i];
    } else if (a.starts_with("--config=")) {
      config = a.substr(9);
    } else {
      rest.push_back(a);
    }
  }
  std::vector<std::string> out{args[0]};
  if (config)
    for (auto& t : config_tokens(*config)) out.push_back(std::move(t));
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

void add_config_flag(CLI::App* sub) {
  // Consumed by expand_config; registered so --help lists it.
  sub->add_option("--config", "flat key=value file of flag defaults");
}

void result(std::ostream& out, const std::string& cmd,
            const std::vector<std::pair<std::string, std::string>>& fields) {
  out << "RESULT\t" << cmd;
  for (const auto& [k, v] : fields) out << '\t' << k << '=' << v;
  out << '\n';
}

std::string num(double v) { return format_double(v); }
std::string num(std::size_t v) { return std::to_string(v); }

KBGraph load_graph(const std::string& path) {
  auto in = open_in(path, true);
  return KBGraph::load(in);
}

// ------------------------------------------------------------------- ingest

struct IngestArgs {
  std::string triples, out;
  std::size_t min_textual_freq = 50;
};

void ingest(const IngestArgs& a, std::ostream& out) {
  auto in = open_in(a.triples);
  const auto triples = read_triples(in);
  BuildOptions opts;
  opts.min_textual_freq = a.min_textual_freq;
  BuildStats stats;
  const auto g = build_graph(triples, opts, &stats);
  write_file_atomic(a.out, [&](std::ostream& o) { g.save(o); }, true);
  result(out, "ingest",
         {{"entities", num(g.entity_count())},
          {"relations", num(g.relations().size() / 2)},
          {"edges", num(g.edge_count())},
          {"input", num(stats.input_triples)},
          {"dropped_type", num(stats.dropped_type_facts)},
          {"dropped_rare_textual", num(stats.dropped_rare_textual)}});
}

// -------------------------------------------------------------------- synth

struct SynthArgs {
  std::string preset = "single-rule";
  std::string spec;
  std::string out_dir;
  std::uint64_t seed = 1;
  int heads = 0;
  int entities = 0;
  std::size_t train_negatives_ratio = 0;
  std::size_t negatives_ratio = 0;
};

void synth(const SynthArgs& a, std::ostream& out) {
  SynthConfig cfg;
  if (!a.spec.empty()) {
    auto in = open_in(a.spec);
    cfg = read_synth_config(in);
    cfg.seed = a.seed;
  } else if (a.preset == "single-rule") {
    cfg = single_rule_config(a.seed);
  } else if (a.preset == "multi-rule") {
    cfg = a.heads > 0 ? multi_rule_config(a.heads, a.seed) : multi_rule_config(24, a.seed);
  } else {
    cfg = a.heads > 0 ? zero_shot_config(a.heads, a.seed) : zero_shot_config(12, a.seed);
  }
  if (a.entities > 0) cfg.num_entities = a.entities;
  if (a.train_negatives_ratio > 0) cfg.train_negatives_ratio = a.train_negatives_ratio;
  if (a.negatives_ratio > 0) cfg.negatives_ratio = a.negatives_ratio;
  cfg.validate();

  const auto manifest = generate_synthetic_kb(cfg);
  const auto split = split_facts(manifest, cfg.train_fraction, cfg.dev_fraction,
                                 cfg.test_fraction, cfg.train_negatives_ratio,
                                 cfg.negatives_ratio, cfg.seed);
  namespace fs = std::filesystem;
  fs::create_directories(a.out_dir);
  const auto file = [&](const char* name) { return (fs::path(a.out_dir) / name).string(); };
  write_file_atomic(file("triples.tsv"),
                    [&](std::ostream& o) { write_triples(o, split.graph_triples); });
  write_file_atomic(file("train.tsv"), [&](std::ostream& o) { write_labeled_facts(o, split.train); });
  write_file_atomic(file("dev.tsv"), [&](std::ostream& o) { write_labeled_facts(o, split.dev); });
  write_file_atomic(file("test.tsv"), [&](std::ostream& o) { write_labeled_facts(o, split.test); });
  write_file_atomic(file("vectors.txt"),
                    [&](std::ostream& o) { write_relation_vectors(o, manifest.vectors); });
  write_file_atomic(file("manifest.txt"),
                    [&](std::ostream& o) { write_manifest(o, cfg, manifest, split); });
  write_file_atomic(file("config.tsv"), [&](std::ostream& o) { write_synth_config(o, cfg); });
  result(out, "synth",
         {{"triples", num(split.graph_triples.size())},
          {"head_facts", num(manifest.head_facts.size())},
          {"train", num(split.train.size())},
          {"dev", num(split.dev.size())},
          {"test", num(split.test.size())}});
}

// ------------------------------------------------------------------ extract

struct ExtractArgs {
  std::string graph, pairs, out, vocab_out;
  WalkConfig walk;
  std::size_t negatives_ratio = 0;
  bool keep_empty = false;
  std::string cluster_vectors, cluster_out;
  int clusters = 25;
  int cluster_iterations = 100;
  int workers = 1;
};

void extract(const ExtractArgs& a, std::ostream& out, std::ostream& err) {
  a.walk.validate();
  KBGraph graph = load_graph(a.graph);
  if (!a.cluster_vectors.empty()) {
    auto in = open_in(a.cluster_vectors);
    RelationTable rels = graph.relations();
    VectorTable table;
    for (auto& [r, v] : resolve_vectors(read_relation_vectors(in), rels))
      if (graph.relations().contains(r)) table.emplace(r, std::move(v));
    const auto assignment =
        cluster_relations(graph.relations(), table, a.clusters, a.cluster_iterations, a.walk.seed);
    if (!a.cluster_out.empty())
      write_file_atomic(a.cluster_out, [&](std::ostream& o) {
        write_cluster_assignment(o, assignment, graph.relations());
      });
    graph = clusterize_graph(graph, assignment);
  }

  auto in = open_in(a.pairs);
  const auto facts = read_labeled_facts(in);
  // Relations in first-appearance order.
  std::vector<RelationId> order;
  std::map<RelationId, std::vector<LabeledPair>> labeled;
  std::map<RelationId, std::vector<EntityPair>> unlabeled;
  std::size_t skipped = 0;
  for (const auto& f : facts) {
    const auto name = canonical_relation_name(f.relation);
    const auto rel = graph.relations().find(name);
    if (!rel || RelationTable::is_inverse(*rel)) throw Error("relation not in graph: " + name);
    const auto s = graph.entities().find(f.source), t = graph.entities().find(f.target);
    if (!s || !t) {
      ++skipped;
      continue;
    }
    if (!labeled.count(*rel) && !unlabeled.count(*rel)) order.push_back(*rel);
    labeled[*rel];
    if (f.label < 0)
      unlabeled[*rel].push_back({*s, *t});
    else
      labeled[*rel].push_back({{*s, *t}, f.label});
  }
  if (skipped) err << "extract: skipped " << skipped << " facts with unknown entities\n";

  std::vector<PathDataset> datasets;
  std::size_t exhausted = 0;
  for (RelationId rel : order) {
    auto pairs = labeled[rel];
    if (auto it = unlabeled.find(rel); it != unlabeled.end()) {
      for (const auto& p : it->second) pairs.push_back({p, 1});
      if (a.negatives_ratio > 0) {
        Rng rng(mix_seed(a.walk.seed, rel), ~std::uint64_t{0});
        const auto neg = sample_negatives(graph, rel, it->second, a.negatives_ratio, rng);
        if (neg.exhausted) ++exhausted;
        for (const auto& p : neg.pairs) pairs.push_back({p, 0});
      }
    }
    datasets.push_back(extract_dataset(graph, rel, pairs, a.walk, a.workers, a.keep_empty));
  }
  if (exhausted) err << "extract: negative pool exhausted for " << exhausted << " relations\n";

  write_file_atomic(a.out, [&](std::ostream& o) {
    write_path_records(o, datasets, graph.entities(), graph.relations());
  });
  const auto vocab_out = a.vocab_out.empty() ? a.out + ".vocab" : a.vocab_out;
  write_file_atomic(vocab_out,
                    [&](std::ostream& o) { write_path_vocabulary(o, datasets, graph.relations()); });
  std::size_t instances = 0, types = 0;
  for (const auto& ds : datasets) {
    instances += ds.instances.size();
    types += ds.vocabulary.size();
  }
  result(out, "extract",
         {{"relations", num(datasets.size())},
          {"instances", num(instances)},
          {"path_types", num(types)}});
}

// -------------------------------------------------------------------- train

const std::vector<std::string> kModels = {"rnn", "rnn-random", "add",        "zero-shot",
                                          "pra", "pra-b",      "cluster-pra", "cluster-pra-b"};

struct TrainArgs {
  std::string model, data, out, vectors;
  std::size_t top_paths = 0;
  TrainConfig train;
  int workers = 1;
};

bool is_logreg_model(const std::string& m) { return m.find("pra") != std::string::npos; }

void train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  a.train.validate();
  auto in = open_in(a.data);
  auto data = read_path_records(in);
  if (data.datasets.empty()) throw Error("no datasets in " + a.data);
  if (a.top_paths > 0)
    for (auto& ds : data.datasets) ds = top_k_paths(ds, a.top_paths);

  if (a.model.starts_with("cluster-")) {
    bool clustered = false;
    for (RelationId r = 0; r < data.relations.size(); r += 2)
      clustered |= data.relations.name(r).starts_with(cluster_relation_name(0).substr(0, 9));
    if (!clustered) throw Error(a.model + " needs data extracted with --cluster-vectors");
  }

  std::optional<VectorTable> vectors;
  const bool wants_vectors = a.model == "rnn" || a.model == "add" || a.model == "zero-shot";
  if (a.model == "rnn" || a.model == "zero-shot") {
    if (a.vectors.empty()) throw Error(a.model + " needs --vectors");
  }
  if (wants_vectors && !a.vectors.empty()) {
    auto vin = open_in(a.vectors);
    vectors = resolve_vectors(read_relation_vectors(vin), data.relations);
  }
  const VectorTable* pre = vectors ? &*vectors : nullptr;

  const std::size_t n = data.datasets.size();
  std::vector<std::string> errors(n);
  std::size_t trained = 0;

  if (a.model == "zero-shot") {
    TrainConfig cfg = a.train;
    cfg.freeze_relation_vectors = true;
    ModelBundle bundle{a.model, {train_zero_shot(data.datasets, *pre, cfg)}, {0}};
    write_file_atomic(a.out, [&](std::ostream& o) { write_models(o, bundle, data.relations); }, true);
    trained = n;
  } else if (is_logreg_model(a.model)) {
    const FeatureSet set =
        a.model.ends_with("-b") ? FeatureSet::paths_and_bigrams : FeatureSet::paths;
    std::vector<std::optional<LogRegBundleEntry>> entries(n);
    parallel_for(n, a.workers, [&](std::size_t i) {
      const auto& ds = data.datasets[i];
      try {
        auto vocab = build_feature_vocabulary(ds, set);
        std::vector<LabeledFeatures> xs;
        for (const auto& inst : ds.instances) xs.push_back({featurize(inst.paths, vocab, set), inst.label});
        auto model = train_logreg(xs, vocab.size(), a.train);
        entries[i] = LogRegBundleEntry{ds.target, set, std::move(vocab), std::move(model)};
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    });
    LogRegBundle bundle{a.model, {}};
    for (auto& e : entries)
      if (e) bundle.entries.push_back(std::move(*e));
    trained = bundle.entries.size();
    write_file_atomic(a.out,
                      [&](std::ostream& o) { write_logreg_bundle(o, bundle, data.relations); });
  } else {
    const Composition comp = a.model == "add" ? Composition::add : Composition::per_relation;
    std::vector<std::optional<RnnModel>> models(n);
    parallel_for(n, a.workers, [&](std::size_t i) {
      try {
        models[i] = train_relation_model(data.datasets[i], a.train, comp,
                                         a.model == "rnn-random" ? nullptr : pre);
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    });
    ModelBundle bundle{a.model, {}, {}};
    for (std::size_t i = 0; i < n; ++i)
      if (models[i]) {
        bundle.models.push_back(std::move(*models[i]));
        bundle.targets.push_back(data.datasets[i].target);
      }
    trained = bundle.models.size();
    write_file_atomic(a.out, [&](std::ostream& o) { write_models(o, bundle, data.relations); }, true);
  }
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (!errors[i].empty()) {
      ++skipped;
      err << "train: skipped " << data.relations.name(data.datasets[i].target) << ": " << errors[i]
          << '\n';
    }
  if (trained == 0) throw Error("no relation could be trained");
  result(out, "train", {{"model", a.model}, {"relations", num(trained)}, {"skipped", num(skipped)}});
}

// ------------------------------------------------------------------ predict

struct PredictArgs {
  std::string model, data, out;
};

void predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
  auto din = open_in(a.data);
  auto data = read_path_records(din);
  std::string head;
  {
    auto probe = open_in(a.model);
    std::getline(probe, head);
  }
  using ScoreFn = std::function<double(const FactInstance&)>;
  std::map<RelationId, ScoreFn> scorers;
  std::string kind;
  std::optional<LogRegBundle> lr;
  std::optional<ModelBundle> nn;
  std::vector<RelationId> candidates;
  if (is_logreg_bundle(head)) {
    auto in = open_in(a.model);
    lr = read_logreg_bundle(in, data.relations);
    kind = lr->kind;
    for (const auto& e : lr->entries)
      scorers[e.target] = [&e](const FactInstance& f) {
        return e.model.probability(featurize(f.paths, e.vocab, e.feature_set));
      };
  } else {
    auto in = open_in(a.model, true);
    nn = read_models(in, data.relations);
    kind = nn->kind;
    for (std::size_t k = 0; k < nn->models.size(); ++k) {
      const auto& m = nn->models[k];
      if (m.composition() == Composition::shared) {
        for (const auto& ds : data.datasets)
          if (m.has_vector(ds.target)) candidates.push_back(ds.target);
        for (RelationId t : candidates)
          scorers[t] = [&m, t, &candidates](const FactInstance& f) {
            return predict_zero_shot(f.paths, m, t, candidates);
          };
      } else {
        const RelationId t = nn->targets[k];
        scorers[t] = [&m, t](const FactInstance& f) { return predict_probability(f.paths, m, t); };
      }
    }
  }
  std::vector<Prediction> rows;
  std::size_t relations = 0;
  for (const auto& ds : data.datasets) {
    const auto name = data.relations.name(ds.target);
    auto it = scorers.find(ds.target);
    if (it == scorers.end()) {
      err << "predict: no model for " << name << ", skipped\n";
      continue;
    }
    ++relations;
    for (const auto& inst : ds.instances)
      rows.push_back({name, data.entities.name(inst.pair.source),
                      data.entities.name(inst.pair.target), inst.label, it->second(inst)});
  }
  if (relations == 0) throw Error("model covers none of the data relations");
  write_file_atomic(a.out, [&](std::ostream& o) { write_predictions(o, rows); });
  result(out, "predict", {{"model", kind}, {"relations", num(relations)}, {"rows", num(rows.size())}});
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  std::string predictions, out, records, compare;
  std::size_t permutations = 10000;
  std::uint64_t seed = 1;
  int workers = 1;
};

EvalReport evaluate_file(const std::string& path, int workers, std::ostream& err) {
  auto in = open_in(path);
  const auto rows = read_predictions(in);
  std::vector<std::string> skipped;
  auto report = evaluate(group_predictions(rows), workers, &skipped);
  for (const auto& s : skipped) err << "eval: " << path << ": no positives for " << s << ", skipped\n";
  return report;
}

void eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const auto report = evaluate_file(a.predictions, a.workers, err);
  std::optional<Significance> sig;
  if (!a.compare.empty()) {
    const auto base = evaluate_file(a.compare, a.workers, err);
    sig = Significance{std::filesystem::path(a.compare).filename().string(),
                       compare_reports(report, base, a.permutations, a.seed)};
  }
  if (a.out.empty())
    write_report_text(out, report, sig);
  else
    write_file_atomic(a.out, [&](std::ostream& o) { write_report_text(o, report, sig); });
  if (!a.records.empty())
    write_file_atomic(a.records, [&](std::ostream& o) { write_report_records(o, report, sig); });
  std::vector<std::pair<std::string, std::string>> fields = {
      {"map", num(report.map)}, {"relations", num(report.relations.size())}};
  if (sig) fields.emplace_back("p", num(sig->test.p_value));
  result(out, "eval", fields);
}

// ----------------------------------------------------------------- ensemble

struct EnsembleArgs {
  std::string a, b, out;
};

void ensemble(const EnsembleArgs& a, std::ostream& out) {
  auto ia = open_in(a.a);
  auto ib = open_in(a.b);
  const auto ra = read_predictions(ia), rb = read_predictions(ib);
  std::map<std::string, std::vector<const Prediction*>> by_b;
  for (const auto& p : rb) by_b[p.relation].push_back(&p);
  std::vector<std::string> order;
  std::map<std::string, std::vector<const Prediction*>> by_a;
  for (const auto& p : ra) {
    if (!by_a.count(p.relation)) order.push_back(p.relation);
    by_a[p.relation].push_back(&p);
  }
  if (by_a.size() != by_b.size()) throw Error("ensemble: inputs cover different relations");
  std::vector<Prediction> rows;
  for (const auto& rel : order) {
    const auto& xa = by_a[rel];
    const auto it = by_b.find(rel);
    if (it == by_b.end() || it->second.size() != xa.size())
      throw Error("ensemble: row count differs for " + rel);
    const auto& xb = it->second;
    std::vector<RankedFact> fa, fb;
    for (std::size_t i = 0; i < xa.size(); ++i) {
      if (xa[i]->source != xb[i]->source || xa[i]->target != xb[i]->target)
        throw Error("ensemble: row " + std::to_string(i) + " of " + rel + " is a different fact");
      fa.push_back({i, xa[i]->score, xa[i]->label});
      fb.push_back({i, xb[i]->score, xb[i]->label});
    }
    const auto combined = rank_sum_ensemble(fa, fb);
    for (std::size_t i = 0; i < xa.size(); ++i)
      rows.push_back({rel, xa[i]->source, xa[i]->target, xa[i]->label, combined[i].score});
  }
  write_file_atomic(a.out, [&](std::ostream& o) { write_predictions(o, rows); });
  result(out, "ensemble", {{"relations", num(order.size())}, {"rows", num(rows.size())}});
}

// ---------------------------------------------------------------- gradcheck

struct GradCheckArgs {
  int dim = 4;
  int cases = 24;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 1;
};

void gradcheck(const GradCheckArgs& a, std::ostream& out) {
  if (a.dim < 1 || a.cases < 1) throw Error("gradcheck: dim and cases must be positive");
  Rng rng(a.seed, 5);
  double worst = 0, frozen = 0;
  std::size_t checked = 0;
  constexpr RelationId kRelations = 12;  // forward/inverse pairs 0..11
  for (int c = 0; c < a.cases; ++c) {
    const auto comp = static_cast<Composition>(c % 3);
    const bool freeze = (c / 3) % 2 == 1;
    std::vector<RelationId> rels(kRelations), targets = {0, 2};
    for (RelationId r = 0; r < kRelations; ++r) rels[r] = r;
    LossConfig cfg;
    cfg.freeze_vectors = freeze || comp == Composition::shared;
    if (comp == Composition::shared) {
      cfg.scoring = Scoring::softmax;
      cfg.candidates = {0, 2, 4};
    }
    const auto model = init_model(a.dim, comp, rels,
                                  comp == Composition::per_relation ? targets
                                                                    : std::vector<RelationId>{},
                                  mix_seed(a.seed, static_cast<std::uint64_t>(c)));
    std::vector<SelectedInstance> batch;
    for (int i = 0; i < 3; ++i) {
      PathType p(1 + rng.index(4));
      for (auto& r : p) r = static_cast<RelationId>(rng.index(kRelations));
      batch.push_back({p, targets[rng.index(targets.size())], static_cast<int>(rng.index(2))});
    }
    const auto rep = gradient_check(model, batch, cfg, a.step);
    worst = std::max(worst, rep.max_relative_error);
    frozen = std::max(frozen, rep.max_frozen_gradient);
    checked += rep.checked;
  }
  out << "max relative error " << num(worst) << " over " << checked << " partials\n";
  result(out, "gradcheck",
         {{"max_relative_error", num(worst)},
          {"checked", num(checked)},
          {"frozen_gradient", num(frozen)}});
  if (!(worst < a.tolerance) || frozen != 0)
    throw Error("gradient check failed: max relative error " + num(worst));
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge base completion with compositional path models."};
  app.name("kbc");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.get_formatter()->column_width(34);

  IngestArgs ia;
  auto* s_ingest = app.add_subcommand("ingest", "Build a graph snapshot from a triple file");
  s_ingest->add_option("--triples", ia.triples, "subject<TAB>relation<TAB>object file")->required();
  s_ingest->add_option("--out", ia.out, "graph snapshot to write")->required();
  s_ingest->add_option("--min-textual-freq", ia.min_textual_freq,
                       "drop textual relations seen fewer times")->capture_default_str();

  SynthArgs sa;
  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic KB with planted rules");
  s_synth->add_option("--preset", sa.preset, "built-in configuration")
      ->check(CLI::IsMember({"single-rule", "multi-rule", "zero-shot"}))
      ->capture_default_str();
  s_synth->add_option("--spec", sa.spec, "config file (overrides --preset)");
  s_synth->add_option("--out-dir", sa.out_dir, "output directory")->required();
  s_synth->add_option("--seed", sa.seed, "random seed")->capture_default_str();
  s_synth->add_option("--heads", sa.heads, "head relations (pairs for zero-shot); 0 = preset")
      ->capture_default_str();
  s_synth->add_option("--entities", sa.entities, "entity count; 0 = preset")->capture_default_str();
  s_synth->add_option("--train-negatives-ratio", sa.train_negatives_ratio,
                      "negatives per train positive; 0 = preset")->capture_default_str();
  s_synth->add_option("--negatives-ratio", sa.negatives_ratio,
                      "negatives per dev/test positive; 0 = preset")->capture_default_str();

  ExtractArgs ea;
  auto* s_extract = app.add_subcommand("extract", "Extract connecting path types for entity pairs");
  s_extract->add_option("--graph", ea.graph, "graph snapshot")->required();
  s_extract->add_option("--pairs", ea.pairs, "relation<TAB>source<TAB>target[<TAB>label] file")
      ->required();
  s_extract->add_option("--out", ea.out, "path records to write")->required();
  s_extract->add_option("--vocab-out", ea.vocab_out, "path vocabulary (default: OUT.vocab)");
  s_extract->add_option("--max-len", ea.walk.max_len, "maximum path length")->capture_default_str();
  s_extract->add_option("--walks", ea.walk.walks_per_node, "walks per endpoint")
      ->capture_default_str();
  s_extract->add_option("--max-paths", ea.walk.max_paths_per_pair, "path types kept per pair")
      ->capture_default_str();
  s_extract->add_option("--negatives-ratio", ea.negatives_ratio,
                        "negatives sampled per unlabeled pair")->capture_default_str();
  s_extract->add_flag("--keep-empty", ea.keep_empty, "keep pairs with no path");
  s_extract->add_option("--cluster-vectors", ea.cluster_vectors,
                        "relation vectors; replaces textual relations by k-means clusters");
  s_extract->add_option("--clusters", ea.clusters, "number of clusters")->capture_default_str();
  s_extract->add_option("--cluster-iterations", ea.cluster_iterations, "k-means iterations")
      ->capture_default_str();
  s_extract->add_option("--cluster-out", ea.cluster_out, "cluster assignment to write");
  s_extract->add_option("--seed", ea.walk.seed, "random seed")->capture_default_str();
  s_extract->add_option("--workers", ea.workers, "threads")->capture_default_str();

  TrainArgs ta;
  auto* s_train = app.add_subcommand("train", "Train one model per relation (zero-shot: one model)");
  s_train->add_option("model,--model", ta.model, "method")
      ->check(CLI::IsMember(kModels))
      ->required();
  s_train->add_option("--data", ta.data, "path records")->required();
  s_train->add_option("--out", ta.out, "model file to write")->required();
  s_train->add_option("--vectors", ta.vectors, "pre-trained relation vectors");
  s_train->add_option("--top-paths", ta.top_paths, "keep the k most frequent path types; 0 = all")
      ->capture_default_str();
  s_train->add_option("--dim", ta.train.dim, "relation vector dimension")->capture_default_str();
  s_train->add_option("--iterations", ta.train.iterations, "passes over the data")
      ->capture_default_str();
  s_train->add_option("--batch", ta.train.batch_size, "minibatch size")->capture_default_str();
  s_train->add_option("--lr", ta.train.learning_rate, "AdaGrad learning rate")
      ->capture_default_str();
  s_train->add_option("--halve-every", ta.train.lr_halving_period,
                      "halve the learning rate every N iterations")->capture_default_str();
  s_train->add_option("--l2", ta.train.l2, "L2 penalty")->capture_default_str();
  s_train->add_flag("--freeze-vectors", ta.train.freeze_relation_vectors,
                    "keep relation vectors fixed");
  s_train->add_option("--seed", ta.train.seed, "random seed")->capture_default_str();
  s_train->add_option("--workers", ta.workers, "threads")->capture_default_str();

  PredictArgs pa;
  auto* s_predict = app.add_subcommand("predict", "Score path records with a trained model");
  s_predict->add_option("--model", pa.model, "model file")->required();
  s_predict->add_option("--data", pa.data, "path records")->required();
  s_predict->add_option("--out", pa.out, "predictions to write")->required();

  EvalArgs va;
  auto* s_eval = app.add_subcommand("eval", "Average precision per relation and MAP");
  s_eval->add_option("--predictions", va.predictions, "predictions file")->required();
  s_eval->add_option("--out", va.out, "text report (default: stdout)");
  s_eval->add_option("--records", va.records, "key=value report");
  s_eval->add_option("--compare", va.compare, "baseline predictions for a significance test");
  s_eval->add_option("--permutations", va.permutations, "Monte Carlo sign patterns")
      ->capture_default_str();
  s_eval->add_option("--seed", va.seed, "random seed")->capture_default_str();
  s_eval->add_option("--workers", va.workers, "threads")->capture_default_str();

  EnsembleArgs na;
  auto* s_ens = app.add_subcommand("ensemble", "Rank-sum combination of two prediction files");
  s_ens->add_option("--a", na.a, "first predictions")->required();
  s_ens->add_option("--b", na.b, "second predictions")->required();
  s_ens->add_option("--out", na.out, "predictions to write")->required();

  GradCheckArgs ga;
  auto* s_grad = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  s_grad->add_option("--dim", ga.dim, "vector dimension")->capture_default_str();
  s_grad->add_option("--cases", ga.cases, "random configurations")->capture_default_str();
  s_grad->add_option("--step", ga.step, "central difference step")->capture_default_str();
  s_grad->add_option("--tolerance", ga.tolerance, "maximum relative error")->capture_default_str();
  s_grad->add_option("--seed", ga.seed, "random seed")->capture_default_str();

  for (auto* sub : {s_ingest, s_synth, s_extract, s_train, s_predict, s_eval, s_ens, s_grad})
    add_config_flag(sub);

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kOk;
    for (auto* sub : app.get_subcommands()) err << sub->help();
    if (app.get_subcommands().empty()) err << app.help();
    return kUsage;
  } catch (const std::exception& e) {
    err << "kbc: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (s_ingest->parsed()) ingest(ia, out);
    else if (s_synth->parsed()) synth(sa, out);
    else if (s_extract->parsed()) extract(ea, out, err);
    else if (s_train->parsed()) train(ta, out, err);
    else if (s_predict->parsed()) predict(pa, out, err);
    else if (s_eval->parsed()) eval(va, out, err);
    else if (s_ens->parsed()) ensemble(na, out);
    else if (s_grad->parsed()) gradcheck(ga, out);
  } catch (const std::exception& e) {
    err << "kbc: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}

}  // namespace kbc::cli
