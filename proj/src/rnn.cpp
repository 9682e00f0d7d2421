#include "kbc/rnn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

namespace kbc {

namespace {

constexpr std::size_t kNoMatrix = std::numeric_limits<std::size_t>::max();

// h_out = f(h_prev, v) for one recurrence step.
void compose_step(const RnnModel& model, std::size_t matrix, std::span<const double> h_prev,
                  std::span<const double> v, std::span<double> out) {
  const std::size_t d = static_cast<std::size_t>(model.dim());
  if (matrix == kNoMatrix) {
    for (std::size_t j = 0; j < d; ++j) out[j] = sigmoid(h_prev[j] + v[j]);
    return;
  }
  const auto w = model.matrix(matrix);
  const std::size_t cols = model.matrix_cols();
  for (std::size_t j = 0; j < d; ++j) {
    const double* row = w.data() + j * cols;
    double a = row[2 * d];
    for (std::size_t c = 0; c < d; ++c) a += row[c] * h_prev[c];
    for (std::size_t c = 0; c < d; ++c) a += row[d + c] * v[c];
    out[j] = sigmoid(a);
  }
}

std::size_t matrix_for(const RnnModel& model, RelationId target) {
  return model.composition() == Composition::add ? kNoMatrix : model.matrix_index(target);
}

// Composes paths one after another, reusing hidden states of the prefix shared
// with the previous path. Results are bitwise identical to compose_path.
class PathEncoder {
 public:
  PathEncoder(const RnnModel& model, std::size_t matrix) : model_(model), matrix_(matrix) {}

  std::span<const double> encode(const PathType& path) {
    if (path.empty()) throw Error("cannot compose an empty path");
    const std::size_t d = static_cast<std::size_t>(model_.dim());
    std::size_t lcp = 0;
    while (lcp < path.size() && lcp < current_.size() && path[lcp] == current_[lcp]) ++lcp;
    if (states_.size() < path.size()) states_.resize(path.size(), std::vector<double>(d));
    for (std::size_t i = lcp; i < path.size(); ++i) {
      const auto v = model_.vector(path[i]);
      if (i == 0) {
        std::copy(v.begin(), v.end(), states_[0].begin());
      } else {
        compose_step(model_, matrix_, states_[i - 1], v, states_[i]);
      }
    }
    current_ = path;
    return states_[path.size() - 1];
  }

 private:
  const RnnModel& model_;
  std::size_t matrix_;
  PathType current_;
  std::vector<std::vector<double>> states_;
};

double clamp_probability(double p) {
  constexpr double eps = LossConfig::kProbabilityClamp;
  return std::clamp(p, eps, 1.0 - eps);
}

// Softmax over candidate logits h . v(w); returns probabilities aligned with
// `candidates`.
std::vector<double> softmax_scores(std::span<const double> h, const RnnModel& model,
                                   std::span<const RelationId> candidates) {
  std::vector<double> p(candidates.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    p[i] = dot(h, model.vector(candidates[i]));
    mx = std::max(mx, p[i]);
  }
  double z = 0;
  for (auto& x : p) z += (x = std::exp(x - mx));
  for (auto& x : p) x /= z;
  return p;
}

std::size_t candidate_position(std::span<const RelationId> candidates, RelationId target) {
  const auto it = std::find(candidates.begin(), candidates.end(), target);
  if (it == candidates.end()) throw Error("softmax target is not among the candidates");
  return static_cast<std::size_t>(it - candidates.begin());
}

// Adds one instance's loss and (optionally) its data gradient.
double accumulate_instance(const SelectedInstance& inst, const RnnModel& model,
                           const LossConfig& cfg, Parameters* grad) {
  const auto& path = inst.path;
  if (path.empty()) throw Error("instance without a selected path");
  const std::size_t d = static_cast<std::size_t>(model.dim());
  const std::size_t matrix = matrix_for(model, inst.target);

  std::vector<std::vector<double>> h(path.size(), std::vector<double>(d));
  {
    const auto v0 = model.vector(path[0]);
    std::copy(v0.begin(), v0.end(), h[0].begin());
  }
  for (std::size_t i = 1; i < path.size(); ++i)
    compose_step(model, matrix, h[i - 1], model.vector(path[i]), h[i]);
  const auto& top = h.back();

  const double y = inst.label;
  std::vector<double> g(d, 0.0);  // dL/dh_top
  const bool train_vectors = grad && !cfg.freeze_vectors;
  double loss = 0;

  if (cfg.scoring == Scoring::sigmoid) {
    const auto vt = model.vector(inst.target);
    const double p = sigmoid(dot(top, vt));
    const double pc = clamp_probability(p);
    loss = -(y * std::log(pc) + (1 - y) * std::log(1 - pc));
    if (!grad) return loss;
    const double dz = p - y;
    for (std::size_t j = 0; j < d; ++j) g[j] = dz * vt[j];
    if (train_vectors) {
      double* gv = grad->vectors.data() + model.row(inst.target) * d;
      for (std::size_t j = 0; j < d; ++j) gv[j] += dz * top[j];
    }
  } else {
    const auto& cands = cfg.candidates;
    const std::size_t pos = candidate_position(cands, inst.target);
    const auto probs = softmax_scores(top, model, cands);
    const double p = probs[pos];
    const double pc = clamp_probability(p);
    loss = -(y * std::log(pc) + (1 - y) * std::log(1 - pc));
    if (!grad) return loss;
    const double dl_dp = -y / pc + (1 - y) / (1 - pc);
    for (std::size_t w = 0; w < cands.size(); ++w) {
      const double dz = dl_dp * p * ((w == pos ? 1.0 : 0.0) - probs[w]);
      if (dz == 0.0) continue;
      const auto vw = model.vector(cands[w]);
      for (std::size_t j = 0; j < d; ++j) g[j] += dz * vw[j];
      if (train_vectors) {
        double* gv = grad->vectors.data() + model.row(cands[w]) * d;
        for (std::size_t j = 0; j < d; ++j) gv[j] += dz * top[j];
      }
    }
  }

  // Backpropagation through the recurrence.
  std::vector<double> ga(d), g_prev(d);
  const std::size_t cols = model.matrix_cols();
  for (std::size_t i = path.size() - 1; i >= 1; --i) {
    for (std::size_t j = 0; j < d; ++j) ga[j] = g[j] * h[i][j] * (1 - h[i][j]);
    const auto vi = model.vector(path[i]);
    double* gvi = train_vectors ? grad->vectors.data() + model.row(path[i]) * d : nullptr;
    if (matrix == kNoMatrix) {
      if (gvi)
        for (std::size_t j = 0; j < d; ++j) gvi[j] += ga[j];
      g_prev = ga;
    } else {
      const auto w = model.matrix(matrix);
      double* gw = grad->matrices.data() + matrix * model.matrix_size();
      std::fill(g_prev.begin(), g_prev.end(), 0.0);
      for (std::size_t j = 0; j < d; ++j) {
        const double a = ga[j];
        if (a == 0.0) continue;
        const double* row = w.data() + j * cols;
        double* grow = gw + j * cols;
        for (std::size_t c = 0; c < d; ++c) {
          grow[c] += a * h[i - 1][c];
          g_prev[c] += row[c] * a;
        }
        for (std::size_t c = 0; c < d; ++c) {
          grow[d + c] += a * vi[c];
          if (gvi) gvi[c] += row[d + c] * a;
        }
        grow[2 * d] += a;
      }
    }
    g.swap(g_prev);
  }
  if (train_vectors) {
    double* gv0 = grad->vectors.data() + model.row(path[0]) * d;
    for (std::size_t j = 0; j < d; ++j) gv0[j] += g[j];
  }
  return loss;
}

// L2 on the parameters the batch touches: vectors of relations on its paths,
// targets and softmax candidates, and the matrices of its targets. Untouched
// rows keep their (possibly pre-trained) values instead of drifting to zero
// under AdaGrad's per-coordinate normalization.
double regularize(std::span<const SelectedInstance> batch, const RnnModel& model,
                  const LossConfig& cfg, Parameters* grad) {
  if (cfg.l2 == 0 || batch.empty()) return 0;
  const auto& p = model.params();
  const std::size_t d = static_cast<std::size_t>(model.dim());
  std::vector<char> rows(model.relations().size(), 0);
  std::vector<char> mats(model.matrix_count(), 0);
  for (const auto& inst : batch) {
    for (RelationId r : inst.path) rows[model.row(r)] = 1;
    rows[model.row(inst.target)] = 1;
    if (model.composition() != Composition::add) mats[model.matrix_index(inst.target)] = 1;
  }
  if (cfg.scoring == Scoring::softmax)
    for (RelationId r : cfg.candidates) rows[model.row(r)] = 1;
  double sq = 0;
  if (!cfg.freeze_vectors) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!rows[r]) continue;
      for (std::size_t i = r * d; i < (r + 1) * d; ++i) {
        sq += p.vectors[i] * p.vectors[i];
        if (grad) grad->vectors[i] += 2 * cfg.l2 * p.vectors[i];
      }
    }
  }
  const std::size_t m = model.matrix_size();
  for (std::size_t k = 0; k < mats.size(); ++k) {
    if (!mats[k]) continue;
    for (std::size_t i = k * m; i < (k + 1) * m; ++i) {
      sq += p.matrices[i] * p.matrices[i];
      if (grad) grad->matrices[i] += 2 * cfg.l2 * p.matrices[i];
    }
  }
  return cfg.l2 * sq;
}

// Loss evaluated in extended precision, for finite differences whose step is
// small enough that double rounding of the loss would swamp small partials.
struct WideParams {
  std::vector<long double> vectors, matrices;
};

long double wide_sigmoid(long double x) {
  if (x >= 0) return 1.0L / (1.0L + std::exp(-x));
  const long double e = std::exp(x);
  return e / (1.0L + e);
}

long double wide_batch_loss(std::span<const SelectedInstance> batch, const RnnModel& model,
                            const LossConfig& cfg, const WideParams& w) {
  const std::size_t d = static_cast<std::size_t>(model.dim());
  const std::size_t cols = model.matrix_cols();
  auto vec = [&](RelationId r) { return w.vectors.data() + model.row(r) * d; };
  auto nll = [&](long double p, long double y) {
    const long double eps = LossConfig::kProbabilityClamp;
    p = std::clamp(p, eps, 1.0L - eps);
    return -(y * std::log(p) + (1 - y) * std::log(1 - p));
  };
  long double total = 0;
  for (const auto& inst : batch) {
    const std::size_t matrix = matrix_for(model, inst.target);
    const long double* v0 = vec(inst.path[0]);
    std::vector<long double> h(v0, v0 + d), next(d);
    for (std::size_t i = 1; i < inst.path.size(); ++i) {
      const long double* v = vec(inst.path[i]);
      for (std::size_t j = 0; j < d; ++j) {
        long double a;
        if (matrix == kNoMatrix) {
          a = h[j] + v[j];
        } else {
          const long double* row = w.matrices.data() + matrix * model.matrix_size() + j * cols;
          a = row[2 * d];
          for (std::size_t c = 0; c < d; ++c) a += row[c] * h[c];
          for (std::size_t c = 0; c < d; ++c) a += row[d + c] * v[c];
        }
        next[j] = wide_sigmoid(a);
      }
      h.swap(next);
    }
    auto score = [&](RelationId r) {
      long double s = 0;
      const long double* v = vec(r);
      for (std::size_t j = 0; j < d; ++j) s += h[j] * v[j];
      return s;
    };
    if (cfg.scoring == Scoring::sigmoid) {
      total += nll(wide_sigmoid(score(inst.target)), inst.label);
    } else {
      const auto& cands = cfg.candidates;
      const std::size_t pos = candidate_position(cands, inst.target);
      std::vector<long double> z(cands.size());
      long double mx = -std::numeric_limits<long double>::infinity();
      for (std::size_t k = 0; k < cands.size(); ++k) mx = std::max(mx, z[k] = score(cands[k]));
      long double sum = 0;
      for (auto& x : z) sum += (x = std::exp(x - mx));
      total += nll(z[pos] / sum, inst.label);
    }
  }
  if (cfg.l2 != 0) {
    // Same coordinates as regularize().
    std::vector<char> rows(model.relations().size(), 0), mats(model.matrix_count(), 0);
    for (const auto& inst : batch) {
      for (RelationId r : inst.path) rows[model.row(r)] = 1;
      rows[model.row(inst.target)] = 1;
      if (model.composition() != Composition::add) mats[model.matrix_index(inst.target)] = 1;
    }
    if (cfg.scoring == Scoring::softmax)
      for (RelationId r : cfg.candidates) rows[model.row(r)] = 1;
    long double sq = 0;
    if (!cfg.freeze_vectors)
      for (std::size_t r = 0; r < rows.size(); ++r)
        if (rows[r])
          for (std::size_t i = r * d; i < (r + 1) * d; ++i) sq += w.vectors[i] * w.vectors[i];
    const std::size_t m = model.matrix_size();
    for (std::size_t k = 0; k < mats.size(); ++k)
      if (mats[k])
        for (std::size_t i = k * m; i < (k + 1) * m; ++i) sq += w.matrices[i] * w.matrices[i];
    total += cfg.l2 * sq;
  }
  return total;
}

}  // namespace

void Parameters::fill(double v) {
  std::fill(vectors.begin(), vectors.end(), v);
  std::fill(matrices.begin(), matrices.end(), v);
}

// ------------------------------------------------------------------- RnnModel

RnnModel::RnnModel(int dim, Composition composition, std::vector<RelationId> relations,
                   std::vector<RelationId> matrix_targets)
    : dim_(dim), composition_(composition) {
  if (dim < 1) throw Error("model dimension must be >= 1");
  std::sort(relations.begin(), relations.end());
  relations.erase(std::unique(relations.begin(), relations.end()), relations.end());
  relations_ = std::move(relations);
  for (std::size_t i = 0; i < relations_.size(); ++i) rows_.emplace(relations_[i], i);
  switch (composition) {
    case Composition::add:
      matrix_targets.clear();
      break;
    case Composition::shared:
      matrix_targets.assign(1, 0);
      break;
    case Composition::per_relation:
      std::sort(matrix_targets.begin(), matrix_targets.end());
      matrix_targets.erase(std::unique(matrix_targets.begin(), matrix_targets.end()),
                           matrix_targets.end());
      break;
  }
  matrix_targets_ = std::move(matrix_targets);
  params_.vectors.assign(relations_.size() * static_cast<std::size_t>(dim), 0.0);
  params_.matrices.assign(matrix_targets_.size() * matrix_size(), 0.0);
}

std::size_t RnnModel::row(RelationId r) const {
  auto it = rows_.find(r);
  if (it == rows_.end()) throw MissingRelationError(r);
  return it->second;
}

std::span<const double> RnnModel::vector(RelationId r) const {
  return {params_.vectors.data() + row(r) * static_cast<std::size_t>(dim_),
          static_cast<std::size_t>(dim_)};
}

std::span<double> RnnModel::vector(RelationId r) {
  return {params_.vectors.data() + row(r) * static_cast<std::size_t>(dim_),
          static_cast<std::size_t>(dim_)};
}

std::size_t RnnModel::matrix_index(RelationId target) const {
  switch (composition_) {
    case Composition::shared:
      return 0;
    case Composition::add:
      throw Error("additive composition has no matrix");
    case Composition::per_relation:
      break;
  }
  const auto it = std::lower_bound(matrix_targets_.begin(), matrix_targets_.end(), target);
  if (it == matrix_targets_.end() || *it != target)
    throw Error("no composition matrix for target relation id " + std::to_string(target));
  return static_cast<std::size_t>(it - matrix_targets_.begin());
}

std::span<const double> RnnModel::matrix(std::size_t index) const {
  return {params_.matrices.data() + index * matrix_size(), matrix_size()};
}

std::span<double> RnnModel::matrix(std::size_t index) {
  return {params_.matrices.data() + index * matrix_size(), matrix_size()};
}

// ------------------------------------------------------------------ inference

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> compose_path(const PathType& path, const RnnModel& model,
                                 RelationId target) {
  if (path.empty()) throw Error("cannot compose an empty path");
  const auto v0 = model.vector(path[0]);
  std::vector<double> h(v0.begin(), v0.end());
  if (path.size() == 1) return h;
  const std::size_t matrix = matrix_for(model, target);
  std::vector<double> next(h.size());
  for (std::size_t i = 1; i < path.size(); ++i) {
    compose_step(model, matrix, h, model.vector(path[i]), next);
    h.swap(next);
  }
  return h;
}

std::vector<double> compose_add(const PathType& path, const RnnModel& model) {
  if (path.empty()) throw Error("cannot compose an empty path");
  const auto v0 = model.vector(path[0]);
  std::vector<double> h(v0.begin(), v0.end());
  std::vector<double> next(h.size());
  for (std::size_t i = 1; i < path.size(); ++i) {
    compose_step(model, kNoMatrix, h, model.vector(path[i]), next);
    h.swap(next);
  }
  return h;
}

double score_fact(std::span<const double> path_vec, RelationId target, const RnnModel& model) {
  const auto vt = model.vector(target);
  if (vt.size() != path_vec.size()) throw Error("score_fact: dimension mismatch");
  return sigmoid(dot(path_vec, vt));
}

std::size_t select_latent_path(std::span<const PathType> paths, const RnnModel& model,
                               RelationId target) {
  if (paths.empty()) throw Error("select_latent_path: empty path set");
  const auto vt = model.vector(target);
  PathEncoder enc(model, matrix_for(model, target));
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const double s = dot(enc.encode(paths[i]), vt);
    if (s > best_score || (s == best_score && paths[i] < paths[best])) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

std::vector<PathType> known_paths(std::span<const PathType> paths, const RnnModel& model) {
  std::vector<PathType> out;
  for (const auto& p : paths)
    if (std::all_of(p.begin(), p.end(), [&](RelationId r) { return model.has_vector(r); }))
      out.push_back(p);
  return out;
}

double predict_probability(std::span<const PathType> paths, const RnnModel& model,
                           RelationId target) {
  const auto usable = known_paths(paths, model);
  if (usable.empty()) return 0.0;
  const auto& best = usable[select_latent_path(usable, model, target)];
  return score_fact(compose_path(best, model, target), target, model);
}

double predict_zero_shot(std::span<const PathType> paths, const RnnModel& model,
                         RelationId target, std::span<const RelationId> candidates) {
  const std::size_t pos = candidate_position(candidates, target);
  const auto usable = known_paths(paths, model);
  if (usable.empty()) return 0.0;
  const auto& best = usable[select_latent_path(usable, model, target)];
  return softmax_scores(compose_path(best, model, target), model, candidates)[pos];
}

// ------------------------------------------------------------------- training

LossAndGradient loss_and_gradients(std::span<const SelectedInstance> batch,
                                   const RnnModel& model, const LossConfig& cfg) {
  LossAndGradient out;
  out.gradient.vectors.assign(model.params().vectors.size(), 0.0);
  out.gradient.matrices.assign(model.params().matrices.size(), 0.0);
  for (const auto& inst : batch) out.loss += accumulate_instance(inst, model, cfg, &out.gradient);
  out.loss += regularize(batch, model, cfg, &out.gradient);
  return out;
}

double batch_loss(std::span<const SelectedInstance> batch, const RnnModel& model,
                  const LossConfig& cfg) {
  double loss = 0;
  for (const auto& inst : batch) loss += accumulate_instance(inst, model, cfg, nullptr);
  return loss + regularize(batch, model, cfg, nullptr);
}

AdaGradState::AdaGradState(const Parameters& shape) {
  accumulated.vectors.assign(shape.vectors.size(), 0.0);
  accumulated.matrices.assign(shape.matrices.size(), 0.0);
}

void adagrad_update(std::span<double> params, std::span<const double> grads,
                    std::span<double> accumulated, double lr, double epsilon) {
  if (params.size() != grads.size() || params.size() != accumulated.size())
    throw Error("adagrad_update: shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    accumulated[i] += g * g;
    params[i] -= lr * g / (std::sqrt(accumulated[i]) + epsilon);
  }
}

void adagrad_update(Parameters& params, const Parameters& grads, AdaGradState& state,
                    double lr, bool freeze_vectors) {
  if (!freeze_vectors)
    adagrad_update(params.vectors, grads.vectors, state.accumulated.vectors, lr, state.epsilon);
  adagrad_update(params.matrices, grads.matrices, state.accumulated.matrices, lr, state.epsilon);
}

void TrainConfig::validate() const {
  if (iterations < 0) throw Error("iterations must be >= 0");
  if (batch_size < 1) throw Error("batch size must be >= 1");
  if (!(learning_rate > 0)) throw Error("learning rate must be positive");
  if (lr_halving_period < 1) throw Error("learning-rate halving period must be >= 1");
  if (l2 < 0) throw Error("l2 must be >= 0");
  if (dim < 1) throw Error("dimension must be >= 1");
}

double TrainConfig::learning_rate_at(int iteration) const {
  return learning_rate * std::ldexp(1.0, -((iteration - 1) / lr_halving_period));
}

RnnModel init_model(int dim, Composition composition, std::vector<RelationId> relations,
                    std::vector<RelationId> matrix_targets, std::uint64_t seed,
                    const VectorTable* pretrained, bool require_pretrained) {
  RnnModel model(dim, composition, std::move(relations), std::move(matrix_targets));
  const double a = 1.0 / std::sqrt(static_cast<double>(dim));
  Rng vec_rng(seed, 1), mat_rng(seed, 2);
  for (auto& x : model.params().vectors) x = vec_rng.uniform(-a, a);
  for (auto& x : model.params().matrices) x = mat_rng.uniform(-a, a);
  for (RelationId r : model.relations()) {
    const std::vector<double>* src = nullptr;
    if (pretrained)
      if (auto it = pretrained->find(r); it != pretrained->end()) src = &it->second;
    if (!src) {
      if (require_pretrained) throw MissingRelationError(r);
      continue;
    }
    if (src->size() != static_cast<std::size_t>(dim))
      throw Error("pre-trained vector dimension " + std::to_string(src->size()) +
                  " does not match model dimension " + std::to_string(dim));
    auto dst = model.vector(r);
    std::copy(src->begin(), src->end(), dst.begin());
  }
  return model;
}

namespace {

struct InstanceRef {
  const FactInstance* fact;
  RelationId target;
};

std::vector<InstanceRef> trainable_instances(std::span<const PathDataset> datasets) {
  std::vector<InstanceRef> out;
  for (const auto& ds : datasets)
    for (const auto& inst : ds.instances)
      if (!inst.paths.empty()) out.push_back({&inst, ds.target});
  return out;
}

SelectedInstance select(const InstanceRef& ref, const RnnModel& model) {
  const auto& paths = ref.fact->paths;
  return {paths[select_latent_path(paths, model, ref.target)], ref.target, ref.fact->label};
}

double full_loss(std::span<const InstanceRef> refs, const RnnModel& model,
                 const LossConfig& cfg) {
  std::vector<SelectedInstance> all;
  all.reserve(refs.size());
  for (const auto& r : refs) all.push_back(select(r, model));
  return batch_loss(all, model, cfg);
}

std::vector<RelationId> model_relations(std::span<const PathDataset> datasets) {
  std::set<RelationId> rels;
  for (const auto& ds : datasets) {
    rels.insert(ds.target);
    for (const auto& [p, c] : ds.vocabulary) rels.insert(p.begin(), p.end());
    for (const auto& inst : ds.instances)
      for (const auto& p : inst.paths) rels.insert(p.begin(), p.end());
  }
  return {rels.begin(), rels.end()};
}

}  // namespace

void train_model(RnnModel& model, std::span<const PathDataset> datasets, const TrainConfig& cfg,
                 const LossConfig& loss_cfg, TrainStats* stats) {
  cfg.validate();
  auto refs = trainable_instances(datasets);
  if (refs.empty()) throw Error("training set has no instance with paths");
  AdaGradState state(model.params());
  Rng order_rng(cfg.seed, 3);
  std::vector<SelectedInstance> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));

  auto flush = [&](double lr) {
    const auto lg = loss_and_gradients(batch, model, loss_cfg);
    adagrad_update(model.params(), lg.gradient, state, lr, loss_cfg.freeze_vectors);
    batch.clear();
  };

  for (int t = 1; t <= cfg.iterations; ++t) {
    const double lr = cfg.learning_rate_at(t);
    if (cfg.shuffle) order_rng.shuffle(refs);
    for (const auto& ref : refs) {
      // Parameters only change at updates, so selecting now equals selecting
      // at the moment the instance is visited.
      batch.push_back(select(ref, model));
      if (batch.size() == static_cast<std::size_t>(cfg.batch_size)) flush(lr);
    }
    if (!batch.empty()) flush(lr);
    if (stats) stats->epoch_losses.push_back(full_loss(refs, model, loss_cfg));
  }
}

RnnModel train_relation_model(const PathDataset& ds, const TrainConfig& cfg,
                              Composition composition, const VectorTable* pretrained,
                              TrainStats* stats) {
  cfg.validate();
  if (ds.instances.empty()) throw Error("train_relation_model: empty dataset");
  std::size_t pos = 0, neg = 0;
  for (const auto& inst : ds.instances) {
    if (inst.paths.empty()) continue;
    (inst.label == 1 ? pos : neg)++;
  }
  if (pos == 0 || neg == 0)
    throw Error("train_relation_model: need at least one positive and one negative instance");
  const std::span<const PathDataset> one(&ds, 1);
  auto rels = model_relations(one);
  // Pre-trained rows for relations absent from training stay usable at test time.
  if (pretrained)
    for (const auto& [r, v] : *pretrained) rels.push_back(r);
  RnnModel model =
      init_model(cfg.dim, composition, std::move(rels), {ds.target}, cfg.seed, pretrained, false);
  LossConfig loss_cfg;
  loss_cfg.l2 = cfg.l2;
  loss_cfg.freeze_vectors = cfg.freeze_relation_vectors;
  if (cfg.iterations > 0) train_model(model, one, cfg, loss_cfg, stats);
  return model;
}

RnnModel train_zero_shot(std::span<const PathDataset> datasets, const VectorTable& pretrained,
                         const TrainConfig& cfg, TrainStats* stats) {
  cfg.validate();
  if (!cfg.freeze_relation_vectors)
    throw Error("zero-shot training requires frozen relation vectors");
  if (datasets.empty()) throw Error("train_zero_shot: no datasets");
  std::set<RelationId> cands;
  for (const auto& ds : datasets) cands.insert(ds.target);
  // The frozen table travels with the model so relations never seen in
  // training can still be scored.
  auto rels = model_relations(datasets);
  for (const auto& [r, v] : pretrained) rels.push_back(r);
  RnnModel model =
      init_model(cfg.dim, Composition::shared, std::move(rels), {}, cfg.seed, &pretrained, true);
  LossConfig loss_cfg;
  loss_cfg.l2 = cfg.l2;
  loss_cfg.freeze_vectors = true;
  loss_cfg.scoring = Scoring::softmax;
  loss_cfg.candidates.assign(cands.begin(), cands.end());
  if (cfg.iterations > 0) train_model(model, datasets, cfg, loss_cfg, stats);
  return model;
}

GradCheckReport gradient_check(const RnnModel& model, std::span<const SelectedInstance> batch,
                               const LossConfig& cfg, double step) {
  GradCheckReport report;
  if (batch.empty()) return report;
  const auto analytic = loss_and_gradients(batch, model, cfg);
  for (const auto& inst : batch)
    if (inst.path.empty()) throw Error("instance without a selected path");
  WideParams probe{{model.params().vectors.begin(), model.params().vectors.end()},
                   {model.params().matrices.begin(), model.params().matrices.end()}};

  auto check_block = [&](std::vector<long double>& values, const std::vector<double>& grads) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const long double orig = values[i];
      values[i] = orig + step;
      const long double up = wide_batch_loss(batch, model, cfg, probe);
      values[i] = orig - step;
      const long double down = wide_batch_loss(batch, model, cfg, probe);
      values[i] = orig;
      const double numeric = static_cast<double>((up - down) / (2.0L * step));
      const double ga = grads[i];
      const double denom = std::max({std::abs(ga), std::abs(numeric), 1e-8});
      report.max_relative_error = std::max(report.max_relative_error, std::abs(ga - numeric) / denom);
      ++report.checked;
    }
  };

  if (cfg.freeze_vectors) {
    for (double g : analytic.gradient.vectors)
      report.max_frozen_gradient = std::max(report.max_frozen_gradient, std::abs(g));
  } else {
    check_block(probe.vectors, analytic.gradient.vectors);
  }
  check_block(probe.matrices, analytic.gradient.matrices);
  return report;
}

// ---------------------------------------------------------------- file format

namespace {
constexpr std::string_view kModelMagic = "KBCMODEL";
constexpr std::uint32_t kModelVersion = 2;
}  // namespace

void write_models(std::ostream& out, const ModelBundle& bundle, const RelationTable& relations) {
  out.write(kModelMagic.data(), kModelMagic.size());
  bin::write_u32(out, kModelVersion);
  if (bundle.targets.size() != bundle.models.size())
    throw Error("write_models: one target per model required");
  bin::write_string(out, bundle.kind);
  bin::write_u32(out, static_cast<std::uint32_t>(bundle.models.size()));
  for (std::size_t k = 0; k < bundle.models.size(); ++k) {
    const auto& m = bundle.models[k];
    bin::write_u32(out, static_cast<std::uint32_t>(m.dim()));
    bin::write_u8(out, static_cast<std::uint8_t>(m.composition()));
    bin::write_string(out, m.composition() == Composition::shared
                               ? std::string()
                               : relations.name(bundle.targets[k]));
    bin::write_u32(out, static_cast<std::uint32_t>(m.relations().size()));
    for (RelationId r : m.relations()) bin::write_string(out, relations.name(r));
    for (double x : m.params().vectors) bin::write_f64(out, x);
    bin::write_u32(out, static_cast<std::uint32_t>(m.matrix_count()));
    for (std::size_t i = 0; i < m.matrix_count(); ++i) {
      bin::write_string(out, m.composition() == Composition::shared
                                 ? std::string()
                                 : relations.name(m.matrix_targets()[i]));
      for (double x : m.matrix(i)) bin::write_f64(out, x);
    }
  }
}

ModelBundle read_models(std::istream& in, RelationTable& relations) {
  bin::expect_magic(in, kModelMagic);
  const auto version = bin::read_u32(in);
  if (version != kModelVersion)
    throw Error("unsupported model file version " + std::to_string(version));
  ModelBundle bundle;
  bundle.kind = bin::read_string(in);
  const auto count = bin::read_u32(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    const int dim = static_cast<int>(bin::read_u32(in));
    const auto comp = static_cast<Composition>(bin::read_u8(in));
    if (comp != Composition::per_relation && comp != Composition::shared &&
        comp != Composition::add)
      throw Error("bad composition tag in model file");
    const auto target = bin::read_string(in);
    bundle.targets.push_back(target.empty() ? 0 : relations.intern_name(target));
    const auto nr = bin::read_u32(in);
    std::vector<RelationId> rels;
    for (std::uint32_t i = 0; i < nr; ++i) rels.push_back(relations.intern_name(bin::read_string(in)));
    // Interning order can differ from the writer's table, so rows are read in
    // file order and placed by id.
    std::vector<std::vector<double>> rows(nr, std::vector<double>(static_cast<std::size_t>(dim)));
    for (auto& row : rows)
      for (auto& x : row) x = bin::read_f64(in);
    const auto nm = bin::read_u32(in);
    std::vector<RelationId> targets;
    std::vector<std::vector<double>> mats;
    const std::size_t msize = static_cast<std::size_t>(dim) * (2 * static_cast<std::size_t>(dim) + 1);
    for (std::uint32_t i = 0; i < nm; ++i) {
      const auto name = bin::read_string(in);
      targets.push_back(name.empty() ? 0 : relations.intern_name(name));
      std::vector<double> block(msize);
      for (auto& x : block) x = bin::read_f64(in);
      mats.push_back(std::move(block));
    }
    RnnModel m(dim, comp, rels, targets);
    for (std::uint32_t i = 0; i < nr; ++i) {
      auto dst = m.vector(rels[i]);
      std::copy(rows[i].begin(), rows[i].end(), dst.begin());
    }
    for (std::uint32_t i = 0; i < nm; ++i) {
      const std::size_t idx = comp == Composition::shared ? 0 : m.matrix_index(targets[i]);
      auto dst = m.matrix(idx);
      std::copy(mats[i].begin(), mats[i].end(), dst.begin());
    }
    bundle.models.push_back(std::move(m));
  }
  return bundle;
}

RelationVectors read_relation_vectors(std::istream& in) {
  RelationVectors out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    std::string_view v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    const auto tab = v.find('\t');
    if (tab == std::string_view::npos) throw ParseError(n, "expected name<TAB>values");
    std::vector<double> values;
    std::string_view rest = trim(v.substr(tab + 1));
    const char* p = rest.data();
    const char* end = rest.data() + rest.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p >= end) break;
      double x = 0;
      auto [next, ec] = std::from_chars(p, end, x);
      if (ec != std::errc()) throw ParseError(n, "bad vector value");
      values.push_back(x);
      p = next;
    }
    if (values.empty()) throw ParseError(n, "empty vector");
    if (out.dim == 0) out.dim = static_cast<int>(values.size());
    if (values.size() != static_cast<std::size_t>(out.dim))
      throw ParseError(n, "inconsistent vector dimension");
    out.rows.emplace_back(std::string(trim(v.substr(0, tab))), std::move(values));
  }
  return out;
}

void write_relation_vectors(std::ostream& out, const RelationVectors& vectors) {
  for (const auto& [name, values] : vectors.rows) {
    out << name << '\t';
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out << ' ';
      out << format_double(values[i]);
    }
    out << '\n';
  }
}

RelationVectors export_vectors(const RnnModel& model, const RelationTable& relations) {
  RelationVectors out;
  out.dim = model.dim();
  for (RelationId r : model.relations()) {
    const auto v = model.vector(r);
    out.rows.emplace_back(relations.name(r), std::vector<double>(v.begin(), v.end()));
  }
  return out;
}

VectorTable resolve_vectors(const RelationVectors& vectors, RelationTable& relations) {
  VectorTable table;
  for (const auto& [name, values] : vectors.rows)
    table[relations.intern_name(name)] = values;
  return table;
}

}  // namespace kbc
