#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kbc/graph.hpp"
#include "kbc/paths.hpp"
#include "kbc/util.hpp"

namespace kbc {

enum class Composition : std::uint8_t {
  per_relation = 0,  // one matrix per predicted relation
  shared = 1,        // one matrix for every relation (zero-shot)
  add = 2,           // h_i = sigmoid(h_{i-1} + v_i), no matrix
};

enum class Scoring : std::uint8_t { sigmoid, softmax };

class MissingRelationError : public Error {
 public:
  explicit MissingRelationError(RelationId id)
      : Error("no vector for relation id " + std::to_string(id)), id_(id) {}
  RelationId relation() const { return id_; }

 private:
  RelationId id_;
};

/// Flat parameter storage. `vectors` holds one row of `dim` values per model
/// relation; `matrices` holds row-major dim x (2*dim+1) blocks, the last
/// column multiplying the constant bias feature.
struct Parameters {
  std::vector<double> vectors;
  std::vector<double> matrices;

  void fill(double v);
  bool operator==(const Parameters&) const = default;
};

class RnnModel {
 public:
  RnnModel() = default;
  /// Zero-initialized model. `relations` are deduplicated and sorted.
  RnnModel(int dim, Composition composition, std::vector<RelationId> relations,
           std::vector<RelationId> matrix_targets);

  int dim() const { return dim_; }
  Composition composition() const { return composition_; }
  std::span<const RelationId> relations() const { return relations_; }
  std::span<const RelationId> matrix_targets() const { return matrix_targets_; }
  std::size_t matrix_count() const { return matrix_targets_.size(); }
  std::size_t matrix_cols() const { return 2 * static_cast<std::size_t>(dim_) + 1; }
  std::size_t matrix_size() const { return static_cast<std::size_t>(dim_) * matrix_cols(); }

  bool has_vector(RelationId r) const { return rows_.count(r) > 0; }
  std::size_t row(RelationId r) const;  // throws MissingRelationError
  std::span<const double> vector(RelationId r) const;
  std::span<double> vector(RelationId r);
  /// Matrix block used when predicting `target`.
  std::size_t matrix_index(RelationId target) const;
  std::span<const double> matrix(std::size_t index) const;
  std::span<double> matrix(std::size_t index);

  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

  bool operator==(const RnnModel& o) const {
    return dim_ == o.dim_ && composition_ == o.composition_ && relations_ == o.relations_ &&
           matrix_targets_ == o.matrix_targets_ && params_ == o.params_;
  }

 private:
  int dim_ = 0;
  Composition composition_ = Composition::per_relation;
  std::vector<RelationId> relations_;
  std::vector<RelationId> matrix_targets_;
  std::unordered_map<RelationId, std::size_t> rows_;
  Parameters params_;
};

double sigmoid(double x);
double dot(std::span<const double> a, std::span<const double> b);

/// Folds relation vectors left to right: h1 = v(r1), hi = f(h_{i-1}, v(ri)).
/// Length-one paths return the relation vector itself. Dispatches on the
/// model's composition; `target` selects the matrix in per-relation mode.
std::vector<double> compose_path(const PathType& path, const RnnModel& model,
                                 RelationId target);
/// Element-wise addition composition regardless of the model's mode.
std::vector<double> compose_add(const PathType& path, const RnnModel& model);

/// sigmoid(path_vec . v(target))
double score_fact(std::span<const double> path_vec, RelationId target, const RnnModel& model);

/// Index of the path whose composed vector has the largest dot product with
/// v(target); ties go to the lexicographically smallest path.
std::size_t select_latent_path(std::span<const PathType> paths, const RnnModel& model,
                               RelationId target);

struct SelectedInstance {
  PathType path;
  RelationId target;
  int label;
};

struct LossConfig {
  static constexpr double kProbabilityClamp = 1e-12;

  double l2 = 1e-4;
  bool freeze_vectors = false;
  Scoring scoring = Scoring::sigmoid;
  std::vector<RelationId> candidates;  // softmax support
};

struct LossAndGradient {
  double loss = 0;
  Parameters gradient;
};

/// Negative log-likelihood of the batch plus l2 * ||theta||^2 over the trainable
/// parameters the batch touches, with gradients by backpropagation through the
/// composition.
LossAndGradient loss_and_gradients(std::span<const SelectedInstance> batch,
                                   const RnnModel& model, const LossConfig& cfg);
double batch_loss(std::span<const SelectedInstance> batch, const RnnModel& model,
                  const LossConfig& cfg);

struct AdaGradState {
  static constexpr double kEpsilon = 1e-8;

  Parameters accumulated;
  double epsilon = kEpsilon;

  AdaGradState() = default;
  explicit AdaGradState(const Parameters& shape);
};

/// accum += g^2; param -= lr * g / (sqrt(accum) + eps), coordinate-wise.
void adagrad_update(std::span<double> params, std::span<const double> grads,
                    std::span<double> accumulated, double lr, double epsilon);
void adagrad_update(Parameters& params, const Parameters& grads, AdaGradState& state,
                    double lr, bool freeze_vectors);

struct TrainConfig {
  int iterations = 150;
  int batch_size = 20;
  double learning_rate = 0.1;
  int lr_halving_period = 60;
  double l2 = 1e-4;
  int dim = 50;
  std::uint64_t seed = 1;
  bool freeze_relation_vectors = false;
  bool shuffle = true;

  void validate() const;
  double learning_rate_at(int iteration) const;  // iteration counts from 1
};

struct TrainStats {
  /// Full training loss after each iteration (latent paths reselected).
  std::vector<double> epoch_losses;
};

using VectorTable = std::unordered_map<RelationId, std::vector<double>>;

/// Relation vectors and matrices drawn uniformly from [-1/sqrt(d), 1/sqrt(d)]
/// (independent streams), then relation vectors found in `pretrained` are
/// overwritten by their pre-trained values.
RnnModel init_model(int dim, Composition composition, std::vector<RelationId> relations,
                    std::vector<RelationId> matrix_targets, std::uint64_t seed,
                    const VectorTable* pretrained = nullptr, bool require_pretrained = false);

/// Minibatch AdaGrad with latent max-path selection, one model per target.
RnnModel train_relation_model(const PathDataset& ds, const TrainConfig& cfg,
                              Composition composition = Composition::per_relation,
                              const VectorTable* pretrained = nullptr,
                              TrainStats* stats = nullptr);

/// Continues training `model` in place; used by train_relation_model.
void train_model(RnnModel& model, std::span<const PathDataset> datasets, const TrainConfig& cfg,
                 const LossConfig& loss_cfg, TrainStats* stats = nullptr);

/// Shared-matrix softmax model over frozen pre-trained vectors, trained jointly
/// on every dataset; the softmax support is the set of dataset targets.
RnnModel train_zero_shot(std::span<const PathDataset> datasets, const VectorTable& pretrained,
                         const TrainConfig& cfg, TrainStats* stats = nullptr);

/// Paths whose relations all have a vector in `model`.
std::vector<PathType> known_paths(std::span<const PathType> paths, const RnnModel& model);

/// sigmoid score of the latent path among the known paths; 0 when none is
/// known.
double predict_probability(std::span<const PathType> paths, const RnnModel& model,
                           RelationId target);
/// Softmax probability of `target` among `candidates` for the latent path.
double predict_zero_shot(std::span<const PathType> paths, const RnnModel& model,
                         RelationId target, std::span<const RelationId> candidates);

struct GradCheckReport {
  double max_relative_error = 0;
  double max_frozen_gradient = 0;  // largest |analytic| entry in frozen blocks
  std::size_t checked = 0;
};

/// Compares every trainable analytic partial derivative against central
/// differences: |ga - gn| / max(|ga|, |gn|, 1e-8). The numeric side is computed
/// in extended precision so rounding of the loss does not dominate tiny partials.
GradCheckReport gradient_check(const RnnModel& model, std::span<const SelectedInstance> batch,
                               const LossConfig& cfg, double step);

// ---------------------------------------------------------------- file format

struct ModelBundle {
  std::string kind;  // method name, e.g. "rnn", "add", "zero-shot"
  std::vector<RnnModel> models;
  // Relation predicted by models[i]. Add models have no matrix to carry it;
  // shared models ignore it.
  std::vector<RelationId> targets;
};

void write_models(std::ostream& out, const ModelBundle& bundle, const RelationTable& relations);
/// Relation names are interned into `relations`.
ModelBundle read_models(std::istream& in, RelationTable& relations);

/// Text vectors, one relation per line: `name<TAB>v1 v2 ... vd`.
struct RelationVectors {
  int dim = 0;
  std::vector<std::pair<std::string, std::vector<double>>> rows;
};

RelationVectors read_relation_vectors(std::istream& in);
void write_relation_vectors(std::ostream& out, const RelationVectors& vectors);
RelationVectors export_vectors(const RnnModel& model, const RelationTable& relations);
VectorTable resolve_vectors(const RelationVectors& vectors, RelationTable& relations);

}  // namespace kbc
