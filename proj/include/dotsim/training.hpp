#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dotsim/dataset.hpp"
#include "dotsim/models.hpp"

namespace dotsim {

double sigmoid(double x);

// ln sigmoid(x) without overflow for large |x|.
double log_sigmoid(double x);

// Binary cross-entropy of sigmoid(score) against y in {0, 1}.
double logistic_loss(double score, double y);

struct TrainExample {
  Index user = 0;
  Index item = 0;
  std::uint8_t y = 0;

  friend bool operator==(const TrainExample&, const TrainExample&) = default;
};

struct SgdConfig {
  double eta = 0.002;
  double lambda = 0.005;
  std::size_t m = 8;  // negatives per positive
  std::size_t epochs = 256;
  double init_std = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

// L2 strengths. Embedding rows use lambda, tower weights and GMF weights use
// head_lambda. Tower biases are never regularized.
struct Regularization {
  double lambda = 0.0;
  double head_lambda = 0.0;
};

/// One epoch of training examples: each positive once with y = 1 plus m
/// uniform draws over all items with y = 0 (collisions with positives are
/// allowed), shuffled. Pure function of (corpus, m, seed, epoch).
std::vector<TrainExample> sample_negatives(const RatingCorpus& corpus, std::size_t m,
                                           std::uint64_t seed, std::size_t epoch);

/// The four-rule SGD update for biased MF (coordinate 0 is the bias slot; with
/// use_bias unset every coordinate is latent). Both sides use pre-update
/// values of the other. Returns the logistic loss before the update.
double sgd_step_mf(DotParams& params, const TrainExample& ex, double eta, double lambda);

// Called after every epoch with the 1-based epoch number and mean logistic
// loss (without regularization) over the epoch's examples.
using EpochCallback = std::function<void(std::size_t epoch, double mean_loss, const ModelParams&)>;

DotParams init_dot(std::size_t num_users, std::size_t num_items, std::size_t d, bool use_bias,
                   double init_std, std::uint64_t seed);

/// Gaussian init then cfg.epochs passes of sgd_step_mf.
DotParams train_mf(const RatingCorpus& corpus, const SgdConfig& cfg, std::size_t d,
                   bool use_bias = true, const EpochCallback& on_epoch = {});

// ---- learned similarities ----

struct Gradients {
  Index user = 0;
  Index item = 0;
  Vector user_row;  // d/dp_u
  Vector item_row;  // d/dq_i
  Vector w;         // GMF weights (GMF and NeuMF), empty otherwise
  std::vector<Eigen::MatrixXd> tower_weights;
  std::vector<Vector> tower_biases;
  double loss = 0.0;       // regularized per-example loss at the current parameters
  double data_loss = 0.0;  // logistic part only

  std::vector<double> flatten() const;
};

/// Regularized per-example loss:
///   logistic(score, y) + lambda/2 (|p_u|^2 + |q_i|^2)
///                      + head_lambda/2 (|w|^2 + sum_l |W_l|_F^2)
double example_loss(const GmfParams& params, const TrainExample& ex, const Regularization& reg);
double example_loss(const MlpSimParams& params, const TrainExample& ex, const Regularization& reg);
double example_loss(const NeuMfParams& params, const TrainExample& ex, const Regularization& reg);

/// Exact gradients of example_loss by reverse-mode accumulation. ReLU'(0) = 0.
Gradients backprop(const GmfParams& params, const TrainExample& ex, const Regularization& reg);
Gradients backprop(const MlpSimParams& params, const TrainExample& ex, const Regularization& reg);
Gradients backprop(const NeuMfParams& params, const TrainExample& ex, const Regularization& reg);

/// Central differences (L(theta + h e_k) - L(theta - h e_k)) / 2h.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> theta, double h);

// Same, over every parameter touched by ex, laid out like Gradients::flatten().
std::vector<double> finite_diff_grad(const GmfParams& params, const TrainExample& ex,
                                     const Regularization& reg, double h);
std::vector<double> finite_diff_grad(const MlpSimParams& params, const TrainExample& ex,
                                     const Regularization& reg, double h);
std::vector<double> finite_diff_grad(const NeuMfParams& params, const TrainExample& ex,
                                     const Regularization& reg, double h);

/// Bias-corrected Adam on a flat parameter vector. Lazily sizes the state on
/// first use; t increments by one per call.
void adam_step(std::span<double> theta, std::span<const double> g, AdamState& state,
               const AdamConfig& cfg);

/// Sum of logistic losses over examples plus lambda/2 (|P|_F^2 + |Q|_F^2) +
/// w_lambda/2 |w|^2. With w_lambda = 0 this is invariant under
/// (P/a, Q/a, a^2 w, a^2 lambda).
double regularized_objective(const GmfParams& params, std::span<const TrainExample> examples,
                             double lambda, double w_lambda = 0.0);

enum class Optimizer { kAdam, kSgd };

struct LearnedConfig {
  SgdConfig sgd;  // eta is used only by Optimizer::kSgd
  AdamConfig adam;
  Optimizer optimizer = Optimizer::kAdam;
  std::optional<double> head_lambda;        // defaults to sgd.lambda
  std::vector<std::size_t> hidden;          // empty: default_hidden_dims
  std::optional<std::size_t> neumf_j;       // empty: neumf_split(d)
  bool train_head = true;                   // false freezes w and the tower

  Regularization regularization() const {
    return {sgd.lambda, head_lambda.value_or(sgd.lambda)};
  }
};

/// Embeddings and tower weights ~ N(0, init_std^2) from one seeded stream,
/// tower biases 0, GMF weights 1.
ModelParams init_learned(ModelKind kind, std::size_t num_users, std::size_t num_items,
                         std::size_t d, const LearnedConfig& cfg);

/// Trains params in place for cfg.sgd.epochs epochs with per-example updates.
void fit_learned(ModelParams& params, const RatingCorpus& corpus, const LearnedConfig& cfg,
                 const EpochCallback& on_epoch = {});

ModelParams train_learned(const RatingCorpus& corpus, ModelKind kind, const LearnedConfig& cfg,
                          std::size_t d, const EpochCallback& on_epoch = {});

/// Concatenates separately trained tables into the NeuMF layout:
/// P = [P_mlp | P_gmf], tower and w copied.
NeuMfParams combine_neumf(const MlpSimParams& mlp, const GmfParams& gmf);

/// Trains MLP (d = 2k) and GMF (d = k) independently, combines them (j = 2k,
/// d = 3k) and fine-tunes the result with cfg_finetune.
NeuMfParams pretrain_neumf(const RatingCorpus& corpus, const LearnedConfig& cfg_mlp,
                           const LearnedConfig& cfg_gmf, const LearnedConfig& cfg_finetune,
                           std::size_t k, const EpochCallback& on_finetune_epoch = {});

}  // namespace dotsim
