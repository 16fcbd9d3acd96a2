#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dotsim/dataset.hpp"

namespace dotsim {

// Embedding tables are row-major so that one user's (item's) vector is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ModelKind { kMf, kGmf, kMlp, kNeuMf };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);  // "mf" | "gmf" | "mlp" | "neumf"

inline std::span<const double> row_span(const Matrix& m, Index r) {
  return {m.data() + static_cast<std::ptrdiff_t>(r) * m.cols(), static_cast<std::size_t>(m.cols())};
}

// Dot product, optionally with biases folded into coordinate 0 of each
// embedding: b + p[0] + q[0] + <p[1:], q[1:]>.
struct DotParams {
  Matrix P;
  Matrix Q;
  bool use_bias = true;
  double b = 0.0;  // never trained
};

// Weighted dot product sum_f w_f p_f q_f.
struct GmfParams {
  Matrix P;
  Matrix Q;
  Vector w;
};

// Affine layers with ReLU between them; the last layer is affine with a
// single output and no activation.
struct MlpTower {
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is out x in
  std::vector<Vector> biases;

  // Zero-initialized tower with dims [in, h1, ..., hL, 1].
  static MlpTower zeros(const std::vector<std::size_t>& layer_dims);

  std::vector<std::size_t> layer_dims() const;
  std::size_t input_dim() const;
  std::size_t num_layers() const { return weights.size(); }
  void validate() const;
};

struct MlpSimParams {
  Matrix P;
  Matrix Q;
  MlpTower tower;  // input dim 2d
};

// Leading j coordinates feed the MLP branch, trailing d - j the GMF branch.
struct NeuMfParams {
  Matrix P;
  Matrix Q;
  std::size_t j = 0;
  MlpTower tower;  // input dim 2j
  Vector gmf_w;    // length d - j
};

using ModelParams = std::variant<DotParams, GmfParams, MlpSimParams, NeuMfParams>;

ModelKind kind_of(const ModelParams& params);
std::size_t num_users(const ModelParams& params);
std::size_t num_items(const ModelParams& params);
std::size_t embedding_dim(const ModelParams& params);

// Throws ValidationError when shapes break the type invariants.
void validate(const DotParams& params);
void validate(const GmfParams& params);
void validate(const MlpSimParams& params);
void validate(const NeuMfParams& params);
void validate(const ModelParams& params);

double score_dot(std::span<const double> p, std::span<const double> q, bool use_bias = false,
                 double b = 0.0);
double score_gmf_logit(std::span<const double> p, std::span<const double> q,
                       std::span<const double> w);

struct MlpForward {
  double score = 0.0;
  std::vector<Vector> activations;      // [x, relu(z_1), ..., relu(z_{L-1})]
  std::vector<Vector> pre_activations;  // [z_1, ..., z_{L-1}] for the hidden layers
};

MlpForward mlp_forward(const MlpTower& tower, std::span<const double> x);

// Concatenation [p, q] used as the tower input.
Vector concat(std::span<const double> p, std::span<const double> q);

double score(const DotParams& params, Index user, Index item);
double score(const GmfParams& params, Index user, Index item);
double score(const MlpSimParams& params, Index user, Index item);
double score(const NeuMfParams& params, Index user, Index item);
double score(const ModelParams& params, Index user, Index item);

/// Batch scoring; element i is bitwise equal to score(params, user, items[i]).
std::vector<double> score_items(const ModelParams& params, Index user, std::span<const Index> items);

struct EmbeddingLayout {
  std::size_t d = 0;
  std::size_t j = 0;  // MLP share for NeuMF, 0 otherwise
};

/// Predictive factor k (last hidden width of the 3-layer tower) to embedding
/// size: MF/GMF use d = k, MLP d = 2k, NeuMF d = 3k with j = 2k.
EmbeddingLayout predictive_factor_to_dims(std::size_t k, ModelKind kind);

// NeuMF split for a total dimension d: j = round(2d/3).
std::size_t neumf_split(std::size_t d);

// Hidden widths [4k, 2k, k] with k = embedding_dim / 2 (at least 1).
std::vector<std::size_t> default_hidden_dims(std::size_t embedding_dim);

// [2 * embedding_dim, hidden..., 1]
std::vector<std::size_t> tower_dims(std::size_t embedding_dim, const std::vector<std::size_t>& hidden);

// Binary checkpoint: magic, format version, kind, shapes, row-major arrays.
void save_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams load_checkpoint(std::istream& in);

}  // namespace dotsim
