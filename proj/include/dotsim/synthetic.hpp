#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "dotsim/models.hpp"
#include "dotsim/training.hpp"

namespace dotsim::synth {

// Calibration targets: RMSE of the always-zero predictor and label noise.
inline constexpr double kTrivialRmse = 1.13;
inline constexpr double kLabelNoise = 0.85;

/// Embedding std such that label_noise^2 + d * sigma_emb^4 = 1.13^2, i.e.
/// sigma_emb^2 = sqrt((1.13^2 - 0.85^2) / d).
double sigma_emb(std::size_t d);

struct SynthConfig {
  std::size_t d = 8;
  std::size_t M = 1000;  // users
  std::size_t N = 0;     // items; 0 means N = M
  std::size_t h = 8;     // tower hidden widths [4h, 2h, h]
  double sigma_label = kLabelNoise;
  std::size_t samples_per_user = 100;
  double train_frac = 0.9;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  AdamConfig adam;
  std::size_t epochs = 32;       // cap
  std::size_t batch_size = 64;
  double min_improvement = 1e-4;  // train RMSE improvement threshold ...
  std::size_t patience = 5;       // ... over this many consecutive epochs
  std::size_t fresh_count = 0;    // 0 means the size of test_observed

  std::size_t items() const { return N == 0 ? M : N; }
  void validate() const;
};

/// Examples (p, q, y). Embeddings are stored as shared tables plus row
/// indices; fresh sets use a private table with one row per example.
struct SynthBatch {
  std::shared_ptr<const Matrix> users;
  std::shared_ptr<const Matrix> items;
  std::vector<Index> user_rows;
  std::vector<Index> item_rows;
  std::vector<double> y;

  std::size_t size() const { return y.size(); }
  std::span<const double> p(std::size_t i) const { return row_span(*users, user_rows[i]); }
  std::span<const double> q(std::size_t i) const { return row_span(*items, item_rows[i]); }
};

struct SynthData {
  SynthBatch train;
  SynthBatch test_observed;
  SynthBatch test_fresh;
};

/// Draws P (M x d) and Q (N x d) from N(0, sigma_emb^2 I), samples
/// samples_per_user * M distinct (u, i) pairs without replacement, splits them
/// train_frac / rest, and labels y = <p, q> + N(0, sigma_label^2). The fresh
/// set draws both embeddings of every example anew. Deterministic given seed.
SynthData generate(const SynthConfig& config);

double rmse(std::span<const double> predictions, std::span<const double> labels);

struct BaselineRmse {
  double trivial = 0.0;
  double dot = 0.0;
};

BaselineRmse baseline_rmses(const SynthBatch& batch);

/// MLP regressor [2d -> 4h -> 2h -> h -> 1] trained with mini-batch Adam on
/// squared error.
struct RegressorFit {
  MlpTower tower;
  std::size_t epochs_run = 0;
  double train_rmse = 0.0;
};

RegressorFit train_regressor(const SynthBatch& train, const SynthConfig& config, std::uint64_t seed);

std::vector<double> predict(const MlpTower& tower, const SynthBatch& batch);

struct SynthRow {
  std::size_t repeat = 0;
  std::size_t train_pairs = 0;
  double rmse_mlp_observed = 0.0;
  double rmse_mlp_fresh = 0.0;
  double rmse_dot_empirical = 0.0;           // fresh set
  double rmse_dot_empirical_observed = 0.0;
  double approx_err_observed = 0.0;          // rmse_mlp_observed - sigma_label
  double approx_err_fresh = 0.0;             // rmse_mlp_fresh - sigma_label
  double approx_err_emp_observed = 0.0;      // against the empirical dot RMSE
  double approx_err_emp_fresh = 0.0;
  std::size_t epochs_run = 0;
};

struct SynthReport {
  SynthConfig config;
  std::vector<SynthRow> rows;  // one per repeat, ascending
  SynthRow mean;
};

/// Runs config.repeats independent generate + train + measure jobs, up to
/// `workers` at a time.
SynthReport run_synth(const SynthConfig& config, std::size_t workers = 1);

}  // namespace dotsim::synth
