#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dotsim/retrieval.hpp"
#include "dotsim/synthetic.hpp"
#include "dotsim/training.hpp"

namespace dotsim::experiment {

namespace fs = std::filesystem;

// Final-run hyperparameters for MF on the two published datasets.
struct Preset {
  std::string_view name;
  double eta;
  std::size_t m;
  double lambda;
  std::size_t epochs;
};

std::span<const Preset> presets();
const Preset& find_preset(std::string_view name);

inline constexpr std::array<double, 3> kCoarseEtas{0.001, 0.003, 0.01};
inline constexpr std::array<std::size_t, 3> kCoarseNegatives{4, 8, 16};

// Files written by cmd_prepare and the only ones cmd_grid reads.
inline constexpr std::string_view kTuningTrain = "tuning.train.rating";
inline constexpr std::string_view kTuningHeldout = "tuning.heldout.rating";
inline constexpr std::string_view kTuningNegatives = "tuning.test.negative";

struct PrepareConfig {
  fs::path ratings;
  fs::path out_dir;
  std::uint64_t seed = 0;
  std::size_t num_negatives = 100;
};

struct PrepareResult {
  fs::path train;
  fs::path heldout;
  fs::path negatives;
  std::size_t heldout_count = 0;
};

/// Splits off each user's latest interaction and samples evaluation negatives
/// for it, writing the three tuning files into out_dir.
PrepareResult cmd_prepare(const PrepareConfig& config);

struct TrainEvalConfig {
  fs::path train;
  fs::path negatives;
  std::string dataset;      // CSV label; empty means the train file's stem
  std::string model = "mf";  // mf | gmf | mlp | neumf | popularity
  std::optional<std::size_t> d;
  std::optional<std::size_t> factor;  // predictive factor, alternative to d
  SgdConfig sgd;
  AdamConfig adam;
  std::optional<double> head_lambda;
  bool pretrain = false;  // NeuMF from separately trained GMF and MLP
  std::size_t k = 10;
  std::size_t repeats = 8;
  std::uint64_t seed = 0;  // repeat r uses seed + r
  std::size_t workers = 1;
  fs::path out_dir;         // empty: no metrics logs or checkpoints
  std::size_t eval_every = 0;  // evaluate every n epochs into the metrics log; 0 never
  bool checkpoints = true;

  void validate() const;
  std::size_t embedding_dim() const;
};

struct EvalRow {
  std::string model;
  std::string dataset;
  std::size_t d = 0;
  std::string seed;  // "mean" on the summary row
  std::size_t epoch = 0;
  double hr = 0.0;
  double ndcg = 0.0;
};

struct TrainEvalResult {
  std::vector<EvalRow> rows;  // ascending seed
  EvalRow mean;
};

TrainEvalResult cmd_train_eval(const TrainEvalConfig& config);

struct GridConfig {
  fs::path tuning_dir;
  TrainEvalConfig base;  // train/negatives/repeats are ignored
  std::vector<double> etas{kCoarseEtas.begin(), kCoarseEtas.end()};
  std::vector<std::size_t> negatives{kCoarseNegatives.begin(), kCoarseNegatives.end()};
  std::vector<double> lambdas;  // empty: {base.sgd.lambda}
};

struct GridRow {
  double eta = 0.0;
  std::size_t m = 0;
  double lambda = 0.0;
  std::size_t d = 0;
  double hr = 0.0;
  double ndcg = 0.0;
};

struct GridResult {
  std::vector<GridRow> rows;      // HR@k descending, then NDCG@k, then grid order
  std::vector<fs::path> inputs;   // every file the search opened
};

/// Trains one model per (eta, m, lambda) cell on the tuning split of
/// tuning_dir and evaluates it on the tuning negatives.
GridResult cmd_grid(const GridConfig& config);

// h given as a multiple of d: "d/2", "d", "2d", or a plain number.
std::size_t resolve_h(std::string_view rule, std::size_t d);

struct SynthSweep {
  synth::SynthConfig base;
  std::vector<std::size_t> ds;        // empty: {base.d}
  std::vector<std::string> h_rules;   // empty: {base.h}
  std::vector<std::size_t> users;     // M values; empty: {base.M}
  std::size_t workers = 1;
};

std::vector<synth::SynthReport> cmd_synth(const SynthSweep& sweep);

std::vector<BenchRow> cmd_bench(const BenchConfig& config);

// CSV writers, header row first. Numbers use the shortest round-trip form.
void write_eval_csv(std::ostream& out, const TrainEvalResult& result, std::size_t k);
void write_grid_csv(std::ostream& out, const GridResult& result, std::size_t k);
void write_synth_csv(std::ostream& out, std::span<const synth::SynthReport> reports);
void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows);

std::string format_number(double value);

}  // namespace dotsim::experiment
