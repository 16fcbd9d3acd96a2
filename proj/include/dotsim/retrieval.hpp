#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dotsim/dataset.hpp"
#include "dotsim/models.hpp"

namespace dotsim {

// Descending score, ascending item index among equal scores.
struct TopK {
  std::vector<Index> items;
  std::vector<double> scores;
};

/// The k best positions of scores; same result as a full sort truncated to k.
TopK topk_select(std::span<const double> scores, std::size_t k);

/// Scores the whole catalog for one user and keeps the top k. When exclude is
/// given, that user's training positives are skipped.
TopK retrieve(const ModelParams& model, Index user, std::size_t k,
              const RatingCorpus* exclude = nullptr);

struct BenchRow {
  std::string head;  // "dot" | "mlp"
  std::size_t d = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  double median_us_per_query = 0.0;
};

struct BenchConfig {
  std::vector<std::size_t> d_grid{16, 32, 64, 128};
  std::size_t n = 10000;
  std::size_t k = 10;
  std::size_t trials = 5;
  std::size_t queries = 8;  // users timed per trial
  std::uint64_t seed = 0;
};

/// Median-of-trials wall time per query for brute-force retrieval with a dot
/// head and an MLP head (default [4k, 2k, k] tower, k = d/2) over random
/// parameters. One warm-up pass precedes timing.
std::vector<BenchRow> bench_retrieval(const BenchConfig& config);

}  // namespace dotsim
