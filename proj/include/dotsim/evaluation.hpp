#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dotsim/dataset.hpp"
#include "dotsim/models.hpp"

namespace dotsim {

/// 1 + number of negatives scoring strictly above the positive, so ties go to
/// the positive. Throws ValidationError on NaN.
std::size_t rank_of(double positive_score, std::span<const double> negative_scores);

int hr_at_k(std::size_t rank, std::size_t k);

// 1 / log2(rank + 1) inside the cutoff, 0 outside.
double ndcg_at_k(std::size_t rank, std::size_t k);

struct UserRank {
  Index user = 0;
  std::size_t rank = 0;
};

struct EvalResult {
  double hr = 0.0;
  double ndcg = 0.0;
  std::size_t k = 10;
  std::size_t tied_cases = 0;  // cases where some negative scores exactly equal the positive
  std::vector<UserRank> per_user;  // ascending user order

  double tie_fraction() const {
    return per_user.empty() ? 0.0 : static_cast<double>(tied_cases) / static_cast<double>(per_user.size());
  }
};

struct EvalOptions {
  std::size_t k = 10;
  std::size_t workers = 1;
  bool warn_on_ties = true;  // writes to stderr when more than 1% of cases tie
};

// Scores items for one user; element i belongs to items[i].
using ItemScorer = std::function<std::vector<double>(Index user, std::span<const Index> items)>;

/// Ranks every case's positive against its negatives and averages HR@k and
/// NDCG@k. Sums run in ascending user order, so the result does not depend on
/// case order or worker count.
EvalResult evaluate(const ItemScorer& scorer, const EvalSet& eval_set, const EvalOptions& opts = {});
EvalResult evaluate(const ModelParams& model, const EvalSet& eval_set, const EvalOptions& opts = {});

// Training interaction count per item.
std::vector<double> popularity_scores(const RatingCorpus& corpus);

EvalResult evaluate_static(std::span<const double> item_scores, const EvalSet& eval_set,
                           const EvalOptions& opts = {});

}  // namespace dotsim
