#include "dotsim/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <thread>

#include "dotsim/error.hpp"

namespace dotsim {

std::size_t rank_of(double positive_score, std::span<const double> negative_scores) {
  if (std::isnan(positive_score)) throw ValidationError("NaN positive score");
  std::size_t above = 0;
  for (const double s : negative_scores) {
    if (std::isnan(s)) throw ValidationError("NaN negative score");
    if (s > positive_score) ++above;
  }
  return above + 1;
}

int hr_at_k(std::size_t rank, std::size_t k) { return rank <= k ? 1 : 0; }

double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

EvalResult evaluate(const ItemScorer& scorer, const EvalSet& eval_set, const EvalOptions& opts) {
  if (opts.k < 1) throw ValidationError("cutoff k must be >= 1");
  const std::size_t n = eval_set.cases.size();
  std::vector<std::size_t> ranks(n);
  std::vector<char> tied(n, 0);

  auto run = [&](std::size_t begin, std::size_t end) {
    std::vector<Index> items;
    for (std::size_t c = begin; c < end; ++c) {
      const auto& ec = eval_set.cases[c];
      items.assign(1, ec.positive);
      items.insert(items.end(), ec.negatives.begin(), ec.negatives.end());
      const auto scores = scorer(ec.user, items);
      const std::span<const double> negs(scores.data() + 1, scores.size() - 1);
      ranks[c] = rank_of(scores[0], negs);
      tied[c] = std::any_of(negs.begin(), negs.end(), [&](double s) { return s == scores[0]; });
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(opts.workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    run(0, n);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = std::min(n, w * chunk);
      const std::size_t end = std::min(n, begin + chunk);
      pool.emplace_back(run, begin, end);
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return eval_set.cases[a].user < eval_set.cases[b].user;
  });

  EvalResult result;
  result.k = opts.k;
  result.per_user.reserve(n);
  double hr = 0.0;
  double ndcg = 0.0;
  for (const std::size_t c : order) {
    hr += hr_at_k(ranks[c], opts.k);
    ndcg += ndcg_at_k(ranks[c], opts.k);
    result.tied_cases += tied[c] ? 1 : 0;
    result.per_user.push_back({eval_set.cases[c].user, ranks[c]});
  }
  if (n > 0) {
    result.hr = hr / static_cast<double>(n);
    result.ndcg = ndcg / static_cast<double>(n);
  }
  if (opts.warn_on_ties && result.tie_fraction() > 0.01) {
    std::cerr << "warning: " << result.tied_cases << " of " << n
              << " eval cases contain exact score ties; ties are ranked in the positive's favor "
                 "(constant or degenerate model?)\n";
  }
  return result;
}

EvalResult evaluate(const ModelParams& model, const EvalSet& eval_set, const EvalOptions& opts) {
  return evaluate([&](Index user, std::span<const Index> items) { return score_items(model, user, items); },
                  eval_set, opts);
}

std::vector<double> popularity_scores(const RatingCorpus& corpus) {
  std::vector<double> counts(corpus.num_items, 0.0);
  for (const auto& list : corpus.positives) {
    for (const auto& x : list) counts[x.item] += 1.0;
  }
  return counts;
}

EvalResult evaluate_static(std::span<const double> item_scores, const EvalSet& eval_set,
                           const EvalOptions& opts) {
  return evaluate(
      [&](Index, std::span<const Index> items) {
        std::vector<double> out;
        out.reserve(items.size());
        for (const Index i : items) {
          if (i >= item_scores.size()) {
            throw BoundsError("item " + std::to_string(i) + " has no static score");
          }
          out.push_back(item_scores[i]);
        }
        return out;
      },
      eval_set, opts);
}

}  // namespace dotsim
