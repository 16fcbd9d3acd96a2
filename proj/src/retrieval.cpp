#include "dotsim/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

#include "dotsim/error.hpp"
#include "dotsim/rng.hpp"

namespace dotsim {
namespace {

TopK select_from(std::span<const Index> ids, std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> pos(scores.size());
  std::iota(pos.begin(), pos.end(), 0);
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  const std::size_t take = std::min(k, pos.size());
  std::partial_sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(take), pos.end(), better);
  TopK out;
  out.items.reserve(take);
  out.scores.reserve(take);
  for (std::size_t r = 0; r < take; ++r) {
    out.items.push_back(ids[pos[r]]);
    out.scores.push_back(scores[pos[r]]);
  }
  return out;
}

void fill(Matrix& m, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
}

template <typename F>
double time_us(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::micro>(stop - start).count();
}

}  // namespace

TopK topk_select(std::span<const double> scores, std::size_t k) {
  if (k < 1) throw ValidationError("k must be >= 1");
  std::vector<Index> ids(scores.size());
  std::iota(ids.begin(), ids.end(), Index{0});
  return select_from(ids, scores, k);
}

TopK retrieve(const ModelParams& model, Index user, std::size_t k, const RatingCorpus* exclude) {
  if (k < 1) throw ValidationError("k must be >= 1");
  if (user >= num_users(model)) throw BoundsError("user " + std::to_string(user) + " out of range");
  std::vector<Index> ids(num_items(model));
  std::iota(ids.begin(), ids.end(), Index{0});
  if (exclude && user < exclude->positives.size()) {
    std::vector<char> seen(ids.size(), 0);
    for (const auto& x : exclude->positives[user]) {
      if (x.item < seen.size()) seen[x.item] = 1;
    }
    std::erase_if(ids, [&](Index i) { return seen[i] != 0; });
  }
  const auto scores = score_items(model, user, ids);
  return select_from(ids, scores, k);
}

std::vector<BenchRow> bench_retrieval(const BenchConfig& config) {
  if (config.trials < 3) throw ValidationError("bench needs at least 3 trials");
  if (config.n < 1 || config.queries < 1) throw ValidationError("bench needs n, queries >= 1");
  std::vector<BenchRow> rows;
  for (const std::size_t d : config.d_grid) {
    Rng rng = make_rng({config.seed, stream::kBench, d});
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix P(static_cast<Eigen::Index>(config.queries), static_cast<Eigen::Index>(d));
    Matrix Q(static_cast<Eigen::Index>(config.n), static_cast<Eigen::Index>(d));
    fill(P, stddev, rng);
    fill(Q, stddev, rng);

    MlpTower tower = MlpTower::zeros(tower_dims(d, default_hidden_dims(d)));
    for (auto& w : tower.weights) {
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(w.cols())));
      for (Eigen::Index c = 0; c < w.size(); ++c) w.data()[c] = normal(rng);
    }
    const ModelParams dot = DotParams{P, Q, false, 0.0};
    const ModelParams mlp = MlpSimParams{P, Q, std::move(tower)};

    for (const auto& [head, model] : {std::pair{"dot", &dot}, std::pair{"mlp", &mlp}}) {
      auto run_queries = [&] {
        for (std::size_t u = 0; u < config.queries; ++u) {
          const TopK top = retrieve(*model, static_cast<Index>(u), config.k);
          if (top.items.empty()) throw ValidationError("empty retrieval result");
        }
      };
      run_queries();  // warm-up
      std::vector<double> per_query;
      for (std::size_t t = 0; t < config.trials; ++t) {
        per_query.push_back(time_us(run_queries) / static_cast<double>(config.queries));
      }
      std::nth_element(per_query.begin(), per_query.begin() + static_cast<std::ptrdiff_t>(per_query.size() / 2),
                       per_query.end());
      rows.push_back({head, d, config.n, config.k, per_query[per_query.size() / 2]});
    }
  }
  return rows;
}

}  // namespace dotsim
