#include "dotsim/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>
#include <unordered_set>

#include "dotsim/error.hpp"
#include "dotsim/rng.hpp"

namespace dotsim::synth {
namespace {

std::shared_ptr<Matrix> gaussian_table(std::size_t rows, std::size_t d, double stddev, Rng& rng) {
  auto table = std::make_shared<Matrix>(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index r = 0; r < table->rows(); ++r) {
    for (Eigen::Index c = 0; c < table->cols(); ++c) (*table)(r, c) = normal(rng);
  }
  return table;
}

// Distinct (u, i) pairs, uniform without replacement, in draw order.
std::vector<std::pair<Index, Index>> sample_pairs(std::size_t users, std::size_t items,
                                                  std::size_t count, Rng& rng) {
  const std::uint64_t total = static_cast<std::uint64_t>(users) * items;
  std::vector<std::pair<Index, Index>> pairs;
  pairs.reserve(count);
  if (2 * static_cast<std::uint64_t>(count) <= total) {
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(count * 2);
    std::uniform_int_distribution<std::uint64_t> pick(0, total - 1);
    while (pairs.size() < count) {
      const std::uint64_t key = pick(rng);
      if (seen.insert(key).second) {
        pairs.emplace_back(static_cast<Index>(key / items), static_cast<Index>(key % items));
      }
    }
  } else {
    std::vector<std::uint64_t> all(total);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t k = 0; k < count; ++k) {
      std::uniform_int_distribution<std::uint64_t> pick(k, total - 1);
      std::swap(all[k], all[pick(rng)]);
      pairs.emplace_back(static_cast<Index>(all[k] / items), static_cast<Index>(all[k] % items));
    }
  }
  return pairs;
}

void label(SynthBatch& batch, double sigma_label, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  batch.y.resize(batch.user_rows.size());
  for (std::size_t k = 0; k < batch.y.size(); ++k) {
    batch.y[k] = score_dot(batch.p(k), batch.q(k)) + sigma_label * noise(rng);
  }
}

// Input matrix (2d x n) for examples [begin, begin + n) of order.
Eigen::MatrixXd gather(const SynthBatch& batch, std::span<const std::size_t> order) {
  const auto d = batch.users->cols();
  Eigen::MatrixXd x(2 * d, static_cast<Eigen::Index>(order.size()));
  for (std::size_t c = 0; c < order.size(); ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    x.col(col).head(d) = batch.users->row(batch.user_rows[order[c]]).transpose();
    x.col(col).tail(d) = batch.items->row(batch.item_rows[order[c]]).transpose();
  }
  return x;
}

Eigen::RowVectorXd forward_batch(const MlpTower& tower, const Eigen::MatrixXd& x,
                                 std::vector<Eigen::MatrixXd>* activations) {
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l + 1 < tower.num_layers(); ++l) {
    Eigen::MatrixXd z = (tower.weights[l] * a).colwise() + tower.biases[l];
    if (activations) activations->push_back(std::move(a));
    a = z.cwiseMax(0.0);
  }
  Eigen::RowVectorXd out = (tower.weights.back() * a).array() + tower.biases.back()(0);
  if (activations) activations->push_back(std::move(a));
  return out;
}

struct DenseAdam {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Vector> mb, vb;
  std::uint64_t t = 0;

  explicit DenseAdam(const MlpTower& tower) {
    for (std::size_t l = 0; l < tower.num_layers(); ++l) {
      mw.push_back(Eigen::MatrixXd::Zero(tower.weights[l].rows(), tower.weights[l].cols()));
      vw.push_back(mw.back());
      mb.push_back(Vector::Zero(tower.biases[l].size()));
      vb.push_back(mb.back());
    }
  }

  template <typename P, typename G, typename S>
  static void update(P& param, const G& grad, S& m, S& v, const AdamConfig& cfg, double bc1, double bc2) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    param.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.epsilon);
  }

  void step(MlpTower& tower, const std::vector<Eigen::MatrixXd>& gw, const std::vector<Vector>& gb,
            const AdamConfig& cfg) {
    ++t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t l = 0; l < tower.num_layers(); ++l) {
      update(tower.weights[l], gw[l], mw[l], vw[l], cfg, bc1, bc2);
      update(tower.biases[l], gb[l], mb[l], vb[l], cfg, bc1, bc2);
    }
  }
};

std::uint64_t repeat_seed(std::uint64_t seed, std::size_t repeat) {
  Rng rng = make_rng({seed, 0x5eed, repeat});
  return rng();
}

}  // namespace

double sigma_emb(std::size_t d) {
  if (d < 1) throw ValidationError("d must be >= 1");
  const double var_dot = kTrivialRmse * kTrivialRmse - kLabelNoise * kLabelNoise;
  return std::pow(var_dot / static_cast<double>(d), 0.25);
}

void SynthConfig::validate() const {
  if (d < 1 || M < 1 || h < 1) throw ValidationError("synthetic config needs d, M, h >= 1");
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ValidationError("train_frac must be in (0, 1)");
  if (!(sigma_label >= 0.0)) throw ValidationError("sigma_label must be >= 0");
  if (samples_per_user < 1) throw ValidationError("samples_per_user must be >= 1");
  if (samples_per_user > items()) {
    throw ValidationError("samples_per_user * M exceeds the M * N available pairs");
  }
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  adam.validate();
}

SynthData generate(const SynthConfig& config) {
  config.validate();
  const std::size_t d = config.d;
  const double stddev = sigma_emb(d);

  Rng table_rng = make_rng({config.seed, stream::kSynthTables});
  auto users = gaussian_table(config.M, d, stddev, table_rng);
  auto items = gaussian_table(config.items(), d, stddev, table_rng);

  Rng pair_rng = make_rng({config.seed, stream::kSynthPairs});
  const std::size_t total = config.samples_per_user * config.M;
  const auto pairs = sample_pairs(config.M, config.items(), total, pair_rng);
  const auto n_train = static_cast<std::size_t>(std::llround(config.train_frac * static_cast<double>(total)));

  SynthData data;
  for (SynthBatch* b : {&data.train, &data.test_observed}) {
    b->users = users;
    b->items = items;
  }
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    SynthBatch& b = k < n_train ? data.train : data.test_observed;
    b.user_rows.push_back(pairs[k].first);
    b.item_rows.push_back(pairs[k].second);
  }
  Rng noise_rng = make_rng({config.seed, stream::kSynthNoise});
  label(data.train, config.sigma_label, noise_rng);
  label(data.test_observed, config.sigma_label, noise_rng);

  const std::size_t fresh = config.fresh_count > 0 ? config.fresh_count : data.test_observed.size();
  Rng fresh_rng = make_rng({config.seed, stream::kSynthFresh});
  data.test_fresh.users = gaussian_table(fresh, d, stddev, fresh_rng);
  data.test_fresh.items = gaussian_table(fresh, d, stddev, fresh_rng);
  data.test_fresh.user_rows.resize(fresh);
  std::iota(data.test_fresh.user_rows.begin(), data.test_fresh.user_rows.end(), Index{0});
  data.test_fresh.item_rows = data.test_fresh.user_rows;
  label(data.test_fresh, config.sigma_label, fresh_rng);
  return data;
}

double rmse(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.size() != labels.size()) throw ValidationError("rmse: length mismatch");
  if (predictions.empty()) throw ValidationError("rmse: empty input");
  double sum = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const double e = predictions[k] - labels[k];
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(labels.size()));
}

BaselineRmse baseline_rmses(const SynthBatch& batch) {
  if (batch.size() == 0) throw ValidationError("baseline_rmses: empty batch");
  std::vector<double> zeros(batch.size(), 0.0);
  std::vector<double> dots(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) dots[k] = score_dot(batch.p(k), batch.q(k));
  return {rmse(zeros, batch.y), rmse(dots, batch.y)};
}

std::vector<double> predict(const MlpTower& tower, const SynthBatch& batch) {
  std::vector<double> out(batch.size());
  constexpr std::size_t kChunk = 4096;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < batch.size(); begin += kChunk) {
    const std::size_t end = std::min(batch.size(), begin + kChunk);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Eigen::RowVectorXd pred = forward_batch(tower, gather(batch, idx), nullptr);
    std::copy(pred.data(), pred.data() + pred.size(), out.begin() + static_cast<std::ptrdiff_t>(begin));
  }
  return out;
}

RegressorFit train_regressor(const SynthBatch& train, const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  if (train.size() == 0) throw ValidationError("train_regressor: empty training batch");
  const std::size_t d = config.d;
  const std::size_t h = config.h;
  Rng rng = make_rng({seed, stream::kSynthTrain});

  RegressorFit fit;
  fit.tower = MlpTower::zeros({2 * d, 4 * h, 2 * h, h, 1});
  for (auto& w : fit.tower.weights) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(w.cols())));
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = normal(rng);
    }
  }
  DenseAdam adam(fit.tower);
  const std::size_t layers = fit.tower.num_layers();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::vector<Eigen::MatrixXd> acts;
  std::vector<Eigen::MatrixXd> gw(layers);
  std::vector<Vector> gb(layers);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sse = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      acts.clear();
      const Eigen::RowVectorXd pred = forward_batch(fit.tower, gather(train, idx), &acts);
      Eigen::RowVectorXd err(pred.size());
      for (std::size_t c = 0; c < idx.size(); ++c) err(static_cast<Eigen::Index>(c)) = pred(static_cast<Eigen::Index>(c)) - train.y[idx[c]];
      sse += err.squaredNorm();
      // d(mean squared error)/d(pred)
      Eigen::MatrixXd delta = (2.0 / static_cast<double>(idx.size())) * err;
      for (std::size_t l = layers; l-- > 0;) {
        gw[l] = delta * acts[l].transpose();
        gb[l] = delta.rowwise().sum();
        if (l > 0) {
          Eigen::MatrixXd back = fit.tower.weights[l].transpose() * delta;
          delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
        }
      }
      adam.step(fit.tower, gw, gb, config.adam);
    }
    const double epoch_rmse = std::sqrt(sse / static_cast<double>(order.size()));
    fit.epochs_run = epoch;
    fit.train_rmse = epoch_rmse;
    if (best - epoch_rmse < config.min_improvement) {
      if (++stale >= config.patience) break;
    } else {
      stale = 0;
    }
    best = std::min(best, epoch_rmse);
  }
  return fit;
}

SynthReport run_synth(const SynthConfig& config, std::size_t workers) {
  config.validate();
  SynthReport report;
  report.config = config;
  report.rows.resize(config.repeats);

  auto job = [&](std::size_t r) {
    SynthConfig cfg = config;
    cfg.seed = repeat_seed(config.seed, r);
    const SynthData data = generate(cfg);
    const RegressorFit fit = train_regressor(data.train, cfg, cfg.seed);
    SynthRow row;
    row.repeat = r;
    row.train_pairs = data.train.size();
    row.epochs_run = fit.epochs_run;
    row.rmse_mlp_observed = rmse(predict(fit.tower, data.test_observed), data.test_observed.y);
    row.rmse_mlp_fresh = rmse(predict(fit.tower, data.test_fresh), data.test_fresh.y);
    row.rmse_dot_empirical = baseline_rmses(data.test_fresh).dot;
    row.rmse_dot_empirical_observed = baseline_rmses(data.test_observed).dot;
    row.approx_err_observed = row.rmse_mlp_observed - cfg.sigma_label;
    row.approx_err_fresh = row.rmse_mlp_fresh - cfg.sigma_label;
    row.approx_err_emp_observed = row.rmse_mlp_observed - row.rmse_dot_empirical_observed;
    row.approx_err_emp_fresh = row.rmse_mlp_fresh - row.rmse_dot_empirical;
    report.rows[r] = row;
  };

  const std::size_t n_workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(config.repeats, 1));
  if (n_workers == 1) {
    for (std::size_t r = 0; r < config.repeats; ++r) job(r);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t r;
          {
            std::lock_guard lock(mu);
            if (next >= config.repeats) return;
            r = next++;
          }
          job(r);
        }
      });
    }
  }

  if (!report.rows.empty()) {
    SynthRow& m = report.mean;
    const double n = static_cast<double>(report.rows.size());
    for (const auto& row : report.rows) {
      m.train_pairs = row.train_pairs;
      m.epochs_run += row.epochs_run;
      m.rmse_mlp_observed += row.rmse_mlp_observed / n;
      m.rmse_mlp_fresh += row.rmse_mlp_fresh / n;
      m.rmse_dot_empirical += row.rmse_dot_empirical / n;
      m.rmse_dot_empirical_observed += row.rmse_dot_empirical_observed / n;
      m.approx_err_observed += row.approx_err_observed / n;
      m.approx_err_fresh += row.approx_err_fresh / n;
      m.approx_err_emp_observed += row.approx_err_emp_observed / n;
      m.approx_err_emp_fresh += row.approx_err_emp_fresh / n;
    }
    m.epochs_run = static_cast<std::size_t>(std::llround(static_cast<double>(m.epochs_run) / n));
  }
  return report;
}

}  // namespace dotsim::synth
