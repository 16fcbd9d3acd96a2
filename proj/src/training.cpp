#include "dotsim/training.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dotsim/error.hpp"
#include "dotsim/rng.hpp"

namespace dotsim {
namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void check_example(const Matrix& P, const Matrix& Q, const TrainExample& ex) {
  if (static_cast<Eigen::Index>(ex.user) >= P.rows()) {
    throw BoundsError("user index " + std::to_string(ex.user) + " out of range");
  }
  if (static_cast<Eigen::Index>(ex.item) >= Q.rows()) {
    throw BoundsError("item index " + std::to_string(ex.item) + " out of range");
  }
}

void fill_gaussian(Matrix& m, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = normal(rng);
  }
}

void fill_gaussian(Eigen::MatrixXd& m, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = normal(rng);
  }
}

double tower_weight_norm2(const MlpTower& tower) {
  double s = 0.0;
  for (const auto& w : tower.weights) s += w.squaredNorm();
  return s;
}

struct TowerBackward {
  Vector input_grad;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Vector> biases;
};

// Backpropagates d(loss)/d(score) = residual through the tower.
TowerBackward tower_backward(const MlpTower& tower, const MlpForward& fwd, double residual,
                             double head_lambda) {
  const std::size_t layers = tower.num_layers();
  TowerBackward out;
  out.weights.resize(layers);
  out.biases.resize(layers);
  Vector delta = Vector::Constant(1, residual);
  for (std::size_t l = layers; l-- > 0;) {
    const Vector& input = fwd.activations[l];
    out.weights[l] = delta * input.transpose() + head_lambda * tower.weights[l];
    out.biases[l] = delta;
    Vector back = tower.weights[l].transpose() * delta;
    if (l == 0) {
      out.input_grad = std::move(back);
    } else {
      const Vector& z = fwd.pre_activations[l - 1];
      delta = back.array() * (z.array() > 0.0).cast<double>();
    }
  }
  return out;
}

template <typename Params>
double reg_rows(const Params& params, const TrainExample& ex) {
  return params.P.row(ex.user).squaredNorm() + params.Q.row(ex.item).squaredNorm();
}

// Pointers to every scalar touched by ex, ordered like Gradients::flatten().
void push_row(std::vector<double*>& out, Matrix& m, Index r) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(&m(r, c));
}

void push_vector(std::vector<double*>& out, Vector& v) {
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(&v(k));
}

void push_tower(std::vector<double*>& out, MlpTower& tower) {
  for (std::size_t l = 0; l < tower.num_layers(); ++l) {
    auto& w = tower.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) out.push_back(&w(r, c));
    }
    push_vector(out, tower.biases[l]);
  }
}

template <typename Params>
std::vector<double> central_differences(Params& work, const std::vector<double*>& coords,
                                        const TrainExample& ex, const Regularization& reg,
                                        double h) {
  if (!(h > 0.0)) throw ValidationError("finite difference step must be > 0");
  std::vector<double> grad;
  grad.reserve(coords.size());
  for (double* c : coords) {
    const double saved = *c;
    *c = saved + h;
    const double plus = example_loss(work, ex, reg);
    *c = saved - h;
    const double minus = example_loss(work, ex, reg);
    *c = saved;
    grad.push_back((plus - minus) / (2.0 * h));
  }
  return grad;
}

double mean_or_zero(double total, std::size_t n) {
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) { return -softplus(-x); }

double logistic_loss(double score, double y) {
  // -y ln s(x) - (1-y) ln(1 - s(x)) = softplus(x) - y x
  return softplus(score) - y * score;
}

void SgdConfig::validate() const {
  if (!(eta > 0.0)) throw ValidationError("learning rate must be > 0");
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
  if (m < 1) throw ValidationError("negatives per positive must be >= 1");
  if (!(init_std > 0.0)) throw ValidationError("init_std must be > 0");
}

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("Adam lr must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ValidationError("Adam beta1 must be in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ValidationError("Adam beta2 must be in (0, 1)");
  if (!(epsilon > 0.0)) throw ValidationError("Adam epsilon must be > 0");
}

std::vector<TrainExample> sample_negatives(const RatingCorpus& corpus, std::size_t m,
                                           std::uint64_t seed, std::size_t epoch) {
  if (m < 1) throw ValidationError("negatives per positive must be >= 1");
  std::vector<TrainExample> examples;
  examples.reserve(corpus.num_interactions() * (m + 1));
  Rng rng = make_rng({seed, stream::kNegatives, epoch});
  if (corpus.num_items == 0) return examples;
  std::uniform_int_distribution<Index> pick(0, static_cast<Index>(corpus.num_items - 1));
  for (const auto& list : corpus.positives) {
    for (const auto& x : list) {
      examples.push_back({x.user, x.item, 1});
      for (std::size_t k = 0; k < m; ++k) examples.push_back({x.user, pick(rng), 0});
    }
  }
  std::shuffle(examples.begin(), examples.end(), rng);
  return examples;
}

double sgd_step_mf(DotParams& params, const TrainExample& ex, double eta, double lambda) {
  check_example(params.P, params.Q, ex);
  const std::size_t d = static_cast<std::size_t>(params.P.cols());
  double* p = params.P.data() + static_cast<std::ptrdiff_t>(ex.user) * params.P.cols();
  double* q = params.Q.data() + static_cast<std::ptrdiff_t>(ex.item) * params.Q.cols();
  const double phi = score_dot({p, d}, {q, d}, params.use_bias, params.b);
  const double r = sigmoid(phi) - static_cast<double>(ex.y);
  std::size_t first_latent = 0;
  if (params.use_bias) {
    p[0] -= eta * (r + lambda * p[0]);
    q[0] -= eta * (r + lambda * q[0]);
    first_latent = 1;
  }
  for (std::size_t f = first_latent; f < d; ++f) {
    const double pf = p[f];
    const double qf = q[f];
    p[f] = pf - eta * (r * qf + lambda * pf);
    q[f] = qf - eta * (r * pf + lambda * qf);
  }
  return logistic_loss(phi, ex.y);
}

DotParams init_dot(std::size_t num_users, std::size_t num_items, std::size_t d, bool use_bias,
                   double init_std, std::uint64_t seed) {
  if (d < 1 || (use_bias && d < 2)) throw ValidationError("MF needs d >= 2 with biases (d >= 1 without)");
  DotParams params;
  params.P.resize(static_cast<Eigen::Index>(num_users), static_cast<Eigen::Index>(d));
  params.Q.resize(static_cast<Eigen::Index>(num_items), static_cast<Eigen::Index>(d));
  params.use_bias = use_bias;
  Rng rng = make_rng({seed, stream::kInit});
  fill_gaussian(params.P, init_std, rng);
  fill_gaussian(params.Q, init_std, rng);
  return params;
}

DotParams train_mf(const RatingCorpus& corpus, const SgdConfig& cfg, std::size_t d, bool use_bias,
                   const EpochCallback& on_epoch) {
  cfg.validate();
  ModelParams model = init_dot(corpus.num_users, corpus.num_items, d, use_bias, cfg.init_std, cfg.seed);
  auto& params = std::get<DotParams>(model);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto examples = sample_negatives(corpus, cfg.m, cfg.seed, epoch);
    double total = 0.0;
    for (const auto& ex : examples) total += sgd_step_mf(params, ex, cfg.eta, cfg.lambda);
    if (on_epoch) on_epoch(epoch, mean_or_zero(total, examples.size()), model);
  }
  return std::move(params);
}

// ---- learned similarities ----

std::vector<double> Gradients::flatten() const {
  std::vector<double> flat(user_row.data(), user_row.data() + user_row.size());
  flat.insert(flat.end(), item_row.data(), item_row.data() + item_row.size());
  flat.insert(flat.end(), w.data(), w.data() + w.size());
  for (std::size_t l = 0; l < tower_weights.size(); ++l) {
    const auto& m = tower_weights[l];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
    }
    flat.insert(flat.end(), tower_biases[l].data(), tower_biases[l].data() + tower_biases[l].size());
  }
  return flat;
}

double example_loss(const GmfParams& params, const TrainExample& ex, const Regularization& reg) {
  check_example(params.P, params.Q, ex);
  return logistic_loss(score(params, ex.user, ex.item), ex.y) +
         0.5 * reg.lambda * reg_rows(params, ex) + 0.5 * reg.head_lambda * params.w.squaredNorm();
}

double example_loss(const MlpSimParams& params, const TrainExample& ex, const Regularization& reg) {
  check_example(params.P, params.Q, ex);
  return logistic_loss(score(params, ex.user, ex.item), ex.y) +
         0.5 * reg.lambda * reg_rows(params, ex) +
         0.5 * reg.head_lambda * tower_weight_norm2(params.tower);
}

double example_loss(const NeuMfParams& params, const TrainExample& ex, const Regularization& reg) {
  check_example(params.P, params.Q, ex);
  return logistic_loss(score(params, ex.user, ex.item), ex.y) +
         0.5 * reg.lambda * reg_rows(params, ex) +
         0.5 * reg.head_lambda * (params.gmf_w.squaredNorm() + tower_weight_norm2(params.tower));
}

Gradients backprop(const GmfParams& params, const TrainExample& ex, const Regularization& reg) {
  check_example(params.P, params.Q, ex);
  const auto p = params.P.row(ex.user).transpose();
  const auto q = params.Q.row(ex.item).transpose();
  const double s = score(params, ex.user, ex.item);
  const double r = sigmoid(s) - static_cast<double>(ex.y);
  Gradients g;
  g.user = ex.user;
  g.item = ex.item;
  g.user_row = r * params.w.cwiseProduct(q) + reg.lambda * p;
  g.item_row = r * params.w.cwiseProduct(p) + reg.lambda * q;
  g.w = r * p.cwiseProduct(q) + reg.head_lambda * params.w;
  g.data_loss = logistic_loss(s, ex.y);
  g.loss = g.data_loss + 0.5 * reg.lambda * reg_rows(params, ex) +
           0.5 * reg.head_lambda * params.w.squaredNorm();
  return g;
}

Gradients backprop(const MlpSimParams& params, const TrainExample& ex, const Regularization& reg) {
  check_example(params.P, params.Q, ex);
  const auto d = params.P.cols();
  const Vector x = concat(row_span(params.P, ex.user), row_span(params.Q, ex.item));
  const MlpForward fwd = mlp_forward(params.tower, {x.data(), static_cast<std::size_t>(x.size())});
  const double r = sigmoid(fwd.score) - static_cast<double>(ex.y);
  TowerBackward back = tower_backward(params.tower, fwd, r, reg.head_lambda);
  Gradients g;
  g.user = ex.user;
  g.item = ex.item;
  g.user_row = back.input_grad.head(d) + reg.lambda * params.P.row(ex.user).transpose();
  g.item_row = back.input_grad.tail(d) + reg.lambda * params.Q.row(ex.item).transpose();
  g.tower_weights = std::move(back.weights);
  g.tower_biases = std::move(back.biases);
  g.data_loss = logistic_loss(fwd.score, ex.y);
  g.loss = g.data_loss + 0.5 * reg.lambda * reg_rows(params, ex) +
           0.5 * reg.head_lambda * tower_weight_norm2(params.tower);
  return g;
}

Gradients backprop(const NeuMfParams& params, const TrainExample& ex, const Regularization& reg) {
  check_example(params.P, params.Q, ex);
  const auto j = static_cast<Eigen::Index>(params.j);
  const auto d = params.P.cols();
  const auto p = row_span(params.P, ex.user);
  const auto q = row_span(params.Q, ex.item);
  const Vector x = concat(p.first(params.j), q.first(params.j));
  const MlpForward fwd = mlp_forward(params.tower, {x.data(), static_cast<std::size_t>(x.size())});
  const double gmf = score_gmf_logit(p.subspan(params.j), q.subspan(params.j),
                                     {params.gmf_w.data(), static_cast<std::size_t>(params.gmf_w.size())});
  const double s = fwd.score + gmf;
  const double r = sigmoid(s) - static_cast<double>(ex.y);
  TowerBackward back = tower_backward(params.tower, fwd, r, reg.head_lambda);

  const auto pu = params.P.row(ex.user).transpose();
  const auto qi = params.Q.row(ex.item).transpose();
  Gradients g;
  g.user = ex.user;
  g.item = ex.item;
  g.user_row.resize(d);
  g.item_row.resize(d);
  g.user_row.head(j) = back.input_grad.head(j);
  g.item_row.head(j) = back.input_grad.tail(j);
  g.user_row.tail(d - j) = r * params.gmf_w.cwiseProduct(qi.tail(d - j));
  g.item_row.tail(d - j) = r * params.gmf_w.cwiseProduct(pu.tail(d - j));
  g.user_row += reg.lambda * pu;
  g.item_row += reg.lambda * qi;
  g.w = r * pu.tail(d - j).cwiseProduct(qi.tail(d - j)) + reg.head_lambda * params.gmf_w;
  g.tower_weights = std::move(back.weights);
  g.tower_biases = std::move(back.biases);
  g.data_loss = logistic_loss(s, ex.y);
  g.loss = g.data_loss + 0.5 * reg.lambda * reg_rows(params, ex) +
           0.5 * reg.head_lambda * (params.gmf_w.squaredNorm() + tower_weight_norm2(params.tower));
  return g;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> theta, double h) {
  if (!(h > 0.0)) throw ValidationError("finite difference step must be > 0");
  std::vector<double> work(theta.begin(), theta.end());
  std::vector<double> grad(theta.size());
  for (std::size_t k = 0; k < work.size(); ++k) {
    const double saved = work[k];
    work[k] = saved + h;
    const double plus = loss(work);
    work[k] = saved - h;
    const double minus = loss(work);
    work[k] = saved;
    grad[k] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

std::vector<double> finite_diff_grad(const GmfParams& params, const TrainExample& ex,
                                     const Regularization& reg, double h) {
  check_example(params.P, params.Q, ex);
  GmfParams work = params;
  std::vector<double*> coords;
  push_row(coords, work.P, ex.user);
  push_row(coords, work.Q, ex.item);
  push_vector(coords, work.w);
  return central_differences(work, coords, ex, reg, h);
}

std::vector<double> finite_diff_grad(const MlpSimParams& params, const TrainExample& ex,
                                     const Regularization& reg, double h) {
  check_example(params.P, params.Q, ex);
  MlpSimParams work = params;
  std::vector<double*> coords;
  push_row(coords, work.P, ex.user);
  push_row(coords, work.Q, ex.item);
  push_tower(coords, work.tower);
  return central_differences(work, coords, ex, reg, h);
}

std::vector<double> finite_diff_grad(const NeuMfParams& params, const TrainExample& ex,
                                     const Regularization& reg, double h) {
  check_example(params.P, params.Q, ex);
  NeuMfParams work = params;
  std::vector<double*> coords;
  push_row(coords, work.P, ex.user);
  push_row(coords, work.Q, ex.item);
  push_vector(coords, work.gmf_w);
  push_tower(coords, work.tower);
  return central_differences(work, coords, ex, reg, h);
}

namespace {

void adam_update(double* theta, const double* g, double* m, double* v, std::size_t n,
                 std::uint64_t t, const AdamConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < n; ++k) {
    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
    theta[k] -= cfg.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.epsilon);
  }
}

struct Moments {
  std::vector<double> m;
  std::vector<double> v;

  explicit Moments(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Per-example optimizer for the learned models. Embedding moments are
// updated only for the rows an example touches; bias correction uses the
// global step count.
class LearnedUpdater {
 public:
  template <typename Params>
  LearnedUpdater(const Params& params, const LearnedConfig& cfg)
      : cfg_(cfg),
        p_(static_cast<std::size_t>(params.P.size())),
        q_(static_cast<std::size_t>(params.Q.size())) {
    if constexpr (requires { params.w; }) w_ = Moments(static_cast<std::size_t>(params.w.size()));
    if constexpr (requires { params.gmf_w; }) w_ = Moments(static_cast<std::size_t>(params.gmf_w.size()));
    if constexpr (requires { params.tower; }) {
      for (std::size_t l = 0; l < params.tower.num_layers(); ++l) {
        tower_w_.emplace_back(static_cast<std::size_t>(params.tower.weights[l].size()));
        tower_b_.emplace_back(static_cast<std::size_t>(params.tower.biases[l].size()));
      }
    }
  }

  template <typename Params>
  void step(Params& params, const Gradients& g) {
    ++t_;
    const auto d = static_cast<std::size_t>(params.P.cols());
    const auto urow = static_cast<std::size_t>(g.user) * d;
    const auto irow = static_cast<std::size_t>(g.item) * d;
    apply(params.P.data() + urow, g.user_row.data(), p_, urow, d);
    apply(params.Q.data() + irow, g.item_row.data(), q_, irow, d);
    if (!cfg_.train_head) return;
    if constexpr (requires { params.w; }) {
      apply(params.w.data(), g.w.data(), w_, 0, static_cast<std::size_t>(g.w.size()));
    }
    if constexpr (requires { params.gmf_w; }) {
      apply(params.gmf_w.data(), g.w.data(), w_, 0, static_cast<std::size_t>(g.w.size()));
    }
    if constexpr (requires { params.tower; }) {
      for (std::size_t l = 0; l < params.tower.num_layers(); ++l) {
        // Eigen's default storage is column-major for both the tower and its gradient.
        apply(params.tower.weights[l].data(), g.tower_weights[l].data(), tower_w_[l], 0,
              static_cast<std::size_t>(g.tower_weights[l].size()));
        apply(params.tower.biases[l].data(), g.tower_biases[l].data(), tower_b_[l], 0,
              static_cast<std::size_t>(g.tower_biases[l].size()));
      }
    }
  }

 private:
  void apply(double* theta, const double* g, Moments& mom, std::size_t offset, std::size_t n) {
    if (cfg_.optimizer == Optimizer::kSgd) {
      for (std::size_t k = 0; k < n; ++k) theta[k] -= cfg_.sgd.eta * g[k];
      return;
    }
    adam_update(theta, g, mom.m.data() + offset, mom.v.data() + offset, n, t_, cfg_.adam);
  }

  const LearnedConfig& cfg_;
  std::uint64_t t_ = 0;
  Moments p_;
  Moments q_;
  Moments w_;
  std::vector<Moments> tower_w_;
  std::vector<Moments> tower_b_;
};

template <typename Params>
void fit_params(Params& params, ModelParams& whole, const RatingCorpus& corpus,
                const LearnedConfig& cfg, const EpochCallback& on_epoch) {
  validate(params);
  if (static_cast<std::size_t>(params.P.rows()) < corpus.num_users ||
      static_cast<std::size_t>(params.Q.rows()) < corpus.num_items) {
    throw ValidationError("model tables smaller than the corpus vocabulary");
  }
  const Regularization reg = cfg.regularization();
  LearnedUpdater updater(params, cfg);
  for (std::size_t epoch = 1; epoch <= cfg.sgd.epochs; ++epoch) {
    const auto examples = sample_negatives(corpus, cfg.sgd.m, cfg.sgd.seed, epoch);
    double total = 0.0;
    for (const auto& ex : examples) {
      const Gradients g = backprop(params, ex, reg);
      total += g.data_loss;
      updater.step(params, g);
    }
    if (on_epoch) on_epoch(epoch, mean_or_zero(total, examples.size()), whole);
  }
}

MlpTower init_tower(const std::vector<std::size_t>& dims, double stddev, Rng& rng) {
  MlpTower tower = MlpTower::zeros(dims);
  for (auto& w : tower.weights) fill_gaussian(w, stddev, rng);
  return tower;
}

}  // namespace

void adam_step(std::span<double> theta, std::span<const double> g, AdamState& state,
               const AdamConfig& cfg) {
  if (theta.size() != g.size()) throw ValidationError("adam_step: parameter/gradient shape mismatch");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(theta.size(), 0.0);
    state.v.assign(theta.size(), 0.0);
  }
  if (state.m.size() != theta.size() || state.v.size() != theta.size()) {
    throw ValidationError("adam_step: state shape mismatch");
  }
  ++state.t;
  adam_update(theta.data(), g.data(), state.m.data(), state.v.data(), theta.size(), state.t, cfg);
}

double regularized_objective(const GmfParams& params, std::span<const TrainExample> examples,
                             double lambda, double w_lambda) {
  double total = 0.0;
  for (const auto& ex : examples) {
    check_example(params.P, params.Q, ex);
    total += logistic_loss(score(params, ex.user, ex.item), ex.y);
  }
  return total + 0.5 * lambda * (params.P.squaredNorm() + params.Q.squaredNorm()) +
         0.5 * w_lambda * params.w.squaredNorm();
}

ModelParams init_learned(ModelKind kind, std::size_t num_users, std::size_t num_items,
                         std::size_t d, const LearnedConfig& cfg) {
  if (d < 1) throw ValidationError("embedding dimension must be >= 1");
  const auto rows_u = static_cast<Eigen::Index>(num_users);
  const auto rows_i = static_cast<Eigen::Index>(num_items);
  const auto cols = static_cast<Eigen::Index>(d);
  Rng rng = make_rng({cfg.sgd.seed, stream::kInit});
  Matrix P(rows_u, cols);
  Matrix Q(rows_i, cols);
  fill_gaussian(P, cfg.sgd.init_std, rng);
  fill_gaussian(Q, cfg.sgd.init_std, rng);
  switch (kind) {
    case ModelKind::kGmf: return GmfParams{std::move(P), std::move(Q), Vector::Ones(cols)};
    case ModelKind::kMlp: {
      const auto hidden = cfg.hidden.empty() ? default_hidden_dims(d) : cfg.hidden;
      MlpTower tower = init_tower(tower_dims(d, hidden), cfg.sgd.init_std, rng);
      return MlpSimParams{std::move(P), std::move(Q), std::move(tower)};
    }
    case ModelKind::kNeuMf: {
      NeuMfParams params;
      params.j = cfg.neumf_j.value_or(neumf_split(d));
      if (params.j < 1 || params.j >= d) throw ValidationError("NeuMF split needs 1 <= j < d");
      const auto hidden = cfg.hidden.empty() ? default_hidden_dims(params.j) : cfg.hidden;
      params.tower = init_tower(tower_dims(params.j, hidden), cfg.sgd.init_std, rng);
      params.gmf_w = Vector::Ones(static_cast<Eigen::Index>(d - params.j));
      params.P = std::move(P);
      params.Q = std::move(Q);
      return params;
    }
    case ModelKind::kMf: break;
  }
  throw ValidationError("init_learned: MF is trained with train_mf");
}

void fit_learned(ModelParams& params, const RatingCorpus& corpus, const LearnedConfig& cfg,
                 const EpochCallback& on_epoch) {
  cfg.sgd.validate();
  cfg.adam.validate();
  std::visit(
      [&](auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, DotParams>) {
          throw ValidationError("fit_learned: MF is trained with train_mf");
        } else {
          fit_params(p, params, corpus, cfg, on_epoch);
        }
      },
      params);
}

ModelParams train_learned(const RatingCorpus& corpus, ModelKind kind, const LearnedConfig& cfg,
                          std::size_t d, const EpochCallback& on_epoch) {
  ModelParams params = init_learned(kind, corpus.num_users, corpus.num_items, d, cfg);
  fit_learned(params, corpus, cfg, on_epoch);
  return params;
}

NeuMfParams combine_neumf(const MlpSimParams& mlp, const GmfParams& gmf) {
  validate(mlp);
  validate(gmf);
  if (mlp.P.rows() != gmf.P.rows() || mlp.Q.rows() != gmf.Q.rows()) {
    throw ValidationError("combine_neumf: branch vocabularies differ");
  }
  const auto j = mlp.P.cols();
  const auto k = gmf.P.cols();
  NeuMfParams out;
  out.j = static_cast<std::size_t>(j);
  out.P.resize(mlp.P.rows(), j + k);
  out.Q.resize(mlp.Q.rows(), j + k);
  out.P << mlp.P, gmf.P;
  out.Q << mlp.Q, gmf.Q;
  out.tower = mlp.tower;
  out.gmf_w = gmf.w;
  return out;
}

NeuMfParams pretrain_neumf(const RatingCorpus& corpus, const LearnedConfig& cfg_mlp,
                           const LearnedConfig& cfg_gmf, const LearnedConfig& cfg_finetune,
                           std::size_t k, const EpochCallback& on_finetune_epoch) {
  const auto mlp_dims = predictive_factor_to_dims(k, ModelKind::kMlp);
  const auto gmf_dims = predictive_factor_to_dims(k, ModelKind::kGmf);
  LearnedConfig mlp_cfg = cfg_mlp;
  if (mlp_cfg.hidden.empty()) mlp_cfg.hidden = {4 * k, 2 * k, k};
  ModelParams mlp = train_learned(corpus, ModelKind::kMlp, mlp_cfg, mlp_dims.d);
  ModelParams gmf = train_learned(corpus, ModelKind::kGmf, cfg_gmf, gmf_dims.d);
  ModelParams combined = combine_neumf(std::get<MlpSimParams>(mlp), std::get<GmfParams>(gmf));
  fit_learned(combined, corpus, cfg_finetune, on_finetune_epoch);
  return std::get<NeuMfParams>(std::move(combined));
}

}  // namespace dotsim
