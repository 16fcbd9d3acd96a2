#include "dotsim/models.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "dotsim/error.hpp"

namespace dotsim {
namespace {

void check_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValidationError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                          " vs " + std::to_string(b) + ")");
  }
}

void check_row(const Matrix& m, Index r, const char* table) {
  if (static_cast<Eigen::Index>(r) >= m.rows()) {
    throw BoundsError(std::string(table) + " index " + std::to_string(r) + " out of range [0, " +
                      std::to_string(m.rows()) + ")");
  }
}

void check_tables(const Matrix& P, const Matrix& Q) {
  if (P.cols() != Q.cols()) throw ValidationError("P and Q have different embedding sizes");
  if (P.cols() < 1) throw ValidationError("embedding dimension must be >= 1");
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kMf: return "mf";
    case ModelKind::kGmf: return "gmf";
    case ModelKind::kMlp: return "mlp";
    case ModelKind::kNeuMf: return "neumf";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "mf") return ModelKind::kMf;
  if (name == "gmf") return ModelKind::kGmf;
  if (name == "mlp") return ModelKind::kMlp;
  if (name == "neumf") return ModelKind::kNeuMf;
  throw ValidationError("unknown model kind '" + std::string(name) + "'");
}

MlpTower MlpTower::zeros(const std::vector<std::size_t>& layer_dims) {
  if (layer_dims.size() < 2 || layer_dims.back() != 1) {
    throw ValidationError("tower dims must be [in, ..., 1]");
  }
  MlpTower tower;
  for (std::size_t l = 1; l < layer_dims.size(); ++l) {
    const auto out = static_cast<Eigen::Index>(layer_dims[l]);
    const auto in = static_cast<Eigen::Index>(layer_dims[l - 1]);
    if (out < 1 || in < 1) throw ValidationError("tower layer widths must be >= 1");
    tower.weights.push_back(Eigen::MatrixXd::Zero(out, in));
    tower.biases.push_back(Vector::Zero(out));
  }
  return tower;
}

std::vector<std::size_t> MlpTower::layer_dims() const {
  std::vector<std::size_t> dims;
  if (weights.empty()) return dims;
  dims.push_back(static_cast<std::size_t>(weights.front().cols()));
  for (const auto& w : weights) dims.push_back(static_cast<std::size_t>(w.rows()));
  return dims;
}

std::size_t MlpTower::input_dim() const {
  return weights.empty() ? 0 : static_cast<std::size_t>(weights.front().cols());
}

void MlpTower::validate() const {
  if (weights.empty()) throw ValidationError("tower has no layers");
  if (weights.size() != biases.size()) throw ValidationError("tower weights/biases count differ");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (biases[l].size() != weights[l].rows()) {
      throw ValidationError("tower layer " + std::to_string(l) + ": bias size != output dim");
    }
    if (l > 0 && weights[l].cols() != weights[l - 1].rows()) {
      throw ValidationError("tower layer " + std::to_string(l) + ": input dim does not chain");
    }
  }
  if (weights.back().rows() != 1) throw ValidationError("tower output dim must be 1");
}

void validate(const DotParams& params) {
  check_tables(params.P, params.Q);
  if (params.use_bias && params.P.cols() < 2) {
    throw ValidationError("biased dot product needs d >= 2");
  }
}

void validate(const GmfParams& params) {
  check_tables(params.P, params.Q);
  check_same_size(static_cast<std::size_t>(params.w.size()), static_cast<std::size_t>(params.P.cols()),
                  "GMF weights");
}

void validate(const MlpSimParams& params) {
  check_tables(params.P, params.Q);
  params.tower.validate();
  check_same_size(params.tower.input_dim(), 2 * static_cast<std::size_t>(params.P.cols()),
                  "MLP tower input");
}

void validate(const NeuMfParams& params) {
  check_tables(params.P, params.Q);
  const auto d = static_cast<std::size_t>(params.P.cols());
  if (params.j < 1 || params.j >= d) throw ValidationError("NeuMF split needs 1 <= j < d");
  params.tower.validate();
  check_same_size(params.tower.input_dim(), 2 * params.j, "NeuMF tower input");
  check_same_size(static_cast<std::size_t>(params.gmf_w.size()), d - params.j, "NeuMF GMF weights");
}

void validate(const ModelParams& params) {
  std::visit([](const auto& p) { validate(p); }, params);
}

ModelKind kind_of(const ModelParams& params) {
  static constexpr std::array kKinds{ModelKind::kMf, ModelKind::kGmf, ModelKind::kMlp,
                                     ModelKind::kNeuMf};
  return kKinds[params.index()];
}

std::size_t num_users(const ModelParams& params) {
  return std::visit([](const auto& p) { return static_cast<std::size_t>(p.P.rows()); }, params);
}

std::size_t num_items(const ModelParams& params) {
  return std::visit([](const auto& p) { return static_cast<std::size_t>(p.Q.rows()); }, params);
}

std::size_t embedding_dim(const ModelParams& params) {
  return std::visit([](const auto& p) { return static_cast<std::size_t>(p.P.cols()); }, params);
}

double score_dot(std::span<const double> p, std::span<const double> q, bool use_bias, double b) {
  check_same_size(p.size(), q.size(), "score_dot");
  if (!use_bias) {
    double s = 0.0;
    for (std::size_t f = 0; f < p.size(); ++f) s += p[f] * q[f];
    return s;
  }
  if (p.size() < 2) throw ValidationError("biased dot product needs d >= 2");
  double s = 0.0;
  for (std::size_t f = 1; f < p.size(); ++f) s += p[f] * q[f];
  return b + p[0] + q[0] + s;
}

double score_gmf_logit(std::span<const double> p, std::span<const double> q,
                       std::span<const double> w) {
  check_same_size(p.size(), q.size(), "score_gmf_logit");
  check_same_size(p.size(), w.size(), "score_gmf_logit weights");
  double s = 0.0;
  for (std::size_t f = 0; f < p.size(); ++f) s += w[f] * p[f] * q[f];
  return s;
}

MlpForward mlp_forward(const MlpTower& tower, std::span<const double> x) {
  check_same_size(x.size(), tower.input_dim(), "mlp_forward input");
  MlpForward out;
  out.activations.reserve(tower.num_layers());
  out.pre_activations.reserve(tower.num_layers() - 1);
  out.activations.emplace_back(Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size())));
  for (std::size_t l = 0; l + 1 < tower.num_layers(); ++l) {
    Vector z = tower.weights[l] * out.activations.back() + tower.biases[l];
    out.activations.push_back(z.cwiseMax(0.0));
    out.pre_activations.push_back(std::move(z));
  }
  const auto& last = tower.weights.back();
  out.score = last.row(0).dot(out.activations.back()) + tower.biases.back()(0);
  return out;
}

Vector concat(std::span<const double> p, std::span<const double> q) {
  Vector x(static_cast<Eigen::Index>(p.size() + q.size()));
  std::copy(p.begin(), p.end(), x.data());
  std::copy(q.begin(), q.end(), x.data() + p.size());
  return x;
}

double score(const DotParams& params, Index user, Index item) {
  check_row(params.P, user, "user");
  check_row(params.Q, item, "item");
  return score_dot(row_span(params.P, user), row_span(params.Q, item), params.use_bias, params.b);
}

double score(const GmfParams& params, Index user, Index item) {
  check_row(params.P, user, "user");
  check_row(params.Q, item, "item");
  return score_gmf_logit(row_span(params.P, user), row_span(params.Q, item),
                         {params.w.data(), static_cast<std::size_t>(params.w.size())});
}

double score(const MlpSimParams& params, Index user, Index item) {
  check_row(params.P, user, "user");
  check_row(params.Q, item, "item");
  const Vector x = concat(row_span(params.P, user), row_span(params.Q, item));
  return mlp_forward(params.tower, {x.data(), static_cast<std::size_t>(x.size())}).score;
}

double score(const NeuMfParams& params, Index user, Index item) {
  check_row(params.P, user, "user");
  check_row(params.Q, item, "item");
  const auto p = row_span(params.P, user);
  const auto q = row_span(params.Q, item);
  const Vector x = concat(p.first(params.j), q.first(params.j));
  const double mlp = mlp_forward(params.tower, {x.data(), static_cast<std::size_t>(x.size())}).score;
  const double gmf = score_gmf_logit(p.subspan(params.j), q.subspan(params.j),
                                     {params.gmf_w.data(), static_cast<std::size_t>(params.gmf_w.size())});
  return mlp + gmf;
}

double score(const ModelParams& params, Index user, Index item) {
  return std::visit([&](const auto& p) { return score(p, user, item); }, params);
}

std::vector<double> score_items(const ModelParams& params, Index user, std::span<const Index> items) {
  std::vector<double> scores;
  scores.reserve(items.size());
  std::visit(
      [&](const auto& p) {
        for (const Index i : items) scores.push_back(score(p, user, i));
      },
      params);
  return scores;
}

EmbeddingLayout predictive_factor_to_dims(std::size_t k, ModelKind kind) {
  if (k < 1) throw ValidationError("predictive factor must be >= 1");
  switch (kind) {
    case ModelKind::kMf:
    case ModelKind::kGmf: return {k, 0};
    case ModelKind::kMlp: return {2 * k, 0};
    case ModelKind::kNeuMf: return {3 * k, 2 * k};
  }
  throw ValidationError("unknown model kind");
}

std::size_t neumf_split(std::size_t d) {
  if (d < 2) throw ValidationError("NeuMF needs d >= 2");
  const std::size_t j = (2 * d + 1) / 3;  // round(2d/3); 2d/3 never has fractional part 1/2
  return std::clamp<std::size_t>(j, 1, d - 1);
}

std::vector<std::size_t> default_hidden_dims(std::size_t embedding_dim) {
  const std::size_t k = std::max<std::size_t>(1, embedding_dim / 2);
  return {4 * k, 2 * k, k};
}

std::vector<std::size_t> tower_dims(std::size_t embedding_dim, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> dims{2 * embedding_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return dims;
}

// ---- checkpoint ----

namespace {

constexpr std::array<char, 8> kMagic{'D', 'O', 'T', 'S', 'I', 'M', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("checkpoint truncated");
  return value;
}

template <typename Derived>
void put_array(std::ostream& out, const Eigen::PlainObjectBase<Derived>& m) {
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
  }
}

template <typename M>
M get_array(std::istream& in) {
  const auto rows = get<std::uint64_t>(in);
  const auto cols = get<std::uint64_t>(in);
  if (rows > (1ULL << 32) || cols > (1ULL << 32)) throw IoError("checkpoint shape implausible");
  M m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in);
  }
  return m;
}

void put_tower(std::ostream& out, const MlpTower& tower) {
  put<std::uint64_t>(out, tower.num_layers());
  for (std::size_t l = 0; l < tower.num_layers(); ++l) {
    put_array(out, tower.weights[l]);
    put_array(out, tower.biases[l]);
  }
}

MlpTower get_tower(std::istream& in) {
  MlpTower tower;
  const auto layers = get<std::uint64_t>(in);
  if (layers > 1024) throw IoError("checkpoint tower depth implausible");
  for (std::uint64_t l = 0; l < layers; ++l) {
    tower.weights.push_back(get_array<Eigen::MatrixXd>(in));
    tower.biases.push_back(get_array<Vector>(in));
  }
  return tower;
}

}  // namespace

void save_checkpoint(std::ostream& out, const ModelParams& params) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.index()));
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        put_array(out, p.P);
        put_array(out, p.Q);
        if constexpr (std::is_same_v<T, DotParams>) {
          put<std::uint8_t>(out, p.use_bias ? 1 : 0);
          put<double>(out, p.b);
        } else if constexpr (std::is_same_v<T, GmfParams>) {
          put_array(out, p.w);
        } else if constexpr (std::is_same_v<T, MlpSimParams>) {
          put_tower(out, p.tower);
        } else {
          put<std::uint64_t>(out, p.j);
          put_tower(out, p.tower);
          put_array(out, p.gmf_w);
        }
      },
      params);
  if (!out) throw IoError("failed writing checkpoint");
}

ModelParams load_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("not a dotsim checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kFormatVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto kind = get<std::uint32_t>(in);
  Matrix P = get_array<Matrix>(in);
  Matrix Q = get_array<Matrix>(in);
  ModelParams params;
  switch (kind) {
    case 0: {
      DotParams p{std::move(P), std::move(Q), get<std::uint8_t>(in) != 0, 0.0};
      p.b = get<double>(in);
      params = std::move(p);
      break;
    }
    case 1: params = GmfParams{std::move(P), std::move(Q), get_array<Vector>(in)}; break;
    case 2: params = MlpSimParams{std::move(P), std::move(Q), get_tower(in)}; break;
    case 3: {
      NeuMfParams p;
      p.P = std::move(P);
      p.Q = std::move(Q);
      p.j = get<std::uint64_t>(in);
      p.tower = get_tower(in);
      p.gmf_w = get_array<Vector>(in);
      params = std::move(p);
      break;
    }
    default: throw IoError("unknown model kind tag " + std::to_string(kind));
  }
  validate(params);
  return params;
}

}  // namespace dotsim
