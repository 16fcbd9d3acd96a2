#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "dotsim/error.hpp"
#include "dotsim/models.hpp"
#include "test_util.hpp"

namespace dotsim {
namespace {

using testing::random_matrix;
using testing::random_tower;
using testing::random_vector;

std::span<const double> vs(const std::vector<double>& v) { return v; }
std::span<const double> sp(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

TEST(ScoreDot, ZeroAndBiasedHandValue) {
  const std::vector<double> zero(4, 0.0);
  EXPECT_EQ(score_dot(zero, zero), 0.0);
  EXPECT_DOUBLE_EQ(score_dot(vs({0.5, 2.0}), vs({-0.5, 3.0}), true, 0.0), 6.0);
  EXPECT_DOUBLE_EQ(score_dot(vs({0.5, 2.0}), vs({-0.5, 3.0}), true, 1.5), 7.5);
}

TEST(ScoreDot, SymmetricAndChecksDims) {
  Rng rng = make_rng({1});
  for (int t = 0; t < 50; ++t) {
    const Vector p = random_vector(7, rng), q = random_vector(7, rng);
    EXPECT_EQ(score_dot(sp(p), sp(q)), score_dot(sp(q), sp(p)));
  }
  EXPECT_THROW(score_dot(vs({1.0}), vs({1.0, 2.0})), ValidationError);
  EXPECT_THROW(score_dot(vs({1.0}), vs({1.0}), true), ValidationError);
}

TEST(ScoreGmf, HandValueAndDegenerateWeights) {
  EXPECT_DOUBLE_EQ(score_gmf_logit(vs({1.0, 2.0}), vs({3.0, 4.0}), vs({2.0, 0.5})), 10.0);
  Rng rng = make_rng({2});
  const Vector p = random_vector(5, rng), q = random_vector(5, rng);
  EXPECT_EQ(score_gmf_logit(sp(p), sp(q), sp(Vector::Ones(5))), score_dot(sp(p), sp(q)));
  EXPECT_EQ(score_gmf_logit(sp(p), sp(q), sp(Vector::Zero(5))), 0.0);
  EXPECT_THROW(score_gmf_logit(sp(p), sp(q), sp(Vector::Ones(4))), ValidationError);
}

TEST(GmfInvariance, RescalingLeavesScoresUnchanged) {
  Rng rng = make_rng({3});
  GmfParams g{random_matrix(6, 4, rng), random_matrix(9, 4, rng), random_vector(4, rng)};
  for (const double a : {0.5, 2.0, 10.0}) {
    GmfParams s{g.P / a, g.Q / a, a * a * g.w};
    for (Index u = 0; u < 6; ++u) {
      for (Index i = 0; i < 9; ++i) {
        const double ref = score(g, u, i);
        EXPECT_NEAR(score(s, u, i), ref, 1e-9 * std::max(1.0, std::abs(ref)));
      }
    }
  }
}

TEST(MlpForward, ZeroNetworkAndHandValues) {
  const MlpTower zero = MlpTower::zeros({4, 3, 2, 1});
  EXPECT_EQ(mlp_forward(zero, vs({1.0, -2.0, 3.0, 4.0})).score, 0.0);

  MlpTower t = MlpTower::zeros({1, 1, 1});
  t.weights[0](0, 0) = 1.0;
  t.biases[0](0) = -1.0;
  t.weights[1](0, 0) = 1.0;
  const auto fwd = mlp_forward(t, vs({0.5}));
  EXPECT_EQ(fwd.score, 0.0);
  ASSERT_EQ(fwd.activations.size(), 2u);
  EXPECT_EQ(fwd.pre_activations[0](0), -0.5);
  EXPECT_THROW(mlp_forward(t, vs({0.5, 1.0})), ValidationError);
}

TEST(MlpForward, IdentityTowerSumsNonNegativeInputs) {
  MlpTower t = MlpTower::zeros({3, 3, 1});
  t.weights[0] = Eigen::MatrixXd::Identity(3, 3);
  t.weights[1].setOnes();
  EXPECT_DOUBLE_EQ(mlp_forward(t, vs({0.25, 1.5, 2.0})).score, 3.75);
}

TEST(MlpForward, PositiveHomogeneityWithoutBiases) {
  Rng rng = make_rng({4});
  for (int trial = 0; trial < 20; ++trial) {
    MlpTower t = random_tower({6, 8, 4, 1}, rng);
    for (auto& b : t.biases) b.setZero();
    const Vector x = random_vector(6, rng);
    for (const double a : {0.3, 1.0, 7.0}) {
      const Vector ax = a * x;
      const double ref = a * mlp_forward(t, sp(x)).score;
      EXPECT_NEAR(mlp_forward(t, sp(ax)).score, ref, 1e-12 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST(ScoreMlp, HandBuiltSumOfEmbeddings) {
  MlpSimParams m{Matrix::Constant(2, 1, 0.0), Matrix::Constant(3, 1, 0.0), MlpTower::zeros({2, 1, 1})};
  m.P << 0.7, 1.25;
  m.Q << 0.5, 2.0, 3.0;
  m.tower.weights[0] << 1.0, 1.0;
  m.tower.weights[1] << 1.0;
  EXPECT_DOUBLE_EQ(score(m, 1, 2), 4.25);
  EXPECT_DOUBLE_EQ(score(m, 0, 0), 1.2);
  EXPECT_THROW(score(m, 2, 0), BoundsError);
  EXPECT_THROW(score(m, 0, 3), BoundsError);
}

TEST(ScoreMlp, ZeroTowerAndUserPermutation) {
  Rng rng = make_rng({5});
  MlpSimParams zero{random_matrix(4, 3, rng), random_matrix(5, 3, rng), MlpTower::zeros({6, 4, 1})};
  for (Index u = 0; u < 4; ++u) EXPECT_EQ(score(zero, u, 2), 0.0);

  MlpSimParams m{random_matrix(4, 3, rng), random_matrix(5, 3, rng), random_tower({6, 5, 1}, rng)};
  MlpSimParams permuted = m;
  const std::array<Index, 4> perm{2, 0, 3, 1};
  for (Index u = 0; u < 4; ++u) permuted.P.row(perm[u]) = m.P.row(u);
  for (Index u = 0; u < 4; ++u) {
    for (Index i = 0; i < 5; ++i) EXPECT_EQ(score(permuted, perm[u], i), score(m, u, i));
  }
}

NeuMfParams random_neumf(Rng& rng, Eigen::Index d, std::size_t j) {
  NeuMfParams n;
  n.P = random_matrix(3, d, rng);
  n.Q = random_matrix(4, d, rng);
  n.j = j;
  n.tower = random_tower({2 * j, 4, 1}, rng);
  n.gmf_w = random_vector(d - static_cast<Eigen::Index>(j), rng);
  return n;
}

TEST(ScoreNeuMf, BranchIsolation) {
  Rng rng = make_rng({6});
  NeuMfParams n = random_neumf(rng, 5, 3);
  NeuMfParams zero = n;
  for (auto& w : zero.tower.weights) w.setZero();
  for (auto& b : zero.tower.biases) b.setZero();
  zero.gmf_w.setZero();
  EXPECT_EQ(score(zero, 1, 2), 0.0);

  zero.gmf_w.setOnes();
  const auto p = row_span(n.P, 1), q = row_span(n.Q, 2);
  EXPECT_EQ(score(zero, 1, 2), score_dot(p.subspan(3), q.subspan(3)));

  const Vector x = concat(p.first(3), q.first(3));
  NeuMfParams mlp_only = n;
  mlp_only.gmf_w.setZero();
  EXPECT_EQ(score(mlp_only, 1, 2), mlp_forward(n.tower, sp(x)).score);
  EXPECT_DOUBLE_EQ(score(n, 1, 2),
                   mlp_forward(n.tower, sp(x)).score +
                       score_gmf_logit(p.subspan(3), q.subspan(3), sp(n.gmf_w)));
}

TEST(ScoreNeuMf, SplitMatchesPredictiveFactorLayout) {
  EXPECT_EQ(neumf_split(192), 128u);
  EXPECT_EQ(192 - neumf_split(192), 64u);
  EXPECT_EQ(neumf_split(48), 32u);
  EXPECT_EQ(neumf_split(4), 3u);  // round(8/3)
  EXPECT_EQ(neumf_split(2), 1u);
  EXPECT_THROW(neumf_split(1), ValidationError);
}

TEST(ScoreItems, MatchesSingleCallsBitwise) {
  Rng rng = make_rng({7});
  const std::vector<ModelParams> models{
      DotParams{random_matrix(3, 4, rng), random_matrix(120, 4, rng), true, 0.0},
      GmfParams{random_matrix(3, 4, rng), random_matrix(120, 4, rng), random_vector(4, rng)},
      MlpSimParams{random_matrix(3, 4, rng), random_matrix(120, 4, rng), random_tower({8, 6, 3, 1}, rng)},
      [&] {
        NeuMfParams n = random_neumf(rng, 6, 4);
        n.Q = random_matrix(120, 6, rng);
        return ModelParams{n};
      }()};
  std::vector<Index> items(101);
  std::iota(items.begin(), items.end(), Index{7});
  for (const auto& m : models) {
    EXPECT_TRUE(score_items(m, 1, {}).empty());
    const auto batch = score_items(m, 2, items);
    ASSERT_EQ(batch.size(), items.size());
    for (std::size_t k = 0; k < items.size(); ++k) EXPECT_EQ(batch[k], score(m, 2, items[k]));
    const std::array<Index, 1> one{5};
    EXPECT_EQ(score_items(m, 0, one), std::vector<double>{score(m, 0, 5)});
    const std::array<Index, 1> bad{500};
    EXPECT_THROW(score_items(m, 0, bad), BoundsError);
  }
}

TEST(PredictiveFactor, Mapping) {
  EXPECT_EQ(predictive_factor_to_dims(8, ModelKind::kMlp).d, 16u);
  const auto neumf = predictive_factor_to_dims(64, ModelKind::kNeuMf);
  EXPECT_EQ(neumf.d, 192u);
  EXPECT_EQ(neumf.j, 128u);
  EXPECT_EQ(predictive_factor_to_dims(16, ModelKind::kGmf).d, 16u);
  EXPECT_EQ(predictive_factor_to_dims(16, ModelKind::kMf).d, 16u);
  EXPECT_THROW(predictive_factor_to_dims(0, ModelKind::kMlp), ValidationError);
  EXPECT_THROW(parse_model_kind("svd"), ValidationError);
  EXPECT_EQ(default_hidden_dims(16), (std::vector<std::size_t>{32, 16, 8}));
}

TEST(Validate, ShapeInvariants) {
  EXPECT_THROW(validate(DotParams{Matrix::Zero(2, 1), Matrix::Zero(2, 1), true, 0.0}), ValidationError);
  EXPECT_THROW(validate(GmfParams{Matrix::Zero(2, 3), Matrix::Zero(2, 3), Vector::Zero(2)}), ValidationError);
  EXPECT_THROW(validate(MlpSimParams{Matrix::Zero(2, 3), Matrix::Zero(2, 3), MlpTower::zeros({5, 1})}),
               ValidationError);
  NeuMfParams n{Matrix::Zero(2, 3), Matrix::Zero(2, 3), 3, MlpTower::zeros({6, 1}), Vector::Zero(0)};
  EXPECT_THROW(validate(n), ValidationError);
  EXPECT_THROW(MlpTower::zeros({4, 2}), ValidationError);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  Rng rng = make_rng({8});
  const std::vector<ModelParams> models{
      DotParams{random_matrix(3, 4, rng), random_matrix(5, 4, rng), true, 0.25},
      GmfParams{random_matrix(3, 4, rng), random_matrix(5, 4, rng), random_vector(4, rng)},
      MlpSimParams{random_matrix(3, 4, rng), random_matrix(5, 4, rng), random_tower({8, 6, 3, 1}, rng)},
      ModelParams{random_neumf(rng, 6, 4)}};
  for (const auto& m : models) {
    std::stringstream buf;
    save_checkpoint(buf, m);
    const ModelParams back = load_checkpoint(buf);
    ASSERT_EQ(back.index(), m.index());
    std::stringstream again;
    save_checkpoint(again, back);
    std::stringstream first;
    save_checkpoint(first, m);
    EXPECT_EQ(again.str(), first.str());
    for (Index u = 0; u < 3; ++u) EXPECT_EQ(score(back, u, 3), score(m, u, 3));
  }
  std::stringstream junk("not a checkpoint");
  EXPECT_THROW(load_checkpoint(junk), IoError);
}

}  // namespace
}  // namespace dotsim
