#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "otbr/model.hpp"
#include "test_support.hpp"

using namespace otbr;
using namespace otbr::testing;

namespace {

Model dense_model(Tensor w, Tensor b, std::size_t classes) {
  Shape in{w.dim(1)};
  return Model(in, {DenseLayer{std::move(w), std::move(b)}}, classes);
}

}  // namespace

TEST(Forward, ZeroParametersGiveZeroLogits) {
  Model m = make_mlp({4}, {5}, 3, 1);
  for (auto& l : m.layers())
    if (auto* d = std::get_if<DenseLayer>(&l)) {
      std::fill(d->weights.data().begin(), d->weights.data().end(), 0.0f);
      std::fill(d->bias.data().begin(), d->bias.data().end(), 0.0f);
    }
  Tensor out = forward(m, random_tensor({3, 4}, 2));
  for (float v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Forward, IdentityDense) {
  Model m = dense_model(Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}), 2);
  Tensor out = forward(m, Tensor({1, 2}, {1, 2}));
  EXPECT_EQ(out[0], 1.0f);
  EXPECT_EQ(out[1], 2.0f);
}

TEST(Forward, MlpMatchesReference) {
  Model m = make_mlp({6}, {8}, 4, 3);
  Tensor x = random_tensor({10, 6}, 4);
  Tensor out = forward(m, x);
  for (std::size_t s = 0; s < 10; ++s) {
    auto ref = reference_forward(m, std::vector<double>(x.row(s).begin(), x.row(s).end()));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at(s, c), ref[c], 1e-5);
  }
}

TEST(Forward, CnnMatchesReference) {
  Model m = tiny_cnn(5);
  Tensor x = random_tensor({4, 2, 6, 6}, 6, 0.0, 1.0);
  Tensor out = forward(m, x);
  const std::size_t per = 72;
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<double> in(x.data().begin() + s * per, x.data().begin() + (s + 1) * per);
    auto ref = reference_forward(m, in);
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(out.at(s, c), ref[c], 1e-5);
  }
}

TEST(Forward, ShapeMismatchThrows) {
  Model m = make_mlp({6}, {8}, 4, 3);
  EXPECT_THROW(forward(m, Tensor({2, 5})), DimensionError);
}

TEST(ModelShape, ConstructionChecksComposition) {
  EXPECT_THROW(Model({3}, {DenseLayer{Tensor({2, 4}), Tensor({2})}}, 2), DimensionError);
  EXPECT_THROW(Model({4}, {DenseLayer{Tensor({2, 4}), Tensor({3})}}, 2), DimensionError);
  EXPECT_THROW(Model({4}, {DenseLayer{Tensor({3, 4}), Tensor({3})}}, 2), DimensionError);
}

TEST(Gradients, DenseNetMatchesFiniteDifferences) {
  Model m = make_mlp({5}, {6, 4}, 3, 11);
  GradientCheck g = check_gradients(m, random_tensor({6, 5}, 12), {0, 1, 2, 0, 1, 2});
  EXPECT_LE(g.lossError, 1e-5);
  EXPECT_LE(g.worstRelative, 1e-3);
  EXPECT_LE(g.skipped * 4, g.total);
}

TEST(Gradients, ConvNetMatchesFiniteDifferences) {
  Model m = tiny_cnn(13);
  GradientCheck g = check_gradients(m, random_tensor({3, 2, 6, 6}, 14, 0.0, 1.0), {0, 3, 4});
  EXPECT_LE(g.lossError, 1e-5);
  EXPECT_LE(g.worstRelative, 1e-3);
  EXPECT_LE(g.skipped * 4, g.total);
}

TEST(Sgd, ZeroLearningRateLeavesModelBitwise) {
  Model m = make_mlp({5}, {6}, 3, 1);
  Model before = m;
  sgd_step(m, random_tensor({4, 5}, 2), std::vector<int>{0, 1, 2, 0}, StepConfig{0.0, 1.0, 0.0});
  EXPECT_TRUE(m == before);
}

TEST(Sgd, DescentStepReducesLossOnSeparableToy) {
  Model m = make_mlp({2}, {4}, 2, 21);
  Tensor x({2, 2}, {1, 0, 0, 1});
  std::vector<int> y{0, 1};
  const double before = sgd_step(m, x, y, StepConfig{0.1, 1.0, 0.0});
  EXPECT_LT(cross_entropy(m, x, y), before);
}

TEST(Sgd, AscentStepIncreasesLoss) {
  Model m = make_mlp({2}, {4}, 2, 21);
  Tensor x({2, 2}, {1, 0, 0, 1});
  std::vector<int> y{0, 1};
  const double before = sgd_step(m, x, y, StepConfig{0.1, -1.0, 0.0});
  EXPECT_GT(cross_entropy(m, x, y), before);
}

TEST(Sgd, NonFiniteLossReportsStep) {
  Model m = make_mlp({2}, {4}, 2, 21);
  std::get<DenseLayer>(m.layer(2)).bias[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    sgd_step(m, Tensor({1, 2}, {1, 1}), std::vector<int>{0}, StepConfig{}, 7);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 7u);
  }
}

TEST(Sgd, LabelOutOfRangeThrows) {
  Model m = make_mlp({2}, {4}, 2, 21);
  EXPECT_THROW(sgd_step(m, Tensor({1, 2}, {1, 1}), std::vector<int>{2}, StepConfig{}), DimensionError);
}

TEST(Train, IdenticalSeedGivesIdenticalParameters) {
  Tensor x = random_tensor({40, 6}, 3);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < 40; ++i) y[i] = int(i % 3);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batchSize = 8;
  tc.seed = 5;
  Model a = make_mlp({6}, {8}, 3, 1), b = make_mlp({6}, {8}, 3, 1);
  auto la = train(a, x, y, tc);
  auto lb = train(b, x, y, tc);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(la, lb);
  EXPECT_LT(la.back(), la.front());
}

TEST(NeuronView, DenseShape) {
  Model m = dense_model(random_tensor({2, 3}, 1), random_tensor({2}, 2), 2);
  NeuronView v = neuron_view(m, 0);
  EXPECT_EQ(v.rows.shape(), (Shape{2, 4}));
  EXPECT_EQ(v.rows.at(1, 3), std::get<DenseLayer>(m.layer(0)).bias[1]);
}

TEST(NeuronView, ConvShape) {
  Model m = make_cnn({2, 5, 5}, {{4, 3, 1, 0}}, 3, 1);
  EXPECT_EQ(neuron_view(m, 0).rows.shape(), (Shape{4, 19}));
}

TEST(NeuronView, RoundTripIsBitExact) {
  Model mlp = make_mlp({7}, {5, 4}, 3, 8);
  Model cnn = tiny_cnn(9);
  for (const Model* m : {&mlp, &cnn})
    for (std::size_t li : m->parametric_layers()) {
      NeuronView v = neuron_view(*m, li);
      Model back = apply_view(*m, v);
      EXPECT_TRUE(back == *m);
      EXPECT_EQ(neuron_view(back, li).rows, v.rows);
    }
}

TEST(NeuronView, NonParametricLayerThrows) {
  Model m = make_mlp({7}, {5}, 3, 8);
  EXPECT_THROW(neuron_view(m, 1), DimensionError);
}

TEST(Symmetry, PermutingHiddenNeuronsPreservesOutputs) {
  Model m = make_mlp({6}, {7, 5}, 4, 17);
  Model p = m;
  auto& l0 = std::get<DenseLayer>(p.layer(0));
  auto& l2 = std::get<DenseLayer>(p.layer(2));
  const auto& o0 = std::get<DenseLayer>(m.layer(0));
  const auto& o2 = std::get<DenseLayer>(m.layer(2));
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  Rng(3).shuffle(perm);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t k = 0; k < 6; ++k) l0.weights.at(i, k) = o0.weights.at(perm[i], k);
    l0.bias[i] = o0.bias[perm[i]];
    for (std::size_t r = 0; r < 5; ++r) l2.weights.at(r, i) = o2.weights.at(r, perm[i]);
  }
  Tensor x = random_tensor({20, 6}, 4);
  EXPECT_LE(max_abs_diff(forward(m, x), forward(p, x)), 1e-5);
}

TEST(Predict, TiesGoToLowestIndex) {
  Model m = dense_model(Tensor({3, 2}), Tensor({3}, {1, 1, 0}), 3);
  auto p = predict(m, Tensor({2, 2}));
  EXPECT_EQ(p, (std::vector<int>{0, 0}));
}

TEST(ForwardTo, LastLayerEqualsForward) {
  Model m = tiny_cnn(2);
  Tensor x = random_tensor({2, 2, 6, 6}, 1, 0.0, 1.0);
  EXPECT_EQ(forward_to(m, x, m.layers().size() - 1), forward(m, x));
}
