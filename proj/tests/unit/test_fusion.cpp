#include <gtest/gtest.h>

#include <numeric>

#include "otbr/fusion.hpp"
#include "test_support.hpp"

using namespace otbr;
using namespace otbr::testing;

namespace {

FusionConfig u2u(double lambda) {
  FusionConfig c;
  c.lambda = lambda;
  c.scheme = TargetScheme::U2U;
  return c;
}

}  // namespace

TEST(Marginals, SourceIsUniform) {
  Marginal a = Marginal::uniform(4);
  for (double v : a.mass) EXPECT_EQ(v, 0.25);
}

TEST(Marginals, NwcNormalized) {
  Marginal b = build_target_marginal({3, 1}, TargetScheme::U2N, 0);
  EXPECT_EQ(b.mass, (std::vector<double>{0.75, 0.25}));
}

TEST(Marginals, UniformTarget) {
  Marginal b = build_target_marginal({5, 0, 1, 2, 3}, TargetScheme::U2U, 0);
  for (double v : b.mass) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(Marginals, RandomTargetSeeded) {
  Marginal a = build_target_marginal(std::vector<double>(6, 1.0), TargetScheme::U2R, 3);
  Marginal b = build_target_marginal(std::vector<double>(6, 1.0), TargetScheme::U2R, 3);
  Marginal c = build_target_marginal(std::vector<double>(6, 1.0), TargetScheme::U2R, 4);
  EXPECT_EQ(a.mass, b.mass);
  EXPECT_NE(a.mass, c.mass);
  EXPECT_NEAR(a.total(), 1.0, 1e-12);
  for (double v : a.mass) EXPECT_GT(v, 0.0);
}

TEST(Marginals, AllZeroNwcIsDegenerate) {
  EXPECT_THROW(build_target_marginal({0, 0, 0}, TargetScheme::U2N, 0), DegenerateMarginalError);
}

TEST(AlignFuse, SelfAlignmentIsIdempotent) {
  for (const Model& bd : {make_mlp({1, 4, 4}, {12, 8}, 5, 1), tiny_cnn(2)}) {
    PruneResult pr = keep_all(bd);
    for (double lambda : {0.0, 0.3, 0.5, 1.0}) {
      FusionResult f = align_and_fuse(pr, bd, positive_nwc(bd, 1), u2u(lambda));
      EXPECT_LE(max_param_diff(f.fused, bd), 1e-6) << "lambda " << lambda;
      EXPECT_EQ(f.trace.firstFusedLayer, bd.parametric_layers().front());
      EXPECT_EQ(f.trace.layers.size(), bd.parametric_layers().size());
    }
  }
}

TEST(AlignFuse, PermutedSourceTransportsToEquivalentModel) {
  for (const Model& bd : {make_mlp({1, 4, 4}, {10, 7}, 4, 3), tiny_cnn(4)}) {
    Model src = permute_hidden(bd, 9);
    Tensor x = random_batch(bd, 100, 5);
    ASSERT_LE(max_abs_diff(forward(src, x), forward(bd, x)), 1e-5);
    ASSERT_GT(max_param_diff(src, bd), 0.01);
    FusionResult f = align_and_fuse(keep_all(src), bd, positive_nwc(bd, 2), u2u(0.5));
    EXPECT_LE(max_abs_diff(forward(f.transported, x), forward(src, x)), 1e-4);
    EXPECT_LE(max_param_diff(f.transported, bd), 1e-5);
  }
}

TEST(AlignFuse, LambdaEndpointsAreBitwise) {
  Model bd = make_mlp({1, 4, 4}, {12, 8}, 5, 6);
  NwcReport n = positive_nwc(bd, 7);
  PruneResult pr = prune_top_gamma(bd, n, 0.2);
  FusionConfig c;
  c.lambda = 0.0;
  FusionResult f0 = align_and_fuse(pr, bd, n, c);
  EXPECT_TRUE(f0.fused == bd);
  c.lambda = 1.0;
  FusionResult f1 = align_and_fuse(pr, bd, n, c);
  EXPECT_TRUE(f1.fused == f1.transported);
}

TEST(AlignFuse, FusionIsElementwiseLinear) {
  Model bd = tiny_cnn(8);
  NwcReport n = positive_nwc(bd, 8);
  PruneResult pr = prune_top_gamma(bd, n, 0.3);
  FusionConfig c;
  c.lambda = 0.37;
  FusionResult f = align_and_fuse(pr, bd, n, c);
  auto pf = params(f.fused), pt = params(f.transported), pb = params(bd);
  for (std::size_t k = 0; k < pf.size(); ++k)
    for (std::size_t i = 0; i < pf[k]->size(); ++i)
      ASSERT_EQ((*pf[k])[i], static_cast<float>(0.37 * double((*pt[k])[i]) + (1.0 - 0.37) * double((*pb[k])[i])));
}

TEST(AlignFuse, TraceContracts) {
  Model bd = make_mlp({1, 4, 4}, {12, 8, 6}, 5, 9);
  NwcReport n = positive_nwc(bd, 9);
  PruneResult pr = prune_top_gamma(bd, n, 0.25);
  ASSERT_TRUE(pr.firstPrunedLayer.has_value());
  FusionResult f = align_and_fuse(pr, bd, n, FusionConfig{});
  EXPECT_EQ(f.trace.firstFusedLayer, *pr.firstPrunedLayer);
  for (const auto& lt : f.trace.layers) {
    ASSERT_TRUE(lt.plan.has_value());
    EXPECT_TRUE(check_plan(*lt.plan, kExactTolerance).pass);
    const auto& v = n.for_layer(lt.layerIndex).values;
    double total = std::accumulate(v.begin(), v.end(), 0.0);
    for (std::size_t j = 0; j < v.size(); ++j) EXPECT_NEAR(lt.target.mass[j], v[j] / total, 1e-12);
    EXPECT_FALSE(lt.uniformFallback);
  }
  for (std::size_t li : bd.parametric_layers())
    EXPECT_EQ(neuron_view(f.fused, li).rows.shape(), neuron_view(bd, li).rows.shape());
  // layers before p are copied
  for (std::size_t li : bd.parametric_layers())
    if (li < *pr.firstPrunedLayer) {
      EXPECT_EQ(neuron_view(f.fused, li).rows, neuron_view(bd, li).rows);
    }
}

TEST(AlignFuse, MaskedAndCompactSourcesAgree) {
  for (const Model& bd : {make_mlp({1, 4, 4}, {12, 8}, 5, 10), tiny_cnn(11)}) {
    NwcReport n = positive_nwc(bd, 10);
    PruneResult pr = prune_top_gamma(bd, n, 0.3);
    FusionConfig c;
    FusionResult compact = align_and_fuse(pr, bd, n, c);
    c.sourceForm = SourceForm::Masked;
    FusionResult masked = align_and_fuse(pr, bd, n, c);
    EXPECT_LE(max_param_diff(compact.fused, masked.fused), 1e-5);
  }
}

TEST(AlignFuse, ZeroNwcLayerFallsBackToUniform) {
  Model bd = make_mlp({1, 4, 4}, {6, 5}, 3, 12);
  NwcReport n = positive_nwc(bd, 12);
  for (double& v : n.layers[1].values) v = 0.0;
  PruneResult pr = prune_neurons(bd, {{2}, {}, {}});
  FusionResult f = align_and_fuse(pr, bd, n, FusionConfig{});
  ASSERT_EQ(f.trace.layers.size(), 3u);
  EXPECT_FALSE(f.trace.layers[0].uniformFallback);
  EXPECT_TRUE(f.trace.layers[1].uniformFallback);
  for (double v : f.trace.layers[1].target.mass) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(AlignFuse, TinyBetaIsFloored) {
  Model bd = make_mlp({1, 4, 4}, {6, 5}, 3, 13);
  NwcReport n = positive_nwc(bd, 13);
  n.layers[1].values[0] = 1e-20;
  PruneResult pr = prune_neurons(bd, {{1}, {}, {}});
  FusionResult f = align_and_fuse(pr, bd, n, FusionConfig{});
  EXPECT_EQ(f.trace.layers[1].flooredBeta, 1u);
  for (const auto* t : params(f.fused)) EXPECT_TRUE(t->all_finite());
}

TEST(AlignFuse, VariantsRun) {
  Model bd = tiny_cnn(14);
  NwcReport n = positive_nwc(bd, 14);
  PruneResult pr = prune_top_gamma(bd, n, 0.3);
  FusionConfig c;
  c.costSource = CostSource::Raw;
  EXPECT_NO_THROW(align_and_fuse(pr, bd, n, c));
  c = FusionConfig{};
  c.finalLayer = FinalLayerMode::Identity;
  FusionResult f = align_and_fuse(pr, bd, n, c);
  EXPECT_FALSE(f.trace.layers.back().transported);
  c = FusionConfig{};
  c.solver = SolverKind::Sinkhorn;
  FusionResult s = align_and_fuse(pr, bd, n, c);
  for (const auto& lt : s.trace.layers) EXPECT_TRUE(check_plan(*lt.plan).pass);
  c = FusionConfig{};
  c.lambda = 1.5;
  EXPECT_THROW(align_and_fuse(pr, bd, n, c), std::invalid_argument);
}

TEST(Vanilla, EndpointsAndArithmetic) {
  Model bd = make_mlp({1, 4, 4}, {6, 5}, 3, 15);
  PruneResult pr = prune_neurons(bd, {{2}, {}, {}});
  EXPECT_TRUE(vanilla_fuse(pr.masked, bd, 1.0) == pr.masked);
  Model half = vanilla_fuse(pr.masked, bd, 0.5);
  const auto& h = std::get<DenseLayer>(half.layer(1));
  const auto& b = std::get<DenseLayer>(bd.layer(1));
  for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(h.weights.at(2, c), 0.5f * b.weights.at(2, c));
  EXPECT_EQ(h.bias[2], 0.5f * b.bias[2]);
  EXPECT_THROW(vanilla_fuse(pr.pruned, bd, 0.5), DimensionError);
}

TEST(WeightNorms, PrunedZeroAndRecovery) {
  Model bd = make_mlp({1, 4, 4}, {8, 6}, 3, 16);
  NwcReport n = positive_nwc(bd, 16);
  PruneResult pr = prune_neurons(bd, {{}, {1, 4}, {}});
  FusionResult f = align_and_fuse(pr, bd, n, FusionConfig{});
  auto norms = weight_norm_report(bd, pr.masked, f.transported);
  ASSERT_EQ(norms.size(), 3u);
  EXPECT_EQ(norms[1].pruned[1], 0.0);
  EXPECT_EQ(norms[1].pruned[4], 0.0);
  EXPECT_GT(norms[1].transported[1], 0.0);
  EXPECT_GT(norms[1].transported[4], 0.0);
  // layer before p: untouched
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(norms[0].backdoored[i], norms[0].pruned[i]);
    EXPECT_EQ(norms[0].backdoored[i], norms[0].transported[i]);
  }
}
