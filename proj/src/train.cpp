#include <cmath>
#include <numbers>
#include <numeric>

#include "otbr/model.hpp"
#include "otbr/rng.hpp"

namespace otbr {

namespace {

// U(-1/sqrt(fanIn), 1/sqrt(fanIn)) for weights and biases
void init_uniform(Tensor& t, std::size_t fanIn, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fanIn));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
}

DenseLayer make_dense(std::size_t in, std::size_t out, Rng rng) {
  DenseLayer d{Tensor({out, in}), Tensor({out})};
  init_uniform(d.weights, in, rng);
  init_uniform(d.bias, in, rng);
  return d;
}

}  // namespace

Model make_mlp(const Shape& inputShape, const std::vector<std::size_t>& hidden, std::size_t classCount,
               std::uint64_t seed) {
  Rng rng(seed, 0x4d4c50);
  std::vector<Layer> layers;
  if (inputShape.size() != 1) layers.emplace_back(FlattenLayer{});
  std::size_t in = shape_size(inputShape);
  std::size_t idx = 0;
  for (std::size_t h : hidden) {
    layers.emplace_back(make_dense(in, h, rng.split(idx++)));
    layers.emplace_back(ReLULayer{});
    in = h;
  }
  layers.emplace_back(make_dense(in, classCount, rng.split(idx)));
  return Model(inputShape, std::move(layers), classCount, ModelMetadata{"mlp", seed, {}});
}

Model make_cnn(const Shape& inputShape, const std::vector<ConvSpec>& convs, std::size_t classCount,
               std::uint64_t seed) {
  if (inputShape.size() != 3) throw DimensionError("convolutional model needs a [C x H x W] input");
  Rng rng(seed, 0x434e4e);
  std::vector<Layer> layers;
  Shape cur = inputShape;
  std::size_t idx = 0;
  for (const ConvSpec& s : convs) {
    Conv2DLayer c{Tensor({s.outChannels, cur[0], s.kernel, s.kernel}), Tensor({s.outChannels}), s.stride, s.padding};
    Rng r = rng.split(idx++);
    const std::size_t fan = cur[0] * s.kernel * s.kernel;
    init_uniform(c.weights, fan, r);
    init_uniform(c.bias, fan, r);
    if (s.stride == 0 || cur[1] + 2 * s.padding < s.kernel || cur[2] + 2 * s.padding < s.kernel)
      throw DimensionError("convolution does not fit input " + shape_string(cur));
    cur = {s.outChannels, (cur[1] + 2 * s.padding - s.kernel) / s.stride + 1,
           (cur[2] + 2 * s.padding - s.kernel) / s.stride + 1};
    layers.emplace_back(std::move(c));
    layers.emplace_back(ReLULayer{});
  }
  layers.emplace_back(FlattenLayer{});
  layers.emplace_back(make_dense(shape_size(cur), classCount, rng.split(idx)));
  return Model(inputShape, std::move(layers), classCount, ModelMetadata{"cnn", seed, {}});
}

std::vector<double> train(Model& model, const Tensor& images, std::span<const int> labels, const TrainConfig& cfg) {
  if (images.rank() < 2 || images.dim(0) != labels.size())
    throw DimensionError("training images and labels disagree on sample count");
  if (cfg.batchSize == 0) throw DimensionError("batch size must be positive");
  const std::size_t N = images.dim(0), per = images.size() / N;
  const std::size_t stepsPerEpoch = (N + cfg.batchSize - 1) / cfg.batchSize;
  const std::size_t totalSteps = stepsPerEpoch * cfg.epochs;
  Rng rng(cfg.seed, 0x545241494e);
  std::vector<std::size_t> order(N);
  std::vector<double> epochLoss;
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    Rng er = rng.split(e);
    er.shuffle(order);
    double sum = 0.0;
    for (std::size_t s = 0; s < N; s += cfg.batchSize) {
      const std::size_t n = std::min(cfg.batchSize, N - s);
      Shape sh = images.shape();
      sh[0] = n;
      Tensor batch(sh);
      std::vector<int> y(n);
      for (std::size_t k = 0; k < n; ++k) {
        std::copy_n(images.data().begin() + order[s + k] * per, per, batch.data().begin() + k * per);
        y[k] = labels[order[s + k]];
      }
      double lr = cfg.learningRate;
      if (cfg.cosineSchedule)
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(totalSteps)));
      StepConfig sc{lr, cfg.objectiveSign, cfg.weightDecay};
      sum += sgd_step(model, batch, y, sc, step) * static_cast<double>(n);
      ++step;
    }
    epochLoss.push_back(sum / static_cast<double>(N));
  }
  return epochLoss;
}

}  // namespace otbr
