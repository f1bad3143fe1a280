#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "otbr/tensor.hpp"

namespace otbr {

struct DenseLayer {
  Tensor weights;  // [out x in]
  Tensor bias;     // [out]
};

struct Conv2DLayer {
  Tensor weights;  // [outCh x inCh x kH x kW]
  Tensor bias;     // [outCh]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct ReLULayer {};
struct FlattenLayer {};

using Layer = std::variant<DenseLayer, Conv2DLayer, ReLULayer, FlattenLayer>;

std::string layer_kind(const Layer& layer);
bool is_parametric(const Layer& layer);

struct ModelMetadata {
  std::string name;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> tags;
  bool operator==(const ModelMetadata&) const = default;
};

class Model {
 public:
  Model() = default;
  Model(Shape inputShape, std::vector<Layer> layers, std::size_t classCount, ModelMetadata metadata = {});

  // throws DimensionError when layer shapes do not compose
  void validate() const;

  const Shape& input_shape() const { return inputShape_; }
  std::size_t class_count() const { return classCount_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const ModelMetadata& metadata() const { return metadata_; }
  ModelMetadata& metadata() { return metadata_; }

  // per-sample shapes: shapes[i] feeds layer i, shapes.back() is the output
  std::vector<Shape> activation_shapes() const;
  std::vector<std::size_t> parametric_layers() const;
  std::size_t output_layer() const;
  std::size_t neuron_count(std::size_t layerIndex) const;
  std::size_t parameter_count() const;

  // parametric layer feeding layer i, or -1 when it reads the input directly
  long previous_parametric(std::size_t layerIndex) const;
  // how many incoming columns each upstream neuron owns (spatial block size)
  std::size_t incoming_group(std::size_t layerIndex) const;

  friend bool operator==(const Model& a, const Model& b);

 private:
  Shape inputShape_;
  std::vector<Layer> layers_;
  std::size_t classCount_ = 0;
  ModelMetadata metadata_;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, double loss);
  std::size_t step() const { return step_; }
  double loss() const { return loss_; }

 private:
  std::size_t step_;
  double loss_;
};

// batch: [B, ...inputShape]; returns logits [B x classCount]
Tensor forward(const Model& model, const Tensor& batch);
// output of layer `layerIndex` for every sample in the batch
Tensor forward_to(const Model& model, const Tensor& batch, std::size_t layerIndex);
std::vector<int> predict(const Model& model, const Tensor& batch, std::size_t chunk = 512);
double cross_entropy(const Model& model, const Tensor& batch, std::span<const int> labels);

struct LayerGrad {
  std::vector<double> weights;
  std::vector<double> bias;
};

struct Gradients {
  double loss = 0.0;
  std::vector<LayerGrad> layers;  // one per model layer, empty for non-parametric
};

Gradients compute_gradients(const Model& model, const Tensor& batch, std::span<const int> labels);

struct StepConfig {
  double learningRate = 0.01;
  double objectiveSign = 1.0;  // +1 descends, -1 ascends
  double weightDecay = 0.0;
};

// one SGD step on mean cross-entropy; returns the loss before the update
double sgd_step(Model& model, const Tensor& batch, std::span<const int> labels, const StepConfig& cfg,
                std::size_t stepIndex = 0);

struct TrainConfig {
  double learningRate = 0.05;
  std::size_t batchSize = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  double objectiveSign = 1.0;
  double weightDecay = 0.0;
  bool cosineSchedule = false;
};

// returns the mean loss of each epoch
std::vector<double> train(Model& model, const Tensor& images, std::span<const int> labels, const TrainConfig& cfg);

struct ConvSpec {
  std::size_t outChannels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

Model make_mlp(const Shape& inputShape, const std::vector<std::size_t>& hidden, std::size_t classCount,
               std::uint64_t seed);
Model make_cnn(const Shape& inputShape, const std::vector<ConvSpec>& convs, std::size_t classCount,
               std::uint64_t seed);

struct NeuronView {
  std::size_t layerIndex = 0;
  Tensor rows;  // [neurons x (fanIn + 1)], bias in the last column
};

NeuronView neuron_view(const Model& model, std::size_t layerIndex);
Model apply_view(const Model& model, const NeuronView& view);

}  // namespace otbr
