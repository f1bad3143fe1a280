#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "otbr/model.hpp"

namespace otbr {

struct UnlearnConfig {
  std::size_t steps = 20;       // I
  std::size_t batchSize = 256;  // B
  double learningRate = 1e-2;
  std::optional<std::size_t> labelCeiling;  // G
  std::uint64_t seed = 0;
};

struct UnlearnResult {
  Model unlearned;
  std::vector<double> lossTrace;  // loss before each ascent step
};

// gradient ascent on fresh uniform-noise batches with random labels
UnlearnResult random_unlearn(const Model& backdoored, const UnlearnConfig& cfg);

// gradient ascent on batches resampled from the given samples
UnlearnResult unlearn_on_samples(const Model& model, const Tensor& images, std::span<const int> labels,
                                 const UnlearnConfig& cfg);

struct LayerNwc {
  std::size_t layerIndex = 0;
  std::vector<double> values;  // one per neuron, >= 0
};

struct NwcReport {
  std::vector<LayerNwc> layers;  // parametric layers in model order
  std::size_t neuron_total() const;
  const LayerNwc& for_layer(std::size_t layerIndex) const;
};

// per-neuron L1 distance between weight rows (bias included)
NwcReport compute_nwc(const Model& a, const Model& b);

void write_nwc_csv(const NwcReport& report, const std::filesystem::path& path);
NwcReport read_nwc_csv(const std::filesystem::path& path);

class InfeasiblePruneError : public std::runtime_error {
 public:
  InfeasiblePruneError(std::size_t layer, const std::string& what);
  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

enum class PruneScope { Global, PerLayer };
std::string to_string(PruneScope s);
PruneScope parse_prune_scope(const std::string& s);

struct PruneResult {
  Model pruned;  // compact: pruned rows and the matching downstream columns removed
  Model masked;  // original shapes, pruned rows and biases zeroed
  std::vector<std::size_t> layers;                 // parametric layer indices
  std::vector<std::vector<std::size_t>> kept;      // surviving neurons per parametric layer, ascending
  std::vector<std::vector<std::size_t>> removed;   // pruned neurons per parametric layer, ascending
  std::optional<std::size_t> firstPrunedLayer;     // model layer index of the first layer that lost neurons
  std::size_t prunedCount = 0;

  const std::vector<std::size_t>& kept_for(std::size_t layerIndex) const;
};

// prunes floor(gamma * eligible) neurons with the largest NWC; the output layer is never pruned
PruneResult prune_top_gamma(const Model& model, const NwcReport& nwc, double gamma,
                            PruneScope scope = PruneScope::Global);

// prunes an explicit set of neurons, listed per parametric layer
PruneResult prune_neurons(const Model& model, const std::vector<std::vector<std::size_t>>& removed);

class CorrelationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Spearman rank correlation with average ranks for ties
double spearman(std::span<const double> x, std::span<const double> y);
std::vector<double> average_ranks(std::span<const double> x);

struct CorrelationResult {
  std::vector<std::size_t> layers;
  std::vector<double> perLayer;
  double pooled = 0.0;
};

CorrelationResult nwc_correlation(const NwcReport& a, const NwcReport& b);

}  // namespace otbr
