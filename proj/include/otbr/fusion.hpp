#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "otbr/model.hpp"
#include "otbr/ot.hpp"
#include "otbr/unlearn.hpp"

namespace otbr {

enum class TargetScheme { U2N, U2U, U2R };
enum class CostSource { Aligned, Raw };
enum class FinalLayerMode { Transport, Identity };
enum class SourceForm { Compact, Masked };

std::string to_string(TargetScheme s);
std::string to_string(CostSource s);
std::string to_string(FinalLayerMode s);
std::string to_string(SourceForm s);
TargetScheme parse_target_scheme(const std::string& s);
CostSource parse_cost_source(const std::string& s);
FinalLayerMode parse_final_layer(const std::string& s);
SourceForm parse_source_form(const std::string& s);

class DegenerateMarginalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FusionConfig {
  double lambda = 0.5;
  TargetScheme scheme = TargetScheme::U2N;
  CostSource costSource = CostSource::Aligned;
  FinalLayerMode finalLayer = FinalLayerMode::Transport;
  SourceForm sourceForm = SourceForm::Compact;
  SolverKind solver = SolverKind::Exact;
  double sinkhornEpsilon = 0.05;  // relative to the largest cost entry
  std::size_t sinkhornMaxIterations = 20000;
  std::uint64_t seed = 0;
};

// target marginal over the backdoored layer's neurons
Marginal build_target_marginal(const std::vector<double>& nwc, TargetScheme scheme, std::uint64_t seed);

struct LayerTrace {
  std::size_t layerIndex = 0;
  std::size_t sourceCount = 0;  // neurons carrying source mass
  std::size_t targetCount = 0;
  bool transported = true;  // false when the final layer kept identity alignment
  bool uniformFallback = false;
  std::size_t flooredBeta = 0;
  double costMin = 0.0, costMax = 0.0, costMean = 0.0;
  double objective = 0.0;
  std::size_t planSupport = 0;
  double maxRowViolation = 0.0, maxColViolation = 0.0;
  std::uint64_t alignedChecksum = 0;
  std::uint64_t planChecksum = 0;
  Marginal target;
  std::optional<TransportPlan> plan;
};

struct AlignmentTrace {
  std::size_t firstFusedLayer = 0;
  std::vector<LayerTrace> layers;
};

struct FusionResult {
  Model fused;
  Model transported;  // the aligned and transported pruned model, backdoored shapes
  AlignmentTrace trace;
};

double beta_floor();

FusionResult align_and_fuse(const PruneResult& pruned, const Model& backdoored, const NwcReport& nwc,
                            const FusionConfig& cfg);

// elementwise lambda * a + (1 - lambda) * b over every parameter
Model interpolate(const Model& a, const Model& b, double lambda);

// fuses the masked pruned model with the backdoored one without alignment
Model vanilla_fuse(const Model& masked, const Model& backdoored, double lambda);

struct NeuronNorms {
  std::size_t layerIndex = 0;
  std::vector<double> backdoored, pruned, transported;
};

std::vector<NeuronNorms> weight_norm_report(const Model& backdoored, const Model& prunedMasked,
                                            const Model& transported);

void write_trace_csv(const AlignmentTrace& trace, const std::filesystem::path& path);
void write_weight_norms_csv(const std::vector<NeuronNorms>& norms, const std::filesystem::path& path);

}  // namespace otbr
