#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "otbr/data.hpp"
#include "otbr/fusion.hpp"
#include "otbr/model.hpp"
#include "otbr/unlearn.hpp"

namespace otbr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// raised by run_pipeline; names the stage that failed
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what, bool divergence);
  const std::string& stage() const { return stage_; }
  bool divergence() const { return divergence_; }

 private:
  std::string stage_;
  bool divergence_;
};

enum class ArchKind { Mlp, Cnn };

struct DataSpec {
  std::size_t classCount = 10;
  std::size_t perClassTrain = 500;
  std::size_t perClassTest = 100;
  Shape sampleShape{1, 16, 16};
};

struct ArchSpec {
  ArchKind kind = ArchKind::Mlp;
  std::vector<std::size_t> hidden{256, 128, 64};
  std::vector<ConvSpec> convs{{16, 3, 1, 1}, {32, 3, 2, 1}};
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataSpec data;
  PoisonSpec poison;
  ArchSpec arch;
  TrainConfig train;
  UnlearnConfig unlearn;
  double gamma = 0.05;
  PruneScope pruneScope = PruneScope::Global;
  FusionConfig fusion;
  std::filesystem::path outDir = "otbr-out";

  void validate() const;
};

// key = value lines; '#' starts a comment
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
// includeOut=false drops the output directory so recorded configs compare equal across runs
std::string config_to_text(const RunConfig& cfg, bool includeOut = true);

// stage seeds derived from the run seed
std::uint64_t stage_seed(const RunConfig& cfg, const char* stage);

inline constexpr int kReportSchemaVersion = 1;

struct EvalReport {
  std::string stage;
  double acc = 0.0;  // percent
  double asr = 0.0;  // percent
  double accDrop = 0.0;
  bool success = false;
  std::size_t cleanCount = 0;
  std::size_t asrCount = 0;
};

bool success_rule(double accDrop, double asr);

EvalReport evaluate(const Model& model, const Dataset& cleanTest, const Dataset& asrTest, int targetLabel,
                    std::optional<double> baselineAcc = std::nullopt, const std::string& stage = "");

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);

struct Fixture {
  Dataset train;  // poisoned
  Dataset test;
  Dataset asrTest;
  std::vector<std::size_t> poisonIndices;
  Model backdoored;
  std::vector<double> trainLoss;
};

// data generation, poisoning and backdoor training
Fixture build_fixture(const RunConfig& cfg);
// the same datasets without training a model
Fixture build_fixture_data(const RunConfig& cfg);
Model build_model(const RunConfig& cfg);

// the data-free defense: consumes only the backdoored model and seeds
struct DefenseResult {
  UnlearnResult unlearn;
  NwcReport nwc;
  PruneResult prune;
  FusionResult fusion;
  Model vanilla;  // masked pruned model fused without alignment
};

DefenseResult run_defense(const Model& backdoored, const RunConfig& cfg);

struct PipelineResult {
  EvalReport noDefense, pruned, vanilla, fused;
  double seconds = 0.0;
};

PipelineResult run_pipeline(const RunConfig& cfg);

enum class AblationAxis { FusionScheme, TargetScheme, GammaSteps, Lambda, LabelCeiling };
AblationAxis parse_axis(const std::string& s);
std::string to_string(AblationAxis a);

struct AblationRow {
  std::string value;
  EvalReport report;
};

std::vector<AblationRow> run_ablation(const RunConfig& cfg, AblationAxis axis, const Fixture& fixture);
std::string ablation_csv(AblationAxis axis, const std::vector<AblationRow>& rows);

struct CorrelationReport {
  NwcReport random;
  NwcReport poison;
  CorrelationResult rho;
};

CorrelationReport correlation_experiment(const RunConfig& cfg, const Fixture& fixture);
std::string correlation_json(const CorrelationReport& r);
std::string correlation_scatter_csv(const CorrelationReport& r);

struct ActivationSeries {
  std::size_t layerIndex = 0;
  std::vector<double> nwc;
  std::vector<double> backdooredClean, backdooredTriggered, fusedClean, fusedTriggered;
};

// mean post-activation per neuron of one layer on clean and triggered inputs
ActivationSeries activation_comparison(const Model& backdoored, const Model& fused, const Dataset& clean,
                                       const Dataset& triggered, std::size_t layerIndex, const NwcReport& nwc);
std::string activation_csv(const ActivationSeries& s);

}  // namespace otbr
