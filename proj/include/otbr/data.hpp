#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "otbr/tensor.hpp"

namespace otbr {

struct Dataset {
  Tensor images;            // [N x C x H x W], values in [0, 1]
  std::vector<int> labels;  // [N]
  std::size_t classCount = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  void validate() const;
  bool operator==(const Dataset& o) const {
    return images == o.images && labels == o.labels && classCount == o.classCount && split == o.split;
  }
};

// bar-and-blob class patterns on a gray background with per-sample jitter
Dataset gen_synthetic(std::size_t classCount, std::size_t perClass, const Shape& sampleShape, std::uint64_t seed,
                      const std::string& split = "train");

enum class TriggerKind { Patch, Blend };
std::string to_string(TriggerKind k);
TriggerKind parse_trigger(const std::string& s);

struct PoisonSpec {
  TriggerKind kind = TriggerKind::Patch;
  int targetLabel = 0;
  double poisonRatio = 0.10;
  std::size_t patchSize = 3;
  float blendAlpha = 0.2f;
  std::uint64_t patternSeed = 1234;
};

// smooth pattern in [0, 1]: a seeded 4x4 grid bilinearly stretched over the image
Tensor make_blend_pattern(const Shape& sampleShape, std::uint64_t seed);

// stamps the trigger into one sample in place
void apply_trigger(std::span<float> sample, const Shape& sampleShape, const PoisonSpec& spec, const Tensor& pattern);

struct PoisonResult {
  Dataset dataset;
  std::vector<std::size_t> indices;  // ascending
  std::vector<int> originalLabels;
};

PoisonResult poison(const Dataset& clean, const PoisonSpec& spec, std::uint64_t seed);

// triggered copies of every sample whose label differs from the target, relabeled to the target
Dataset make_asr_testset(const Dataset& clean, const PoisonSpec& spec);

struct NoiseBatchSpec {
  Shape sampleShape;
  std::size_t batchSize = 256;
  std::size_t classCount = 10;
  std::optional<std::size_t> labelCeiling;  // labels drawn from [0, G)
  std::uint64_t seed = 0;
};

struct NoiseBatch {
  Tensor images;
  std::vector<int> labels;
};

NoiseBatch gen_noise_batch(const NoiseBatchSpec& spec);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace otbr
