#include "otbr/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "otbr/io.hpp"
#include "otbr/rng.hpp"

namespace otbr {

using json = nlohmann::json;

Shape Dataset::sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

void Dataset::validate() const {
  if (images.rank() < 2) throw DimensionError("dataset images need a leading sample axis");
  if (images.dim(0) != labels.size())
    throw DimensionError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                         std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classCount)
      throw DimensionError("label " + std::to_string(y) + " outside [0, " + std::to_string(classCount) + ")");
}

namespace {

void check_image_shape(const Shape& s) {
  if (s.size() != 3 || s[0] == 0 || s[1] < 4 || s[2] < 4)
    throw DimensionError("image shape must be [C x H x W] with H, W >= 4, got " + shape_string(s));
}

}  // namespace

Dataset gen_synthetic(std::size_t classCount, std::size_t perClass, const Shape& sampleShape, std::uint64_t seed,
                      const std::string& split) {
  check_image_shape(sampleShape);
  if (classCount < 2) throw DimensionError("need at least two classes");
  const std::size_t C = sampleShape[0], H = sampleShape[1], W = sampleShape[2];
  const std::size_t N = classCount * perClass, per = C * H * W;
  const double scale = static_cast<double>(std::min(H, W)) / 16.0;
  const double cy0 = (static_cast<double>(H) - 1.0) / 2.0, cx0 = (static_cast<double>(W) - 1.0) / 2.0;
  const double K = static_cast<double>(classCount);
  Dataset ds{Tensor({N, C, H, W}), std::vector<int>(N), classCount, split};
  Rng base(seed, 0x53594e);
  for (std::size_t n = 0; n < N; ++n) {
    const std::size_t cls = n / perClass;
    ds.labels[n] = static_cast<int>(cls);
    Rng r = base.split(n);
    const double c = static_cast<double>(cls);
    const double a = std::numbers::pi * c / K + 0.08 * r.normal();
    const double cx = cx0 + 0.7 * scale * r.normal(), cy = cy0 + 0.7 * scale * r.normal();
    const double bx = cx0 + 4.5 * scale * std::cos(2.0 * std::numbers::pi * c / K) + 0.6 * scale * r.normal();
    const double by = cy0 + 4.5 * scale * std::sin(2.0 * std::numbers::pi * c / K) + 0.6 * scale * r.normal();
    const double sa = std::sin(a), ca = std::cos(a), sig = 1.5 * scale, half = 5.5 * scale;
    float* img = ds.images.data().data() + n * per;
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
          const double d = std::fabs(-dx * sa + dy * ca), t = dx * ca + dy * sa;
          const double bar = std::abs(t) < half ? std::clamp(1.2 - d, 0.0, 1.0) : 0.0;
          const double ex = static_cast<double>(x) - bx, ey = static_cast<double>(y) - by;
          const double blob = std::exp(-(ex * ex + ey * ey) / (2.0 * sig * sig));
          const double v = 0.5 + 0.4 * bar - 0.4 * blob + 0.12 * r.normal();
          img[(ch * H + y) * W + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
  }
  return ds;
}

std::string to_string(TriggerKind k) { return k == TriggerKind::Patch ? "patch" : "blend"; }

TriggerKind parse_trigger(const std::string& s) {
  if (s == "patch") return TriggerKind::Patch;
  if (s == "blend") return TriggerKind::Blend;
  throw std::invalid_argument("unknown trigger kind \"" + s + "\"");
}

Tensor make_blend_pattern(const Shape& sampleShape, std::uint64_t seed) {
  check_image_shape(sampleShape);
  const std::size_t C = sampleShape[0], H = sampleShape[1], W = sampleShape[2];
  constexpr std::size_t G = 4;
  Tensor p(sampleShape);
  Rng rng(seed, 0x424c454e44);
  for (std::size_t ch = 0; ch < C; ++ch) {
    double grid[G][G];
    for (auto& row : grid)
      for (double& g : row) g = rng.uniform();
    double lo = 1e300, hi = -1e300;
    std::vector<double> v(H * W);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double gy = static_cast<double>(y) * (G - 1) / static_cast<double>(H - 1);
        const double gx = static_cast<double>(x) * (G - 1) / static_cast<double>(W - 1);
        const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), G - 2);
        const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), G - 2);
        const double fy = gy - static_cast<double>(y0), fx = gx - static_cast<double>(x0);
        const double val = (1 - fy) * ((1 - fx) * grid[y0][x0] + fx * grid[y0][x0 + 1]) +
                           fy * ((1 - fx) * grid[y0 + 1][x0] + fx * grid[y0 + 1][x0 + 1]);
        v[y * W + x] = val;
        lo = std::min(lo, val);
        hi = std::max(hi, val);
      }
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t k = 0; k < H * W; ++k) p[ch * H * W + k] = static_cast<float>((v[k] - lo) / span);
  }
  return p;
}

void apply_trigger(std::span<float> sample, const Shape& sampleShape, const PoisonSpec& spec, const Tensor& pattern) {
  const std::size_t C = sampleShape[0], H = sampleShape[1], W = sampleShape[2];
  if (spec.kind == TriggerKind::Patch) {
    const std::size_t k = spec.patchSize;
    if (k == 0 || k > H || k > W) throw DimensionError("patch size " + std::to_string(k) + " does not fit the image");
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t y = H - k; y < H; ++y)
        for (std::size_t x = W - k; x < W; ++x) sample[(ch * H + y) * W + x] = 1.0f;
  } else {
    if (pattern.shape() != sampleShape) throw DimensionError("blend pattern does not match the image shape");
    const float a = spec.blendAlpha;
    for (std::size_t k = 0; k < sample.size(); ++k) sample[k] = (1.0f - a) * sample[k] + a * pattern[k];
  }
}

namespace {

void check_spec(const Dataset& ds, const PoisonSpec& spec) {
  if (spec.targetLabel < 0 || static_cast<std::size_t>(spec.targetLabel) >= ds.classCount)
    throw DimensionError("target label " + std::to_string(spec.targetLabel) + " outside the label range");
  if (!(spec.poisonRatio >= 0.0 && spec.poisonRatio <= 1.0))
    throw DimensionError("poison ratio must lie in [0, 1]");
  check_image_shape(ds.sample_shape());
}

Tensor pattern_for(const Dataset& ds, const PoisonSpec& spec) {
  return spec.kind == TriggerKind::Blend ? make_blend_pattern(ds.sample_shape(), spec.patternSeed) : Tensor();
}

}  // namespace

PoisonResult poison(const Dataset& clean, const PoisonSpec& spec, std::uint64_t seed) {
  clean.validate();
  check_spec(clean, spec);
  const std::size_t N = clean.size();
  const std::size_t k = static_cast<std::size_t>(std::floor(static_cast<double>(N) * spec.poisonRatio));
  std::vector<std::size_t> all(N);
  std::iota(all.begin(), all.end(), 0);
  Rng rng(seed, 0x504f49534f4e);
  for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + rng.below(N - i)]);
  std::vector<std::size_t> idx(all.begin(), all.begin() + static_cast<long>(k));
  std::sort(idx.begin(), idx.end());

  PoisonResult out{clean, idx, {}};
  out.dataset.split = clean.split + "-poisoned";
  const Shape s = clean.sample_shape();
  const std::size_t per = shape_size(s);
  Tensor pattern = pattern_for(clean, spec);
  for (std::size_t i : idx) {
    out.originalLabels.push_back(clean.labels[i]);
    apply_trigger(out.dataset.images.data().subspan(i * per, per), s, spec, pattern);
    out.dataset.labels[i] = spec.targetLabel;
  }
  return out;
}

Dataset make_asr_testset(const Dataset& clean, const PoisonSpec& spec) {
  clean.validate();
  check_spec(clean, spec);
  const Shape s = clean.sample_shape();
  const std::size_t per = shape_size(s);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < clean.size(); ++i)
    if (clean.labels[i] != spec.targetLabel) keep.push_back(i);
  Shape full{keep.size()};
  full.insert(full.end(), s.begin(), s.end());
  std::vector<int> labels(keep.size());
  std::fill(labels.begin(), labels.end(), spec.targetLabel);
  Dataset out{Tensor(full), std::move(labels), clean.classCount, clean.split + "-asr"};
  Tensor pattern = pattern_for(clean, spec);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    std::copy_n(clean.images.data().begin() + keep[k] * per, per, out.images.data().begin() + k * per);
    apply_trigger(out.images.data().subspan(k * per, per), s, spec, pattern);
  }
  return out;
}

NoiseBatch gen_noise_batch(const NoiseBatchSpec& spec) {
  if (spec.sampleShape.empty() || shape_size(spec.sampleShape) == 0)
    throw DimensionError("noise sample shape is empty");
  const std::size_t G = spec.labelCeiling.value_or(spec.classCount);
  if (G < 1 || G > spec.classCount)
    throw DimensionError("label ceiling " + std::to_string(G) + " outside [1, " + std::to_string(spec.classCount) + "]");
  Shape full{spec.batchSize};
  full.insert(full.end(), spec.sampleShape.begin(), spec.sampleShape.end());
  NoiseBatch b{Tensor(full), std::vector<int>(spec.batchSize)};
  Rng pix(spec.seed, 0x4e4f495345);
  Rng lab = pix.split("labels");
  for (auto& v : b.images.data()) v = pix.uniform_float();
  for (auto& y : b.labels) y = static_cast<int>(lab.below(G));
  return b;
}

// ---------------------------------------------------------------- dataset container

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ds.validate();
  if (ds.classCount > 256) throw DimensionError("dataset container stores labels as bytes, classCount must be <= 256");
  json manifest{{"count", ds.size()},
                {"shape", ds.sample_shape()},
                {"classCount", ds.classCount},
                {"split", ds.split}};
  std::string text = manifest.dump();
  ByteWriter w;
  w.bytes("OTBD", 4);
  w.u32(kDatasetFormatVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  w.floats(ds.images.values());
  for (int y : ds.labels) {
    auto b = static_cast<std::uint8_t>(y);
    w.bytes(&b, 1);
  }
  return std::move(w.buffer());
}

Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_magic("OTBD");
  const std::size_t versionAt = r.offset();
  std::uint32_t version = r.u32("version");
  if (version != kDatasetFormatVersion)
    throw FormatError("unsupported dataset container version " + std::to_string(version), versionAt);
  std::uint32_t len = r.u32("manifest length");
  const std::size_t manifestAt = r.offset();
  std::string text = r.string(len, "manifest");
  try {
    json m = json::parse(text);
    const std::size_t n = m.at("count").get<std::size_t>();
    Shape s = m.at("shape").get<Shape>();
    Shape full{n};
    full.insert(full.end(), s.begin(), s.end());
    std::vector<float> px;
    r.floats(px, shape_size(full), "pixels");
    Dataset ds{Tensor(full, std::move(px)), std::vector<int>(n), m.at("classCount").get<std::size_t>(),
               m.at("split").get<std::string>()};
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = r.u8("labels");
    r.expect_end();
    ds.validate();
    return ds;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset manifest: ") + e.what(), manifestAt);
  } catch (const DimensionError& e) {
    throw FormatError(std::string("inconsistent dataset: ") + e.what(), manifestAt);
  }
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) { write_file_atomic(path, encode_dataset(ds)); }

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace otbr
