#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "otbr/bench.hpp"
#include "otbr/rng.hpp"

namespace otbr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': integer out of range: '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename F>
auto parse_enum(const std::string& key, const std::string& v, F f) {
  try {
    return f(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},
      {"out", [](RunConfig& c, const std::string&, const std::string& v) { c.outDir = v; }},
      {"data.classes", [](RunConfig& c, const std::string& k, const std::string& v) { c.data.classCount = to_u64(k, v); }},
      {"data.per_class_train",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.data.perClassTrain = to_u64(k, v); }},
      {"data.per_class_test",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.data.perClassTest = to_u64(k, v); }},
      {"data.shape",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         Shape s;
         for (const auto& p : split(v, 'x')) s.push_back(to_u64(k, p));
         c.data.sampleShape = s;
       }},
      {"attack.trigger",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.poison.kind = parse_enum(k, v, parse_trigger); }},
      {"attack.target",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.poison.targetLabel = static_cast<int>(to_u64(k, v)); }},
      {"attack.ratio", [](RunConfig& c, const std::string& k, const std::string& v) { c.poison.poisonRatio = to_double(k, v); }},
      {"attack.patch_size",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.poison.patchSize = to_u64(k, v); }},
      {"attack.blend_alpha",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.poison.blendAlpha = static_cast<float>(to_double(k, v));
       }},
      {"attack.pattern_seed",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.poison.patternSeed = to_u64(k, v); }},
      {"model.arch",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "mlp")
           c.arch.kind = ArchKind::Mlp;
         else if (v == "cnn")
           c.arch.kind = ArchKind::Cnn;
         else
           throw ConfigError("key '" + k + "': expected mlp or cnn, got '" + v + "'");
       }},
      {"model.hidden",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.arch.hidden.clear();
         if (!v.empty())
           for (const auto& p : split(v, ',')) c.arch.hidden.push_back(to_u64(k, p));
       }},
      {"model.conv",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.arch.convs.clear();
         for (const auto& p : split(v, ',')) {
           auto f = split(p, ':');
           if (f.size() != 4) throw ConfigError("key '" + k + "': conv entries are channels:kernel:stride:padding");
           c.arch.convs.push_back({to_u64(k, f[0]), to_u64(k, f[1]), to_u64(k, f[2]), to_u64(k, f[3])});
         }
       }},
      {"train.lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.learningRate = to_double(k, v); }},
      {"train.batch", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batchSize = to_u64(k, v); }},
      {"train.epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs = to_u64(k, v); }},
      {"train.weight_decay",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.weightDecay = to_double(k, v); }},
      {"train.cosine", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.cosineSchedule = to_bool(k, v); }},
      {"unlearn.steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.unlearn.steps = to_u64(k, v); }},
      {"unlearn.batch", [](RunConfig& c, const std::string& k, const std::string& v) { c.unlearn.batchSize = to_u64(k, v); }},
      {"unlearn.lr",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.unlearn.learningRate = to_double(k, v); }},
      {"unlearn.label_ceiling",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "none" || v.empty())
           c.unlearn.labelCeiling.reset();
         else
           c.unlearn.labelCeiling = to_u64(k, v);
       }},
      {"prune.gamma", [](RunConfig& c, const std::string& k, const std::string& v) { c.gamma = to_double(k, v); }},
      {"prune.scope",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.pruneScope = parse_enum(k, v, parse_prune_scope); }},
      {"fusion.lambda", [](RunConfig& c, const std::string& k, const std::string& v) { c.fusion.lambda = to_double(k, v); }},
      {"fusion.scheme",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.fusion.scheme = parse_enum(k, v, parse_target_scheme);
       }},
      {"fusion.cost",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.fusion.costSource = parse_enum(k, v, parse_cost_source);
       }},
      {"fusion.final_layer",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.fusion.finalLayer = parse_enum(k, v, parse_final_layer);
       }},
      {"fusion.source",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.fusion.sourceForm = parse_enum(k, v, parse_source_form);
       }},
      {"fusion.solver",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.fusion.solver = parse_enum(k, v, parse_solver); }},
      {"fusion.sinkhorn_epsilon",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.fusion.sinkhornEpsilon = to_double(k, v); }},
      {"fusion.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.fusion.seed = to_u64(k, v); }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (data.classCount < 2 || data.classCount > 256) fail("data.classes must lie in [2, 256]");
  if (data.perClassTrain == 0 || data.perClassTest == 0) fail("data sample counts must be positive");
  if (data.sampleShape.size() != 3 || data.sampleShape[1] < 4 || data.sampleShape[2] < 4 || data.sampleShape[0] == 0)
    fail("data.shape must be CxHxW with H, W >= 4");
  if (poison.targetLabel < 0 || static_cast<std::size_t>(poison.targetLabel) >= data.classCount)
    fail("attack.target outside the label range");
  if (!(poison.poisonRatio >= 0.0 && poison.poisonRatio <= 1.0)) fail("attack.ratio must lie in [0, 1]");
  if (poison.patchSize == 0 || poison.patchSize > data.sampleShape[1] || poison.patchSize > data.sampleShape[2])
    fail("attack.patch_size does not fit the image");
  if (!(poison.blendAlpha >= 0.0f && poison.blendAlpha <= 1.0f)) fail("attack.blend_alpha must lie in [0, 1]");
  if (arch.kind == ArchKind::Cnn && arch.convs.empty()) fail("model.conv needs at least one layer");
  for (const auto& cv : arch.convs)
    if (cv.outChannels == 0 || cv.kernel == 0 || cv.stride == 0) fail("model.conv entries must be positive");
  for (auto h : arch.hidden)
    if (h == 0) fail("model.hidden widths must be positive");
  if (!(train.learningRate > 0.0) || train.batchSize == 0) fail("train.lr and train.batch must be positive");
  if (!(train.weightDecay >= 0.0)) fail("train.weight_decay must be >= 0");
  if (!(unlearn.learningRate > 0.0) || unlearn.batchSize == 0) fail("unlearn.lr and unlearn.batch must be positive");
  if (unlearn.labelCeiling && (*unlearn.labelCeiling < 1 || *unlearn.labelCeiling > data.classCount))
    fail("unlearn.label_ceiling must lie in [1, classes]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("prune.gamma must lie in [0, 1]");
  if (!(fusion.lambda >= 0.0 && fusion.lambda <= 1.0)) fail("fusion.lambda must lie in [0, 1]");
  if (!(fusion.sinkhornEpsilon > 0.0)) fail("fusion.sinkhorn_epsilon must be positive");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineNo = 0;
  while (std::getline(is, line)) {
    ++lineNo;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineNo) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("line " + std::to_string(lineNo) + ": unknown key '" + key + "'");
    it->second(base, key, value);
  }
  base.validate();
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string config_to_text(const RunConfig& c, bool includeOut) {
  std::ostringstream os;
  auto join = [](const auto& v, auto f) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + f(v[i]);
    return s;
  };
  std::string shape;
  for (std::size_t i = 0; i < c.data.sampleShape.size(); ++i)
    shape += (i ? "x" : "") + std::to_string(c.data.sampleShape[i]);
  os << "seed = " << c.seed << '\n';
  if (includeOut) os << "out = " << c.outDir.string() << '\n';
  os << "data.classes = " << c.data.classCount << '\n'
     << "data.per_class_train = " << c.data.perClassTrain << '\n'
     << "data.per_class_test = " << c.data.perClassTest << '\n'
     << "data.shape = " << shape << '\n'
     << "attack.trigger = " << to_string(c.poison.kind) << '\n'
     << "attack.target = " << c.poison.targetLabel << '\n'
     << "attack.ratio = " << fmt(c.poison.poisonRatio) << '\n'
     << "attack.patch_size = " << c.poison.patchSize << '\n'
     << "attack.blend_alpha = " << fmt(c.poison.blendAlpha) << '\n'
     << "attack.pattern_seed = " << c.poison.patternSeed << '\n'
     << "model.arch = " << (c.arch.kind == ArchKind::Mlp ? "mlp" : "cnn") << '\n'
     << "model.hidden = " << join(c.arch.hidden, [](std::size_t h) { return std::to_string(h); }) << '\n'
     << "model.conv = " << join(c.arch.convs, [](const ConvSpec& s) {
          return std::to_string(s.outChannels) + ":" + std::to_string(s.kernel) + ":" + std::to_string(s.stride) + ":" +
                 std::to_string(s.padding);
        }) << '\n'
     << "train.lr = " << fmt(c.train.learningRate) << '\n'
     << "train.batch = " << c.train.batchSize << '\n'
     << "train.epochs = " << c.train.epochs << '\n'
     << "train.weight_decay = " << fmt(c.train.weightDecay) << '\n'
     << "train.cosine = " << (c.train.cosineSchedule ? "true" : "false") << '\n'
     << "unlearn.steps = " << c.unlearn.steps << '\n'
     << "unlearn.batch = " << c.unlearn.batchSize << '\n'
     << "unlearn.lr = " << fmt(c.unlearn.learningRate) << '\n'
     << "unlearn.label_ceiling = " << (c.unlearn.labelCeiling ? std::to_string(*c.unlearn.labelCeiling) : "none") << '\n'
     << "prune.gamma = " << fmt(c.gamma) << '\n'
     << "prune.scope = " << to_string(c.pruneScope) << '\n'
     << "fusion.lambda = " << fmt(c.fusion.lambda) << '\n'
     << "fusion.scheme = " << to_string(c.fusion.scheme) << '\n'
     << "fusion.cost = " << to_string(c.fusion.costSource) << '\n'
     << "fusion.final_layer = " << to_string(c.fusion.finalLayer) << '\n'
     << "fusion.source = " << to_string(c.fusion.sourceForm) << '\n'
     << "fusion.solver = " << to_string(c.fusion.solver) << '\n'
     << "fusion.sinkhorn_epsilon = " << fmt(c.fusion.sinkhornEpsilon) << '\n'
     << "fusion.seed = " << c.fusion.seed << '\n';
  return os.str();
}

std::uint64_t stage_seed(const RunConfig& cfg, const char* stage) { return Rng(cfg.seed).split(stage).next_u64(); }

}  // namespace otbr
