#include "otbr/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "otbr/data.hpp"
#include "otbr/io.hpp"
#include "otbr/rng.hpp"

namespace otbr {

UnlearnResult random_unlearn(const Model& backdoored, const UnlearnConfig& cfg) {
  UnlearnResult out{backdoored, {}};
  StepConfig sc{cfg.learningRate, -1.0, 0.0};
  Rng rng(cfg.seed, 0x554e4c);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    NoiseBatchSpec ns{backdoored.input_shape(), cfg.batchSize, backdoored.class_count(), cfg.labelCeiling,
                      rng.split(step).next_u64()};
    NoiseBatch batch = gen_noise_batch(ns);
    out.lossTrace.push_back(sgd_step(out.unlearned, batch.images, batch.labels, sc, step));
  }
  return out;
}

UnlearnResult unlearn_on_samples(const Model& model, const Tensor& images, std::span<const int> labels,
                                 const UnlearnConfig& cfg) {
  if (images.rank() < 2 || images.dim(0) != labels.size() || labels.empty())
    throw DimensionError("unlearning samples and labels disagree or are empty");
  UnlearnResult out{model, {}};
  StepConfig sc{cfg.learningRate, -1.0, 0.0};
  const std::size_t N = images.dim(0), per = images.size() / N;
  Rng rng(cfg.seed, 0x534d504c);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Rng r = rng.split(step);
    Shape sh = images.shape();
    sh[0] = cfg.batchSize;
    Tensor batch(sh);
    std::vector<int> y(cfg.batchSize);
    for (std::size_t k = 0; k < cfg.batchSize; ++k) {
      std::size_t i = static_cast<std::size_t>(r.below(N));
      std::copy_n(images.data().begin() + i * per, per, batch.data().begin() + k * per);
      y[k] = labels[i];
    }
    out.lossTrace.push_back(sgd_step(out.unlearned, batch, y, sc, step));
  }
  return out;
}

// ---------------------------------------------------------------- NWC

std::size_t NwcReport::neuron_total() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.values.size();
  return n;
}

const LayerNwc& NwcReport::for_layer(std::size_t layerIndex) const {
  for (const auto& l : layers)
    if (l.layerIndex == layerIndex) return l;
  throw DimensionError("no NWC entry for layer " + std::to_string(layerIndex));
}

NwcReport compute_nwc(const Model& a, const Model& b) {
  auto pa = a.parametric_layers();
  if (pa != b.parametric_layers() || a.input_shape() != b.input_shape())
    throw DimensionError("models have different architectures");
  NwcReport r;
  for (std::size_t li : pa) {
    NeuronView va = neuron_view(a, li), vb = neuron_view(b, li);
    if (va.rows.shape() != vb.rows.shape())
      throw DimensionError("layer " + std::to_string(li) + " shapes differ: " + shape_string(va.rows.shape()) +
                           " vs " + shape_string(vb.rows.shape()));
    r.layers.push_back({li, row_l1_distance(va.rows, vb.rows)});
  }
  return r;
}

void write_nwc_csv(const NwcReport& report, const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(17);
  os << "layer,neuron,nwc\n";
  for (const auto& l : report.layers)
    for (std::size_t n = 0; n < l.values.size(); ++n) os << l.layerIndex << ',' << n << ',' << l.values[n] << '\n';
  write_file_atomic(path, os.str());
}

NwcReport read_nwc_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "layer,neuron,nwc") throw FormatError("unexpected NWC header \"" + line + "\"", 0);
  NwcReport r;
  std::size_t lineNo = 1;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t layer = 0, neuron = 0;
    double v = 0.0;
    char c1 = 0, c2 = 0;
    if (!(ls >> layer >> c1 >> neuron >> c2 >> v) || c1 != ',' || c2 != ',')
      throw FormatError("bad NWC row on line " + std::to_string(lineNo), lineNo);
    if (r.layers.empty() || r.layers.back().layerIndex != layer) r.layers.push_back({layer, {}});
    if (neuron != r.layers.back().values.size())
      throw FormatError("NWC rows out of order on line " + std::to_string(lineNo), lineNo);
    r.layers.back().values.push_back(v);
  }
  return r;
}

// ---------------------------------------------------------------- pruning

InfeasiblePruneError::InfeasiblePruneError(std::size_t layer, const std::string& what)
    : std::runtime_error(what), layer_(layer) {}

std::string to_string(PruneScope s) { return s == PruneScope::Global ? "global" : "per-layer"; }

PruneScope parse_prune_scope(const std::string& s) {
  if (s == "global") return PruneScope::Global;
  if (s == "per-layer") return PruneScope::PerLayer;
  throw std::invalid_argument("unknown prune scope \"" + s + "\"");
}

const std::vector<std::size_t>& PruneResult::kept_for(std::size_t layerIndex) const {
  for (std::size_t k = 0; k < layers.size(); ++k)
    if (layers[k] == layerIndex) return kept[k];
  throw DimensionError("layer " + std::to_string(layerIndex) + " is not parametric");
}

namespace {

Tensor* weights_of(Layer& l) {
  if (auto* d = std::get_if<DenseLayer>(&l)) return &d->weights;
  return &std::get<Conv2DLayer>(l).weights;
}

Tensor* bias_of(Layer& l) {
  if (auto* d = std::get_if<DenseLayer>(&l)) return &d->bias;
  return &std::get<Conv2DLayer>(l).bias;
}

// keeps the listed rows (axis 0)
Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  const std::size_t per = t.size() / t.dim(0);
  Shape s = t.shape();
  s[0] = rows.size();
  Tensor out(s);
  for (std::size_t k = 0; k < rows.size(); ++k)
    std::copy_n(t.data().begin() + rows[k] * per, per, out.data().begin() + k * per);
  return out;
}

// keeps, for every row, the column groups of the listed upstream neurons
Tensor take_groups(const Tensor& t, const std::vector<std::size_t>& keep, std::size_t group, std::size_t upstream) {
  const std::size_t rows = t.dim(0), per = t.size() / rows;
  const std::size_t inner = per / (upstream * group);  // kernel area for conv, 1 for dense
  Shape s = t.shape();
  s[1] = s[1] / upstream * keep.size();
  Tensor out(s);
  const std::size_t outPer = out.size() / rows, block = group * inner;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < keep.size(); ++k)
      std::copy_n(t.data().begin() + r * per + keep[k] * block, block, out.data().begin() + r * outPer + k * block);
  return out;
}

}  // namespace

PruneResult prune_neurons(const Model& model, const std::vector<std::vector<std::size_t>>& removed) {
  auto layers = model.parametric_layers();
  if (removed.size() != layers.size()) throw DimensionError("prune list does not cover every parametric layer");
  PruneResult r{model, model, layers, {}, {}, std::nullopt, 0};
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const std::size_t li = layers[k], n = model.neuron_count(li);
    std::vector<std::size_t> rem = removed[k];
    std::sort(rem.begin(), rem.end());
    rem.erase(std::unique(rem.begin(), rem.end()), rem.end());
    if (!rem.empty() && rem.back() >= n) throw DimensionError("neuron index out of range in layer " + std::to_string(li));
    if (li == model.output_layer() && !rem.empty())
      throw InfeasiblePruneError(li, "output layer " + std::to_string(li) + " cannot be pruned");
    if (rem.size() == n)
      throw InfeasiblePruneError(li, "pruning would remove every neuron of layer " + std::to_string(li));
    std::vector<std::size_t> keep;
    for (std::size_t i = 0, j = 0; i < n; ++i) {
      if (j < rem.size() && rem[j] == i) {
        ++j;
        continue;
      }
      keep.push_back(i);
    }
    if (!rem.empty() && !r.firstPrunedLayer) r.firstPrunedLayer = li;
    r.prunedCount += rem.size();
    r.kept.push_back(std::move(keep));
    r.removed.push_back(std::move(rem));
  }

  // masked: zero pruned rows and biases
  for (std::size_t k = 0; k < layers.size(); ++k) {
    Layer& l = r.masked.layer(layers[k]);
    Tensor* w = weights_of(l);
    Tensor* b = bias_of(l);
    const std::size_t per = w->size() / w->dim(0);
    for (std::size_t i : r.removed[k]) {
      std::fill_n(w->data().begin() + i * per, per, 0.0f);
      (*b)[i] = 0.0f;
    }
  }

  // compact: slice rows, then the matching incoming columns of the next parametric layer
  for (std::size_t k = 0; k < layers.size(); ++k) {
    Layer& l = r.pruned.layer(layers[k]);
    if (k > 0 && !r.removed[k - 1].empty()) {
      Tensor* w = weights_of(l);
      *w = take_groups(*w, r.kept[k - 1], model.incoming_group(layers[k]), model.neuron_count(layers[k - 1]));
    }
    if (!r.removed[k].empty()) {
      *weights_of(l) = take_rows(*weights_of(l), r.kept[k]);
      *bias_of(l) = take_rows(*bias_of(l), r.kept[k]);
    }
  }
  r.pruned.validate();
  return r;
}

PruneResult prune_top_gamma(const Model& model, const NwcReport& nwc, double gamma, PruneScope scope) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
  auto layers = model.parametric_layers();
  if (nwc.layers.size() != layers.size()) throw DimensionError("NWC report does not match the model's layers");
  for (std::size_t k = 0; k < layers.size(); ++k)
    if (nwc.layers[k].layerIndex != layers[k] || nwc.layers[k].values.size() != model.neuron_count(layers[k]))
      throw DimensionError("NWC report does not match layer " + std::to_string(layers[k]));

  struct Entry {
    double value;
    std::size_t layer;  // position in `layers`
    std::size_t neuron;
  };
  std::vector<std::vector<std::size_t>> removed(layers.size());
  auto take_top = [&](std::vector<Entry> pool, std::size_t count) {
    std::stable_sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) { return a.value > b.value; });
    for (std::size_t i = 0; i < count; ++i) removed[pool[i].layer].push_back(pool[i].neuron);
  };
  const std::size_t eligible = layers.size() - 1;
  if (scope == PruneScope::Global) {
    std::vector<Entry> pool;
    for (std::size_t k = 0; k < eligible; ++k)
      for (std::size_t n = 0; n < nwc.layers[k].values.size(); ++n) pool.push_back({nwc.layers[k].values[n], k, n});
    take_top(pool, static_cast<std::size_t>(std::floor(gamma * static_cast<double>(pool.size()))));
  } else {
    for (std::size_t k = 0; k < eligible; ++k) {
      std::vector<Entry> pool;
      for (std::size_t n = 0; n < nwc.layers[k].values.size(); ++n) pool.push_back({nwc.layers[k].values[n], k, n});
      take_top(pool, static_cast<std::size_t>(std::floor(gamma * static_cast<double>(pool.size()))));
    }
  }
  return prune_neurons(model, removed);
}

// ---------------------------------------------------------------- correlation

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  return rank;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw CorrelationError("correlation inputs differ in length");
  if (x.size() < 3) throw CorrelationError("correlation needs at least 3 neurons, got " + std::to_string(x.size()));
  auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw CorrelationError("correlation undefined for constant input");
  return sxy / std::sqrt(sxx * syy);
}

CorrelationResult nwc_correlation(const NwcReport& a, const NwcReport& b) {
  if (a.layers.size() != b.layers.size()) throw DimensionError("NWC reports cover different layers");
  CorrelationResult r;
  std::vector<double> pa, pb;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    const auto& la = a.layers[k];
    const auto& lb = b.layers[k];
    if (la.layerIndex != lb.layerIndex || la.values.size() != lb.values.size())
      throw DimensionError("NWC reports disagree on layer " + std::to_string(la.layerIndex));
    r.layers.push_back(la.layerIndex);
    r.perLayer.push_back(spearman(la.values, lb.values));
    pa.insert(pa.end(), la.values.begin(), la.values.end());
    pb.insert(pb.end(), lb.values.begin(), lb.values.end());
  }
  r.pooled = spearman(pa, pb);
  return r;
}

}  // namespace otbr
