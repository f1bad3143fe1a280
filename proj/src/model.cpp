#include "otbr/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace otbr {

std::string layer_kind(const Layer& layer) {
  switch (layer.index()) {
    case 0: return "dense";
    case 1: return "conv2d";
    case 2: return "relu";
    default: return "flatten";
  }
}

bool is_parametric(const Layer& layer) {
  return std::holds_alternative<DenseLayer>(layer) || std::holds_alternative<Conv2DLayer>(layer);
}

DivergenceError::DivergenceError(std::size_t step, double loss)
    : std::runtime_error("loss became non-finite at step " + std::to_string(step)), step_(step), loss_(loss) {}

Model::Model(Shape inputShape, std::vector<Layer> layers, std::size_t classCount, ModelMetadata metadata)
    : inputShape_(std::move(inputShape)), layers_(std::move(layers)), classCount_(classCount),
      metadata_(std::move(metadata)) {
  validate();
}

namespace {

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) throw DimensionError("convolution kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

Shape next_shape(const Layer& layer, const Shape& in, std::size_t idx) {
  const std::string where = "layer " + std::to_string(idx) + " (" + layer_kind(layer) + "): ";
  if (auto* d = std::get_if<DenseLayer>(&layer)) {
    if (d->weights.rank() != 2 || d->bias.rank() != 1 || d->bias.dim(0) != d->weights.dim(0))
      throw DimensionError(where + "weights must be [out x in] with bias [out]");
    if (in.size() != 1 || in[0] != d->weights.dim(1))
      throw DimensionError(where + "expects input " + std::to_string(d->weights.dim(1)) + ", got " + shape_string(in));
    return {d->weights.dim(0)};
  }
  if (auto* c = std::get_if<Conv2DLayer>(&layer)) {
    if (c->weights.rank() != 4 || c->bias.rank() != 1 || c->bias.dim(0) != c->weights.dim(0))
      throw DimensionError(where + "weights must be [outCh x inCh x kH x kW] with bias [outCh]");
    if (c->stride == 0) throw DimensionError(where + "stride must be positive");
    if (in.size() != 3 || in[0] != c->weights.dim(1))
      throw DimensionError(where + "expects " + std::to_string(c->weights.dim(1)) + " input channels, got " +
                           shape_string(in));
    return {c->weights.dim(0), conv_out(in[1], c->weights.dim(2), c->stride, c->padding),
            conv_out(in[2], c->weights.dim(3), c->stride, c->padding)};
  }
  if (std::holds_alternative<FlattenLayer>(layer)) return {shape_size(in)};
  return in;
}

}  // namespace

std::vector<Shape> Model::activation_shapes() const {
  std::vector<Shape> shapes{inputShape_};
  for (std::size_t i = 0; i < layers_.size(); ++i) shapes.push_back(next_shape(layers_[i], shapes.back(), i));
  return shapes;
}

void Model::validate() const {
  if (inputShape_.empty() || shape_size(inputShape_) == 0) throw DimensionError("model input shape is empty");
  if (classCount_ < 2) throw DimensionError("model needs at least two classes");
  auto shapes = activation_shapes();
  if (shapes.back().size() != 1 || shapes.back()[0] != classCount_)
    throw DimensionError("model output " + shape_string(shapes.back()) + " does not match " +
                         std::to_string(classCount_) + " classes");
  if (parametric_layers().empty()) throw DimensionError("model has no parametric layer");
}

std::vector<std::size_t> Model::parametric_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (is_parametric(layers_[i])) out.push_back(i);
  return out;
}

std::size_t Model::output_layer() const { return parametric_layers().back(); }

std::size_t Model::neuron_count(std::size_t layerIndex) const {
  const Layer& l = layers_.at(layerIndex);
  if (auto* d = std::get_if<DenseLayer>(&l)) return d->weights.dim(0);
  if (auto* c = std::get_if<Conv2DLayer>(&l)) return c->weights.dim(0);
  throw DimensionError("layer " + std::to_string(layerIndex) + " has no neurons");
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    if (auto* d = std::get_if<DenseLayer>(&l)) n += d->weights.size() + d->bias.size();
    if (auto* c = std::get_if<Conv2DLayer>(&l)) n += c->weights.size() + c->bias.size();
  }
  return n;
}

long Model::previous_parametric(std::size_t layerIndex) const {
  for (std::size_t i = layerIndex; i-- > 0;)
    if (is_parametric(layers_[i])) return static_cast<long>(i);
  return -1;
}

std::size_t Model::incoming_group(std::size_t layerIndex) const {
  const Layer& l = layers_.at(layerIndex);
  if (std::holds_alternative<Conv2DLayer>(l)) return 1;
  long prev = previous_parametric(layerIndex);
  if (prev < 0) return 1;
  auto shapes = activation_shapes();
  const Shape& produced = shapes[static_cast<std::size_t>(prev) + 1];
  return shape_size(produced) / produced[0];
}

bool operator==(const Model& a, const Model& b) {
  if (a.inputShape_ != b.inputShape_ || a.classCount_ != b.classCount_ || !(a.metadata_ == b.metadata_) ||
      a.layers_.size() != b.layers_.size())
    return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const Layer& x = a.layers_[i];
    const Layer& y = b.layers_[i];
    if (x.index() != y.index()) return false;
    if (auto* d = std::get_if<DenseLayer>(&x)) {
      auto& e = std::get<DenseLayer>(y);
      if (!(d->weights == e.weights) || !(d->bias == e.bias)) return false;
    }
    if (auto* c = std::get_if<Conv2DLayer>(&x)) {
      auto& e = std::get<Conv2DLayer>(y);
      if (!(c->weights == e.weights) || !(c->bias == e.bias) || c->stride != e.stride || c->padding != e.padding)
        return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- kernels

namespace {

struct ConvGeom {
  std::size_t inC, inH, inW, outC, kH, kW, stride, pad, outH, outW;
  std::size_t K() const { return inC * kH * kW; }
  std::size_t P() const { return outH * outW; }
};

ConvGeom geom(const Conv2DLayer& c, const Shape& in) {
  ConvGeom g{};
  g.inC = in[0];
  g.inH = in[1];
  g.inW = in[2];
  g.outC = c.weights.dim(0);
  g.kH = c.weights.dim(2);
  g.kW = c.weights.dim(3);
  g.stride = c.stride;
  g.pad = c.padding;
  g.outH = conv_out(g.inH, g.kH, g.stride, g.pad);
  g.outW = conv_out(g.inW, g.kW, g.stride, g.pad);
  return g;
}

void im2col(const float* x, const ConvGeom& g, std::vector<float>& cols) {
  cols.assign(g.K() * g.P(), 0.0f);
  for (std::size_t c = 0; c < g.inC; ++c)
    for (std::size_t ky = 0; ky < g.kH; ++ky)
      for (std::size_t kx = 0; kx < g.kW; ++kx) {
        float* dst = cols.data() + ((c * g.kH + ky) * g.kW + kx) * g.P();
        for (std::size_t oy = 0; oy < g.outH; ++oy) {
          long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.inH)) continue;
          for (std::size_t ox = 0; ox < g.outW; ++ox) {
            long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.inW)) continue;
            dst[oy * g.outW + ox] = x[(c * g.inH + iy) * g.inW + ix];
          }
        }
      }
}

void col2im_add(const std::vector<double>& dcols, const ConvGeom& g, double* dx) {
  for (std::size_t c = 0; c < g.inC; ++c)
    for (std::size_t ky = 0; ky < g.kH; ++ky)
      for (std::size_t kx = 0; kx < g.kW; ++kx) {
        const double* src = dcols.data() + ((c * g.kH + ky) * g.kW + kx) * g.P();
        for (std::size_t oy = 0; oy < g.outH; ++oy) {
          long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.inH)) continue;
          for (std::size_t ox = 0; ox < g.outW; ++ox) {
            long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.inW)) continue;
            dx[(c * g.inH + iy) * g.inW + ix] += src[oy * g.outW + ox];
          }
        }
      }
}

Tensor dense_forward(const DenseLayer& d, const Tensor& x, std::size_t B) {
  const std::size_t in = d.weights.dim(1), out = d.weights.dim(0);
  std::vector<float> wt(in * out);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i) wt[i * out + o] = d.weights[o * in + i];
  Tensor y({B, out});
  std::vector<double> acc(out);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < out; ++o) acc[o] = d.bias[o];
    const float* xb = x.data().data() + b * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = xb[i];
      if (xv == 0.0) continue;
      const float* w = wt.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) acc[o] += xv * static_cast<double>(w[o]);
    }
    for (std::size_t o = 0; o < out; ++o) y[b * out + o] = static_cast<float>(acc[o]);
  }
  return y;
}

Tensor conv_forward(const Conv2DLayer& c, const Tensor& x, const Shape& in, std::size_t B) {
  ConvGeom g = geom(c, in);
  const std::size_t K = g.K(), P = g.P(), inSize = shape_size(in);
  Tensor y({B, g.outC, g.outH, g.outW});
  std::vector<float> cols;
  std::vector<double> acc(P);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(x.data().data() + b * inSize, g, cols);
    for (std::size_t o = 0; o < g.outC; ++o) {
      std::fill(acc.begin(), acc.end(), static_cast<double>(c.bias[o]));
      const float* w = c.weights.data().data() + o * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double wv = w[k];
        const float* col = cols.data() + k * P;
        for (std::size_t p = 0; p < P; ++p) acc[p] += wv * static_cast<double>(col[p]);
      }
      float* dst = y.data().data() + (b * g.outC + o) * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = static_cast<float>(acc[p]);
    }
  }
  return y;
}

void check_batch(const Model& model, const Tensor& batch) {
  const Shape& in = model.input_shape();
  if (batch.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), batch.shape().begin() + 1))
    throw DimensionError("batch shape " + shape_string(batch.shape()) + " does not match model input " +
                         shape_string(in));
}

// activations[i] is the input to layer i; activations.back() holds the logits
std::vector<Tensor> forward_all(const Model& model, const Tensor& batch) {
  check_batch(model, batch);
  const std::size_t B = batch.dim(0);
  auto shapes = model.activation_shapes();
  std::vector<Tensor> acts;
  acts.reserve(model.layers().size() + 1);
  acts.push_back(batch);
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const Layer& l = model.layers()[i];
    const Tensor& x = acts.back();
    Shape outShape{B};
    outShape.insert(outShape.end(), shapes[i + 1].begin(), shapes[i + 1].end());
    if (auto* d = std::get_if<DenseLayer>(&l)) {
      acts.push_back(dense_forward(*d, x, B));
    } else if (auto* c = std::get_if<Conv2DLayer>(&l)) {
      acts.push_back(conv_forward(*c, x, shapes[i], B));
    } else if (std::holds_alternative<ReLULayer>(l)) {
      Tensor y = x;
      for (auto& v : y.data()) v = v > 0.0f ? v : 0.0f;
      acts.push_back(std::move(y));
    } else {
      acts.push_back(x.reshaped(outShape));
    }
  }
  return acts;
}

}  // namespace

Tensor forward(const Model& model, const Tensor& batch) {
  auto acts = forward_all(model, batch);
  return std::move(acts.back());
}

Tensor forward_to(const Model& model, const Tensor& batch, std::size_t layerIndex) {
  if (layerIndex >= model.layers().size()) throw DimensionError("layer index out of range");
  auto acts = forward_all(model, batch);
  return std::move(acts[layerIndex + 1]);
}

std::vector<int> predict(const Model& model, const Tensor& batch, std::size_t chunk) {
  check_batch(model, batch);
  const std::size_t N = batch.dim(0), per = batch.size() / std::max<std::size_t>(N, 1);
  std::vector<int> out;
  out.reserve(N);
  for (std::size_t s = 0; s < N; s += chunk) {
    std::size_t n = std::min(chunk, N - s);
    Shape sh = batch.shape();
    sh[0] = n;
    Tensor part(sh, std::vector<float>(batch.data().begin() + s * per, batch.data().begin() + (s + n) * per));
    Tensor logits = forward(model, part);
    const std::size_t C = logits.dim(1);
    for (std::size_t b = 0; b < n; ++b) {
      auto r = logits.row(b);
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (r[c] > r[best]) best = c;
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

namespace {

// mean cross-entropy; fills dlogits with d(loss)/d(logits) when requested
double softmax_ce(const Tensor& logits, std::span<const int> labels, std::vector<double>* dlogits) {
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) throw DimensionError("label count does not match batch size");
  if (dlogits) dlogits->assign(B * C, 0.0);
  double total = 0.0;
  std::vector<double> p(C);
  for (std::size_t b = 0; b < B; ++b) {
    auto r = logits.row(b);
    int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= C) throw DimensionError("label " + std::to_string(y) + " out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(r[c]));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      p[c] = std::exp(static_cast<double>(r[c]) - mx);
      z += p[c];
    }
    total += std::log(z) + mx - static_cast<double>(r[static_cast<std::size_t>(y)]);
    if (dlogits) {
      for (std::size_t c = 0; c < C; ++c) (*dlogits)[b * C + c] = p[c] / z / static_cast<double>(B);
      (*dlogits)[b * C + static_cast<std::size_t>(y)] -= 1.0 / static_cast<double>(B);
    }
  }
  return total / static_cast<double>(B);
}

}  // namespace

double cross_entropy(const Model& model, const Tensor& batch, std::span<const int> labels) {
  return softmax_ce(forward(model, batch), labels, nullptr);
}

Gradients compute_gradients(const Model& model, const Tensor& batch, std::span<const int> labels) {
  auto acts = forward_all(model, batch);
  auto shapes = model.activation_shapes();
  const std::size_t B = batch.dim(0);
  Gradients g;
  std::vector<double> delta;
  g.loss = softmax_ce(acts.back(), labels, &delta);
  g.layers.resize(model.layers().size());
  if (!std::isfinite(g.loss)) return g;

  for (std::size_t li = model.layers().size(); li-- > 0;) {
    const Layer& l = model.layers()[li];
    const Tensor& x = acts[li];
    const std::size_t inSize = shape_size(shapes[li]);
    const bool needInput = li > 0;
    if (auto* d = std::get_if<DenseLayer>(&l)) {
      const std::size_t in = d->weights.dim(1), out = d->weights.dim(0);
      LayerGrad& lg = g.layers[li];
      lg.weights.assign(out * in, 0.0);
      lg.bias.assign(out, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        double* gw = lg.weights.data() + o * in;
        for (std::size_t b = 0; b < B; ++b) {
          const double dv = delta[b * out + o];
          lg.bias[o] += dv;
          if (dv == 0.0) continue;
          const float* xb = x.data().data() + b * in;
          for (std::size_t i = 0; i < in; ++i) gw[i] += dv * static_cast<double>(xb[i]);
        }
      }
      if (needInput) {
        std::vector<double> dx(B * in, 0.0);
        for (std::size_t b = 0; b < B; ++b) {
          double* dxb = dx.data() + b * in;
          for (std::size_t o = 0; o < out; ++o) {
            const double dv = delta[b * out + o];
            if (dv == 0.0) continue;
            const float* w = d->weights.data().data() + o * in;
            for (std::size_t i = 0; i < in; ++i) dxb[i] += dv * static_cast<double>(w[i]);
          }
        }
        delta = std::move(dx);
      }
    } else if (auto* c = std::get_if<Conv2DLayer>(&l)) {
      ConvGeom gm = geom(*c, shapes[li]);
      const std::size_t K = gm.K(), P = gm.P();
      LayerGrad& lg = g.layers[li];
      lg.weights.assign(gm.outC * K, 0.0);
      lg.bias.assign(gm.outC, 0.0);
      std::vector<double> dx(needInput ? B * inSize : 0, 0.0);
      std::vector<float> cols;
      std::vector<double> dcols;
      for (std::size_t b = 0; b < B; ++b) {
        im2col(x.data().data() + b * inSize, gm, cols);
        const double* dOut = delta.data() + b * gm.outC * P;
        for (std::size_t o = 0; o < gm.outC; ++o) {
          const double* dr = dOut + o * P;
          double bs = 0.0;
          for (std::size_t p = 0; p < P; ++p) bs += dr[p];
          lg.bias[o] += bs;
          double* gw = lg.weights.data() + o * K;
          for (std::size_t k = 0; k < K; ++k) {
            const float* col = cols.data() + k * P;
            double s = 0.0;
            for (std::size_t p = 0; p < P; ++p) s += dr[p] * static_cast<double>(col[p]);
            gw[k] += s;
          }
        }
        if (needInput) {
          dcols.assign(K * P, 0.0);
          for (std::size_t o = 0; o < gm.outC; ++o) {
            const double* dr = dOut + o * P;
            const float* w = c->weights.data().data() + o * K;
            for (std::size_t k = 0; k < K; ++k) {
              const double wv = w[k];
              if (wv == 0.0) continue;
              double* dc = dcols.data() + k * P;
              for (std::size_t p = 0; p < P; ++p) dc[p] += wv * dr[p];
            }
          }
          col2im_add(dcols, gm, dx.data() + b * inSize);
        }
      }
      if (needInput) delta = std::move(dx);
    } else if (std::holds_alternative<ReLULayer>(l)) {
      for (std::size_t k = 0; k < delta.size(); ++k)
        if (!(x[k] > 0.0f)) delta[k] = 0.0;
    }
  }
  return g;
}

double sgd_step(Model& model, const Tensor& batch, std::span<const int> labels, const StepConfig& cfg,
                std::size_t stepIndex) {
  Gradients g = compute_gradients(model, batch, labels);
  if (!std::isfinite(g.loss)) throw DivergenceError(stepIndex, g.loss);
  const double lr = cfg.learningRate, sign = cfg.objectiveSign, wd = cfg.weightDecay;
  auto update = [&](Tensor& p, const std::vector<double>& grad) {
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double v = p[k];
      p[k] = static_cast<float>(v - lr * (sign * grad[k] + wd * v));
    }
  };
  for (std::size_t li = 0; li < model.layers().size(); ++li) {
    Layer& l = model.layers()[li];
    if (auto* d = std::get_if<DenseLayer>(&l)) {
      update(d->weights, g.layers[li].weights);
      update(d->bias, g.layers[li].bias);
    } else if (auto* c = std::get_if<Conv2DLayer>(&l)) {
      update(c->weights, g.layers[li].weights);
      update(c->bias, g.layers[li].bias);
    }
  }
  return g.loss;
}

// ---------------------------------------------------------------- neuron views

NeuronView neuron_view(const Model& model, std::size_t layerIndex) {
  const Layer& l = model.layers().at(layerIndex);
  const Tensor* w = nullptr;
  const Tensor* bias = nullptr;
  if (auto* d = std::get_if<DenseLayer>(&l)) {
    w = &d->weights;
    bias = &d->bias;
  } else if (auto* c = std::get_if<Conv2DLayer>(&l)) {
    w = &c->weights;
    bias = &c->bias;
  } else {
    throw DimensionError("layer " + std::to_string(layerIndex) + " (" + layer_kind(l) + ") has no neuron view");
  }
  const std::size_t n = w->dim(0), fan = w->size() / n;
  NeuronView v{layerIndex, Tensor({n, fan + 1})};
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(w->data().begin() + r * fan, fan, v.rows.data().begin() + r * (fan + 1));
    v.rows[r * (fan + 1) + fan] = (*bias)[r];
  }
  return v;
}

Model apply_view(const Model& model, const NeuronView& view) {
  Model out = model;
  Layer& l = out.layers().at(view.layerIndex);
  Tensor* w = nullptr;
  Tensor* bias = nullptr;
  if (auto* d = std::get_if<DenseLayer>(&l)) {
    w = &d->weights;
    bias = &d->bias;
  } else if (auto* c = std::get_if<Conv2DLayer>(&l)) {
    w = &c->weights;
    bias = &c->bias;
  } else {
    throw DimensionError("layer " + std::to_string(view.layerIndex) + " has no neuron view");
  }
  const std::size_t n = w->dim(0), fan = w->size() / n;
  if (view.rows.rank() != 2 || view.rows.dim(0) != n || view.rows.dim(1) != fan + 1)
    throw DimensionError("neuron view " + shape_string(view.rows.shape()) + " does not fit layer " +
                         std::to_string(view.layerIndex));
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(view.rows.data().begin() + r * (fan + 1), fan, w->data().begin() + r * fan);
    (*bias)[r] = view.rows[r * (fan + 1) + fan];
  }
  return out;
}

}  // namespace otbr
