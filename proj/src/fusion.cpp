#include "otbr/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "otbr/io.hpp"
#include "otbr/rng.hpp"

namespace otbr {

std::string to_string(TargetScheme s) {
  switch (s) {
    case TargetScheme::U2N: return "u2n";
    case TargetScheme::U2U: return "u2u";
    default: return "u2r";
  }
}
std::string to_string(CostSource s) { return s == CostSource::Aligned ? "aligned" : "raw"; }
std::string to_string(FinalLayerMode s) { return s == FinalLayerMode::Transport ? "transport" : "identity"; }
std::string to_string(SourceForm s) { return s == SourceForm::Compact ? "compact" : "masked"; }

TargetScheme parse_target_scheme(const std::string& s) {
  if (s == "u2n") return TargetScheme::U2N;
  if (s == "u2u") return TargetScheme::U2U;
  if (s == "u2r") return TargetScheme::U2R;
  throw std::invalid_argument("unknown target scheme \"" + s + "\"");
}
CostSource parse_cost_source(const std::string& s) {
  if (s == "aligned") return CostSource::Aligned;
  if (s == "raw") return CostSource::Raw;
  throw std::invalid_argument("unknown cost source \"" + s + "\"");
}
FinalLayerMode parse_final_layer(const std::string& s) {
  if (s == "transport") return FinalLayerMode::Transport;
  if (s == "identity") return FinalLayerMode::Identity;
  throw std::invalid_argument("unknown final layer mode \"" + s + "\"");
}
SourceForm parse_source_form(const std::string& s) {
  if (s == "compact") return SourceForm::Compact;
  if (s == "masked") return SourceForm::Masked;
  throw std::invalid_argument("unknown source form \"" + s + "\"");
}

double beta_floor() { return 1e-12; }

Marginal build_target_marginal(const std::vector<double>& nwc, TargetScheme scheme, std::uint64_t seed) {
  const std::size_t m = nwc.size();
  if (m == 0) throw DimensionError("cannot build a marginal over zero neurons");
  if (scheme == TargetScheme::U2U) return Marginal::uniform(m);
  std::vector<double> w(m);
  if (scheme == TargetScheme::U2N) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!std::isfinite(nwc[j]) || nwc[j] < 0.0) throw DegenerateMarginalError("NWC values must be finite and >= 0");
      w[j] = nwc[j];
    }
  } else {
    Rng rng(seed, 0x553252);
    for (double& v : w) v = rng.uniform() + 1e-3;
  }
  double total = 0.0;
  for (double v : w) total += v;
  if (!(total > 0.0)) throw DegenerateMarginalError("NWC is zero for every neuron of the layer");
  for (double& v : w) v /= total;
  return {w};
}

namespace {

// theta_hat[o, j*B + s] = sum_i S[o, i*B + s] * M[i, j]; the bias column is copied
Matrix align_incoming(const Matrix& S, const Matrix& M, std::size_t block) {
  const std::size_t r = M.rows(), m = M.cols();
  if (S.cols() != r * block + 1) throw DimensionError("incoming width does not match the upstream alignment");
  Matrix out(S.rows(), m * block + 1);
  for (std::size_t o = 0; o < S.rows(); ++o) {
    auto src = S.row(o);
    auto dst = out.row(o);
    for (std::size_t i = 0; i < r; ++i) {
      const double* sb = src.data() + i * block;
      for (std::size_t j = 0; j < m; ++j) {
        const double w = M(i, j);
        if (w == 0.0) continue;
        double* db = dst.data() + j * block;
        for (std::size_t s = 0; s < block; ++s) db[s] += w * sb[s];
      }
    }
    dst[m * block] = src[r * block];
  }
  return out;
}

// raw rows: compact incoming columns scattered to their backdoored positions, pruned upstream columns zero
Matrix scatter_incoming(const Matrix& S, const std::vector<std::size_t>& keptPrev, std::size_t upstreamFull,
                        std::size_t block, bool compact) {
  Matrix out(S.rows(), upstreamFull * block + 1);
  for (std::size_t o = 0; o < S.rows(); ++o) {
    auto src = S.row(o);
    auto dst = out.row(o);
    for (std::size_t k = 0; k < keptPrev.size(); ++k) {
      const std::size_t from = (compact ? k : keptPrev[k]) * block, to = keptPrev[k] * block;
      std::copy_n(src.data() + from, block, dst.data() + to);
    }
    dst[upstreamFull * block] = src[src.size() - 1];
  }
  return out;
}

float lerp_param(float t, float b, double lambda) {
  if (lambda == 0.0) return b;
  if (lambda == 1.0) return t;
  return static_cast<float>(lambda * static_cast<double>(t) + (1.0 - lambda) * static_cast<double>(b));
}

void lerp_tensor(Tensor& out, const Tensor& t, const Tensor& b, double lambda) {
  if (t.shape() != b.shape()) throw DimensionError("cannot interpolate tensors of different shapes");
  out = b;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = lerp_param(t[k], b[k], lambda);
}

void lerp_layer(Layer& dst, const Layer& t, const Layer& b, double lambda) {
  if (auto* d = std::get_if<DenseLayer>(&dst)) {
    lerp_tensor(d->weights, std::get<DenseLayer>(t).weights, std::get<DenseLayer>(b).weights, lambda);
    lerp_tensor(d->bias, std::get<DenseLayer>(t).bias, std::get<DenseLayer>(b).bias, lambda);
  } else if (auto* c = std::get_if<Conv2DLayer>(&dst)) {
    lerp_tensor(c->weights, std::get<Conv2DLayer>(t).weights, std::get<Conv2DLayer>(b).weights, lambda);
    lerp_tensor(c->bias, std::get<Conv2DLayer>(t).bias, std::get<Conv2DLayer>(b).bias, lambda);
  }
}

void check_same_arch(const Model& a, const Model& b) {
  if (a.layers().size() != b.layers().size() || a.input_shape() != b.input_shape())
    throw DimensionError("models have different architectures");
  for (std::size_t i = 0; i < a.layers().size(); ++i) {
    if (a.layers()[i].index() != b.layers()[i].index())
      throw DimensionError("layer " + std::to_string(i) + " kinds differ");
    if (is_parametric(a.layers()[i]) && neuron_view(a, i).rows.shape() != neuron_view(b, i).rows.shape())
      throw DimensionError("layer " + std::to_string(i) + " shapes differ");
  }
}

}  // namespace

Model interpolate(const Model& a, const Model& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  check_same_arch(a, b);
  Model out = b;
  for (std::size_t i = 0; i < out.layers().size(); ++i) lerp_layer(out.layers()[i], a.layers()[i], b.layers()[i], lambda);
  return out;
}

Model vanilla_fuse(const Model& masked, const Model& backdoored, double lambda) {
  return interpolate(masked, backdoored, lambda);
}

FusionResult align_and_fuse(const PruneResult& pr, const Model& bd, const NwcReport& nwc, const FusionConfig& cfg) {
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  check_same_arch(pr.masked, bd);
  const auto P = bd.parametric_layers();
  if (pr.layers != P) throw DimensionError("prune result does not match the backdoored model");
  const bool compact = cfg.sourceForm == SourceForm::Compact;
  const Model& source = compact ? pr.pruned : pr.masked;

  std::size_t kp = 0;
  if (pr.firstPrunedLayer) kp = static_cast<std::size_t>(std::find(P.begin(), P.end(), *pr.firstPrunedLayer) - P.begin());

  FusionResult res{bd, bd, {}};
  res.trace.firstFusedLayer = P[kp];
  Matrix M;  // upstream alignment T diag(1/beta); empty means identity
  for (std::size_t k = kp; k < P.size(); ++k) {
    const std::size_t li = P[k];
    const bool last = k + 1 == P.size();
    Matrix S = to_matrix(neuron_view(source, li).rows);
    Matrix B = to_matrix(neuron_view(bd, li).rows);
    const std::size_t m = B.rows();
    const auto& kept = pr.kept[k];

    std::vector<double> alpha(S.rows(), 0.0);
    for (std::size_t i = 0; i < kept.size(); ++i) alpha[compact ? i : kept[i]] = 1.0 / static_cast<double>(kept.size());

    Matrix aligned, raw;
    if (M.size() == 0) {
      if (S.cols() != B.cols()) throw DimensionError("source and backdoored rows differ in width at layer " + std::to_string(li));
      aligned = S;
      raw = S;
    } else {
      const std::size_t upstream = bd.neuron_count(P[k - 1]);
      const std::size_t block = (B.cols() - 1) / upstream;
      aligned = align_incoming(S, M, block);
      if (cfg.costSource == CostSource::Raw) raw = scatter_incoming(S, pr.kept[k - 1], upstream, block, compact);
    }

    LayerTrace lt;
    lt.layerIndex = li;
    lt.sourceCount = kept.size();
    lt.targetCount = m;
    lt.alignedChecksum = checksum(aligned);

    Matrix transported;
    if (last && cfg.finalLayer == FinalLayerMode::Identity) {
      if (aligned.rows() != m) throw DimensionError("identity alignment needs matching neuron counts");
      transported = aligned;
      lt.transported = false;
      lt.target = Marginal::uniform(m);
    } else {
      Marginal beta;
      try {
        beta = build_target_marginal(nwc.for_layer(li).values, cfg.scheme, mix64(cfg.seed ^ mix64(li + 1)));
      } catch (const DegenerateMarginalError&) {
        beta = Marginal::uniform(m);
        lt.uniformFallback = true;
      }
      if (beta.size() != m) throw DimensionError("NWC report does not match layer " + std::to_string(li));
      Matrix C = pairwise_sq_euclidean(cfg.costSource == CostSource::Raw ? raw : aligned, B);
      lt.costMin = *std::min_element(C.values().begin(), C.values().end());
      lt.costMax = *std::max_element(C.values().begin(), C.values().end());
      double cs = 0.0;
      for (double v : C.values()) cs += v;
      lt.costMean = cs / static_cast<double>(C.size());

      TransportPlan T =
          cfg.solver == SolverKind::Exact
              ? solve_exact(Marginal{alpha}, beta, C)
              : solve_sinkhorn(Marginal{alpha}, beta, C, cfg.sinkhornEpsilon * std::max(lt.costMax, 1e-300),
                               cfg.sinkhornMaxIterations);
      FeasibilityReport fr = check_plan(T);
      lt.objective = T.objective;
      lt.planSupport = fr.support;
      lt.maxRowViolation = fr.maxRowViolation;
      lt.maxColViolation = fr.maxColViolation;
      lt.planChecksum = checksum(T.plan);

      std::vector<double> inv(m);
      for (std::size_t j = 0; j < m; ++j) {
        double b = beta.mass[j];
        if (b < beta_floor()) {
          b = beta_floor();
          ++lt.flooredBeta;
        }
        inv[j] = 1.0 / b;
      }
      // theta_tilde = diag(1/beta) T^T theta_hat
      transported = Matrix(m, aligned.cols());
      for (std::size_t i = 0; i < T.plan.rows(); ++i) {
        auto src = aligned.row(i);
        for (std::size_t j = 0; j < m; ++j) {
          const double t = T.plan(i, j);
          if (t == 0.0) continue;
          auto dst = transported.row(j);
          for (std::size_t c = 0; c < src.size(); ++c) dst[c] += t * src[c];
        }
      }
      for (std::size_t j = 0; j < m; ++j)
        for (double& v : transported.row(j)) v *= inv[j];
      M = T.plan;
      for (std::size_t i = 0; i < M.rows(); ++i)
        for (std::size_t j = 0; j < m; ++j) M(i, j) *= inv[j];
      lt.target = beta;
      lt.plan = std::move(T);
    }
    res.transported = apply_view(res.transported, NeuronView{li, to_tensor(transported)});
    lerp_layer(res.fused.layers()[li], res.transported.layers()[li], bd.layers()[li], cfg.lambda);
    res.trace.layers.push_back(std::move(lt));
  }
  return res;
}

std::vector<NeuronNorms> weight_norm_report(const Model& bd, const Model& prunedMasked, const Model& transported) {
  check_same_arch(bd, prunedMasked);
  check_same_arch(bd, transported);
  std::vector<NeuronNorms> out;
  auto norms = [](const Model& m, std::size_t li) {
    NeuronView v = neuron_view(m, li);
    std::vector<double> r(v.rows.dim(0));
    for (std::size_t i = 0; i < r.size(); ++i) {
      double s = 0.0;
      for (float x : v.rows.row(i)) s += static_cast<double>(x) * static_cast<double>(x);
      r[i] = std::sqrt(s);
    }
    return r;
  };
  for (std::size_t li : bd.parametric_layers())
    out.push_back({li, norms(bd, li), norms(prunedMasked, li), norms(transported, li)});
  return out;
}

void write_trace_csv(const AlignmentTrace& trace, const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(17);
  os << "layer,source_neurons,target_neurons,transported,uniform_fallback,floored_beta,cost_min,cost_max,cost_mean,"
        "objective,plan_support,row_violation,col_violation,aligned_checksum,plan_checksum\n";
  for (const auto& l : trace.layers)
    os << l.layerIndex << ',' << l.sourceCount << ',' << l.targetCount << ',' << l.transported << ','
       << l.uniformFallback << ',' << l.flooredBeta << ',' << l.costMin << ',' << l.costMax << ',' << l.costMean << ','
       << l.objective << ',' << l.planSupport << ',' << l.maxRowViolation << ',' << l.maxColViolation << ','
       << l.alignedChecksum << ',' << l.planChecksum << '\n';
  write_file_atomic(path, os.str());
}

void write_weight_norms_csv(const std::vector<NeuronNorms>& norms, const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(17);
  os << "layer,neuron,backdoored,pruned,transported\n";
  for (const auto& n : norms)
    for (std::size_t i = 0; i < n.backdoored.size(); ++i)
      os << n.layerIndex << ',' << i << ',' << n.backdoored[i] << ',' << n.pruned[i] << ',' << n.transported[i] << '\n';
  write_file_atomic(path, os.str());
}

}  // namespace otbr
