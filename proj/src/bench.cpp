#include "otbr/bench.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "otbr/io.hpp"

namespace otbr {

using json = nlohmann::json;

StageError::StageError(std::string stage, const std::string& what, bool divergence)
    : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)), divergence_(divergence) {}

bool success_rule(double accDrop, double asr) { return accDrop < 10.0 && asr < 20.0; }

EvalReport evaluate(const Model& model, const Dataset& cleanTest, const Dataset& asrTest, int targetLabel,
                    std::optional<double> baselineAcc, const std::string& stage) {
  if (cleanTest.size() == 0 || asrTest.size() == 0) throw EmptyInputError("evaluation needs non-empty test sets");
  EvalReport r;
  r.stage = stage;
  r.cleanCount = cleanTest.size();
  r.asrCount = asrTest.size();
  auto pc = predict(model, cleanTest.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pc.size(); ++i) correct += pc[i] == cleanTest.labels[i];
  auto pa = predict(model, asrTest.images);
  std::size_t hit = 0;
  for (int p : pa) hit += p == targetLabel;
  r.acc = 100.0 * static_cast<double>(correct) / static_cast<double>(pc.size());
  r.asr = 100.0 * static_cast<double>(hit) / static_cast<double>(pa.size());
  r.accDrop = baselineAcc ? *baselineAcc - r.acc : 0.0;
  r.success = success_rule(r.accDrop, r.asr);
  return r;
}

std::string report_to_json(const EvalReport& r) {
  json j{{"schemaVersion", kReportSchemaVersion}, {"stage", r.stage},       {"acc", r.acc},
         {"asr", r.asr},                          {"accDrop", r.accDrop},   {"success", r.success},
         {"cleanCount", r.cleanCount},            {"asrCount", r.asrCount}};
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.at("schemaVersion").get<int>() != kReportSchemaVersion) throw ConfigError("unsupported report schema version");
  EvalReport r;
  r.stage = j.at("stage").get<std::string>();
  r.acc = j.at("acc").get<double>();
  r.asr = j.at("asr").get<double>();
  r.accDrop = j.at("accDrop").get<double>();
  r.success = j.at("success").get<bool>();
  r.cleanCount = j.at("cleanCount").get<std::size_t>();
  r.asrCount = j.at("asrCount").get<std::size_t>();
  return r;
}

Model build_model(const RunConfig& cfg) {
  const std::uint64_t seed = stage_seed(cfg, "init");
  if (cfg.arch.kind == ArchKind::Mlp) return make_mlp(cfg.data.sampleShape, cfg.arch.hidden, cfg.data.classCount, seed);
  return make_cnn(cfg.data.sampleShape, cfg.arch.convs, cfg.data.classCount, seed);
}

Fixture build_fixture_data(const RunConfig& cfg) {
  cfg.validate();
  Fixture f;
  Dataset clean = gen_synthetic(cfg.data.classCount, cfg.data.perClassTrain, cfg.data.sampleShape,
                                stage_seed(cfg, "data-train"), "train");
  f.test = gen_synthetic(cfg.data.classCount, cfg.data.perClassTest, cfg.data.sampleShape, stage_seed(cfg, "data-test"),
                         "test");
  PoisonResult pr = poison(clean, cfg.poison, stage_seed(cfg, "poison"));
  f.train = std::move(pr.dataset);
  f.poisonIndices = std::move(pr.indices);
  f.asrTest = make_asr_testset(f.test, cfg.poison);
  return f;
}

Fixture build_fixture(const RunConfig& cfg) {
  Fixture f = build_fixture_data(cfg);
  f.backdoored = build_model(cfg);
  TrainConfig tc = cfg.train;
  tc.seed = stage_seed(cfg, "train");
  tc.objectiveSign = 1.0;
  f.trainLoss = train(f.backdoored, f.train.images, f.train.labels, tc);
  f.backdoored.metadata().name = "backdoored";
  return f;
}

DefenseResult run_defense(const Model& backdoored, const RunConfig& cfg) {
  UnlearnConfig uc = cfg.unlearn;
  uc.seed = stage_seed(cfg, "unlearn");
  DefenseResult d{random_unlearn(backdoored, uc), {}, {}, {}, {}};
  d.nwc = compute_nwc(backdoored, d.unlearn.unlearned);
  d.prune = prune_top_gamma(backdoored, d.nwc, cfg.gamma, cfg.pruneScope);
  d.fusion = align_and_fuse(d.prune, backdoored, d.nwc, cfg.fusion);
  d.vanilla = vanilla_fuse(d.prune.masked, backdoored, cfg.fusion.lambda);
  return d;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const DivergenceError& e) {
    throw StageError(name, e.what(), true);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what(), false);
  }
}

std::string loss_csv(const std::vector<double>& v, const char* header) {
  std::ostringstream os;
  os.precision(17);
  os << header << '\n';
  for (std::size_t i = 0; i < v.size(); ++i) os << i << ',' << v[i] << '\n';
  return os.str();
}

Model named(Model m, const std::string& name) {
  m.metadata().name = name;
  return m;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  stage("config", [&] {
    cfg.validate();
    return 0;
  });
  const auto& out = cfg.outDir;
  stage("config", [&] {
    write_file_atomic(out / "config.txt", config_to_text(cfg, false));
    return 0;
  });
  Fixture fx = stage("train", [&] {
    Fixture f = build_fixture(cfg);
    save_dataset(f.train, out / "data" / "train_poisoned.otbd");
    save_dataset(f.test, out / "data" / "test.otbd");
    save_dataset(f.asrTest, out / "data" / "asr_test.otbd");
    save_model(f.backdoored, out / "models" / "backdoored.otbr");
    write_file_atomic(out / "train_loss.csv", loss_csv(f.trainLoss, "epoch,loss"));
    return f;
  });
  PipelineResult res;
  const int target = cfg.poison.targetLabel;
  res.noDefense = stage("poison-eval", [&] {
    EvalReport r = evaluate(fx.backdoored, fx.test, fx.asrTest, target, std::nullopt, "no-defense");
    write_file_atomic(out / "reports" / "no_defense.json", report_to_json(r));
    return r;
  });
  // the defense stages see only the backdoored model
  const Model bd = fx.backdoored;
  fx.train = Dataset{};
  UnlearnResult ul = stage("unlearn", [&] {
    UnlearnConfig uc = cfg.unlearn;
    uc.seed = stage_seed(cfg, "unlearn");
    UnlearnResult u = random_unlearn(bd, uc);
    save_model(named(u.unlearned, "unlearned"), out / "models" / "unlearned.otbr");
    write_file_atomic(out / "unlearn_loss.csv", loss_csv(u.lossTrace, "step,loss"));
    return u;
  });
  NwcReport nwc = stage("nwc", [&] {
    NwcReport n = compute_nwc(bd, ul.unlearned);
    write_nwc_csv(n, out / "nwc.csv");
    return n;
  });
  PruneResult pr = stage("prune", [&] {
    PruneResult p = prune_top_gamma(bd, nwc, cfg.gamma, cfg.pruneScope);
    save_model(named(p.pruned, "pruned"), out / "models" / "pruned.otbr");
    save_model(named(p.masked, "pruned-masked"), out / "models" / "pruned_masked.otbr");
    json pj{{"schemaVersion", kReportSchemaVersion},
            {"gamma", cfg.gamma},
            {"prunedCount", p.prunedCount},
            {"firstPrunedLayer", p.firstPrunedLayer ? json(*p.firstPrunedLayer) : json(nullptr)},
            {"layers", p.layers},
            {"removed", p.removed}};
    write_file_atomic(out / "reports" / "prune.json", pj.dump(2) + "\n");
    return p;
  });
  FusionResult fr = stage("fuse", [&] {
    FusionResult f = align_and_fuse(pr, bd, nwc, cfg.fusion);
    save_model(named(f.transported, "transported"), out / "models" / "transported.otbr");
    save_model(named(f.fused, "fused"), out / "models" / "fused.otbr");
    write_trace_csv(f.trace, out / "trace.csv");
    write_weight_norms_csv(weight_norm_report(bd, pr.masked, f.transported), out / "weight_norms.csv");
    return f;
  });
  Model vanilla = stage("fuse", [&] {
    Model v = named(vanilla_fuse(pr.masked, bd, cfg.fusion.lambda), "vanilla");
    save_model(v, out / "models" / "vanilla.otbr");
    return v;
  });
  stage("eval", [&] {
    const double base = res.noDefense.acc;
    res.pruned = evaluate(pr.masked, fx.test, fx.asrTest, target, base, "pruned");
    res.vanilla = evaluate(vanilla, fx.test, fx.asrTest, target, base, "vanilla");
    res.fused = evaluate(fr.fused, fx.test, fx.asrTest, target, base, "otbr");
    write_file_atomic(out / "reports" / "pruned.json", report_to_json(res.pruned));
    write_file_atomic(out / "reports" / "vanilla.json", report_to_json(res.vanilla));
    write_file_atomic(out / "reports" / "otbr.json", report_to_json(res.fused));
    return 0;
  });
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file_atomic(out / "timing.json", json{{"seconds", res.seconds}}.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------- ablations

AblationAxis parse_axis(const std::string& s) {
  if (s == "fusion-scheme") return AblationAxis::FusionScheme;
  if (s == "target-scheme") return AblationAxis::TargetScheme;
  if (s == "gamma-steps") return AblationAxis::GammaSteps;
  if (s == "lambda") return AblationAxis::Lambda;
  if (s == "label-ceiling") return AblationAxis::LabelCeiling;
  throw ConfigError("unknown ablation axis '" + s + "'");
}

std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::FusionScheme: return "fusion-scheme";
    case AblationAxis::TargetScheme: return "target-scheme";
    case AblationAxis::GammaSteps: return "gamma-steps";
    case AblationAxis::Lambda: return "lambda";
    default: return "label-ceiling";
  }
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& cfg, AblationAxis axis, const Fixture& fx) {
  cfg.validate();
  const Model& bd = fx.backdoored;
  const int target = cfg.poison.targetLabel;
  const double base = evaluate(bd, fx.test, fx.asrTest, target).acc;
  auto eval = [&](const Model& m, const std::string& label) {
    return evaluate(m, fx.test, fx.asrTest, target, base, label);
  };
  std::vector<AblationRow> rows;
  UnlearnConfig uc = cfg.unlearn;
  uc.seed = stage_seed(cfg, "unlearn");

  switch (axis) {
    case AblationAxis::FusionScheme: {
      DefenseResult d = run_defense(bd, cfg);
      rows.push_back({"V1", eval(d.prune.masked, "V1")});
      rows.push_back({"V2", eval(d.vanilla, "V2")});
      rows.push_back({"V3", eval(d.fusion.fused, "V3")});
      break;
    }
    case AblationAxis::TargetScheme: {
      UnlearnResult ul = random_unlearn(bd, uc);
      NwcReport nwc = compute_nwc(bd, ul.unlearned);
      PruneResult pr = prune_top_gamma(bd, nwc, cfg.gamma, cfg.pruneScope);
      auto run = [&](TargetScheme s, std::uint64_t seed, const std::string& label) {
        FusionConfig fc = cfg.fusion;
        fc.scheme = s;
        fc.seed = seed;
        return eval(align_and_fuse(pr, bd, nwc, fc).fused, label);
      };
      rows.push_back({"u2u", run(TargetScheme::U2U, cfg.fusion.seed, "u2u")});
      EvalReport mean;
      mean.stage = "u2r-mean";
      for (std::uint64_t s = 0; s < 3; ++s) {
        const std::string label = "u2r-seed" + std::to_string(s);
        EvalReport r = run(TargetScheme::U2R, cfg.fusion.seed + s, label);
        mean.acc += r.acc / 3.0;
        mean.asr += r.asr / 3.0;
        mean.cleanCount = r.cleanCount;
        mean.asrCount = r.asrCount;
        rows.push_back({label, r});
      }
      mean.accDrop = base - mean.acc;
      mean.success = success_rule(mean.accDrop, mean.asr);
      rows.push_back({"u2r-mean", mean});
      rows.push_back({"u2n", run(TargetScheme::U2N, cfg.fusion.seed, "u2n")});
      break;
    }
    case AblationAxis::GammaSteps: {
      for (std::size_t steps : {5, 10, 20, 40}) {
        UnlearnConfig u = uc;
        u.steps = steps;
        UnlearnResult ul = random_unlearn(bd, u);
        NwcReport nwc = compute_nwc(bd, ul.unlearned);
        for (double g : {0.01, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30}) {
          const std::string label = "gamma=" + num(g) + ";I=" + std::to_string(steps);
          try {
            PruneResult pr = prune_top_gamma(bd, nwc, g, cfg.pruneScope);
            rows.push_back({label, eval(align_and_fuse(pr, bd, nwc, cfg.fusion).fused, label)});
          } catch (const InfeasiblePruneError&) {
            rows.push_back({label + ";infeasible", EvalReport{label, 0, 0, base, false, 0, 0}});
          }
        }
      }
      break;
    }
    case AblationAxis::Lambda: {
      UnlearnResult ul = random_unlearn(bd, uc);
      NwcReport nwc = compute_nwc(bd, ul.unlearned);
      PruneResult pr = prune_top_gamma(bd, nwc, cfg.gamma, cfg.pruneScope);
      FusionResult fr = align_and_fuse(pr, bd, nwc, cfg.fusion);
      for (int k = 0; k <= 10; ++k) {
        const double lambda = k / 10.0;
        // transported equals bd before the first fused layer, and interpolation keeps equal values
        Model fused = interpolate(fr.transported, bd, lambda);
        for (std::size_t li = 0; li < fr.trace.firstFusedLayer; ++li) fused.layers()[li] = bd.layers()[li];
        rows.push_back({num(lambda), eval(fused, "lambda=" + num(lambda))});
      }
      break;
    }
    case AblationAxis::LabelCeiling: {
      for (std::size_t g = 1; g <= cfg.data.classCount; ++g) {
        RunConfig c = cfg;
        c.unlearn.labelCeiling = g;
        DefenseResult d = run_defense(bd, c);
        rows.push_back({std::to_string(g), eval(d.fusion.fused, "G=" + std::to_string(g))});
      }
      break;
    }
  }
  return rows;
}

std::string ablation_csv(AblationAxis axis, const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "axis,value,acc,asr,acc_drop,success\n";
  for (const auto& r : rows)
    os << to_string(axis) << ',' << r.value << ',' << r.report.acc << ',' << r.report.asr << ',' << r.report.accDrop
       << ',' << (r.report.success ? "true" : "false") << '\n';
  return os.str();
}

// ---------------------------------------------------------------- correlation and diagnostics

CorrelationReport correlation_experiment(const RunConfig& cfg, const Fixture& fx) {
  const Model& bd = fx.backdoored;
  if (fx.poisonIndices.empty()) throw EmptyInputError("correlation experiment needs poisoned samples");
  UnlearnConfig uc = cfg.unlearn;
  uc.seed = stage_seed(cfg, "unlearn");
  CorrelationReport r;
  r.random = compute_nwc(bd, random_unlearn(bd, uc).unlearned);

  const Shape s = fx.train.sample_shape();
  const std::size_t per = shape_size(s);
  Shape full{fx.poisonIndices.size()};
  full.insert(full.end(), s.begin(), s.end());
  Tensor images(full);
  std::vector<int> labels;
  for (std::size_t k = 0; k < fx.poisonIndices.size(); ++k) {
    const std::size_t i = fx.poisonIndices[k];
    std::copy_n(fx.train.images.data().begin() + i * per, per, images.data().begin() + k * per);
    labels.push_back(fx.train.labels[i]);
  }
  UnlearnConfig pc = uc;
  pc.seed = stage_seed(cfg, "poison-unlearn");
  r.poison = compute_nwc(bd, unlearn_on_samples(bd, images, labels, pc).unlearned);
  r.rho = nwc_correlation(r.random, r.poison);
  return r;
}

std::string correlation_json(const CorrelationReport& r) {
  json j{{"schemaVersion", kReportSchemaVersion}, {"layers", r.rho.layers}, {"perLayer", r.rho.perLayer},
         {"pooled", r.rho.pooled}};
  return j.dump(2) + "\n";
}

std::string correlation_scatter_csv(const CorrelationReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "layer,neuron,random_nwc,poison_nwc\n";
  for (std::size_t k = 0; k < r.random.layers.size(); ++k)
    for (std::size_t n = 0; n < r.random.layers[k].values.size(); ++n)
      os << r.random.layers[k].layerIndex << ',' << n << ',' << r.random.layers[k].values[n] << ','
         << r.poison.layers[k].values[n] << '\n';
  return os.str();
}

ActivationSeries activation_comparison(const Model& bd, const Model& fused, const Dataset& clean,
                                       const Dataset& triggered, std::size_t layerIndex, const NwcReport& nwc) {
  if (!is_parametric(bd.layer(layerIndex))) throw DimensionError("activation comparison needs a parametric layer");
  std::size_t tap = layerIndex;
  if (tap + 1 < bd.layers().size() && std::holds_alternative<ReLULayer>(bd.layer(tap + 1))) ++tap;
  auto means = [&](const Model& m, const Dataset& ds) {
    Tensor a = forward_to(m, ds.images, tap);
    const std::size_t N = a.dim(0), C = a.dim(1), per = a.size() / (N * C);
    std::vector<double> out(C, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < per; ++s) out[c] += a[(n * C + c) * per + s];
    for (double& v : out) v /= static_cast<double>(N * per);
    return out;
  };
  ActivationSeries s;
  s.layerIndex = layerIndex;
  s.nwc = nwc.for_layer(layerIndex).values;
  s.backdooredClean = means(bd, clean);
  s.backdooredTriggered = means(bd, triggered);
  s.fusedClean = means(fused, clean);
  s.fusedTriggered = means(fused, triggered);
  return s;
}

std::string activation_csv(const ActivationSeries& s) {
  std::ostringstream os;
  os.precision(17);
  os << "layer,neuron,nwc,backdoored_clean,backdoored_triggered,fused_clean,fused_triggered\n";
  for (std::size_t n = 0; n < s.nwc.size(); ++n)
    os << s.layerIndex << ',' << n << ',' << s.nwc[n] << ',' << s.backdooredClean[n] << ','
       << s.backdooredTriggered[n] << ',' << s.fusedClean[n] << ',' << s.fusedTriggered[n] << '\n';
  return os.str();
}

}  // namespace otbr
