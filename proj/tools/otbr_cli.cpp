#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "otbr/bench.hpp"
#include "otbr/io.hpp"

namespace fs = std::filesystem;
using namespace otbr;
using json = nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve(const Globals& g) {
  RunConfig cfg;
  if (!g.config.empty()) cfg = load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.outDir = g.out;
  cfg.validate();
  return cfg;
}

std::string or_default(const std::string& v, const fs::path& fallback) { return v.empty() ? fallback.string() : v; }

void print_report(const EvalReport& r) {
  std::printf("%-12s ACC %6.2f  ASR %6.2f  drop %6.2f  %s\n", r.stage.c_str(), r.acc, r.asr, r.accDrop,
              r.success ? "success" : "fail");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"data-free backdoor removal lab: random unlearning, NWC pruning, OT fusion"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "key = value run configuration file");
  app.add_option("--seed", g.seed, "run seed (overrides the config)");
  app.add_option("--out", g.out, "output directory (overrides the config)");
  app.fallthrough();

  std::string modelPath, unlearnedPath, nwcPath, fusedPath, dataPath, testPath, asrPath, axis, dir, name;
  std::optional<double> baseline;
  std::optional<std::size_t> layer;

  auto* genData = app.add_subcommand("gen-data", "generate clean, poisoned and ASR datasets");
  auto* trainCmd = app.add_subcommand("train", "train the backdoored model on the poisoned set");
  trainCmd->add_option("--data", dataPath, "poisoned training set (default <out>/data/train_poisoned.otbd)");
  auto* attackEval = app.add_subcommand("attack-eval", "measure ACC and ASR of a model");
  attackEval->add_option("--model", modelPath)->required();
  attackEval->add_option("--test", testPath, "clean test set (default <out>/data/test.otbd)");
  attackEval->add_option("--asr", asrPath, "triggered test set (default <out>/data/asr_test.otbd)");
  attackEval->add_option("--baseline-acc", baseline, "no-defense ACC for the drop");
  attackEval->add_option("--name", name, "report name")->default_val("eval");
  auto* unlearnCmd = app.add_subcommand("unlearn", "random-noise unlearning of a model");
  unlearnCmd->add_option("--model", modelPath)->required();
  auto* nwcCmd = app.add_subcommand("nwc", "neuron weight change between two models");
  nwcCmd->add_option("--model", modelPath)->required();
  nwcCmd->add_option("--unlearned", unlearnedPath)->required();
  auto* pruneCmd = app.add_subcommand("prune", "prune the top-gamma NWC neurons");
  pruneCmd->add_option("--model", modelPath)->required();
  pruneCmd->add_option("--nwc", nwcPath)->required();
  auto* fuseCmd = app.add_subcommand("fuse", "align the pruned model and fuse it with the backdoored one");
  fuseCmd->add_option("--model", modelPath)->required();
  fuseCmd->add_option("--nwc", nwcPath)->required();
  auto* pipelineCmd = app.add_subcommand("pipeline", "run every stage end to end");
  auto* ablateCmd = app.add_subcommand("ablate", "sweep one axis and write a CSV table");
  ablateCmd->add_option("--axis", axis, "fusion-scheme | target-scheme | gamma-steps | lambda | label-ceiling")
      ->required();
  ablateCmd->add_option("--model", modelPath, "reuse a trained backdoored model");
  auto* correlateCmd = app.add_subcommand("correlate", "random vs poison unlearning NWC correlation");
  correlateCmd->add_option("--model", modelPath, "reuse a trained backdoored model");
  auto* diagnoseCmd = app.add_subcommand("diagnose", "weight norms and clean vs triggered activations");
  diagnoseCmd->add_option("--model", modelPath)->required();
  diagnoseCmd->add_option("--layer", layer, "parametric layer index (default: first)");
  auto* reportCmd = app.add_subcommand("report", "summarize the JSON reports of a run");
  reportCmd->add_option("--dir", dir, "run directory (default <out>)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    const RunConfig cfg = resolve(g);
    const fs::path out = cfg.outDir;
    auto fixture_for = [&](bool needModel) {
      if (!modelPath.empty()) {
        Fixture f = build_fixture_data(cfg);
        f.backdoored = load_model(modelPath);
        return f;
      }
      if (!needModel) return build_fixture_data(cfg);
      return build_fixture(cfg);
    };

    if (genData->parsed()) {
      Fixture f = build_fixture_data(cfg);
      save_dataset(f.train, out / "data" / "train_poisoned.otbd");
      save_dataset(f.test, out / "data" / "test.otbd");
      save_dataset(f.asrTest, out / "data" / "asr_test.otbd");
      write_file_atomic(out / "data" / "poison_indices.json", json(f.poisonIndices).dump() + "\n");
      std::printf("wrote %zu training, %zu test and %zu triggered samples to %s\n", f.train.size(), f.test.size(),
                  f.asrTest.size(), (out / "data").string().c_str());
    } else if (trainCmd->parsed()) {
      Dataset ds = load_dataset(or_default(dataPath, out / "data" / "train_poisoned.otbd"));
      Model m = build_model(cfg);
      TrainConfig tc = cfg.train;
      tc.seed = stage_seed(cfg, "train");
      auto losses = train(m, ds.images, ds.labels, tc);
      m.metadata().name = "backdoored";
      save_model(m, out / "models" / "backdoored.otbr");
      std::printf("trained %zu epochs, final loss %.6f\n", losses.size(), losses.empty() ? 0.0 : losses.back());
    } else if (attackEval->parsed()) {
      Model m = load_model(modelPath);
      Dataset test = load_dataset(or_default(testPath, out / "data" / "test.otbd"));
      Dataset asr = load_dataset(or_default(asrPath, out / "data" / "asr_test.otbd"));
      EvalReport r = evaluate(m, test, asr, cfg.poison.targetLabel, baseline, name);
      write_file_atomic(out / "reports" / (name + ".json"), report_to_json(r));
      print_report(r);
    } else if (unlearnCmd->parsed()) {
      UnlearnConfig uc = cfg.unlearn;
      uc.seed = stage_seed(cfg, "unlearn");
      UnlearnResult u = random_unlearn(load_model(modelPath), uc);
      u.unlearned.metadata().name = "unlearned";
      save_model(u.unlearned, out / "models" / "unlearned.otbr");
      std::printf("unlearned %zu steps, loss %.6f -> %.6f\n", u.lossTrace.size(),
                  u.lossTrace.empty() ? 0.0 : u.lossTrace.front(), u.lossTrace.empty() ? 0.0 : u.lossTrace.back());
    } else if (nwcCmd->parsed()) {
      NwcReport n = compute_nwc(load_model(modelPath), load_model(unlearnedPath));
      write_nwc_csv(n, out / "nwc.csv");
      std::printf("wrote NWC for %zu neurons to %s\n", n.neuron_total(), (out / "nwc.csv").string().c_str());
    } else if (pruneCmd->parsed()) {
      Model bd = load_model(modelPath);
      PruneResult p = prune_top_gamma(bd, read_nwc_csv(nwcPath), cfg.gamma, cfg.pruneScope);
      save_model(p.pruned, out / "models" / "pruned.otbr");
      save_model(p.masked, out / "models" / "pruned_masked.otbr");
      std::printf("pruned %zu neurons, first pruned layer %s\n", p.prunedCount,
                  p.firstPrunedLayer ? std::to_string(*p.firstPrunedLayer).c_str() : "none");
    } else if (fuseCmd->parsed()) {
      Model bd = load_model(modelPath);
      NwcReport n = read_nwc_csv(nwcPath);
      PruneResult p = prune_top_gamma(bd, n, cfg.gamma, cfg.pruneScope);
      FusionResult f = align_and_fuse(p, bd, n, cfg.fusion);
      save_model(f.transported, out / "models" / "transported.otbr");
      save_model(f.fused, out / "models" / "fused.otbr");
      save_model(vanilla_fuse(p.masked, bd, cfg.fusion.lambda), out / "models" / "vanilla.otbr");
      write_trace_csv(f.trace, out / "trace.csv");
      std::printf("fused %zu layers from layer %zu\n", f.trace.layers.size(), f.trace.firstFusedLayer);
    } else if (pipelineCmd->parsed()) {
      PipelineResult r = run_pipeline(cfg);
      for (const auto* e : {&r.noDefense, &r.pruned, &r.vanilla, &r.fused}) print_report(*e);
      std::printf("finished in %.1f s, artifacts in %s\n", r.seconds, out.string().c_str());
    } else if (ablateCmd->parsed()) {
      AblationAxis a = parse_axis(axis);
      Fixture f = fixture_for(true);
      auto rows = run_ablation(cfg, a, f);
      const fs::path csv = out / ("ablation_" + to_string(a) + ".csv");
      write_file_atomic(csv, ablation_csv(a, rows));
      for (const auto& r : rows) print_report(r.report);
      std::printf("wrote %s\n", csv.string().c_str());
    } else if (correlateCmd->parsed()) {
      Fixture f = fixture_for(true);
      CorrelationReport r = correlation_experiment(cfg, f);
      write_file_atomic(out / "correlation.json", correlation_json(r));
      write_file_atomic(out / "correlation_scatter.csv", correlation_scatter_csv(r));
      for (std::size_t k = 0; k < r.rho.layers.size(); ++k)
        std::printf("layer %zu  rho %.4f\n", r.rho.layers[k], r.rho.perLayer[k]);
      std::printf("pooled rho %.4f\n", r.rho.pooled);
    } else if (diagnoseCmd->parsed()) {
      Fixture f = fixture_for(false);
      f.backdoored = load_model(modelPath);
      DefenseResult d = run_defense(f.backdoored, cfg);
      const std::size_t li = layer.value_or(f.backdoored.parametric_layers().front());
      write_weight_norms_csv(weight_norm_report(f.backdoored, d.prune.masked, d.fusion.transported),
                             out / "weight_norms.csv");
      ActivationSeries s = activation_comparison(f.backdoored, d.fusion.fused, f.test, f.asrTest, li, d.nwc);
      write_file_atomic(out / "activations.csv", activation_csv(s));
      std::printf("wrote weight_norms.csv and activations.csv (layer %zu) to %s\n", li, out.string().c_str());
    } else if (reportCmd->parsed()) {
      const fs::path root = dir.empty() ? out : fs::path(dir);
      std::printf("%-12s %8s %8s %8s  %s\n", "stage", "ACC", "ASR", "drop", "result");
      for (const char* stage : {"no_defense", "pruned", "vanilla", "otbr"}) {
        const fs::path p = root / "reports" / (std::string(stage) + ".json");
        if (!fs::exists(p)) continue;
        auto bytes = read_file(p);
        print_report(report_from_json(std::string(bytes.begin(), bytes.end())));
      }
    }
    return 0;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.divergence() ? kExitDivergence : kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
}
