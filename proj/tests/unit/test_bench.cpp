#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "otbr/bench.hpp"
#include "otbr/io.hpp"

using namespace otbr;
namespace fs = std::filesystem;

namespace {

// class c lights pixel (0, c); the patch trigger never touches row 0
Dataset indicator_set(std::size_t perClass, std::size_t classes) {
  const std::size_t n = perClass * classes;
  Dataset d{Tensor({n, 1, 4, 4}), std::vector<int>(n), classes, "test"};
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = int(i % classes);
    d.images[i * 16 + i % classes] = 1.0f;
  }
  return d;
}

Model indicator_oracle(std::size_t classes) {
  Tensor w({classes, 16});
  for (std::size_t c = 0; c < classes; ++c) w.at(c, c) = 1.0f;
  return Model({1, 4, 4}, {FlattenLayer{}, DenseLayer{w, Tensor({classes})}}, classes);
}

Model constant_model(std::size_t classes, std::size_t label) {
  Tensor b({classes});
  b[label] = 1.0f;
  return Model({1, 4, 4}, {FlattenLayer{}, DenseLayer{Tensor({classes, 16}), b}}, classes);
}

RunConfig tiny_config(const fs::path& out) {
  RunConfig c = parse_config(
      "data.classes = 4\n"
      "data.per_class_train = 30\n"
      "data.per_class_test = 10\n"
      "data.shape = 1x8x8\n"
      "model.hidden = 16,8\n"
      "train.epochs = 3\n"
      "unlearn.steps = 3\n"
      "unlearn.batch = 16\n"
      "unlearn.lr = 1e-3\n"
      "prune.gamma = 0.1\n");
  c.outDir = out;
  return c;
}

int run_cli(const std::string& args) {
  int status = std::system((std::string(OTBR_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("otbr_bench_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Evaluate, ConstantTargetModelHasFullAsr) {
  Dataset clean = indicator_set(5, 3);
  Dataset asr = make_asr_testset(clean, PoisonSpec{});
  EvalReport r = evaluate(constant_model(3, 0), clean, asr, 0);
  EXPECT_DOUBLE_EQ(r.asr, 100.0);
  EXPECT_NEAR(r.acc, 100.0 / 3.0, 1e-9);
}

TEST(Evaluate, OracleModelIgnoresTrigger) {
  Dataset clean = indicator_set(5, 3);
  Dataset asr = make_asr_testset(clean, PoisonSpec{});
  EvalReport r = evaluate(indicator_oracle(3), clean, asr, 0, 100.0, "oracle");
  EXPECT_DOUBLE_EQ(r.acc, 100.0);
  EXPECT_DOUBLE_EQ(r.asr, 0.0);
  EXPECT_DOUBLE_EQ(r.accDrop, 0.0);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.asrCount, 10u);
}

TEST(Evaluate, EmptyInputsRejected) {
  Dataset clean = indicator_set(5, 3);
  Dataset empty = indicator_set(0, 3);
  EXPECT_THROW(evaluate(indicator_oracle(3), empty, clean, 0), EmptyInputError);
  EXPECT_THROW(evaluate(indicator_oracle(3), clean, empty, 0), EmptyInputError);
}

TEST(Evaluate, SuccessRule) {
  EXPECT_TRUE(success_rule(9.99, 19.99));
  EXPECT_FALSE(success_rule(10.0, 5.0));
  EXPECT_FALSE(success_rule(2.0, 20.0));
  EXPECT_TRUE(success_rule(-3.0, 0.0));
}

TEST(Reports, JsonRoundTrip) {
  EvalReport r{"otbr", 91.25, 1.5, 3.75, true, 1000, 900};
  std::string text = report_to_json(r);
  EXPECT_NE(text.find("\"schemaVersion\""), std::string::npos);
  EvalReport back = report_from_json(text);
  EXPECT_EQ(back.stage, r.stage);
  EXPECT_EQ(back.acc, r.acc);
  EXPECT_EQ(back.asr, r.asr);
  EXPECT_EQ(back.accDrop, r.accDrop);
  EXPECT_EQ(back.success, r.success);
  EXPECT_EQ(report_to_json(back), text);
}

TEST(Config, TextRoundTrip) {
  RunConfig c = parse_config(
      "seed = 17\nattack.trigger = blend\nmodel.arch = cnn\nmodel.conv = 8:3:1:1,16:3:2:1\n"
      "fusion.scheme = u2r\nfusion.lambda = 0.3\nprune.scope = per-layer\nunlearn.label_ceiling = 4\n");
  std::string text = config_to_text(c);
  RunConfig back = parse_config(text);
  EXPECT_EQ(config_to_text(back), text);
  EXPECT_EQ(back.seed, 17u);
  EXPECT_EQ(back.poison.kind, TriggerKind::Blend);
  EXPECT_EQ(back.arch.kind, ArchKind::Cnn);
  EXPECT_EQ(back.arch.convs.size(), 2u);
  EXPECT_EQ(back.fusion.scheme, TargetScheme::U2R);
  EXPECT_EQ(back.fusion.lambda, 0.3);
  EXPECT_EQ(back.pruneScope, PruneScope::PerLayer);
  EXPECT_EQ(back.unlearn.labelCeiling, 4u);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("nonsense.key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("train.lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("fusion.lambda = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("attack.target = 12\n"), ConfigError);
  EXPECT_THROW(parse_config("fusion.scheme = u2x\n"), ConfigError);
  EXPECT_THROW(parse_config("just text\n"), ConfigError);
  EXPECT_NO_THROW(parse_config("# comment only\n\nseed = 3  # trailing\n"));
}

TEST(Config, StageSeedsDifferByStage) {
  RunConfig c;
  EXPECT_NE(stage_seed(c, "train"), stage_seed(c, "unlearn"));
  RunConfig d;
  d.seed = 1;
  EXPECT_NE(stage_seed(c, "train"), stage_seed(d, "train"));
}

TEST(Pipeline, IdentityConfigReproducesNoDefense) {
  RunConfig c = tiny_config(fresh_dir("identity"));
  c.gamma = 0.0;
  c.fusion.lambda = 0.0;
  PipelineResult r = run_pipeline(c);
  EXPECT_EQ(r.fused.acc, r.noDefense.acc);
  EXPECT_EQ(r.fused.asr, r.noDefense.asr);
  EXPECT_EQ(load_model(c.outDir / "models" / "fused.otbr").layers().size(),
            load_model(c.outDir / "models" / "backdoored.otbr").layers().size());
}

TEST(Pipeline, DeterministicArtifacts) {
  RunConfig a = tiny_config(fresh_dir("det_a")), b = tiny_config(fresh_dir("det_b"));
  run_pipeline(a);
  run_pipeline(b);
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.outDir)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.json") continue;
    const fs::path rel = fs::relative(e.path(), a.outDir);
    ASSERT_TRUE(fs::exists(b.outDir / rel)) << rel;
    EXPECT_EQ(read_file(e.path()), read_file(b.outDir / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 15u);
}

TEST(Pipeline, AblationAxesEnumerate) {
  RunConfig c = tiny_config(fresh_dir("ablate"));
  Fixture f = build_fixture(c);
  auto rows = run_ablation(c, AblationAxis::FusionScheme, f);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].value, "V1");
  EXPECT_EQ(rows[1].value, "V2");
  EXPECT_EQ(rows[2].value, "V3");
  auto lambdas = run_ablation(c, AblationAxis::Lambda, f);
  ASSERT_EQ(lambdas.size(), 11u);
  EvalReport base = evaluate(f.backdoored, f.test, f.asrTest, 0);
  EXPECT_EQ(lambdas.front().report.acc, base.acc);
  EXPECT_EQ(lambdas.front().report.asr, base.asr);
  std::string csv = ablation_csv(AblationAxis::Lambda, lambdas);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 12);
}

TEST(Diagnostics, IdenticalModelsGiveIdenticalSeries) {
  RunConfig c = tiny_config(fresh_dir("diag"));
  Fixture f = build_fixture(c);
  NwcReport n = compute_nwc(f.backdoored, f.backdoored);
  const std::size_t li = f.backdoored.parametric_layers().front();
  ActivationSeries s = activation_comparison(f.backdoored, f.backdoored, f.test, f.asrTest, li, n);
  EXPECT_EQ(s.backdooredClean, s.fusedClean);
  EXPECT_EQ(s.backdooredTriggered, s.fusedTriggered);
  EXPECT_EQ(s.backdooredClean.size(), f.backdoored.neuron_count(li));
}

TEST(Cli, ExitCodes) {
  fs::path dir = fresh_dir("cli");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("bogus-command"), 2);
  std::ofstream(dir / "bad.cfg") << "no.such.key = 1\n";
  EXPECT_EQ(run_cli("--config " + (dir / "bad.cfg").string() + " gen-data"), 2);
  EXPECT_EQ(run_cli("attack-eval --model " + (dir / "missing.otbr").string()), 2);

  std::ofstream(dir / "tiny.cfg") << "data.classes = 3\ndata.per_class_train = 10\ndata.per_class_test = 5\n"
                                     "data.shape = 1x8x8\nmodel.hidden = 8\ntrain.epochs = 2\n";
  std::ofstream(dir / "diverge.cfg") << "data.classes = 3\ndata.per_class_train = 10\ndata.per_class_test = 5\n"
                                        "data.shape = 1x8x8\nmodel.hidden = 8\ntrain.epochs = 2\ntrain.lr = 1e300\n";
  const std::string out = " --out " + dir.string();
  EXPECT_EQ(run_cli("--config " + (dir / "tiny.cfg").string() + out + " gen-data"), 0);
  EXPECT_EQ(run_cli("--config " + (dir / "diverge.cfg").string() + out + " train"), 3);
  EXPECT_EQ(run_cli("--config " + (dir / "tiny.cfg").string() + out + " train"), 0);
  EXPECT_TRUE(fs::exists(dir / "models" / "backdoored.otbr"));
  EXPECT_EQ(run_cli("--config " + (dir / "tiny.cfg").string() + out + " attack-eval --name check --model " +
                    (dir / "models" / "backdoored.otbr").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "reports" / "check.json"));
}
