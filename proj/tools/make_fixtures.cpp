// Regenerates the committed reference fixture under tests/fixtures.
#include <cstdio>
#include <filesystem>

#include "json.hpp"
#include "otbr/data.hpp"
#include "otbr/io.hpp"
#include "otbr/model.hpp"

using namespace otbr;

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "tests/fixtures";
  Dataset trainSet = gen_synthetic(10, 60, {1, 16, 16}, 101, "train");
  Dataset probe = gen_synthetic(10, 2, {1, 16, 16}, 202, "test");
  Model m = make_mlp({1, 16, 16}, {32, 16}, 10, 7);
  TrainConfig tc;
  tc.epochs = 5;
  tc.seed = 9;
  train(m, trainSet.images, trainSet.labels, tc);
  m.metadata().name = "reference-mlp";
  m.metadata().tags["fixture"] = "synthetic-10x60";
  save_model(m, dir / "reference_mlp.otbr");
  save_dataset(probe, dir / "reference_inputs.otbd");
  Tensor logits = forward(m, probe.images);
  nlohmann::json j;
  j["shape"] = logits.shape();
  j["logits"] = logits.values();
  write_file_atomic(dir / "reference_logits.json", j.dump() + "\n");
  std::printf("wrote reference fixture to %s\n", dir.string().c_str());
  return 0;
}
