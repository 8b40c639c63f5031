// Regenerates the golden files under tests/data. Run from a clean build with
//   SOURCE_DATE_EPOCH=0 ./build/tools/pneunet_make_fixtures tests/data
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pneunet/checkpoint.h"
#include "pneunet/inference.h"
#include "pneunet/synthetic.h"

using namespace pneunet;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <out-dir>\n", argv[0]);
    return 2;
  }
  const std::filesystem::path out = argv[1];
  std::filesystem::create_directories(out);

  ModelConfig config;
  config.channels = 1;
  config.height = config.width = 32;
  config.base_channels = 4;
  config.head_units = 8;
  ModelGraph model = build_model(config, 42);
  model.metadata()["created_at"] = creation_timestamp();
  model.metadata()["fixture"] = true;
  save_checkpoint(model, out / "fixture.ckpt");

  BlobTaskConfig task;
  task.size = 48;
  Rng rng(7);
  const ImageBuffer sample = make_blob_sample(task, true, rng).image;
  write_image(out / "sample.pgm", sample);

  const InferenceEngine engine(load_checkpoint(out / "fixture.ckpt"));
  nlohmann::json golden = engine.predict(sample, std::nullopt, true).to_json();
  golden.erase("latency_ms");
  const std::string png = base64_decode(golden["heatmap_png"].get<std::string>());
  std::ofstream(out / "expected_overlay.png", std::ios::binary) << png;
  golden.erase("heatmap_png");
  std::ofstream(out / "expected_prediction.json") << golden.dump(2) << '\n';
  std::printf("%s\n", golden.dump().c_str());
  return 0;
}
