#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "pneunet/checkpoint.h"
#include "pneunet/error.h"
#include "pneunet/model.h"

using namespace pneunet;
namespace fs = std::filesystem;

namespace {

ModelGraph sample_model() {
  ModelGraph m = build_model(ModelConfig{}, 7);
  freeze_backbone(m);
  m.metadata()["epoch"] = 3;
  m.metadata()["best_val_loss"] = 0.125;
  return m;
}

CheckpointError::Kind kind_of(const std::string& bytes) {
  try {
    parse_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no CheckpointError";
  return CheckpointError::Kind::kHeader;
}

}  // namespace

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const ModelGraph m = sample_model();
  const std::string a = serialize_checkpoint(m);
  const ModelGraph back = parse_checkpoint(a);
  EXPECT_EQ(back, m);
  EXPECT_EQ(serialize_checkpoint(back), a);
  EXPECT_FALSE(back.trainable("stem.weight"));
  EXPECT_TRUE(back.trainable("head_out.weight"));
  EXPECT_EQ(back.metadata()["epoch"], 3);
}

TEST(Checkpoint, PredictionsSurviveSaveAndLoad) {
  const ModelGraph m = sample_model();
  const fs::path path = fs::temp_directory_path() / "pneunet_test_ckpt.ckpt";
  save_checkpoint(m, path);
  const ModelGraph back = load_checkpoint(path);
  fs::remove(path);
  Rng rng(1);
  std::vector<float> data(3 * 64 * 64);
  for (float& v : data) v = static_cast<float>(rng.uniform());
  const Tensor img(Shape{3, 64, 64}, data);
  EXPECT_EQ(predict(back, img), predict(m, img));
}

TEST(Checkpoint, LayoutStartsWithMagicAndVersion) {
  const std::string bytes = serialize_checkpoint(sample_model());
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), "PNEU");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), kCheckpointVersion);
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= std::uint64_t(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  const auto header = nlohmann::json::parse(bytes.substr(16, header_len));
  EXPECT_TRUE(header.contains("architecture"));
  EXPECT_TRUE(header.contains("tensors"));
  EXPECT_EQ(header.dump(), bytes.substr(16, header_len));
}

TEST(Checkpoint, CorruptionIsClassified) {
  const std::string good = serialize_checkpoint(sample_model());

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of(bad_magic), CheckpointError::Kind::kBadMagic);

  std::string bad_version = good;
  bad_version[4] = 99;
  EXPECT_EQ(kind_of(bad_version), CheckpointError::Kind::kVersion);

  EXPECT_EQ(kind_of(good.substr(0, good.size() - 5)), CheckpointError::Kind::kTruncated);
  EXPECT_EQ(kind_of(good.substr(0, 10)), CheckpointError::Kind::kTruncated);

  std::string bad_header = good;
  bad_header[16] = '#';
  EXPECT_EQ(kind_of(bad_header), CheckpointError::Kind::kHeader);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), IoError);
  EXPECT_THROW(save_checkpoint(sample_model(), "/nonexistent/dir/model.ckpt"), IoError);
}

TEST(Checkpoint, TimestampHonoursSourceDateEpoch) {
  ::setenv("SOURCE_DATE_EPOCH", "86400", 1);
  EXPECT_EQ(creation_timestamp(), "1970-01-02T00:00:00Z");
  ::unsetenv("SOURCE_DATE_EPOCH");
}
