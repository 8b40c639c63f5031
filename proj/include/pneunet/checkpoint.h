#ifndef PNEUNET_CHECKPOINT_H_
#define PNEUNET_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <string>

#include "pneunet/model.h"

namespace pneunet {

// On-disk layout, all integers little-endian:
//   "PNEU" | u32 version | u64 header_length | header JSON | f32 blobs
// The header is compact JSON with sorted keys:
//   {"architecture": {"config", "conv_feature_layer", "input_shape", "layers"},
//    "format_version", "metadata",
//    "tensors": [{"name", "shape", "offset", "length", "trainable"}, ...]}
// Blob offsets are relative to the first byte after the header.
inline constexpr char kCheckpointMagic[4] = {'P', 'N', 'E', 'U'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ModelGraph& model);
// Throws CheckpointError (bad magic, version, header, truncated blob).
ModelGraph parse_checkpoint(const std::string& bytes);

// Throws IoError when the file cannot be written or read.
void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_checkpoint(const std::filesystem::path& path);

// ISO-8601 UTC creation stamp. Honors SOURCE_DATE_EPOCH so reproducible
// pipelines produce byte-identical checkpoints.
std::string creation_timestamp();

}  // namespace pneunet

#endif  // PNEUNET_CHECKPOINT_H_
