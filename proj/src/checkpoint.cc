#include "pneunet/checkpoint.h"

#include <bit>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

#include "pneunet/error.h"

namespace pneunet {

namespace {

using nlohmann::json;

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(const std::string& in, std::size_t pos) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return value;
}

json layer_to_json(const LayerSpec& layer) {
  return {{"kind", to_string(layer.kind)}, {"name", layer.name}, {"hyper", layer.hyper}};
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l{layer_kind_from_string(j.at("kind").get<std::string>()),
              j.at("name").get<std::string>(),
              j.at("hyper").get<std::map<std::string, double>>()};
  return l;
}

CheckpointError header_error(const std::string& what) {
  return CheckpointError(CheckpointError::Kind::kHeader, "checkpoint header: " + what);
}

}  // namespace

std::string serialize_checkpoint(const ModelGraph& model) {
  json layers = json::array();
  for (const LayerSpec& l : model.layers()) layers.push_back(layer_to_json(l));
  const Shape in = model.input_shape();

  json tensors = json::array();
  std::string blobs;
  for (const auto& [name, t] : model.parameters()) {
    const std::size_t offset = blobs.size();
    for (float v : t.data()) put_le(blobs, std::bit_cast<std::uint32_t>(v));
    tensors.push_back({{"name", name},
                       {"shape", t.shape().dims()},
                       {"offset", offset},
                       {"length", blobs.size() - offset},
                       {"trainable", model.trainable(name)}});
  }
  json header = {{"format_version", kCheckpointVersion},
                 {"architecture",
                  {{"config", model.config().to_json()},
                   {"input_shape", {in[0], in[1], in[2]}},
                   {"conv_feature_layer", model.conv_feature_layer()},
                   {"layers", std::move(layers)}}},
                 {"tensors", std::move(tensors)},
                 {"metadata", model.metadata()}};
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += blobs;
  return out;
}

ModelGraph parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Kind::kBadMagic, "checkpoint: bad magic");
  }
  if (bytes.size() < 16) {
    throw CheckpointError(CheckpointError::Kind::kTruncated, "checkpoint: truncated preamble");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::kVersion,
                          "checkpoint: unsupported format version " + std::to_string(version) +
                              " (this build reads version " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) {
    throw CheckpointError(CheckpointError::Kind::kTruncated, "checkpoint: truncated header");
  }
  const std::size_t blob_start = 16 + header_len;

  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + blob_start);
  } catch (const json::exception& e) {
    throw header_error(e.what());
  }

  try {
    if (header.at("format_version").get<std::uint32_t>() != version) {
      throw header_error("format_version disagrees with the preamble");
    }
    const json& arch = header.at("architecture");
    ModelConfig config = ModelConfig::from_json(arch.at("config"));
    std::vector<LayerSpec> layers;
    for (const json& l : arch.at("layers")) layers.push_back(layer_from_json(l));

    std::map<std::string, Tensor> params;
    std::map<std::string, bool> trainable;
    std::size_t expected_end = 0;
    for (const json& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const Shape shape(t.at("shape").get<std::vector<std::size_t>>());
      const auto offset = t.at("offset").get<std::size_t>();
      const auto length = t.at("length").get<std::size_t>();
      if (length != shape.numel() * sizeof(float)) {
        throw header_error("tensor '" + name + "' length does not match its shape");
      }
      if (offset > bytes.size() - blob_start || length > bytes.size() - blob_start - offset) {
        throw CheckpointError(CheckpointError::Kind::kTruncated,
                              "checkpoint: truncated tensor blob '" + name + "'");
      }
      std::vector<float> values(shape.numel());
      for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, blob_start + offset + 4 * i));
      }
      params[name] = Tensor(shape, std::move(values));
      trainable[name] = t.value("trainable", true);
      expected_end = std::max(expected_end, offset + length);
    }
    if (blob_start + expected_end != bytes.size()) {
      throw header_error("trailing bytes after the last tensor");
    }

    ModelGraph model(std::move(config), std::move(layers),
                     arch.at("conv_feature_layer").get<std::string>(), std::move(params));
    for (const auto& [name, t] : trainable) model.set_trainable(name, t);
    model.metadata() = header.at("metadata");
    return model;
  } catch (const json::exception& e) {
    throw header_error(e.what());
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw header_error(e.what());
  }
}

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ModelGraph load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

std::string creation_timestamp() {
  std::time_t t;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde && *sde) {
    t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace pneunet
