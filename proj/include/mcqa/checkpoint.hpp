#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "mcqa/data.hpp"
#include "mcqa/model.hpp"

namespace mcqa {

inline constexpr const char* kCheckpointFormat = "MCQA-CKPT-1";

struct Checkpoint {
  ModelBundle<float> model;
  std::optional<Vocab> vocab;
};

/// Layout: the format string and a newline, a one-line JSON manifest
/// (encoder config, model options, vocabulary, and name/shape/offset of every
/// tensor), a newline, then raw little-endian float32 data.
std::string serialize_checkpoint(const ModelBundle<float>& model, const Vocab* vocab = nullptr);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelBundle<float>& model, const Vocab* vocab = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mcqa
