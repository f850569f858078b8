#pragma once

#include <cstddef>
#include <filesystem>
#include <string_view>

#include "mcqa/encoder.hpp"
#include "mcqa/train.hpp"

namespace mcqa {

inline constexpr std::size_t kDefaultMemoryBudget = std::size_t{64} << 20;

struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
  std::size_t memory_budget_bytes = kDefaultMemoryBudget;
};

/// Flat `key = value` text; `#` starts a comment. Recognised keys:
/// d_model, n_layers, n_heads, d_ff, max_len, dropout, lr_encoder, lr_head,
/// epochs, batch_size, memory_budget_bytes. Keys not present keep the values
/// already in `base`. Throws ConfigError on unknown keys or bad values.
RunConfig parse_config(std::string_view text, const RunConfig& base = {});
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = {});

}  // namespace mcqa
