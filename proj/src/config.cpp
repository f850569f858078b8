#include "mcqa/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

#include "mcqa/errors.hpp"

namespace mcqa {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::size_t to_count(std::string_view key, std::string_view value) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + std::string(value) + "'");
  }
  return out;
}

double to_real(std::string_view key, std::string_view value) {
  try {
    std::size_t used = 0;
    const std::string text(value);
    const double out = std::stod(text, &used);
    if (used == text.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(value) + "'");
}

}  // namespace

RunConfig parse_config(std::string_view text, const RunConfig& base) {
  RunConfig config = base;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));

    if (key == "d_model") config.encoder.d_model = to_count(key, value);
    else if (key == "n_layers") config.encoder.n_layers = to_count(key, value);
    else if (key == "n_heads") config.encoder.n_heads = to_count(key, value);
    else if (key == "d_ff") config.encoder.d_ff = to_count(key, value);
    else if (key == "max_len") config.encoder.max_len = to_count(key, value);
    else if (key == "dropout") config.encoder.dropout = to_real(key, value);
    else if (key == "lr_encoder") config.train.lr_encoder = to_real(key, value);
    else if (key == "lr_head") config.train.lr_head = to_real(key, value);
    else if (key == "epochs") config.train.epochs = to_count(key, value);
    else if (key == "batch_size") config.train.batch_size = to_count(key, value);
    else if (key == "memory_budget_bytes") config.memory_budget_bytes = to_count(key, value);
    else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
  }
  if (config.train.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (config.train.lr_encoder < 0.0 || config.train.lr_head < 0.0) throw ConfigError("learning rates must be >= 0");
  return config;
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), base);
}

}  // namespace mcqa
