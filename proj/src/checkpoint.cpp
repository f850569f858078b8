#include "mcqa/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mcqa/errors.hpp"

namespace mcqa {

namespace {

using nlohmann::json;

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

json options_json(const ModelOptions& o) {
  return {{"scheme", std::string(to_string(o.scheme))},
          {"pooling", std::string(to_string(o.pooling))},
          {"gate", o.gate},
          {"qa_concat", o.qa_concat},
          {"gate_heads", o.gate_heads},
          {"activation", o.activation == ScorerActivation::Tanh ? "tanh" : "identity"}};
}

ModelOptions options_from(const json& j) {
  ModelOptions o;
  o.scheme = parse_scheme(j.at("scheme").get<std::string>());
  o.pooling = parse_pooling(j.at("pooling").get<std::string>());
  o.gate = j.at("gate").get<bool>();
  o.qa_concat = j.at("qa_concat").get<bool>();
  o.gate_heads = j.at("gate_heads").get<std::size_t>();
  const auto act = j.at("activation").get<std::string>();
  if (act != "tanh" && act != "identity") throw ParseError("unknown scorer activation '" + act + "'", 0);
  o.activation = act == "tanh" ? ScorerActivation::Tanh : ScorerActivation::Identity;
  return o;
}

json config_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},             {"max_len", c.max_len}, {"dropout", c.dropout}};
}

EncoderConfig config_from(const json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

}  // namespace

std::string serialize_checkpoint(const ModelBundle<float>& model, const Vocab* vocab) {
  json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["encoder_config"] = config_json(model.encoder.config);
  manifest["options"] = options_json(model.options);
  manifest["trained_steps"] = model.trained_steps;
  if (vocab) {
    const auto tokens = vocab->surface_tokens();
    manifest["vocab"] = std::vector<std::string>(tokens.begin(), tokens.end());
  }
  json tensors = json::array();
  std::string data;
  visit_model(model, [&](const std::string& name, const Matrix<float>& m) {
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", data.size()}});
    for (float v : m.values()) {
      const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(v));
      char buf[4];
      std::memcpy(buf, &bits, 4);
      data.append(buf, 4);
    }
  });
  manifest["tensors"] = std::move(tensors);
  manifest["data_bytes"] = data.size();

  std::string out = kCheckpointFormat;
  out += '\n';
  out += manifest.dump();
  out += '\n';
  out += data;
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const std::string magic = std::string(kCheckpointFormat) + "\n";
  if (bytes.compare(0, magic.size(), magic) != 0) throw ParseError("not an MCQA-CKPT-1 checkpoint", 1);
  const auto manifest_end = bytes.find('\n', magic.size());
  if (manifest_end == std::string::npos) throw ParseError("checkpoint manifest is truncated", 2);

  json manifest;
  try {
    manifest = json::parse(bytes.substr(magic.size(), manifest_end - magic.size()));
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad checkpoint manifest: ") + e.what(), 2);
  }

  Checkpoint ck;
  try {
    if (manifest.at("format").get<std::string>() != kCheckpointFormat) {
      throw ParseError("unsupported checkpoint format", 2);
    }
    const EncoderConfig config = config_from(manifest.at("encoder_config"));
    config.validate();
    const ModelOptions options = options_from(manifest.at("options"));
    ck.model = init_model<float>(options, config, 0);
    ck.model.trained_steps = manifest.at("trained_steps").get<std::uint64_t>();
    if (manifest.contains("vocab")) {
      const auto tokens = manifest.at("vocab").get<std::vector<std::string>>();
      ck.vocab = Vocab::from_tokens(tokens);
    }

    const std::string_view data(bytes.data() + manifest_end + 1, bytes.size() - manifest_end - 1);
    if (data.size() != manifest.at("data_bytes").get<std::size_t>()) {
      throw ParseError("checkpoint data size does not match the manifest", 0);
    }
    const json& tensors = manifest.at("tensors");
    std::size_t index = 0;
    visit_model(ck.model, [&](const std::string& name, Matrix<float>& m) {
      if (index >= tensors.size()) throw ParseError("checkpoint is missing tensor '" + name + "'", 0);
      const json& t = tensors[index++];
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      if (t.at("name").get<std::string>() != name || shape.size() != 2 || shape[0] != m.rows() ||
          shape[1] != m.cols()) {
        throw ParseError("checkpoint tensor '" + t.at("name").get<std::string>() + "' does not match '" + name +
                             "' [" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]",
                         0);
      }
      const auto offset = t.at("offset").get<std::size_t>();
      if (offset > data.size() || data.size() - offset < 4 * m.size()) {
        throw ParseError("checkpoint tensor '" + name + "' runs past the data block", 0);
      }
      for (std::size_t i = 0; i < m.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, data.data() + offset + 4 * i, 4);
        m[i] = std::bit_cast<float>(to_little(bits));
      }
    });
    if (index != tensors.size()) throw ParseError("checkpoint has unexpected extra tensors", 0);
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad checkpoint manifest: ") + e.what(), 2);
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelBundle<float>& model, const Vocab* vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(model, vocab);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace mcqa
