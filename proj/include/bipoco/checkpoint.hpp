#pragma once

// Checkpoint container:
//   "BIPOCO1\n"                      8-byte magic
//   uint64 little-endian             length of the JSON header
//   JSON header                      {config, step, seed, train, tensors: [{name, rows, cols, offset}]}
//   float64 little-endian payload    tensors in column-major order
// Weights are written bit-exactly, so save/load is lossless.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bipoco/predictor.hpp"

namespace bipoco {

inline constexpr char kCheckpointMagic[8] = {'B', 'I', 'P', 'O', 'C', 'O', '1', '\n'};

inline nlohmann::json to_json(const PredictorConfig& c) {
  return {{"feature_dim", c.feature_dim},       {"encoder_hidden", c.encoder_hidden},
          {"latent_dim", c.latent_dim},         {"decoder_hidden", c.decoder_hidden},
          {"decoder_input", c.decoder_input},   {"goal_mlp_layers", c.goal_mlp_layers},
          {"tau", c.tau},                       {"delta", c.delta},
          {"k_samples", c.k_samples},           {"latent_mode", to_string(c.latent_mode)}};
}

inline PredictorConfig predictor_config_from_json(const nlohmann::json& j) {
  PredictorConfig c;
  try {
    c.feature_dim = j.at("feature_dim").get<int>();
    c.encoder_hidden = j.at("encoder_hidden").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.decoder_hidden = j.at("decoder_hidden").get<int>();
    c.decoder_input = j.at("decoder_input").get<int>();
    c.goal_mlp_layers = j.at("goal_mlp_layers").get<int>();
    c.tau = j.at("tau").get<int>();
    c.delta = j.at("delta").get<int>();
    c.k_samples = j.at("k_samples").get<int>();
    c.latent_mode = parse_latent_mode(j.at("latent_mode").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what());
  }
  c.validate();
  return c;
}

struct Checkpoint {
  Predictor model;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  /// Free-form training settings recorded for provenance.
  nlohmann::json train = nlohmann::json::object();
};

namespace detail {
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
}

inline void save_checkpoint(std::ostream& out, const Predictor& model, std::int64_t step,
                            std::uint64_t seed, const nlohmann::json& train = nlohmann::json::object()) {
  nlohmann::json header;
  header["format"] = "BIPOCO1";
  header["config"] = to_json(model.config());
  header["step"] = step;
  header["seed"] = seed;
  header["train"] = train;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : model.parameters().all()) {
    header["tensors"].push_back(
        {{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(p.value.size());
  }
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.parameters().all()) {
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size())));
  }
  if (!out) throw DataError("failed writing checkpoint");
}

inline void save_checkpoint(const std::string& path, const Predictor& model, std::int64_t step,
                            std::uint64_t seed, const nlohmann::json& train = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  save_checkpoint(out, model, step, seed, train);
}

inline Checkpoint load_checkpoint(std::istream& in, const std::string& source = "<checkpoint>") {
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw ParseError(source + ": not a BIPOCO1 checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ull << 30)) throw ParseError(source + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError(source + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
  Checkpoint ck{Predictor(predictor_config_from_json(header.at("config")))};
  ck.step = header.value("step", std::int64_t{0});
  ck.seed = header.value("seed", std::uint64_t{0});
  ck.train = header.value("train", nlohmann::json::object());
  auto& store = ck.model.parameters();
  std::vector<double> payload;
  std::uint64_t total = 0;
  for (const auto& t : header.at("tensors")) total += t.at("rows").get<std::uint64_t>() * t.at("cols").get<std::uint64_t>();
  payload.resize(total);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total * sizeof(double)));
  if (!in) throw ParseError(source + ": truncated tensor payload");
  std::size_t seen = 0;
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    if (!store.contains(name)) throw ParseError(source + ": unknown tensor " + name);
    auto& p = store.at(name);
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw ParseError(source + ": tensor " + name + " has unexpected shape");
    }
    const auto offset = t.at("offset").get<std::size_t>();
    std::memcpy(p.value.data(), payload.data() + offset, sizeof(double) * static_cast<std::size_t>(p.value.size()));
    ++seen;
  }
  if (seen != store.size()) throw ParseError(source + ": checkpoint is missing tensors");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return load_checkpoint(in, path);
}

}  // namespace bipoco
