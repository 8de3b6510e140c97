// Versioned binary checkpoints.
//
// Layout: magic "AGGCN1", u32 LE config-JSON byte length, the config JSON
// (UTF-8, includes label list and token vocabulary), u64 LE total parameter
// count, then every parameter tensor as raw float64 LE in
// named_parameters() order.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aggcn/model.hpp"

namespace aggcn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[6] = {'A', 'G', 'G', 'C', 'N', '1'};

inline void save_checkpoint(const std::string& path, const AggcnModel& model) {
  nlohmann::ordered_json cfg;
  cfg["n_heads"] = model.config.n_heads;
  cfg["n_blocks"] = model.config.n_blocks;
  cfg["l1"] = model.config.l1;
  cfg["l2"] = model.config.l2;
  cfg["d"] = model.config.d;
  cfg["d_word"] = model.config.d_word;
  cfg["entities"] = model.config.entities;
  cfg["use_attention"] = model.config.use_attention;
  if (model.config.pruning.has_value()) {
    cfg["pruning"] = *model.config.pruning;
  } else {
    cfg["pruning"] = "full";
  }
  cfg["labels"] = model.config.labels;
  cfg["token_vocab"] = model.token_vocab;
  const std::string json = cfg.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw parse_error("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const auto json_len = static_cast<std::uint32_t>(json.size());
  out.write(reinterpret_cast<const char*>(&json_len), sizeof json_len);
  out.write(json.data(), static_cast<std::streamsize>(json.size()));

  const auto params = model.parameters();
  std::uint64_t total = 0;
  for (const Tensor& p : params) total += p.numel();
  out.write(reinterpret_cast<const char*>(&total), sizeof total);
  for (const Tensor& p : params) {
    out.write(reinterpret_cast<const char*>(p.data().data()),
              static_cast<std::streamsize>(p.numel() * sizeof(double)));
  }
  if (!out) throw parse_error("short write to checkpoint: " + path);
}

inline AggcnModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open checkpoint: " + path);

  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw parse_error(path + ": not an AGGCN1 checkpoint");
  }
  std::uint32_t json_len = 0;
  in.read(reinterpret_cast<char*>(&json_len), sizeof json_len);
  std::string json(json_len, '\0');
  in.read(json.data(), json_len);
  if (!in) throw parse_error(path + ": truncated checkpoint header");

  ModelConfig config;
  std::vector<std::string> vocab;
  try {
    const auto cfg = nlohmann::json::parse(json);
    config.n_heads = cfg.at("n_heads").get<int>();
    config.n_blocks = cfg.at("n_blocks").get<int>();
    config.l1 = cfg.at("l1").get<int>();
    config.l2 = cfg.at("l2").get<int>();
    config.d = cfg.at("d").get<int>();
    config.d_word = cfg.at("d_word").get<int>();
    config.entities = cfg.at("entities").get<int>();
    config.use_attention = cfg.at("use_attention").get<bool>();
    const auto& pruning = cfg.at("pruning");
    if (pruning.is_number_integer()) {
      config.pruning = pruning.get<int>();
    }
    config.labels = cfg.at("labels").get<std::vector<std::string>>();
    vocab = cfg.at("token_vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ": bad checkpoint config: " + e.what());
  }

  Rng rng(0);  // values are overwritten below
  AggcnModel model = AggcnModel::init(config, std::move(vocab), rng);

  std::uint64_t total = 0;
  in.read(reinterpret_cast<char*>(&total), sizeof total);
  const auto params = model.parameters();
  std::uint64_t expected = 0;
  for (const Tensor& p : params) expected += p.numel();
  if (!in || total != expected) {
    throw parse_error(path + ": parameter count " + std::to_string(total) +
                      " does not match config (expected " +
                      std::to_string(expected) + ")");
  }
  for (Tensor p : params) {
    in.read(reinterpret_cast<char*>(p.data().data()),
            static_cast<std::streamsize>(p.numel() * sizeof(double)));
  }
  if (!in) throw parse_error(path + ": truncated parameter block");
  return model;
}

}  // namespace aggcn
