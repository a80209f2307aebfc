#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "csvs/acoustic_model.hpp"
#include "csvs/score.hpp"
#include "csvs/tensor.hpp"
#include "csvs/trajectory.hpp"

namespace csvs {

enum class ModelKind { proposed, baseline };

// Everything needed to synthesize from a trained model.
//
// For the proposed model `sigma` is the tied covariance learned in normalized
// feature space. For the baseline it holds the fixed o-space variances used
// by parameter generation, and `o_stats` the o-space normalization.
struct ModelCheckpoint {
  static constexpr std::uint8_t kFormatVersion = 1;

  ModelKind kind = ModelKind::proposed;
  ModelConfig model;
  FeatureConfig features;
  AcousticLayout layout;
  double frame_shift = 0.005;
  NormStats norm;
  ParamStore params;
  TiedCovariance sigma;
  std::string rng_state;
  DimStats o_stats;
};

// JSON forms of the configs. Readers start from the defaults, override the
// keys present and reject unknown keys with ConfigError.
nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
nlohmann::json feature_config_to_json(const FeatureConfig& cfg);
FeatureConfig feature_config_from_json(const nlohmann::json& j, FeatureConfig base = {});

bool same_parameters(const ParamStore& a, const ParamStore& b);

// "CSVS", version byte, u32 section count, then per section: u32 name
// length, name, u64 payload length, payload. Little-endian throughout.
std::vector<std::uint8_t> serialize_checkpoint(const ModelCheckpoint& ckpt);
// Throws CheckpointError.
ModelCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace csvs
