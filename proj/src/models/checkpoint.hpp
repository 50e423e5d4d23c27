#pragma once

#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "ad/optim.hpp"
#include "models/pcnn.hpp"
#include "models/pfno.hpp"

namespace flame::models {

nlohmann::json config_to_json(const PfnoConfig& cfg);
nlohmann::json config_to_json(const PcnnConfig& cfg);
PfnoConfig pfno_config_from_json(const nlohmann::json& j);
PcnnConfig pcnn_config_from_json(const nlohmann::json& j);

/// Serializes the live configuration of a model back to JSON.
nlohmann::json model_config_json(Model& model);

/// Fresh instance with the same kind, configuration, and parameter values.
std::unique_ptr<Model> clone_model(Model& model);

/// Instantiates a model of the given kind ("pfno", "pfno_star", "pcnn") with
/// freshly initialized weights.
std::unique_ptr<Model> make_model(const std::string& kind, const nlohmann::json& config,
                                  std::uint64_t seed);

struct CheckpointMeta {
  std::int64_t epoch = 0;
  std::string rng_state;
};

struct AdamSnapshot {
  ad::AdamConfig config;
  std::int64_t step = 0;
  std::vector<AlignedVec<double>> m, v;
};

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  CheckpointMeta meta;
  std::optional<AdamSnapshot> adam;
};

/// Self-describing container: an 8-byte little-endian header length, a JSON
/// header (kind, config, meta, tensor manifest with byte offsets), then the
/// raw 64-bit float buffers. Weights round-trip bit-exactly.
void save_checkpoint(const std::string& path, Model& model, const ad::Adam* opt,
                     const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Rebuilds an optimizer over the model's trainable parameters from a
/// snapshot taken by save_checkpoint.
ad::Adam restore_adam(Model& model, const AdamSnapshot& snap);

}  // namespace flame::models
