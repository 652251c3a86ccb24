#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "tdlm/transformer.hpp"

namespace tdlm {

inline constexpr std::uint8_t kCheckpointVersion = 1;

nlohmann::json to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Checkpoint {
    Model model;
    std::uint64_t step = 0;
    /// Extra tensors stored after the model (e.g. a student's feature projection).
    std::map<std::string, Tensor> extras;
};

/// Layout: "TDLM", version byte, u32 LE header length, JSON header, f32 LE payload.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t step = 0);
/// Throws VersionError on an unknown version and FormatError on a damaged file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter through float, matching what a save/load roundtrip yields.
void round_to_stored_precision(Model& model);

} // namespace tdlm
