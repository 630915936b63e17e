#pragma once

#include <filesystem>

#include "json.hpp"
#include "petseg/layers.hpp"

namespace petseg {

// Binary container: magic, metadata JSON (which embeds the model config),
// FNV-1a hash of the config, then every named parameter with its shape.
// Writes are atomic.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const nn::ParameterList<float>& params);

// Metadata only; validates the magic and the config hash.
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

// Fills `params` by name. Every parameter must be present with an identical
// shape, and the stored config must equal `expected_config` when given.
nlohmann::json load_checkpoint(const std::filesystem::path& path, const nn::ParameterList<float>& params,
                               const nlohmann::json* expected_config = nullptr);

}  // namespace petseg
