#pragma once

// Flat little-endian float32 blobs with a JSON sidecar describing each tensor:
//
//   <stem>.bin   concatenated tensors, float32 LE, no header
//   <stem>.json  {"format":"knotforge-f32le","version":1,"dtype":"float32",
//                 "endianness":"little",
//                 "tensors":[{"name":..,"shape":[..],"offset":..,"count":..}], ...}
//
// offset and count are in floats. Extra top-level keys carry metadata.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "knotforge/model.hpp"
#include "knotforge/tensor.hpp"

namespace knotforge::io {

using NamedTensor = std::pair<std::string, Tensor>;

void write_blob(const std::filesystem::path& stem,
                const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                const nlohmann::json& extra = nlohmann::json::object());

struct Blob {
    std::vector<NamedTensor> tensors;
    nlohmann::json sidecar;
};

Blob read_blob(const std::filesystem::path& stem);

nlohmann::json to_json(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_json(const nlohmann::json& j);

/// Writes weights plus the model config so the model can be rebuilt.
void save_weights(const model::ToyDiT& m, const std::filesystem::path& stem);
model::ToyDiT load_weights(const std::filesystem::path& stem);

/// Frames as one [frames x tokens x channels] tensor named "frames".
void write_frames(const std::filesystem::path& stem, const std::vector<Tensor>& frames,
                  const nlohmann::json& extra = nlohmann::json::object());
std::vector<Tensor> read_frames(const std::filesystem::path& stem);

}  // namespace knotforge::io
