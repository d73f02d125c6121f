#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tinydet/model.hpp"
#include "tinydet/synth.hpp"
#include "tinydet/tensor.hpp"

namespace tinydet::io {

// Portable float grid: 16-byte header (magic "TDFG", u32 height, u32 width,
// u32 dtype tag; 1 = float64), then row-major little-endian payload.
void write_float_grid(const std::string& path, const Tensor& grid);
Tensor read_float_grid(const std::string& path);  // returns [1xHxW]

// Checkpoint: magic "TDCP", u32 version, config snapshot JSON, then named
// parameter tensors in store order. Byte-stable for identical params+config.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::string& path, const model::ParamStore& params,
                     const nlohmann::json& config_snapshot);
nlohmann::json load_checkpoint(const std::string& path, model::ParamStore& params);

// Dataset directory: scene_%06d.tfg + scene_%06d.json sidecars + manifest.
void save_dataset(const std::string& dir, const std::vector<synth::Scene>& scenes,
                  const nlohmann::json& manifest);
std::vector<synth::Scene> load_dataset(const std::string& dir);
nlohmann::json load_manifest(const std::string& dir);

void write_text(const std::string& path, const std::string& content);

// CSV with mandatory header, UTF-8, LF line endings.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string format_double(double v);  // shortest round-trip, "inf" sentinel

// Stable content hash (FNV-1a over canonical JSON) for manifests.
std::string json_hash(const nlohmann::json& j);

}  // namespace tinydet::io
