#pragma once

#include <filesystem>

#include "diffuasr/module.hpp"
#include "json.hpp"

namespace diffuasr::nn {

// Checkpoint layout (all integers little-endian):
//   8 bytes   magic "DASRCKP1"
//   8 bytes   manifest length L
//   L bytes   JSON manifest: {"config": {...}, "tensors": [{"name", "shape",
//             "dtype" ("f32"|"f64"), "offset", "nbytes"}, ...]}
//   ...       raw arrays; offsets are relative to the first byte after the manifest

/// Writes every parameter in registration order plus `config` into the manifest.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const nlohmann::json& config);

/// Fills `params` by name from `path` and returns the stored config. Shapes
/// must match; dtype is converted when it differs from T.
template <typename T>
nlohmann::json load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params);

/// Manifest only, without reading the arrays.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path);

}  // namespace diffuasr::nn
