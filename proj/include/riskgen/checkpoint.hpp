#pragma once

#include "riskgen/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace riskgen::checkpoint {

using nlohmann::json;

// A checkpoint is a directory: manifest.json plus one <name>.bin per named
// parameter array (binary32, little-endian, row-major). save() records array
// shapes in the manifest under "arrays" and replaces any existing directory
// atomically (temp dir + rename).

void save(const std::filesystem::path& dir, json manifest,
          const std::vector<std::pair<std::string, const Matrix*>>& arrays);

/// Throws std::runtime_error when the directory or manifest is missing/corrupt.
json load_manifest(const std::filesystem::path& dir);

/// Loads one named array at the shape recorded in the manifest.
Matrix load_array(const std::filesystem::path& dir, const json& manifest,
                  const std::string& name);

}  // namespace riskgen::checkpoint
