#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "oar/nn/tensor.hpp"

namespace oar::nn {

// Single-file parameter container: magic, length-prefixed JSON manifest
// (tensor names, shapes, dtypes, offsets, plus free-form metadata), then the
// little-endian blobs. "f32" is the export dtype; "f64" is used for resumable
// training state where restoring must be bit-exact.
enum class BlobDtype { f32, f64 };

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                     BlobDtype dtype);

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;

  const Tensor& require(const std::string& name) const;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace oar::nn
