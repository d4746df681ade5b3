#ifndef FMK_SERIALIZE_HPP
#define FMK_SERIALIZE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "fmk/nn.hpp"

namespace fmk {

// Model file layout (all integers u32 little-endian, floats IEEE-754 LE):
//   "FMK" + version byte '1'
//   input rank, input dims...
//   num_classes
//   layer count
//   per layer: kind tag (u8), weight dims, raw weight data, raw bias data
//   (ReLU/Flatten carry the tag only)

std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

/// Lowercase hex SHA-256 of arbitrary bytes.
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

/// Fingerprint of a model: SHA-256 over its serialized file bytes.
std::string model_fingerprint(const Model& model);

} // namespace fmk

#endif
