#pragma once

// Single-file tensor container shared by model artifacts and backbones:
//
//   <magic> <version>\n
//   <header byte length>\n
//   <header JSON>\n
//   float32 little-endian data, tensors back to back in header order
//
// The header carries a "tensors" list and a "weights_digest" that is checked
// against the data on read.

#include <string>
#include <string_view>

#include "json.hpp"
#include "normprior/nn/tensor.hpp"

namespace normprior::modelzoo {

struct Container {
  nlohmann::ordered_json header;  // without "tensors" and "weights_digest"
  nn::ParameterStore params;
  std::string digest;
};

void write_container(const std::string& path, std::string_view magic, int version,
                     nlohmann::ordered_json header, const nn::ParameterStore& params);

// ValidationError when the file cannot be opened; CorruptModelError for a
// wrong magic or version, truncation, trailing bytes, or digest mismatch.
Container read_container(const std::string& path, std::string_view magic, int version);

}  // namespace normprior::modelzoo
