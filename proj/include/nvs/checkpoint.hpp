#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nvs/model.hpp"
#include "nvs/tensor.hpp"

namespace nvs {

// On-disk layout: a text header (format line, dtype, ordered meta key-value
// pairs, tensor manifest with shapes and byte offsets) followed by raw
// little-endian scalar payloads in manifest order. Roundtrips are bit-exact
// for matching dtype.
template <typename S>
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor<S>>> tensors;

  const std::string* find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return &v;
    return nullptr;
  }
  const Tensor<S>* find_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

template <typename S>
void write_checkpoint(const std::string& path, const Checkpoint<S>& ckpt);

// Accepts f32 or f64 payloads and converts to S.
template <typename S>
Checkpoint<S> read_checkpoint(const std::string& path);

// Weight tensors in canonical parameter order.
template <typename S>
void append_weight_tensors(Checkpoint<S>& ckpt, ModelWeights<S>& weights);

// Rebuilds weights for `config` from checkpoint tensors (matched by name);
// missing tensors or shape mismatches raise ParseError.
template <typename S>
ModelWeights<S> weights_from_checkpoint(const Checkpoint<S>& ckpt, const ModelConfig& config);

}  // namespace nvs
