// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bbcq/tensor.hpp"
#include "bbcq/vit.hpp"

// Binary tensor container shared by model and dataset files:
//
//   "BBCVIT01" | u64 LE manifest length | JSON manifest | LE payloads
//
// The manifest lists {name, shape, dtype, offset, nbytes} per tensor, with
// offsets relative to the first payload byte.
namespace bbcq {

inline constexpr std::string_view kContainerMagic = "BBCVIT01";

enum class DType { kF64, kI64 };

struct ContainerTensor {
  std::string name;
  Shape shape;
  DType dtype = DType::kF64;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;
};

struct Container {
  std::string kind;  // "model" or "dataset"
  ModelSpec spec;
  std::vector<ContainerTensor> tensors;
};

std::string write_container(const Container& c);
/// Throws kMagic, kVersion, kLength or kManifest on malformed input.
Container read_container(std::string_view bytes);

/// A labeled batch: inputs [B x N x D], labels [B].
struct Dataset {
  ModelSpec spec;
  Tensor inputs;
  std::vector<std::int64_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

std::string serialize_dataset(const Dataset& data);
Dataset deserialize_dataset(std::string_view bytes);

/// Throws kDimension unless the data matches the model's patch count and width.
void check_dataset(const Dataset& data, const ModelSpec& spec);

/// Gaussian patches labeled by a hidden linear rule over the token mean.
/// `stream` separates splits drawn from the same seed; the rule depends only
/// on `seed`.
Dataset generate_dataset(const ModelSpec& spec, std::size_t count, std::uint64_t seed, std::uint64_t stream);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace bbcq
