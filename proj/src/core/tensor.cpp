// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include "bbcq/tensor.hpp"

#include <sstream>
#include <utility>

#include "bbcq/error.hpp"

namespace bbcq {

const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kParameter: return "parameter";
    case ErrorKind::kDegenerateScale: return "degenerate-scale";
    case ErrorKind::kDegenerateRange: return "degenerate-range";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kMagic: return "format-magic";
    case ErrorKind::kVersion: return "format-version";
    case ErrorKind::kLength: return "format-length";
    case ErrorKind::kManifest: return "format-manifest";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw Error(ErrorKind::kDimension, "tensor shape must have at least one axis");
  for (std::size_t d : shape) {
    if (d == 0) {
      throw Error(ErrorKind::kDimension, "tensor shape " + shape_to_string(shape) + " has a zero-sized axis");
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw Error(ErrorKind::kDimension, "tensor of shape " + shape_to_string(shape_) + " given " +
                                           std::to_string(data_.size()) + " values");
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw Error(ErrorKind::kIndex, "axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw Error(ErrorKind::kContract, "item() on tensor of shape " + shape_to_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  check_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    throw Error(ErrorKind::kDimension,
                "cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

}  // namespace bbcq
