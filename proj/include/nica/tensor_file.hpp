#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nica/common.hpp"

namespace nica {

/// Dense row-major float64 tensor with explicit dimensions; the on-disk
/// format is a fixed little-endian layout with a magic header so checkpoints
/// and datasets from other builds are either read exactly or rejected.
struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  std::uint64_t count() const;

  static Tensor from_matrix(const Mat& m);
  static Tensor from_vector(const Vec& v);
  static Tensor from_stack(const std::vector<Mat>& mats);
  Mat to_matrix() const;
  Vec to_vector() const;
  std::vector<Mat> to_stack() const;
};

void write_tensor(const std::string& path, const Tensor& tensor);
Tensor read_tensor(const std::string& path);

}  // namespace nica
