#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace stoodx {

/// Dense row-major matrix.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c) {}
  Matrix(std::size_t r, std::size_t c, std::vector<T> values)
      : rows(r), cols(c), data(std::move(values)) {}

  std::span<T> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const T> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

namespace npy {

// NPY v1.0, little-endian, C order, 2-D. float64 input is narrowed to float32
// and a warning is emitted.
Matrix<float> load_f32(const std::filesystem::path& path);
void save_f32(const std::filesystem::path& path, const Matrix<float>& m);

}  // namespace npy
}  // namespace stoodx
