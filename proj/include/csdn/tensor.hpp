#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csdn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major array of doubles with an optional gradient slot of the
// same length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-D accessors; rank-1 tensors are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool has_grad() const { return grad_.has_value(); }
  // Allocates a zero gradient on first use.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void drop_grad() { grad_.reset(); }

  // Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

// Row-major boolean matrix, used for attention masks.
struct BoolMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> data;

  BoolMatrix() = default;
  BoolMatrix(std::size_t r, std::size_t c, bool fill)
      : rows(r), cols(c), data(r * c, fill ? 1 : 0) {}

  bool operator()(std::size_t r, std::size_t c) const { return data[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { data[r * cols + c] = v ? 1 : 0; }
  bool operator==(const BoolMatrix&) const = default;
};

}  // namespace csdn
