#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "onering/error.hpp"

namespace onering {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Graph;

/// Dense row-major array of doubles with an optional gradient accumulator.
///
/// Parameters live in Tensors owned by a model. A Graph binds a parameter
/// while it is alive so that backward() can accumulate into `grad`; a tensor
/// can be bound to at most one live graph at a time.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != element_count(shape_)) {
      throw Error(ErrorKind::InvalidShape, "value count " + std::to_string(values_.size()) +
                                               " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw Error(ErrorKind::InvalidShape, "ragged matrix literal");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(v));
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  // Copies carry values and gradient but never a graph binding.
  Tensor(const Tensor& other) : shape_(other.shape_), values_(other.values_), grad_(other.grad_) {}
  Tensor& operator=(const Tensor& other) {
    if (this != &other) {
      shape_ = other.shape_;
      values_ = other.values_;
      grad_ = other.grad_;
    }
    return *this;
  }
  Tensor(Tensor&& other) noexcept
      : shape_(std::move(other.shape_)), values_(std::move(other.values_)), grad_(std::move(other.grad_)) {}
  Tensor& operator=(Tensor&& other) noexcept {
    shape_ = std::move(other.shape_);
    values_ = std::move(other.values_);
    grad_ = std::move(other.grad_);
    return *this;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? (shape_.empty() ? 1 : shape_[0]) : shape_[1]; }
  bool is_scalar() const { return values_.size() == 1; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r) { return std::span<double>(values_).subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * cols(), cols());
  }

  bool has_grad() const { return grad_.has_value(); }
  std::span<const double> grad() const {
    return grad_ ? std::span<const double>(*grad_) : std::span<const double>();
  }
  std::span<double> mutable_grad() {
    if (!grad_) grad_.emplace(values_.size(), 0.0);
    return *grad_;
  }
  void clear_grad() { grad_.reset(); }

  /// Rows selected by index, as a new matrix.
  Tensor gather_rows(std::span<const std::size_t> indices) const {
    Tensor out({indices.size(), cols()});
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto src = row(indices[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  const Graph* bound_graph() const { return bound_graph_; }

 private:
  friend class Graph;

  Shape shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
  const Graph* bound_graph_ = nullptr;
};

}  // namespace onering
