#ifndef BFS_TENSOR_HPP
#define BFS_TENSOR_HPP

#include <cstddef>
#include <vector>

namespace bfs::nn {

// Extents of a rank-4 tensor: frequency, time (fiber position), channel,
// batch. Weight tensors reuse the same axes as
// (kernel_freq, kernel_time, c_in, c_out).
struct Shape {
  std::size_t f = 1;
  std::size_t t = 1;
  std::size_t c = 1;
  std::size_t b = 1;

  std::size_t count() const { return f * t * c * b; }
  bool operator==(const Shape&) const = default;
};

// Dense 64-bit tensor. Canonical element order (the serialization order):
// batch slowest, then channel, then time, frequency fastest, i.e.
// index(f,t,c,b) = ((b*C + c)*T + t)*F + f.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s) : shape_(s), data_(s.count(), 0.0) {}

  static Tensor zeros(Shape s) { return Tensor(s); }

  const Shape& shape() const { return shape_; }
  std::size_t count() const { return data_.size(); }

  double& operator()(std::size_t f, std::size_t t, std::size_t c, std::size_t b) {
    return data_[((b * shape_.c + c) * shape_.t + t) * shape_.f + f];
  }
  double operator()(std::size_t f, std::size_t t, std::size_t c, std::size_t b) const {
    return data_[((b * shape_.c + c) * shape_.t + t) * shape_.f + f];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double* slab(std::size_t c, std::size_t b) {
    return data_.data() + (b * shape_.c + c) * shape_.t * shape_.f;
  }
  const double* slab(std::size_t c, std::size_t b) const {
    return data_.data() + (b * shape_.c + c) * shape_.t * shape_.f;
  }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace bfs::nn

#endif
