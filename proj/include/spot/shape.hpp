#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace spot {

/// Thrown when tensor extents are inconsistent. The message names the
/// offending axes.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense extents, rank 1..4. Image tensors use NCHW order.
class Shape {
 public:
  Shape() = default;

  Shape(std::initializer_list<int> dims) {
    if (dims.size() < 1 || dims.size() > 4)
      throw ShapeError("shape rank must be 1..4, got " + std::to_string(dims.size()));
    rank_ = static_cast<int>(dims.size());
    int i = 0;
    for (int d : dims) {
      if (d <= 0)
        throw ShapeError("shape axis " + std::to_string(i) + " must be positive, got " +
                         std::to_string(d));
      d_[i++] = d;
    }
  }

  int rank() const { return rank_; }

  int operator[](int axis) const {
    if (axis < 0 || axis >= rank_)
      throw ShapeError("shape axis " + std::to_string(axis) + " out of range for rank " +
                       std::to_string(rank_));
    return d_[axis];
  }

  std::int64_t count() const {
    std::int64_t c = 1;
    for (int i = 0; i < rank_; ++i) c *= d_[i];
    return c;
  }

  // NCHW accessors, valid for rank 4.
  int n() const { return (*this)[0]; }
  int c() const { return (*this)[1]; }
  int h() const { return (*this)[2]; }
  int w() const { return (*this)[3]; }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (d_[i] != o.d_[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s;
    for (int i = 0; i < rank_; ++i) {
      if (i) s += 'x';
      s += std::to_string(d_[i]);
    }
    return s.empty() ? "<empty>" : s;
  }

 private:
  std::array<int, 4> d_{1, 1, 1, 1};
  int rank_ = 0;
};

}  // namespace spot
