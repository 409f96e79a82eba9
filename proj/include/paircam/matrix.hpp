#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace paircam {

// Dense square matrix, row-major.
class SquareMatrix {
public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), a_(n * n, fill) {}

  [[nodiscard]] std::size_t size() const { return n_; }

  double& operator()(std::size_t i, std::size_t j) { return a_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }

  [[nodiscard]] std::vector<double>& data() { return a_; }
  [[nodiscard]] const std::vector<double>& data() const { return a_; }

  [[nodiscard]] double sum() const {
    double s = 0.0;
    for (double v : a_) s += v;
    return s;
  }

  void check_same_size(const SquareMatrix& other) const {
    if (n_ != other.n_) throw std::invalid_argument("matrix size mismatch");
  }

private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

} // namespace paircam
