#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "causeway/errors.hpp"

namespace causeway::nn {

// 64-byte-aligned storage keeps Eigen's vectorized kernels on the same code
// path every run, which makes training bit-reproducible: unaligned heap
// blocks would otherwise peel loops differently from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <class S>
using AlignedVec = std::vector<S, AlignedAllocator<S>>;

// Dense row-major tensor of rank <= 3. The last dimension is the channel
// axis; most ops view the data as a (numel/cols) x cols matrix.
template <class S>
struct Tensor {
  std::vector<int> shape;
  AlignedVec<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> sh) : shape(std::move(sh)) {
    data.assign(static_cast<size_t>(numel_of(shape)), S(0));
  }

  static int64_t numel_of(const std::vector<int>& sh) {
    int64_t n = 1;
    for (int d : sh) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int cols() const { return shape.empty() ? 1 : shape.back(); }
  int64_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;

  MapM mat() { return MapM(data.data(), rows(), cols()); }
  CMapM mat() const { return CMapM(data.data(), rows(), cols()); }
  MapM mat(int64_t r, int64_t c) { return MapM(data.data(), r, c); }
  CMapM mat(int64_t r, int64_t c) const { return CMapM(data.data(), r, c); }

  // Block of `rows` consecutive rows starting at row `at`, viewed as rows x cols.
  MapM rows_block(int64_t at, int64_t nrows) { return MapM(data.data() + at * cols(), nrows, cols()); }
  CMapM rows_block(int64_t at, int64_t nrows) const {
    return CMapM(data.data() + at * cols(), nrows, cols());
  }

  S& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  S at(int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static Tensor zeros(std::vector<int> sh) { return Tensor(std::move(sh)); }

  static Tensor full(std::vector<int> sh, S v) {
    Tensor t(std::move(sh));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor from_matrix(const Eigen::MatrixXd& m) {
    Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        t.data[static_cast<size_t>(r) * m.cols() + c] = static_cast<S>(m(r, c));
    return t;
  }

  Eigen::MatrixXd to_matrix() const {
    Eigen::MatrixXd m(rows(), cols());
    for (int64_t r = 0; r < rows(); ++r)
      for (int c = 0; c < cols(); ++c) m(r, c) = static_cast<double>(data[static_cast<size_t>(r) * cols() + c]);
    return m;
  }
};

template <class S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  Parameter(std::string n, Tensor<S> v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor<S>(value.shape);
  }
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), S(0)); }
  int64_t numel() const { return value.numel(); }
};

}  // namespace causeway::nn
