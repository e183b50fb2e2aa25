#pragma once

// Dense and binary tensors plus the small set of kernels the rest of the
// library is built on.
//
// Tensors are row-major with rank <= 3. Kernels that reduce over an axis
// always accumulate in ascending index order so results are reproducible
// bit for bit; this holds for the blocked kernels too, because blocking
// only reorders independent output elements.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "spikegraphormer/errors.hpp"
#include "spikegraphormer/memory.hpp"

namespace sgf {

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) {
    if (dims.size() > 3) throw DimensionError("tensor rank is limited to 3");
    for (std::size_t d : dims) dims_[rank_++] = d;
  }

  static Shape matrix(std::size_t rows, std::size_t cols) { return {rows, cols}; }
  static Shape cube(std::size_t t, std::size_t n, std::size_t d) { return {t, n, d}; }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  /// Extent of the innermost (channel) axis.
  std::size_t cols() const { return rank_ == 0 ? 1 : dims_[rank_ - 1]; }

  /// Product of all leading extents: the row count of the matrix view.
  std::size_t rows() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i + 1 < rank_; ++i) n *= dims_[i];
    return n;
  }

  /// Same leading extents with a different channel extent.
  Shape with_cols(std::size_t c) const {
    Shape s = *this;
    if (s.rank_ == 0) throw DimensionError("scalar shape has no channel axis");
    s.dims_[s.rank_ - 1] = c;
    return s;
  }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (std::size_t i = 0; i < rank_; ++i)
      if (dims_[i] != o.dims_[i]) return false;
    return true;
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "x" : "") << dims_[i];
    os << ']';
    return os.str();
  }

 private:
  std::array<std::size_t, 3> dims_{};
  std::size_t rank_ = 0;
};

template <typename Real>
class BasicTensor {
 public:
  using value_type = Real;
  using Storage = std::vector<Real, CountingAllocator<Real>>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, Real fill = Real(0)) : shape_(shape), data_(shape.numel(), fill) {}

  BasicTensor(Shape shape, std::initializer_list<Real> values) : shape_(shape), data_(values) {
    if (data_.size() != shape_.numel())
      throw DimensionError("value count does not match shape " + shape_.str());
  }

  static BasicTensor from(Shape shape, std::span<const Real> values) {
    if (values.size() != shape.numel())
      throw DimensionError("value count does not match shape " + shape.str());
    BasicTensor t;
    t.shape_ = shape;
    t.data_.assign(values.begin(), values.end());
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.rows(); }
  std::size_t cols() const { return shape_.cols(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return {data_.data(), data_.size()}; }
  std::span<const Real> values() const { return {data_.data(), data_.size()}; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  Real& operator()(std::size_t t, std::size_t n, std::size_t d) {
    return data_[(t * shape_[1] + n) * shape_[2] + d];
  }
  Real operator()(std::size_t t, std::size_t n, std::size_t d) const {
    return data_[(t * shape_[1] + n) * shape_[2] + d];
  }

  /// Reinterprets the payload under a new shape with the same element count.
  BasicTensor reshaped(Shape s) && {
    if (s.numel() != shape_.numel())
      throw DimensionError("cannot reshape " + shape_.str() + " to " + s.str());
    shape_ = s;
    return std::move(*this);
  }
  BasicTensor reshaped(Shape s) const& { return BasicTensor(*this).reshaped(s); }

  template <typename Other>
  BasicTensor<Other> cast() const {
    BasicTensor<Other> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
    return out;
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const BasicTensor& o) const {
    return shape_ == o.shape_ && std::equal(data_.begin(), data_.end(), o.data_.begin());
  }

 private:
  Shape shape_;
  Storage data_;
};

using Tensor = BasicTensor<float>;

template <typename Real>
bool all_finite(const BasicTensor<Real>& t) {
  for (Real v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename Real>
void check_finite(const BasicTensor<Real>& t, const char* where) {
  if (!all_finite(t)) throw NumericError(std::string("non-finite value produced by ") + where);
}

/// Binary tensor packed 64 spikes per word along the channel axis.
/// Padding bits past the channel extent are always zero.
class SpikeTensor {
 public:
  using Word = std::uint64_t;
  using Storage = std::vector<Word, CountingAllocator<Word>>;
  static constexpr std::size_t kWordBits = 64;

  SpikeTensor() = default;
  explicit SpikeTensor(Shape shape)
      : shape_(shape), words_per_row_((shape.cols() + kWordBits - 1) / kWordBits),
        bits_(shape.rows() * words_per_row_, Word(0)) {}

  const Shape& shape() const { return shape_; }
  std::size_t rows() const { return shape_.rows(); }
  std::size_t cols() const { return shape_.cols(); }
  std::size_t words_per_row() const { return words_per_row_; }
  bool empty() const { return shape_.numel() == 0; }

  const Word* row_words(std::size_t r) const { return bits_.data() + r * words_per_row_; }
  Word* row_words(std::size_t r) { return bits_.data() + r * words_per_row_; }

  bool get(std::size_t r, std::size_t c) const {
    return (row_words(r)[c / kWordBits] >> (c % kWordBits)) & 1u;
  }
  void set(std::size_t r, std::size_t c, bool on) {
    Word& w = row_words(r)[c / kWordBits];
    const Word bit = Word(1) << (c % kWordBits);
    w = on ? (w | bit) : (w & ~bit);
  }

  std::size_t count_ones() const {
    std::size_t n = 0;
    for (Word w : bits_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  double density() const {
    const std::size_t n = shape_.numel();
    return n == 0 ? 0.0 : static_cast<double>(count_ones()) / static_cast<double>(n);
  }

  /// Packs a 0/1 tensor; any other value is rejected.
  template <typename Real>
  static SpikeTensor pack(const BasicTensor<Real>& dense) {
    SpikeTensor s(dense.shape());
    const std::size_t rows = s.rows(), cols = s.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const Real v = dense(r, c);
        if (v == Real(1))
          s.set(r, c, true);
        else if (v != Real(0))
          throw NumericError("spike tensor values must be exactly 0 or 1");
      }
    }
    return s;
  }

  template <typename Real = float>
  BasicTensor<Real> unpack() const {
    BasicTensor<Real> out(shape_);
    const std::size_t rows = this->rows(), cols = this->cols();
    for (std::size_t r = 0; r < rows; ++r) {
      const Word* w = row_words(r);
      for (std::size_t k = 0; k < words_per_row_; ++k) {
        Word bits = w[k];
        while (bits) {
          const std::size_t c = k * kWordBits + static_cast<std::size_t>(std::countr_zero(bits));
          out(r, c) = Real(1);
          bits &= bits - 1;
        }
      }
      (void)cols;
    }
    return out;
  }

  bool operator==(const SpikeTensor& o) const { return shape_ == o.shape_ && bits_ == o.bits_; }

 private:
  Shape shape_;
  std::size_t words_per_row_ = 0;
  Storage bits_;
};

/// Calls fn(col) for each set bit of row `r`, in ascending column order.
template <typename Fn>
inline void for_each_spike(const SpikeTensor& s, std::size_t r, Fn&& fn) {
  const SpikeTensor::Word* w = s.row_words(r);
  for (std::size_t k = 0; k < s.words_per_row(); ++k) {
    SpikeTensor::Word bits = w[k];
    while (bits) {
      fn(k * SpikeTensor::kWordBits + static_cast<std::size_t>(std::countr_zero(bits)));
      bits &= bits - 1;
    }
  }
}

namespace detail {

// out[M x P] += a[M x K] * b[K x P], all row-major with explicit leading
// dimensions. Each output element accumulates k = 0..K-1 in order.
template <typename Real>
void gemm_accumulate(std::size_t m, std::size_t k, std::size_t p, const Real* a, std::size_t lda,
                     const Real* b, std::size_t ldb, Real* out, std::size_t ldo) {
  constexpr std::size_t kBlockI = 32, kBlockK = 128, kBlockJ = 512;
  for (std::size_t kb = 0; kb < k; kb += kBlockK) {
    const std::size_t ke = std::min(k, kb + kBlockK);
    for (std::size_t ib = 0; ib < m; ib += kBlockI) {
      const std::size_t ie = std::min(m, ib + kBlockI);
      for (std::size_t jb = 0; jb < p; jb += kBlockJ) {
        const std::size_t je = std::min(p, jb + kBlockJ);
        for (std::size_t i = ib; i < ie; ++i) {
          Real* __restrict o = out + i * ldo;
          const Real* ai = a + i * lda;
          for (std::size_t kk = kb; kk < ke; ++kk) {
            const Real av = ai[kk];
            const Real* __restrict bk = b + kk * ldb;
            for (std::size_t j = jb; j < je; ++j) o[j] += av * bk[j];
          }
        }
      }
    }
  }
}

template <typename Real>
BasicTensor<Real> transpose2d(const BasicTensor<Real>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  BasicTensor<Real> t(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace detail

/// Matrix product. `a` is taken in its matrix view (all leading axes are
/// rows), so a [T x N x K] input yields [T x N x P].
template <typename Real>
BasicTensor<Real> matmul(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  if (b.shape().rank() != 2 || a.shape().rank() == 0)
    throw DimensionError("matmul expects a matrix right operand");
  if (a.cols() != b.shape()[0])
    throw DimensionError("matmul inner extents differ: " + a.shape().str() + " x " + b.shape().str());
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  BasicTensor<Real> out(a.shape().with_cols(p));
  detail::gemm_accumulate(m, k, p, a.data(), k, b.data(), p, out.data(), p);
  count_muls(m * k * p);
  count_adds(m * k * p);
  check_finite(out, "matmul");
  return out;
}

/// a^T b for matrix views a [R x M], b [R x P] -> [M x P].
template <typename Real>
BasicTensor<Real> matmul_tn(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn row extents differ");
  const std::size_t r = a.rows(), m = a.cols(), p = b.cols();
  BasicTensor<Real> out(Shape{m, p});
  // out[i,:] += a[row,i] * b[row,:], rows in ascending order.
  for (std::size_t row = 0; row < r; ++row) {
    const Real* ar = a.data() + row * m;
    const Real* __restrict br = b.data() + row * p;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = ar[i];
      Real* __restrict o = out.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) o[j] += av * br[j];
    }
  }
  count_muls(r * m * p);
  count_adds(r * m * p);
  check_finite(out, "matmul_tn");
  return out;
}

/// a b^T for matrix views a [M x K], b [P x K] -> a.shape with P columns.
template <typename Real>
BasicTensor<Real> matmul_nt(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt inner extents differ");
  const BasicTensor<Real> bt = detail::transpose2d(b.reshaped(Shape{b.rows(), b.cols()}));
  const std::size_t m = a.rows(), k = a.cols(), p = b.rows();
  BasicTensor<Real> out(a.shape().with_cols(p));
  detail::gemm_accumulate(m, k, p, a.data(), k, bt.data(), p, out.data(), p);
  count_muls(m * k * p);
  count_adds(m * k * p);
  check_finite(out, "matmul_nt");
  return out;
}

/// Spike-input linear map: each output row is the sum of the weight rows
/// selected by set bits (ascending), then the bias. Gather-and-add only;
/// numerically identical to matmul(unpack(s), weight) + bias.
template <typename Real>
BasicTensor<Real> spike_linear(const SpikeTensor& s, const BasicTensor<Real>& weight,
                               const BasicTensor<Real>* bias = nullptr) {
  if (weight.shape().rank() != 2 || s.cols() != weight.shape()[0])
    throw DimensionError("spike_linear: input channels " + std::to_string(s.cols()) +
                         " do not match weight " + weight.shape().str());
  const std::size_t out_dim = weight.cols();
  if (bias && bias->size() != out_dim) throw DimensionError("spike_linear: bias extent");
  BasicTensor<Real> out(s.shape().with_cols(out_dim));
  std::uint64_t adds = 0;
  for (std::size_t r = 0; r < s.rows(); ++r) {
    Real* __restrict o = out.data() + r * out_dim;
    for_each_spike(s, r, [&](std::size_t c) {
      const Real* __restrict w = weight.data() + c * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) o[j] += w[j];
      adds += out_dim;
    });
    if (bias) {
      const Real* b = bias->data();
      for (std::size_t j = 0; j < out_dim; ++j) o[j] += b[j];
      adds += out_dim;
    }
  }
  count_adds(adds);
  check_finite(out, "spike_linear");
  return out;
}

namespace detail {
inline void require_time_major(const Shape& s, const char* op) {
  if (s.rank() != 3) throw DimensionError(std::string(op) + " expects a [T x N x D] tensor, got " + s.str());
}
}  // namespace detail

/// Per time step, sums over the node axis: [T x N x D] -> [T x 1 x D].
template <typename Real>
BasicTensor<Real> colwise_sum(const BasicTensor<Real>& x) {
  detail::require_time_major(x.shape(), "colwise_sum");
  const std::size_t t_steps = x.shape()[0], n = x.shape()[1], d = x.shape()[2];
  BasicTensor<Real> out(Shape{t_steps, 1, d});
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) out(t, 0, c) += x(t, i, c);
  count_adds(t_steps * n * d);
  return out;
}

/// Spike column counts: pure counting, one addition per set bit.
template <typename Real = float>
BasicTensor<Real> colwise_sum(const SpikeTensor& s) {
  detail::require_time_major(s.shape(), "colwise_sum");
  const std::size_t t_steps = s.shape()[0], n = s.shape()[1], d = s.shape()[2];
  std::vector<std::uint64_t> counts(t_steps * d, 0);
  std::uint64_t adds = 0;
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for_each_spike(s, t * n + i, [&](std::size_t c) {
        ++counts[t * d + c];
        ++adds;
      });
  count_adds(adds);
  BasicTensor<Real> out(Shape{t_steps, 1, d});
  for (std::size_t i = 0; i < counts.size(); ++i) out[i] = static_cast<Real>(counts[i]);
  return out;
}

enum class ElementOp { add, mul };

namespace detail {
// Node-axis broadcasting: b may carry extent 1 on the node axis
// ([1 x D] against [N x D], [T x 1 x D] against [T x N x D]).
inline bool broadcast_compatible(const Shape& a, const Shape& b) {
  if (a == b) return true;
  if (a.rank() != b.rank() || a.rank() < 2) return false;
  const std::size_t node_axis = a.rank() - 2;
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != node_axis && a[i] != b[i]) return false;
  return b[node_axis] == 1;
}

// Index in b for flat row r of a under node-axis broadcasting.
inline std::size_t broadcast_row(const Shape& a, const Shape& b, std::size_t r) {
  if (a == b) return r;
  const std::size_t n = a[a.rank() - 2];
  return r / n;
}
}  // namespace detail

template <typename Real>
BasicTensor<Real> elementwise(const BasicTensor<Real>& a, const BasicTensor<Real>& b, ElementOp op) {
  if (!detail::broadcast_compatible(a.shape(), b.shape()))
    throw DimensionError("elementwise: incompatible shapes " + a.shape().str() + " and " + b.shape().str());
  BasicTensor<Real> out(a.shape());
  const std::size_t d = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const Real* x = a.data() + r * d;
    const Real* y = b.data() + detail::broadcast_row(a.shape(), b.shape(), r) * d;
    Real* o = out.data() + r * d;
    if (op == ElementOp::add)
      for (std::size_t j = 0; j < d; ++j) o[j] = x[j] + y[j];
    else
      for (std::size_t j = 0; j < d; ++j) o[j] = x[j] * y[j];
  }
  check_finite(out, "elementwise");
  return out;
}

template <typename Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  return elementwise(a, b, ElementOp::add);
}

/// Keeps entries of `x` where the (node-broadcast) spike is 1, zero
/// elsewhere. Implemented as a select.
template <typename Real>
BasicTensor<Real> mask(const BasicTensor<Real>& x, const SpikeTensor& m) {
  if (!detail::broadcast_compatible(x.shape(), m.shape()))
    throw DimensionError("mask: incompatible shapes " + x.shape().str() + " and " + m.shape().str());
  BasicTensor<Real> out(x.shape());
  const std::size_t d = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::size_t mr = detail::broadcast_row(x.shape(), m.shape(), r);
    for_each_spike(m, mr, [&](std::size_t c) { out(r, c) = x(r, c); });
  }
  (void)d;
  return out;
}

}  // namespace sgf
