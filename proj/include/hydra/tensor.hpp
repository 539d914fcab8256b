#pragma once

// Dense row-major tensors and the handful of operations the attention code is
// built from. Rank-2 tensors are laid out tokens x features throughout.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hydra/errors.hpp"

namespace hydra {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <std::floating_point Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Scalar fill = Scalar{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    validate_shape();
  }

  BasicTensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor: " + std::to_string(data_.size()) + " values do not fill shape " +
                           shape_str(shape_));
    }
  }

  // Nested initializer for matrices: BasicTensor::matrix({{1, 2}, {3, 4}}).
  static BasicTensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<Scalar> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("matrix: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return BasicTensor({r, c}, std::move(data));
  }

  static BasicTensor vector(std::initializer_list<Scalar> values) {
    return BasicTensor({values.size()}, std::vector<Scalar>(values));
  }

  static BasicTensor scalar(Scalar v) { return BasicTensor(Shape{}, std::vector<Scalar>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const {
    if (axis >= shape_.size()) throw DimensionError("extent: axis out of range");
    return shape_[axis];
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_rank2("rows");
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank2("cols");
    return shape_[1];
  }

  std::span<const Scalar> data() const noexcept { return data_; }
  std::span<Scalar> data() noexcept { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  Scalar& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const Scalar& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<const Scalar> row(std::size_t r) const {
    return std::span<const Scalar>(data_).subspan(r * shape_[1], shape_[1]);
  }
  std::span<Scalar> row(std::size_t r) { return std::span<Scalar>(data_).subspan(r * shape_[1], shape_[1]); }

  // Scalar value of a one-element tensor.
  Scalar item() const {
    if (data_.size() != 1) throw DimensionError("item: tensor has " + std::to_string(data_.size()) + " values");
    return data_[0];
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  template <std::floating_point Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  void validate_shape() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
    }
  }
  void require_rank2(const char* what) const {
    if (shape_.size() != 2) throw DimensionError(std::string(what) + ": expected a rank-2 tensor, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

template <std::floating_point S>
std::ostream& operator<<(std::ostream& os, const BasicTensor<S>& t) {
  os << "tensor" << shape_str(t.shape()) << '{';
  for (std::size_t i = 0; i < t.size(); ++i) os << (i ? ", " : "") << t[i];
  return os << '}';
}

namespace detail {

template <std::floating_point S>
const BasicTensor<S>& require_finite(const BasicTensor<S>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
  return t;
}

template <std::floating_point S>
void require_rank2(const BasicTensor<S>& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

template <std::floating_point S>
void require_same_shape(const BasicTensor<S>& a, const BasicTensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

// ---- construction ----------------------------------------------------------

template <std::floating_point S = double>
BasicTensor<S> zeros(Shape shape) {
  return BasicTensor<S>(std::move(shape));
}

template <std::floating_point S = double>
BasicTensor<S> full(Shape shape, S value) {
  return BasicTensor<S>(std::move(shape), value);
}

template <std::floating_point S = double>
BasicTensor<S> identity(std::size_t n) {
  BasicTensor<S> out({n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = S{1};
  return out;
}

// Uniform values in [lo, hi) from a seeded 64-bit Mersenne twister.
template <std::floating_point S = double>
BasicTensor<S> random_uniform(Shape shape, std::uint64_t seed, S lo = S{-1}, S hi = S{1}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  BasicTensor<S> out(std::move(shape));
  for (auto& v : out.data()) v = static_cast<S>(dist(rng));
  return out;
}

// ---- linear algebra --------------------------------------------------------

template <std::floating_point S>
BasicTensor<S> matmul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  BasicTensor<S> c({m, n});
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  S* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    S* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S aip = pa[i * k + p];
      const S* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  detail::require_finite(c, "matmul");
  return c;
}

template <std::floating_point S>
BasicTensor<S> transpose(const BasicTensor<S>& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  BasicTensor<S> t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

// ---- softmax ---------------------------------------------------------------

// each_row: every row sums to one. each_column: every column sums to one.
enum class Normalize { each_row, each_column };

template <std::floating_point S>
BasicTensor<S> softmax(const BasicTensor<S>& x, Normalize along) {
  detail::require_rank2(x, "softmax");
  detail::require_finite(x, "softmax input");
  const std::size_t m = x.rows(), n = x.cols();
  BasicTensor<S> y(x.shape());
  const std::size_t lanes = along == Normalize::each_row ? m : n;
  const std::size_t len = along == Normalize::each_row ? n : m;
  const std::size_t stride = along == Normalize::each_row ? 1 : n;
  for (std::size_t lane = 0; lane < lanes; ++lane) {
    const std::size_t base = along == Normalize::each_row ? lane * n : lane;
    S peak = x[base];
    for (std::size_t i = 1; i < len; ++i) peak = std::max(peak, x[base + i * stride]);
    S total{0};
    for (std::size_t i = 0; i < len; ++i) {
      const S e = std::exp(x[base + i * stride] - peak);
      y[base + i * stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < len; ++i) y[base + i * stride] /= total;
  }
  return y;
}

// ---- reductions ------------------------------------------------------------

// Sums a rank-2 tensor along `axis` (0 = over rows/tokens, 1 = over columns).
// The reduced axis is dropped unless keep_dim, in which case it stays with extent 1.
template <std::floating_point S>
BasicTensor<S> reduce_sum(const BasicTensor<S>& x, std::size_t axis, bool keep_dim = false) {
  if (axis >= x.rank()) throw DimensionError("reduce_sum: axis " + std::to_string(axis) + " >= rank");
  detail::require_rank2(x, "reduce_sum");
  const std::size_t m = x.rows(), n = x.cols();
  if (axis == 0) {
    BasicTensor<S> out(keep_dim ? Shape{1, n} : Shape{n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j] += x(i, j);
    return out;
  }
  BasicTensor<S> out(keep_dim ? Shape{m, 1} : Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    S acc{0};
    for (std::size_t j = 0; j < n; ++j) acc += x(i, j);
    out[i] = acc;
  }
  return out;
}

template <std::floating_point S>
S sum_all(const BasicTensor<S>& x) {
  S acc{0};
  for (S v : x.data()) acc += v;
  return acc;
}

// ---- elementwise -----------------------------------------------------------

enum class EwiseOp { mul, add, sub };

template <std::floating_point S>
BasicTensor<S> ewise(const BasicTensor<S>& x, const BasicTensor<S>& y, EwiseOp op) {
  detail::require_same_shape(x, y, "ewise");
  BasicTensor<S> out(x.shape());
  auto xs = x.data();
  auto ys = y.data();
  auto os = out.data();
  switch (op) {
    case EwiseOp::mul:
      for (std::size_t i = 0; i < os.size(); ++i) os[i] = xs[i] * ys[i];
      break;
    case EwiseOp::add:
      for (std::size_t i = 0; i < os.size(); ++i) os[i] = xs[i] + ys[i];
      break;
    case EwiseOp::sub:
      for (std::size_t i = 0; i < os.size(); ++i) os[i] = xs[i] - ys[i];
      break;
  }
  detail::require_finite(out, "ewise");
  return out;
}

template <std::floating_point S>
BasicTensor<S> mul(const BasicTensor<S>& x, const BasicTensor<S>& y) {
  return ewise(x, y, EwiseOp::mul);
}
template <std::floating_point S>
BasicTensor<S> add(const BasicTensor<S>& x, const BasicTensor<S>& y) {
  return ewise(x, y, EwiseOp::add);
}
template <std::floating_point S>
BasicTensor<S> sub(const BasicTensor<S>& x, const BasicTensor<S>& y) {
  return ewise(x, y, EwiseOp::sub);
}

template <std::floating_point S>
BasicTensor<S> scale(const BasicTensor<S>& x, S s) {
  BasicTensor<S> out = x;
  for (auto& v : out.data()) v *= s;
  detail::require_finite(out, "scale");
  return out;
}

// Applies f to every element.
template <std::floating_point S, typename F>
BasicTensor<S> map(const BasicTensor<S>& x, F&& f) {
  BasicTensor<S> out(x.shape());
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] = f(xs[i]);
  detail::require_finite(out, "map");
  return out;
}

// Per-row L1 or L2 norm of a matrix; result has one entry per row.
template <std::floating_point S>
BasicTensor<S> norm_rows(const BasicTensor<S>& x, int p) {
  detail::require_rank2(x, "norm_rows");
  if (p != 1 && p != 2) throw DimensionError("norm_rows: p must be 1 or 2");
  BasicTensor<S> out({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    S acc{0};
    for (S v : x.row(i)) acc += p == 1 ? std::abs(v) : v * v;
    out[i] = p == 1 ? acc : std::sqrt(acc);
  }
  return out;
}

// ---- explicit reshaping ops (no implicit broadcasting anywhere) -------------

// Columns [begin, begin + count) of a matrix.
template <std::floating_point S>
BasicTensor<S> slice_cols(const BasicTensor<S>& x, std::size_t begin, std::size_t count) {
  detail::require_rank2(x, "slice_cols");
  if (begin + count > x.cols() || count == 0) throw DimensionError("slice_cols: range out of bounds");
  BasicTensor<S> out({x.rows(), count});
  for (std::size_t i = 0; i < x.rows(); ++i)
    std::copy_n(x.row(i).begin() + static_cast<std::ptrdiff_t>(begin), count, out.row(i).begin());
  return out;
}

template <std::floating_point S>
BasicTensor<S> concat_cols(std::span<const BasicTensor<S>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    n += p.cols();
  }
  BasicTensor<S> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto dst = out.row(i).begin();
    for (const auto& p : parts) dst = std::copy(p.row(i).begin(), p.row(i).end(), dst);
  }
  return out;
}

template <std::floating_point S>
BasicTensor<S> concat_rows(std::span<const BasicTensor<S>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows: column counts differ");
    m += p.rows();
  }
  std::vector<S> data;
  data.reserve(m * n);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return BasicTensor<S>({m, n}, std::move(data));
}

// Row r of a matrix as a 1 x D matrix.
template <std::floating_point S>
BasicTensor<S> take_row(const BasicTensor<S>& x, std::size_t r) {
  detail::require_rank2(x, "take_row");
  if (r >= x.rows()) throw DimensionError("take_row: row out of range");
  return BasicTensor<S>({1, x.cols()}, std::vector<S>(x.row(r).begin(), x.row(r).end()));
}

// Stacks `rows` copies of a length-D vector (or 1 x D matrix) into rows x D.
template <std::floating_point S>
BasicTensor<S> broadcast_rows(const BasicTensor<S>& v, std::size_t rows) {
  const std::size_t n = v.size();
  if (!(v.rank() == 1 || (v.rank() == 2 && v.rows() == 1))) {
    throw DimensionError("broadcast_rows: expected a vector, got " + shape_str(v.shape()));
  }
  BasicTensor<S> out({rows, n});
  for (std::size_t i = 0; i < rows; ++i) std::copy(v.data().begin(), v.data().end(), out.row(i).begin());
  return out;
}

// Rows permuted so that out.row(i) == x.row(perm[i]).
template <std::floating_point S>
BasicTensor<S> permute_rows(const BasicTensor<S>& x, std::span<const std::size_t> perm) {
  detail::require_rank2(x, "permute_rows");
  if (perm.size() != x.rows()) throw DimensionError("permute_rows: permutation length differs from rows");
  BasicTensor<S> out(x.shape());
  for (std::size_t i = 0; i < perm.size(); ++i) std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), out.row(i).begin());
  return out;
}

// ---- comparison helpers ----------------------------------------------------

template <std::floating_point S>
S max_abs_diff(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  S worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// |a - b| / max(|a|, |b|, 1e-8), the worst over all elements.
template <std::floating_point S>
S max_rel_error(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  detail::require_same_shape(a, b, "max_rel_error");
  S worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const S denom = std::max({std::abs(a[i]), std::abs(b[i]), S(1e-8)});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace hydra
