#include "havana/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace havana {

namespace {

Precision g_precision = Precision::f32;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw DataError("tensor: zero-sized dimension");
    n *= d;
  }
  return n;
}

}  // namespace

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

namespace detail {

// Rounds through binary32 in f32 mode and rejects NaN/Inf. Every sanctioned
// operation funnels its output through here.
void finish(Tensor& t, const char* op) {
  auto& d = t.mutable_data();
  if (g_precision == Precision::f32) {
    for (double& x : d) x = static_cast<double>(static_cast<float>(x));
  }
  for (double x : d) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite result");
  }
}

}  // namespace detail

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data_.assign(1, v);
  detail::finish(t, "scalar");
  return t;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  Tensor t;
  t.data_.assign(shape_numel(shape), 0.0);
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t;
  t.data_.assign(shape_numel(shape), v);
  t.shape_ = std::move(shape);
  detail::finish(t, "full");
  return t;
}

Tensor Tensor::from(std::vector<double> data, std::vector<std::size_t> shape) {
  if (data.size() != shape_numel(shape))
    throw DataError("tensor: data length does not match shape");
  Tensor t;
  t.data_ = std::move(data);
  t.shape_ = std::move(shape);
  detail::finish(t, "from");
  return t;
}

Tensor Tensor::vector(std::vector<double> data) {
  std::size_t n = data.size();
  return from(std::move(data), {n});
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return from(std::move(data), {rows, cols});
}

double Tensor::value() const {
  if (numel() != 1) throw DataError("tensor: value() on non-scalar of shape " + shape_str());
  return data_[0];
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// Raw ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DataError("matmul: expects rank-2 operands, got " + a.shape_str() + " and " + b.shape_str());
  if (a.cols() != b.rows())
    throw DataError("matmul: inner dimensions differ, " + a.shape_str() + " vs " + b.shape_str());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros({m, n});
  auto& cd = c.mutable_data();
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd.data() + p * n;
      double* crow = cd.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  detail::finish(c, "matmul");
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DataError("transpose: expects rank-2 operand");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor t = Tensor::zeros({n, m});
  auto& td = t.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) td[j * m + i] = a.data()[i * n + j];
  return t;
}

namespace {

enum class Bcast { same, b_scalar, a_scalar, b_row, a_row };

// Sanctioned broadcasts only: scalar-with-tensor and row-vector-over-matrix.
Bcast resolve_bcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Bcast::same;
  if (b.is_scalar()) return Bcast::b_scalar;
  if (a.is_scalar()) return Bcast::a_scalar;
  if (a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.cols()) return Bcast::b_row;
  if (b.rank() == 2 && a.rank() == 1 && a.shape()[0] == b.cols()) return Bcast::a_row;
  throw DataError(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                  " do not match and are not a sanctioned broadcast");
}

template <typename F>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, F f) {
  const Bcast mode = resolve_bcast(a, b, op);
  const Tensor& big = (mode == Bcast::a_scalar || mode == Bcast::a_row) ? b : a;
  Tensor out = Tensor::zeros(big.shape());
  auto& od = out.mutable_data();
  const auto& ad = a.data();
  const auto& bd = b.data();
  const std::size_t n = od.size();
  switch (mode) {
    case Bcast::same:
      for (std::size_t i = 0; i < n; ++i) od[i] = f(ad[i], bd[i]);
      break;
    case Bcast::b_scalar:
      for (std::size_t i = 0; i < n; ++i) od[i] = f(ad[i], bd[0]);
      break;
    case Bcast::a_scalar:
      for (std::size_t i = 0; i < n; ++i) od[i] = f(ad[0], bd[i]);
      break;
    case Bcast::b_row: {
      const std::size_t c = big.cols();
      for (std::size_t i = 0; i < n; ++i) od[i] = f(ad[i], bd[i % c]);
      break;
    }
    case Bcast::a_row: {
      const std::size_t c = big.cols();
      for (std::size_t i = 0; i < n; ++i) od[i] = f(ad[i % c], bd[i]);
      break;
    }
  }
  detail::finish(out, op);
  return out;
}

template <typename F>
Tensor unary_op(const Tensor& a, const char* op, F f) {
  Tensor out = Tensor::zeros(a.shape());
  auto& od = out.mutable_data();
  for (std::size_t i = 0; i < a.numel(); ++i) od[i] = f(a.data()[i]);
  detail::finish(out, op);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor div(const Tensor& a, const Tensor& b) {
  for (double y : b.data())
    if (y == 0.0) throw NumericError("div: zero divisor");
  return binary_op(a, b, "div", [](double x, double y) { return x / y; });
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(a, "scale", [c](double x) { return x * c; });
}
Tensor addc(const Tensor& a, double c) {
  return unary_op(a, "addc", [c](double x) { return x + c; });
}
Tensor neg(const Tensor& a) {
  return unary_op(a, "neg", [](double x) { return -x; });
}
Tensor relu(const Tensor& a) {
  return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; });
}
Tensor exp(const Tensor& a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); });
}
Tensor log(const Tensor& a) {
  for (double x : a.data())
    if (x <= 0.0) throw NumericError("log: input not strictly positive");
  return unary_op(a, "log", [](double x) { return std::log(x); });
}
Tensor sqrt(const Tensor& a) {
  for (double x : a.data())
    if (x < 0.0) throw NumericError("sqrt: negative input");
  return unary_op(a, "sqrt", [](double x) { return std::sqrt(x); });
}
Tensor clamp01(const Tensor& a) {
  return unary_op(a, "clamp01", [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return Tensor::scalar(s);
}

Tensor mean(const Tensor& a) {
  return Tensor::scalar(sum(a).value() / static_cast<double>(a.numel()));
}

Tensor colsum(const Tensor& a) {
  if (a.rank() != 2) throw DataError("colsum: expects rank-2 operand");
  Tensor out = Tensor::zeros({a.cols()});
  auto& od = out.mutable_data();
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) od[j] += a.at(i, j);
  detail::finish(out, "colsum");
  return out;
}

Tensor row(const Tensor& a, std::size_t i) {
  if (a.rank() != 2) throw DataError("row: expects rank-2 operand");
  if (i >= a.rows()) throw DataError("row: index out of range");
  const std::size_t n = a.cols();
  std::vector<double> d(a.data().begin() + i * n, a.data().begin() + (i + 1) * n);
  return Tensor::from(std::move(d), {n});
}

Tensor hcat(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
    throw DataError("hcat: operands must be rank-2 with equal row counts");
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  Tensor out = Tensor::zeros({m, p + q});
  auto& od = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) od[i * (p + q) + j] = a.at(i, j);
    for (std::size_t j = 0; j < q; ++j) od[i * (p + q) + p + j] = b.at(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::next_uniform() {
  // (0, 1]: never returns 0, so log(u) is always defined.
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

std::pair<double, double> Rng::next_normal_pair() {
  const double u1 = next_uniform();
  const double u2 = next_uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw UsageError("Rng::below: empty range");
  return static_cast<std::size_t>(
      (static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n)) >> 64);
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ (0xA0761D6478BD642FULL * (stream + 1));
  return splitmix64(x);
}

Tensor randn(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  auto& d = t.mutable_data();
  for (std::size_t i = 0; i < d.size(); i += 2) {
    auto [z0, z1] = rng.next_normal_pair();
    d[i] = z0;
    if (i + 1 < d.size()) d[i + 1] = z1;
  }
  detail::finish(t, "randn");
  return t;
}

}  // namespace havana
