#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "havana/errors.hpp"

namespace havana {

// Global scalar precision. All tensor math is carried out in double; in f32
// mode every sanctioned operation rounds its result through IEEE binary32,
// so values stay exactly representable in the 32-bit checkpoint format.
// f64 mode is required for gradcheck and the divergence oracles.
enum class Precision { f32, f64 };

void set_precision(Precision p);
Precision precision();

/// Dense row-major tensor. Rank 0 tensors are scalars (numel 1).
/// Values are immutable once an operation has produced them; every
/// sanctioned operation checks its output for NaN/Inf and applies the
/// global precision rounding.
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor from(std::vector<double> data, std::vector<std::size_t> shape);
  static Tensor vector(std::vector<double> data);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& mutable_data() { return data_; }

  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double value() const;  // scalar contents; throws if not numel 1

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Raw (tape-free) tensor math. Used by the inference path, the evaluators and
// by the backward rules of the autodiff primitives.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor addc(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // requires strictly positive input
Tensor sqrt(const Tensor& a);
Tensor clamp01(const Tensor& a);

Tensor sum(const Tensor& a);   // rank-0 result
Tensor mean(const Tensor& a);  // rank-0 result
Tensor colsum(const Tensor& a);

Tensor row(const Tensor& a, std::size_t i);
Tensor hcat(const Tensor& a, const Tensor& b);

/// Seedable, platform-independent PRNG: xoshiro256++ seeded through
/// splitmix64 from a single 64-bit seed. Identical seeds yield identical
/// scalar streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform double in (0, 1], 53-bit resolution.
  double next_uniform();
  /// Standard normal pair via the Box-Muller transform; consumes exactly
  /// two uniforms.
  std::pair<double, double> next_normal_pair();
  /// Uniform integer in [0, n) by 128-bit multiply-shift.
  std::size_t below(std::size_t n);

  /// Derive an independent child seed for a named stream (splitmix64 mix).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t s_[4];
};

/// i.i.d. standard normal tensor. Fills pairwise via Box-Muller; for odd
/// element counts the spare variate of the final pair is discarded, so the
/// generator state depends only on the number of pairs consumed.
Tensor randn(Rng& rng, std::vector<std::size_t> shape);

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = rng.below(i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace havana
