#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "havana/tensor.hpp"

namespace havana {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t idx = 0;
};

using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
/// creation order is already a topological order and the graph is acyclic by
/// construction. One tape lives for one training step and is dropped after
/// backward().
class Tape {
 public:
  /// Leaf node (parameter or constant); receives gradients but propagates none.
  Var leaf(Tensor value);

  /// Interior node. The backward closure scatters grad_out into the parents
  /// it captured via accumulate().
  Var make(Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;

  /// Gradient of the last backward() target with respect to v. Zeros of the
  /// value's shape when v was not reached.
  Tensor grad(Var v) const;

  /// grad(v) += g (shape-checked).
  void accumulate(Var v, const Tensor& g);

  /// Reverse sweep from a scalar loss. Non-scalar targets are contract errors.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable primitives. Each registers a backward rule on the tape.
// Broadcasting follows the raw-op rules (scalar, row-vector over matrix).
// ---------------------------------------------------------------------------

Var leaf(Tape& t, Tensor v);

Var matmul(Var a, Var b);  // dA = dC.B^T, dB = A^T.dC
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var addc(Var a, double c);
Var neg(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);  // backward clamps the slope at x = 0 (subgradient choice)
Var clamp01(Var a);  // zero gradient at and beyond the clamp boundary
Var sum(Var a);
Var mean(Var a);
Var row(Var a, std::size_t i);
Var hcat(Var a, Var b);

/// Mean over the batch of smoothed softmax cross-entropy:
///   loss_i = -sum_k q_k log softmax(logits_i)_k,  q_k = (1-eps).1[k=y_i] + eps/C
Var cross_entropy_smoothed(Var logits, const std::vector<int>& labels, double eps);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator+(Var a, double c) { return addc(a, c); }
inline Var operator-(Var a, double c) { return addc(a, -c); }
inline Var operator-(Var a) { return neg(a); }

// ---------------------------------------------------------------------------
// Finite-difference gradient checker
// ---------------------------------------------------------------------------

struct GradCheckReport {
  bool pass = false;
  std::size_t worst_index = 0;
  double worst_rel = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Compares backward() against central differences per coordinate of `point`.
/// `f` must build a scalar node from a single leaf. Relative error uses
/// denominator max(1, |analytic|, |numeric|). Requires f64 precision.
GradCheckReport gradcheck(const std::function<Var(Tape&, Var)>& f, const Tensor& point,
                          double h, double tol);

}  // namespace havana
