#include "havana/tape.hpp"

#include <cmath>

namespace havana {

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::make(Tensor value, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, std::move(backward)});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.idx).value; }

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.idx);
  if (!n.has_grad) return Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_.at(v.idx);
  if (!g.same_shape(n.value))
    throw DataError("tape: gradient shape " + g.shape_str() + " does not match value shape " +
                    n.value.shape_str());
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad = add(n.grad, g);
  }
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("tape: backward target from a different tape");
  Node& top = nodes_.at(loss.idx);
  if (top.value.numel() != 1)
    throw UsageError("tape: backward requires a scalar loss, got shape " + top.value.shape_str());
  Tensor seed = Tensor::zeros(top.value.shape());
  seed.mutable_data()[0] = 1.0;
  accumulate(loss, seed);
  for (std::size_t i = loss.idx + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

Var leaf(Tape& t, Tensor v) { return t.leaf(std::move(v)); }

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw UsageError(std::string(op) + ": operands must live on the same tape");
  return *a.tape;
}

// Reduce a full-shaped gradient back to a broadcast operand's shape.
Tensor reduce_to(const Tensor& g, const Tensor& like) {
  if (g.same_shape(like)) return g;
  if (like.is_scalar()) return sum(g);
  // row vector broadcast over a matrix
  return colsum(g);
}

// Expand a broadcast operand to the full output shape for backward products.
Tensor expand_to(const Tensor& small, const Tensor& like) {
  if (small.same_shape(like)) return small;
  if (small.is_scalar()) return Tensor::full(like.shape(), small[0]);
  Tensor out = Tensor::zeros(like.shape());
  auto& od = out.mutable_data();
  const std::size_t c = like.cols();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = small[i % c];
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  Tensor c = matmul(t.value(a), t.value(b));
  return t.make(std::move(c), [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, matmul(g, transpose(tp.value(b))));
    tp.accumulate(b, matmul(transpose(tp.value(a)), g));
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  Tensor c = add(t.value(a), t.value(b));
  return t.make(std::move(c), [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, reduce_to(g, tp.value(a)));
    tp.accumulate(b, reduce_to(g, tp.value(b)));
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  Tensor c = sub(t.value(a), t.value(b));
  return t.make(std::move(c), [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, reduce_to(g, tp.value(a)));
    tp.accumulate(b, neg(reduce_to(g, tp.value(b))));
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  Tensor c = mul(t.value(a), t.value(b));
  return t.make(std::move(c), [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, reduce_to(mul(g, expand_to(tp.value(b), g)), tp.value(a)));
    tp.accumulate(b, reduce_to(mul(g, expand_to(tp.value(a), g)), tp.value(b)));
  });
}

Var div(Var a, Var b) {
  Tape& t = same_tape(a, b, "div");
  Tensor c = div(t.value(a), t.value(b));
  return t.make(std::move(c), [a, b](Tape& tp, const Tensor& g) {
    const Tensor bb = expand_to(tp.value(b), g);
    tp.accumulate(a, reduce_to(div(g, bb), tp.value(a)));
    const Tensor aa = expand_to(tp.value(a), g);
    tp.accumulate(b, reduce_to(neg(div(mul(g, aa), mul(bb, bb))), tp.value(b)));
  });
}

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  return t.make(scale(t.value(a), c),
                [a, c](Tape& tp, const Tensor& g) { tp.accumulate(a, scale(g, c)); });
}

Var addc(Var a, double c) {
  Tape& t = *a.tape;
  return t.make(addc(t.value(a), c),
                [a](Tape& tp, const Tensor& g) { tp.accumulate(a, g); });
}

Var neg(Var a) {
  Tape& t = *a.tape;
  return t.make(neg(t.value(a)),
                [a](Tape& tp, const Tensor& g) { tp.accumulate(a, neg(g)); });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  return t.make(relu(t.value(a)), [a](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    Tensor d = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
      d.mutable_data()[i] = x[i] > 0.0 ? g[i] : 0.0;
    tp.accumulate(a, d);
  });
}

Var exp(Var a) {
  Tape& t = *a.tape;
  Tensor y = exp(t.value(a));
  return t.make(y, [a, y](Tape& tp, const Tensor& g) { tp.accumulate(a, mul(g, y)); });
}

Var log(Var a) {
  Tape& t = *a.tape;
  return t.make(log(t.value(a)), [a](Tape& tp, const Tensor& g) {
    tp.accumulate(a, div(g, tp.value(a)));
  });
}

Var sqrt(Var a) {
  Tape& t = *a.tape;
  Tensor y = sqrt(t.value(a));
  return t.make(y, [a, y](Tape& tp, const Tensor& g) {
    Tensor d = Tensor::zeros(y.shape());
    for (std::size_t i = 0; i < y.numel(); ++i)
      d.mutable_data()[i] = g[i] * 0.5 / (y[i] > 1e-12 ? y[i] : 1e-12);
    tp.accumulate(a, d);
  });
}

Var clamp01(Var a) {
  Tape& t = *a.tape;
  return t.make(clamp01(t.value(a)), [a](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    Tensor d = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
      d.mutable_data()[i] = (x[i] > 0.0 && x[i] < 1.0) ? g[i] : 0.0;
    tp.accumulate(a, d);
  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  return t.make(sum(t.value(a)), [a](Tape& tp, const Tensor& g) {
    tp.accumulate(a, Tensor::full(tp.value(a).shape(), g[0]));
  });
}

Var mean(Var a) {
  Tape& t = *a.tape;
  return t.make(mean(t.value(a)), [a](Tape& tp, const Tensor& g) {
    const std::size_t n = tp.value(a).numel();
    tp.accumulate(a, Tensor::full(tp.value(a).shape(), g[0] / static_cast<double>(n)));
  });
}

Var row(Var a, std::size_t i) {
  Tape& t = *a.tape;
  return t.make(row(t.value(a), i), [a, i](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    Tensor d = Tensor::zeros(x.shape());
    const std::size_t n = x.cols();
    for (std::size_t j = 0; j < n; ++j) d.mutable_data()[i * n + j] = g[j];
    tp.accumulate(a, d);
  });
}

Var hcat(Var a, Var b) {
  Tape& t = same_tape(a, b, "hcat");
  return t.make(hcat(t.value(a), t.value(b)), [a, b](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    const std::size_t m = av.rows(), p = av.cols(), q = bv.cols();
    Tensor da = Tensor::zeros({m, p});
    Tensor db = Tensor::zeros({m, q});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < p; ++j) da.mutable_data()[i * p + j] = g.at(i, j);
      for (std::size_t j = 0; j < q; ++j) db.mutable_data()[i * q + j] = g.at(i, p + j);
    }
    tp.accumulate(a, da);
    tp.accumulate(b, db);
  });
}

Var cross_entropy_smoothed(Var logits, const std::vector<int>& labels, double eps) {
  Tape& t = *logits.tape;
  const Tensor& l = t.value(logits);
  if (l.rank() != 2) throw DataError("cross_entropy: logits must be rank-2 [batch, classes]");
  const std::size_t batch = l.rows(), classes = l.cols();
  if (labels.size() != batch) throw DataError("cross_entropy: label count does not match batch");
  if (eps < 0.0 || eps >= 0.5) throw UsageError("cross_entropy: smoothing mass out of [0, 0.5)");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw DataError("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                      std::to_string(classes) + ")");

  // softmax is cached for the backward rule; numerically stabilized by the
  // per-row max shift.
  Tensor soft = Tensor::zeros({batch, classes});
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    double mx = l.at(i, 0);
    for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, l.at(i, k));
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) z += std::exp(l.at(i, k) - mx);
    const double lse = mx + std::log(z);
    double row_loss = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double q = (static_cast<std::size_t>(labels[i]) == k ? 1.0 - eps : 0.0) +
                       eps / static_cast<double>(classes);
      row_loss += q * (lse - l.at(i, k));
      soft.mutable_data()[i * classes + k] = std::exp(l.at(i, k) - lse);
    }
    total += row_loss;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(batch));

  return t.make(std::move(out), [logits, labels, eps, soft, batch, classes](
                                    Tape& tp, const Tensor& g) {
    Tensor d = Tensor::zeros({batch, classes});
    const double go = g[0] / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t k = 0; k < classes; ++k) {
        const double q = (static_cast<std::size_t>(labels[i]) == k ? 1.0 - eps : 0.0) +
                         eps / static_cast<double>(classes);
        d.mutable_data()[i * classes + k] = go * (soft.at(i, k) - q);
      }
    }
    tp.accumulate(logits, d);
  });
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

GradCheckReport gradcheck(const std::function<Var(Tape&, Var)>& f, const Tensor& point,
                          double h, double tol) {
  if (precision() != Precision::f64)
    throw UsageError("gradcheck: requires the f64 precision mode");

  Tensor analytic;
  {
    Tape tape;
    Var x = tape.leaf(point);
    Var loss = f(tape, x);
    if (tape.value(loss).numel() != 1)
      throw UsageError("gradcheck: f must be scalar-valued");
    tape.backward(loss);
    analytic = tape.grad(x);
  }

  auto eval_at = [&](const Tensor& p) {
    Tape tape;
    Var x = tape.leaf(p);
    return tape.value(f(tape, x)).value();
  };

  GradCheckReport rep;
  rep.pass = true;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    Tensor plus = point, minus = point;
    plus.mutable_data()[i] += h;
    minus.mutable_data()[i] -= h;
    const double numeric = (eval_at(plus) - eval_at(minus)) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > rep.worst_rel) {
      rep.worst_rel = rel;
      rep.worst_index = i;
      rep.analytic_at_worst = a;
      rep.numeric_at_worst = numeric;
    }
    if (rel > tol) rep.pass = false;
  }
  return rep;
}

}  // namespace havana
