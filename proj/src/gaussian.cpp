#include "havana/gaussian.hpp"

#include <cmath>
#include <string>

#include "havana/errors.hpp"

namespace havana {

namespace {

double logaddexp(double a, double b) {
  double hi = std::max(a, b);
  double lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

void check_same_dim(const DiagGaussian& p, const DiagGaussian& q) {
  if (p.dim() != q.dim()) {
    throw DataError("gaussian dimension mismatch: " + std::to_string(p.dim()) +
                    " vs " + std::to_string(q.dim()));
  }
}

/// KL(p || m) per dimension in variance form. Written so that p == m gives
/// exactly zero: log(vm/vp) is log(1) and the quadratic term is exactly 1/2.
double kl_to_mid(double vp, double mp, double vm, double mm) {
  double d = mp - mm;
  return 0.5 * std::log(vm / vp) + (vp + d * d) / (2.0 * vm) - 0.5;
}

}  // namespace

DiagGaussian::DiagGaussian(Tensor mu_in, Tensor log_sigma_in)
    : mu(std::move(mu_in)), log_sigma(std::move(log_sigma_in)) {
  if (mu.rank() != 1 || log_sigma.rank() != 1 || mu.numel() != log_sigma.numel()) {
    throw DataError("DiagGaussian wants rank-1 mu and log_sigma of equal length, got " +
                    mu.shape_str() + " and " + log_sigma.shape_str());
  }
  double floor = std::log(kSigmaFloor);
  if (precision() == Precision::f32) floor = static_cast<double>(static_cast<float>(floor));
  for (double& v : log_sigma.mutable_data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite log_sigma in DiagGaussian");
    if (v < floor) v = floor;
  }
  for (double v : mu.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite mu in DiagGaussian");
  }
}

DiagGaussian DiagGaussian::one_dim(double mean, double sigma) {
  return DiagGaussian(Tensor::vector({mean}), Tensor::vector({std::log(sigma)}));
}

Tensor reparameterize(const DiagGaussian& g, const Tensor& eps) {
  return add(g.mu, mul(eps, exp(g.log_sigma)));
}

double kl_diag(const DiagGaussian& p, const DiagGaussian& q) {
  check_same_dim(p, q);
  const auto& mp = p.mu.data();
  const auto& mq = q.mu.data();
  const auto& lp = p.log_sigma.data();
  const auto& lq = q.log_sigma.data();
  double total = 0.0;
  for (std::size_t d = 0; d < mp.size(); ++d) {
    double dm = mp[d] - mq[d];
    total += (lq[d] - lp[d]) +
             (std::exp(2.0 * lp[d]) + dm * dm) / (2.0 * std::exp(2.0 * lq[d])) - 0.5;
  }
  return total;
}

double logpdf(const DiagGaussian& g, const Tensor& x) {
  if (x.numel() != g.dim()) {
    throw DataError("logpdf dimension mismatch: " + x.shape_str());
  }
  constexpr double kHalfLog2Pi = 0.9189385332046727;
  const auto& mu = g.mu.data();
  const auto& ls = g.log_sigma.data();
  const auto& xv = x.data();
  double total = 0.0;
  for (std::size_t d = 0; d < mu.size(); ++d) {
    double z = (xv[d] - mu[d]) * std::exp(-ls[d]);
    total += -kHalfLog2Pi - ls[d] - 0.5 * z * z;
  }
  return total;
}

double js_closed(const DiagGaussian& p, const DiagGaussian& q) {
  check_same_dim(p, q);
  const auto& mp = p.mu.data();
  const auto& mq = q.mu.data();
  const auto& lp = p.log_sigma.data();
  const auto& lq = q.log_sigma.data();
  double kl_p = 0.0;
  double kl_q = 0.0;
  for (std::size_t d = 0; d < mp.size(); ++d) {
    double vp = std::exp(2.0 * lp[d]);
    double vq = std::exp(2.0 * lq[d]);
    double vm = 0.5 * (vp + vq);
    double mm = 0.5 * (mp[d] + mq[d]);
    kl_p += kl_to_mid(vp, mp[d], vm, mm);
    kl_q += kl_to_mid(vq, mq[d], vm, mm);
  }
  double bits = (0.5 * kl_p + 0.5 * kl_q) / M_LN2;
  if (bits < 0.0) return 0.0;
  if (bits > 1.0) return 1.0;
  return bits;
}

double js_mc(const DiagGaussian& p, const DiagGaussian& q, std::size_t n, Rng& rng) {
  check_same_dim(p, q);
  if (n == 0) throw UsageError("js_mc needs at least one sample");
  constexpr double kLn2 = M_LN2;
  double acc_p = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = reparameterize(p, randn(rng, {p.dim()}));
    double lp = logpdf(p, x);
    double lq = logpdf(q, x);
    acc_p += lp - (logaddexp(lp, lq) - kLn2);
  }
  double acc_q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = reparameterize(q, randn(rng, {q.dim()}));
    double lp = logpdf(p, x);
    double lq = logpdf(q, x);
    acc_q += lq - (logaddexp(lp, lq) - kLn2);
  }
  double nn = static_cast<double>(n);
  return 0.5 * (acc_p / nn + acc_q / nn) / kLn2;
}

// ---------------------------------------------------------------------------
// Tape versions.
// ---------------------------------------------------------------------------

Var reparameterize(const GaussianVar& g, Var eps) {
  return add(g.mu, mul(eps, exp(g.log_sigma)));
}

Var kl_diag_elem(const GaussianVar& p, const GaussianVar& q) {
  Var d = sub(p.mu, q.mu);
  Var vp = exp(scale(p.log_sigma, 2.0));
  Var inv_vq = exp(scale(q.log_sigma, -2.0));
  Var quad = scale(mul(add(vp, mul(d, d)), inv_vq), 0.5);
  return addc(add(sub(q.log_sigma, p.log_sigma), quad), -0.5);
}

Var kl_diag(const GaussianVar& p, const GaussianVar& q) {
  return sum(kl_diag_elem(p, q));
}

Var kl_diag_batchmean(const GaussianVar& p, const GaussianVar& q) {
  const Tensor& mu = p.mu.tape->value(p.mu);
  if (mu.rank() != 2) {
    throw DataError("kl_diag_batchmean wants [batch, dim] inputs, got " + mu.shape_str());
  }
  double rows = static_cast<double>(mu.shape()[0]);
  return scale(sum(kl_diag_elem(p, q)), 1.0 / rows);
}

Var kl_to_std_batchmean(const GaussianVar& p) {
  Tape& t = *p.mu.tape;
  // copy the shape: pushing leaves may reallocate the tape's node storage
  std::vector<std::size_t> shape = t.value(p.mu).shape();
  Var zero_mu = t.leaf(Tensor::zeros(shape));
  Var zero_ls = t.leaf(Tensor::zeros(shape));
  return kl_diag_batchmean(p, GaussianVar{zero_mu, zero_ls});
}

Var js_closed(const GaussianVar& p, const GaussianVar& q) {
  Var vp = exp(scale(p.log_sigma, 2.0));
  Var vq = exp(scale(q.log_sigma, 2.0));
  Var vm = scale(add(vp, vq), 0.5);
  Var mm = scale(add(p.mu, q.mu), 0.5);
  Var dp = sub(p.mu, mm);
  Var dq = sub(q.mu, mm);
  Var kl_p = addc(add(scale(log(div(vm, vp)), 0.5), div(add(vp, mul(dp, dp)), scale(vm, 2.0))), -0.5);
  Var kl_q = addc(add(scale(log(div(vm, vq)), 0.5), div(add(vq, mul(dq, dq)), scale(vm, 2.0))), -0.5);
  Var bits = scale(add(sum(kl_p), sum(kl_q)), 0.5 / M_LN2);
  return clamp01(bits);
}

}  // namespace havana
