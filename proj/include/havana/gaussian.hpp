#pragma once

#include "havana/tape.hpp"
#include "havana/tensor.hpp"

namespace havana {

/// Diagonal Gaussian N(mu, diag(sigma^2)) with sigma parameterized as
/// exp(log_sigma). log_sigma is clamped on construction so that
/// sigma >= kSigmaFloor.
struct DiagGaussian {
  Tensor mu;
  Tensor log_sigma;

  static constexpr double kSigmaFloor = 1e-6;

  DiagGaussian() = default;
  DiagGaussian(Tensor mu_in, Tensor log_sigma_in);

  /// Convenience 1-d constructor from (mean, standard deviation).
  static DiagGaussian one_dim(double mean, double sigma);

  std::size_t dim() const { return mu.numel(); }
  Tensor sigma() const { return exp(log_sigma); }
};

/// mu + eps * sigma.
Tensor reparameterize(const DiagGaussian& g, const Tensor& eps);

/// Closed-form KL(p || q) in nats: sum_d [ log(sq/sp) + (sp^2 + (mp-mq)^2) / (2 sq^2) - 1/2 ].
double kl_diag(const DiagGaussian& p, const DiagGaussian& q);

/// log density of x under g.
double logpdf(const DiagGaussian& g, const Tensor& x);

/// Closed-form Jensen-Shannon distance in bits, using the parameter-averaged
/// Gaussian m = N((mu_p+mu_q)/2, (sp^2+sq^2)/2) as the midpoint, clamped to
/// [0, 1]. Symmetric in (p, q) to the exact floating-point result.
double js_closed(const DiagGaussian& p, const DiagGaussian& q);

/// Monte-Carlo estimate (bits) of the true mixture-midpoint JS divergence,
///   1/2 E_p[log2 p/m] + 1/2 E_q[log2 q/m],  m = (p + q) / 2,
/// with n samples drawn from each side. Test oracle only; not differentiable.
double js_mc(const DiagGaussian& p, const DiagGaussian& q, std::size_t n, Rng& rng);

// ---------------------------------------------------------------------------
// On-tape counterparts. mu/log_sigma may be rank-1 vectors (one Gaussian) or
// rank-2 [batch, dim] matrices holding one Gaussian per row.
// ---------------------------------------------------------------------------

struct GaussianVar {
  Var mu;
  Var log_sigma;
};

Var reparameterize(const GaussianVar& g, Var eps);

/// Elementwise KL integrand; same shape as the inputs.
Var kl_diag_elem(const GaussianVar& p, const GaussianVar& q);

/// Rank-1 inputs: KL summed over dimensions (scalar).
Var kl_diag(const GaussianVar& p, const GaussianVar& q);

/// Rank-2 inputs: per-row KL summed over dims, then averaged over rows.
Var kl_diag_batchmean(const GaussianVar& p, const GaussianVar& q);

/// kl_diag_batchmean against the standard normal prior N(0, I).
Var kl_to_std_batchmean(const GaussianVar& p);

/// Rank-1 inputs: JS distance in bits, clamped to [0, 1] with zero gradient
/// past the clamp.
Var js_closed(const GaussianVar& p, const GaussianVar& q);

}  // namespace havana
