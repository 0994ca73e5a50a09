#pragma once

#include <cstddef>
#include <vector>

#include "havana/gaussian.hpp"
#include "havana/nets.hpp"
#include "havana/tape.hpp"
#include "havana/tensor.hpp"

namespace havana {

struct LossWeights {
  double alpha = 0.2;
  double beta = 1.0;
  double lambda_jst = 1.0;
  double gamma = 0.5;
  double label_smoothing_eps = 0.1;
  bool covariance_constraint = true;

  void validate() const;
};

/// Which parts of the pipeline participate in training; used by the ablation
/// ladder. With use_jst off the metric loss falls back to the Euclidean
/// triplet on z_mu; with use_hvd off the ELBO reduces to the plain VNAE
/// evidence bound against the standard-normal prior.
struct Toggles {
  bool use_hvd = true;
  bool use_jst = true;
};

/// Scalar loss components. All in nats except jst, which is in bits.
struct LossReport {
  double cls = 0.0;
  double jst = 0.0;
  double reconx = 0.0;
  double klz = 0.0;
  double klv = 0.0;
  double reconz = 0.0;
  double total = 0.0;
};

/// Mean over batch of -sum_k q_k log softmax(logits)_k with
/// q_k = (1-eps) 1[k=y] + eps/C.
Var cls_loss(Var logits, const std::vector<int>& labels, double eps);
double cls_loss(const Tensor& logits, const std::vector<int>& labels, double eps);

/// max(d(a,p) - d(a,n) + gamma, 0) with Euclidean d.
Var triplet_loss(Var anchor, Var pos, Var neg, double gamma);
double triplet_loss(const Tensor& anchor, const Tensor& pos, const Tensor& neg, double gamma);

/// max(js_closed(a,p) - js_closed(a,n) + gamma, 0); bounded in [0, 1+gamma].
Var js_triplet_loss(const GaussianVar& anchor, const GaussianVar& pos,
                    const GaussianVar& neg, double gamma);
double js_triplet_loss(const DiagGaussian& anchor, const DiagGaussian& pos,
                       const DiagGaussian& neg, double gamma);

enum class MineMetric { js, euclid };

struct Triplet {
  std::size_t anchor;
  std::size_t pos;
  std::size_t neg;
};

/// One triplet per anchor: the same-id sample with the largest distance and
/// the different-id sample with the smallest, ties broken by lowest index.
std::vector<Triplet> batch_hard_mine(const std::vector<DiagGaussian>& latents,
                                     const std::vector<int>& labels,
                                     MineMetric metric = MineMetric::js);

struct ElboTermVars {
  Var reconx;
  Var klz;
  Var klv;
  Var reconz;
};

/// ELBO pieces with the HVD attached. reconx is the squared error between x
/// and its reconstruction averaged over dims and batch. Without the
/// covariance constraint klz = KL(z || z_recon) and reconz = 0; with it
/// reconz = MSE(z.mu, z_recon.mu) and klz = KL(N(z.mu, I) || N(0, I)).
/// klv = KL(v || N(0, I)). KL terms are per-sample sums over dims, averaged
/// over the batch, and enter the total as positive penalties.
ElboTermVars elbo_hvd_terms(Tape& tape, Var x, Var x_recon, const GaussianVar& z,
                            const GaussianVar& z_recon, const GaussianVar& v,
                            bool covariance_constraint);

/// Plain VNAE evidence bound (no HVD): klz = KL(z || N(0, I)), klv and
/// reconz pinned to zero.
ElboTermVars elbo_vnae_terms(Tape& tape, Var x, Var x_recon, const GaussianVar& z);

/// Fills total = cls + lambda*jst + alpha*(reconx + beta*(klz_term + klv))
/// with klz_term = klz (no CC) or reconz + klz (CC). Non-finite components
/// are reported as training divergence with the term named.
LossReport total_loss(const LossReport& components, const LossWeights& weights);

/// Same assembly on the tape.
Var assemble_total(Var cls, Var jst, const ElboTermVars& terms, const LossWeights& weights);

struct BatchLossVars {
  Var total;
  Var cls;
  Var jst;
  ElboTermVars elbo;
  std::vector<Triplet> triplets;
};

/// Full training-step loss graph: VNAE forward, classifier, mined triplet
/// term, ELBO terms, weighted assembly. x is a [B, D] leaf already on the
/// tape; eps_z is [B, L] and eps_v is [B, M]. frozen_triplets bypasses mining
/// (gradcheck holds the selection constant).
BatchLossVars havana_batch_loss(Tape& tape, const ModelVars& vars, const HavanaModel& model,
                                Var x, const std::vector<int>& labels,
                                const Tensor& eps_z, const Tensor& eps_v,
                                const LossWeights& weights, const Toggles& toggles,
                                const std::vector<Triplet>* frozen_triplets = nullptr);

/// Reads the component values out of the graph and assembles the report.
LossReport report_from(Tape& tape, const BatchLossVars& loss, const LossWeights& weights);

}  // namespace havana
