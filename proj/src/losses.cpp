#include "havana/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "havana/errors.hpp"

namespace havana {

void LossWeights::validate() const {
  if (alpha < 0.0 || beta < 0.0 || lambda_jst < 0.0) {
    throw UsageError("loss weights alpha, beta, lambda_jst must be non-negative");
  }
  if (gamma < 0.0 || gamma > 1.0) {
    throw UsageError("triplet margin gamma must lie in [0, 1]");
  }
  if (label_smoothing_eps < 0.0 || label_smoothing_eps >= 0.5) {
    throw UsageError("label_smoothing_eps must lie in [0, 0.5)");
  }
}

Var cls_loss(Var logits, const std::vector<int>& labels, double eps) {
  return cross_entropy_smoothed(logits, labels, eps);
}

double cls_loss(const Tensor& logits, const std::vector<int>& labels, double eps) {
  Tape t;
  Var out = cross_entropy_smoothed(t.leaf(logits), labels, eps);
  return t.value(out).value();
}

namespace {

Var euclid_dist(Var a, Var b) {
  Var d = sub(a, b);
  return sqrt(sum(mul(d, d)));
}

double euclid_dist(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw DataError("triplet embeddings differ in length: " + a.shape_str() + " vs " +
                    b.shape_str());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

Var triplet_loss(Var anchor, Var pos, Var neg, double gamma) {
  return relu(addc(sub(euclid_dist(anchor, pos), euclid_dist(anchor, neg)), gamma));
}

double triplet_loss(const Tensor& anchor, const Tensor& pos, const Tensor& neg, double gamma) {
  return std::max(euclid_dist(anchor, pos) - euclid_dist(anchor, neg) + gamma, 0.0);
}

Var js_triplet_loss(const GaussianVar& anchor, const GaussianVar& pos,
                    const GaussianVar& neg, double gamma) {
  return relu(addc(sub(js_closed(anchor, pos), js_closed(anchor, neg)), gamma));
}

double js_triplet_loss(const DiagGaussian& anchor, const DiagGaussian& pos,
                       const DiagGaussian& neg, double gamma) {
  return std::max(js_closed(anchor, pos) - js_closed(anchor, neg) + gamma, 0.0);
}

std::vector<Triplet> batch_hard_mine(const std::vector<DiagGaussian>& latents,
                                     const std::vector<int>& labels, MineMetric metric) {
  std::size_t n = latents.size();
  if (n != labels.size()) {
    throw DataError("batch_hard_mine: " + std::to_string(n) + " latents but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (n < 2) throw DataError("batch_hard_mine needs at least two samples");
  bool multiple_ids = false;
  for (std::size_t i = 1; i < n; ++i) {
    if (labels[i] != labels[0]) {
      multiple_ids = true;
      break;
    }
  }
  if (!multiple_ids) {
    throw DataError("batch_hard_mine needs at least two identities in the batch");
  }

  auto dist = [&latents, metric](std::size_t i, std::size_t j) {
    if (metric == MineMetric::js) return js_closed(latents[i], latents[j]);
    return euclid_dist(latents[i].mu, latents[j].mu);
  };
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      d[i * n + j] = d[j * n + i] = dist(i, j);
    }
  }

  std::vector<Triplet> triplets;
  triplets.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t pos = n;
    std::size_t neg = n;
    double worst_pos = -std::numeric_limits<double>::infinity();
    double best_neg = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        if (d[i * n + j] > worst_pos) {
          worst_pos = d[i * n + j];
          pos = j;
        }
      } else if (d[i * n + j] < best_neg) {
        best_neg = d[i * n + j];
        neg = j;
      }
    }
    if (pos == n) {
      throw DataError("batch_hard_mine: identity " + std::to_string(labels[i]) +
                      " has a single sample; anchor " + std::to_string(i) + " has no positive");
    }
    triplets.push_back({i, pos, neg});
  }
  return triplets;
}

ElboTermVars elbo_hvd_terms(Tape& tape, Var x, Var x_recon, const GaussianVar& z,
                            const GaussianVar& z_recon, const GaussianVar& v,
                            bool covariance_constraint) {
  ElboTermVars out;
  Var dx = sub(x, x_recon);
  out.reconx = mean(mul(dx, dx));
  if (covariance_constraint) {
    Var dz = sub(z.mu, z_recon.mu);
    out.reconz = mean(mul(dz, dz));
    out.klz = kl_to_std_batchmean(z);
  } else {
    out.reconz = tape.leaf(Tensor::scalar(0.0));
    out.klz = kl_diag_batchmean(z, z_recon);
  }
  out.klv = kl_to_std_batchmean(v);
  return out;
}

ElboTermVars elbo_vnae_terms(Tape& tape, Var x, Var x_recon, const GaussianVar& z) {
  ElboTermVars out;
  Var dx = sub(x, x_recon);
  out.reconx = mean(mul(dx, dx));
  out.klz = kl_to_std_batchmean(z);
  out.klv = tape.leaf(Tensor::scalar(0.0));
  out.reconz = tape.leaf(Tensor::scalar(0.0));
  return out;
}

LossReport total_loss(const LossReport& components, const LossWeights& weights) {
  weights.validate();
  const struct {
    const char* name;
    double value;
  } checks[] = {{"cls", components.cls},   {"jst", components.jst},
                {"reconx", components.reconx}, {"klz", components.klz},
                {"klv", components.klv},   {"reconz", components.reconz}};
  for (const auto& c : checks) {
    if (!std::isfinite(c.value)) {
      throw NumericError(std::string("training diverged: loss term ") + c.name +
                         " is not finite");
    }
  }
  LossReport out = components;
  double klz_term = weights.covariance_constraint ? components.reconz + components.klz
                                                  : components.klz;
  out.total = components.cls + weights.lambda_jst * components.jst +
              weights.alpha * (components.reconx + weights.beta * (klz_term + components.klv));
  if (!std::isfinite(out.total)) {
    throw NumericError("training diverged: loss total is not finite");
  }
  return out;
}

Var assemble_total(Var cls, Var jst, const ElboTermVars& terms, const LossWeights& weights) {
  Var klz_term = weights.covariance_constraint ? add(terms.reconz, terms.klz) : terms.klz;
  Var elbo = scale(add(terms.reconx, scale(add(klz_term, terms.klv), weights.beta)),
                   weights.alpha);
  return add(add(cls, scale(jst, weights.lambda_jst)), elbo);
}

BatchLossVars havana_batch_loss(Tape& tape, const ModelVars& vars, const HavanaModel& model,
                                Var x, const std::vector<int>& labels,
                                const Tensor& eps_z, const Tensor& eps_v,
                                const LossWeights& weights, const Toggles& toggles,
                                const std::vector<Triplet>* frozen_triplets) {
  weights.validate();
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 2 || xv.shape()[0] != labels.size()) {
    throw DataError("batch loss wants one label per row of x, got " + xv.shape_str() + " and " +
                    std::to_string(labels.size()) + " labels");
  }

  BatchLossVars out;
  VnaeVars vnae = vnae_forward(tape, vars, model, x, eps_z);
  Var logits = classifier_logits(vars, vnae.z.mu);
  out.cls = cross_entropy_smoothed(logits, labels, weights.label_smoothing_eps);

  if (frozen_triplets != nullptr) {
    out.triplets = *frozen_triplets;
  } else {
    const Tensor& mu = tape.value(vnae.z.mu);
    const Tensor& ls = tape.value(vnae.z.log_sigma);
    std::vector<DiagGaussian> latents;
    latents.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      latents.emplace_back(row(mu, i), row(ls, i));
    }
    out.triplets = batch_hard_mine(latents, labels,
                                   toggles.use_jst ? MineMetric::js : MineMetric::euclid);
  }

  Var acc = tape.leaf(Tensor::scalar(0.0));
  for (const Triplet& tr : out.triplets) {
    if (toggles.use_jst) {
      GaussianVar a{row(vnae.z.mu, tr.anchor), row(vnae.z.log_sigma, tr.anchor)};
      GaussianVar p{row(vnae.z.mu, tr.pos), row(vnae.z.log_sigma, tr.pos)};
      GaussianVar ng{row(vnae.z.mu, tr.neg), row(vnae.z.log_sigma, tr.neg)};
      acc = add(acc, js_triplet_loss(a, p, ng, weights.gamma));
    } else {
      acc = add(acc, triplet_loss(row(vnae.z.mu, tr.anchor), row(vnae.z.mu, tr.pos),
                                  row(vnae.z.mu, tr.neg), weights.gamma));
    }
  }
  out.jst = scale(acc, 1.0 / static_cast<double>(out.triplets.size()));

  if (toggles.use_hvd) {
    Tensor y = one_hot(labels, model.dims.classes);
    HvdVars hvd = hvd_forward(tape, vars, model, vnae.z_sample, y, eps_v);
    out.elbo = elbo_hvd_terms(tape, x, vnae.x_recon, vnae.z, hvd.z_recon, hvd.v,
                              weights.covariance_constraint);
  } else {
    out.elbo = elbo_vnae_terms(tape, x, vnae.x_recon, vnae.z);
  }

  out.total = assemble_total(out.cls, out.jst, out.elbo, weights);
  return out;
}

LossReport report_from(Tape& tape, const BatchLossVars& loss, const LossWeights& weights) {
  LossReport components;
  components.cls = tape.value(loss.cls).value();
  components.jst = tape.value(loss.jst).value();
  components.reconx = tape.value(loss.elbo.reconx).value();
  components.klz = tape.value(loss.elbo.klz).value();
  components.klv = tape.value(loss.elbo.klv).value();
  components.reconz = tape.value(loss.elbo.reconz).value();
  return total_loss(components, weights);
}

}  // namespace havana
