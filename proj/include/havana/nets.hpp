#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "havana/gaussian.hpp"
#include "havana/tape.hpp"
#include "havana/tensor.hpp"

namespace havana {

/// Layer widths. Zeros in hidden/latent/hvd mean "derive the default":
/// H = D, L = H, M = max(1, L/4).
struct ModelDims {
  std::size_t feat = 0;     // D
  std::size_t hidden = 0;   // H
  std::size_t latent = 0;   // L
  std::size_t hvd = 0;      // M
  std::size_t classes = 0;  // C

  ModelDims resolved() const;
  void validate() const;  // call on resolved dims
};

struct Affine {
  Tensor W;  // [in, out]
  Tensor b;  // [out]
};

/// Full parameter set: VNAE encoder (trunk + mu/log_sigma heads) and decoder,
/// HVD encoder and decoder (each trunk + mu/log_sigma heads), classifier.
struct HavanaModel {
  ModelDims dims;
  bool covariance_constraint = true;

  Affine enc_trunk;        // D -> H
  Affine enc_mu;           // H -> L
  Affine enc_logsig;       // H -> L
  Affine dec_hidden;       // L -> H
  Affine dec_out;          // H -> D
  Affine hvd_enc_trunk;    // L + C -> H
  Affine hvd_enc_mu;       // H -> M
  Affine hvd_enc_logsig;   // H -> M
  Affine hvd_dec_trunk;    // M + C -> H
  Affine hvd_dec_mu;       // H -> L
  Affine hvd_dec_logsig;   // H -> L
  Affine classifier;       // L -> C

  /// He-style init: W ~ N(0, 2/fan_in), biases zero, except the log-sigma
  /// heads whose weights also start at zero so every sigma is exactly 1 at
  /// step 0. Draw order is the named_params order, so a fixed rng gives a
  /// fixed model.
  static HavanaModel init(const ModelDims& dims, bool covariance_constraint, Rng& rng);

  /// Stable (name, tensor) enumeration; the order defines checkpoint layout
  /// and optimizer-state pairing.
  std::vector<std::pair<std::string, Tensor*>> named_params();
  std::vector<std::pair<std::string, const Tensor*>> named_params() const;

  /// Parameters used at inference: encoder trunk plus the mu head,
  /// (D+1)*H + (H+1)*L.
  std::size_t inference_param_count() const;
};

/// One-hot rows for integer labels; throws if a label falls outside [0, classes).
Tensor one_hot(const std::vector<int>& labels, std::size_t classes);

// ---------------------------------------------------------------------------
// Tape-side forward passes. Parameters are pushed as leaves once per tape and
// shared by every forward on that tape.
// ---------------------------------------------------------------------------

struct AffineVar {
  Var W;
  Var b;
};

struct ModelVars {
  AffineVar enc_trunk, enc_mu, enc_logsig;
  AffineVar dec_hidden, dec_out;
  AffineVar hvd_enc_trunk, hvd_enc_mu, hvd_enc_logsig;
  AffineVar hvd_dec_trunk, hvd_dec_mu, hvd_dec_logsig;
  AffineVar classifier;
  std::vector<Var> ordered;  // parallel to HavanaModel::named_params()
};

ModelVars push_params(Tape& tape, const HavanaModel& model);

/// x @ W + b with b broadcast over rows.
Var affine(const AffineVar& f, Var x);

struct VnaeVars {
  GaussianVar z;
  Var z_sample;
  Var x_recon;
};

/// Encoder + reparameterized sample + decoder. x is [B, D]; single vectors go
/// through as a one-row batch. Under the covariance constraint z.log_sigma is
/// a constant all-zeros leaf, so no gradient reaches the log-sigma head.
/// eps must match the z shape [B, L].
VnaeVars vnae_forward(Tape& tape, const ModelVars& vars, const HavanaModel& model,
                      Var x, const Tensor& eps);
VnaeVars vnae_forward(Tape& tape, const ModelVars& vars, const HavanaModel& model,
                      Var x, Rng& rng);

struct HvdVars {
  GaussianVar v;
  Var v_sample;
  GaussianVar z_recon;
};

/// HVD encode of concat(z_sample, y) and decode of concat(v_sample, y).
/// y holds one-hot rows; anything else is rejected.
HvdVars hvd_forward(Tape& tape, const ModelVars& vars, const HavanaModel& model,
                    Var z_sample, const Tensor& y, const Tensor& eps);
HvdVars hvd_forward(Tape& tape, const ModelVars& vars, const HavanaModel& model,
                    Var z_sample, const Tensor& y, Rng& rng);

/// Classifier logits from z_mu.
Var classifier_logits(const ModelVars& vars, Var z_mu);

// ---------------------------------------------------------------------------
// Inference path (no tape, no sampling, no decoder, no HVD).
// ---------------------------------------------------------------------------

/// z_mu for a [N, D] batch (returns [N, L]) or a rank-1 x (returns [L]).
Tensor infer_embedding(const HavanaModel& model, const Tensor& x);

/// Matching log_sigma output; all-zeros under the covariance constraint.
Tensor infer_logsigma(const HavanaModel& model, const Tensor& x);

// ---------------------------------------------------------------------------
// Checkpoint IO: magic "HVCK", version u32, then per entry name length u32,
// name bytes, rank u32, dims u32 x rank, data f32, all little-endian.
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

void save_model(const std::string& path, const HavanaModel& model);
HavanaModel load_model(const std::string& path);

/// Builds a model from already-loaded checkpoint entries (used when the file
/// also carries optimizer state).
HavanaModel model_from_entries(const std::vector<std::pair<std::string, Tensor>>& entries,
                               const std::string& path);

}  // namespace havana
