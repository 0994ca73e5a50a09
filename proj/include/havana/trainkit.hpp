#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "havana/data.hpp"
#include "havana/losses.hpp"
#include "havana/nets.hpp"
#include "havana/tensor.hpp"

namespace havana {

struct TrainConfig {
  double lr = 1e-5;
  double weight_decay = 5e-4;
  int epochs = 100;
  int warmup_epochs = 10;
  std::size_t batch_p = 16;
  std::size_t batch_k = 4;
  std::uint64_t seed = 42;
  Precision precision_mode = Precision::f32;
  int checkpoint_every = 25;
  LossWeights weights;
  Toggles toggles;
  /// Steps per epoch for the warmup ramp; fit() fills it from the sampler.
  long steps_per_epoch = 1;

  void validate() const;
};

/// Adam accumulators, one pair per entry of HavanaModel::named_params().
struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;

  static OptimizerState init(const HavanaModel& model);
};

/// Linear warmup from 0.01*lr at step 0 to lr at the end of warmup_epochs,
/// constant afterwards (no decay).
double lr_at(long step, const TrainConfig& config);

/// One Adam update over all parameters: g <- grad + wd*theta, moment update,
/// bias correction, theta <- theta - lr * mhat / (sqrt(vhat) + 1e-8).
void adam_update(HavanaModel& model, const std::vector<Tensor>& grads,
                 OptimizerState& opt, double lr, double weight_decay);

/// One full Alg.-1 step: forward (VNAE, classifier, mining, HVD), total loss,
/// backward, optimizer update. Draws reparameterization noise from rng.
LossReport train_step(HavanaModel& model, const Tensor& x, const std::vector<int>& labels,
                      const TrainConfig& config, OptimizerState& opt, Rng& rng);

struct FitPaths {
  std::string checkpoint_dir;  // empty: no checkpoints written
  std::string log_path;        // empty: no run log
  std::string resume;          // checkpoint to continue from
};

struct FitResult {
  std::vector<LossReport> epochs;  // per-epoch means, one per epoch actually run
  std::string final_checkpoint;    // empty when checkpoint_dir is empty
  int start_epoch = 0;
};

/// Epoch loop: per epoch, a derived rng drives the PK sampler and all noise,
/// so a resumed run replays the remaining epochs of an unbroken run. Writes
/// one `epoch,cls,jst,reconx,klz,klv,reconz,total,lr` row per epoch and
/// checkpoints (parameters + optimizer state) every checkpoint_every epochs
/// and at completion. on_epoch, when given, sees each 1-based epoch's mean
/// report as it completes.
using EpochCallback = std::function<void(int epoch, const LossReport&)>;
FitResult fit(HavanaModel& model, const FeatureSet& train, const TrainConfig& config,
              const FitPaths& paths, const EpochCallback& on_epoch = {});

/// Full training checkpoint: model entries plus opt.m.*/opt.v.* moments and
/// meta.epoch/meta.step counters.
void save_train_checkpoint(const std::string& path, const HavanaModel& model,
                           const OptimizerState& opt, int completed_epochs);

/// Restores model and optimizer state; returns completed epochs.
int load_train_checkpoint(const std::string& path, HavanaModel& model, OptimizerState& opt);

}  // namespace havana
