#include "havana/trainkit.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "havana/errors.hpp"
#include "havana/format.hpp"
#include "havana/tape.hpp"

namespace havana {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

/// Stream ids for Rng::derive: keep model init, and each epoch, on disjoint
/// deterministic streams of the one user-facing seed.
constexpr std::uint64_t kEpochStreamBase = 1000;

}  // namespace

void TrainConfig::validate() const {
  if (lr <= 0.0) throw UsageError("lr must be positive");
  if (weight_decay < 0.0) throw UsageError("weight_decay must be non-negative");
  if (epochs < 0) throw UsageError("epochs must be non-negative");
  if (warmup_epochs < 0 || warmup_epochs > epochs) {
    throw UsageError("warmup_epochs must lie in [0, epochs]");
  }
  if (batch_p < 2 || batch_k < 2) {
    throw UsageError("batch_p and batch_k must both be at least 2");
  }
  if (checkpoint_every < 0) throw UsageError("checkpoint_every must be non-negative");
  weights.validate();
}

OptimizerState OptimizerState::init(const HavanaModel& model) {
  OptimizerState opt;
  for (const auto& [name, tensor] : model.named_params()) {
    opt.m.push_back(Tensor::zeros(tensor->shape()));
    opt.v.push_back(Tensor::zeros(tensor->shape()));
  }
  return opt;
}

double lr_at(long step, const TrainConfig& config) {
  if (step < 0) throw UsageError("lr_at step must be non-negative");
  long warmup_steps = static_cast<long>(config.warmup_epochs) * config.steps_per_epoch;
  if (warmup_steps <= 0 || step >= warmup_steps) return config.lr;
  double frac = static_cast<double>(step) / static_cast<double>(warmup_steps);
  return config.lr * (0.01 + 0.99 * frac);
}

void adam_update(HavanaModel& model, const std::vector<Tensor>& grads,
                 OptimizerState& opt, double lr, double weight_decay) {
  auto params = model.named_params();
  if (grads.size() != params.size()) {
    throw DataError("adam_update: " + std::to_string(grads.size()) + " grads for " +
                    std::to_string(params.size()) + " parameters");
  }
  ++opt.step;
  double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(opt.step));
  double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = *params[i].second;
    Tensor g = weight_decay != 0.0 ? add(grads[i], scale(theta, weight_decay)) : grads[i];
    opt.m[i] = add(scale(opt.m[i], kBeta1), scale(g, 1.0 - kBeta1));
    opt.v[i] = add(scale(opt.v[i], kBeta2), scale(mul(g, g), 1.0 - kBeta2));
    Tensor mhat = scale(opt.m[i], 1.0 / bc1);
    Tensor vhat = scale(opt.v[i], 1.0 / bc2);
    Tensor update = div(mhat, addc(sqrt(vhat), kAdamEps));
    theta = sub(theta, scale(update, lr));
  }
}

LossReport train_step(HavanaModel& model, const Tensor& x, const std::vector<int>& labels,
                      const TrainConfig& config, OptimizerState& opt, Rng& rng) {
  double lr = lr_at(opt.step, config);
  std::size_t batch = labels.size();

  Tape tape;
  ModelVars vars = push_params(tape, model);
  Var x_leaf = tape.leaf(x);
  Tensor eps_z = randn(rng, {batch, model.dims.latent});
  Tensor eps_v = config.toggles.use_hvd ? randn(rng, {batch, model.dims.hvd}) : Tensor();

  BatchLossVars loss = havana_batch_loss(tape, vars, model, x_leaf, labels, eps_z, eps_v,
                                         config.weights, config.toggles);
  LossReport report = report_from(tape, loss, config.weights);

  tape.backward(loss.total);
  std::vector<Tensor> grads;
  grads.reserve(vars.ordered.size());
  for (Var v : vars.ordered) grads.push_back(tape.grad(v));
  adam_update(model, grads, opt, lr, config.weight_decay);
  return report;
}

void save_train_checkpoint(const std::string& path, const HavanaModel& model,
                           const OptimizerState& opt, int completed_epochs) {
  std::vector<std::pair<std::string, Tensor>> entries;
  auto params = model.named_params();
  for (const auto& [name, tensor] : params) entries.emplace_back(name, *tensor);
  for (std::size_t i = 0; i < params.size(); ++i) {
    entries.emplace_back("opt.m." + params[i].first, opt.m[i]);
    entries.emplace_back("opt.v." + params[i].first, opt.v[i]);
  }
  const ModelDims& d = model.dims;
  entries.emplace_back("meta.dims",
                       Tensor::vector({static_cast<double>(d.feat), static_cast<double>(d.hidden),
                                     static_cast<double>(d.latent), static_cast<double>(d.hvd),
                                     static_cast<double>(d.classes),
                                     model.covariance_constraint ? 1.0 : 0.0}));
  entries.emplace_back("meta.epoch", Tensor::vector({static_cast<double>(completed_epochs)}));
  entries.emplace_back("meta.step", Tensor::vector({static_cast<double>(opt.step)}));
  save_checkpoint(path, entries);
}

int load_train_checkpoint(const std::string& path, HavanaModel& model, OptimizerState& opt) {
  auto entries = load_checkpoint(path);
  model = model_from_entries(entries, path);

  auto find = [&entries, &path](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : entries) {
      if (n == name) return t;
    }
    throw DataError(path + ": checkpoint is missing entry " + name);
  };

  opt = OptimizerState::init(model);
  auto params = model.named_params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& m = find("opt.m." + params[i].first);
    const Tensor& v = find("opt.v." + params[i].first);
    if (m.shape() != params[i].second->shape() || v.shape() != params[i].second->shape()) {
      throw DataError(path + ": optimizer moment shape mismatch for " + params[i].first);
    }
    opt.m[i] = m;
    opt.v[i] = v;
  }
  opt.step = static_cast<long>(find("meta.step").value());
  return static_cast<int>(find("meta.epoch").value());
}

namespace {

void append_log_row(std::ofstream& log, int epoch, const LossReport& r, double lr) {
  if (!log.is_open()) return;
  log << epoch << ',' << format_double(r.cls) << ',' << format_double(r.jst) << ','
      << format_double(r.reconx) << ',' << format_double(r.klz) << ','
      << format_double(r.klv) << ',' << format_double(r.reconz) << ','
      << format_double(r.total) << ',' << format_double(lr) << '\n';
  log.flush();
}

void write_log_header(std::ofstream& log, const TrainConfig& c) {
  log << "# lr = " << format_double(c.lr) << "\n"
      << "# weight_decay = " << format_double(c.weight_decay) << "\n"
      << "# epochs = " << c.epochs << "\n"
      << "# warmup_epochs = " << c.warmup_epochs << "\n"
      << "# batch_p = " << c.batch_p << "\n"
      << "# batch_k = " << c.batch_k << "\n"
      << "# seed = " << c.seed << "\n"
      << "# precision = " << (c.precision_mode == Precision::f32 ? "f32" : "f64") << "\n"
      << "# alpha = " << format_double(c.weights.alpha) << "\n"
      << "# beta = " << format_double(c.weights.beta) << "\n"
      << "# lambda_jst = " << format_double(c.weights.lambda_jst) << "\n"
      << "# gamma = " << format_double(c.weights.gamma) << "\n"
      << "# label_smoothing_eps = " << format_double(c.weights.label_smoothing_eps) << "\n"
      << "# covariance_constraint = " << (c.weights.covariance_constraint ? "on" : "off") << "\n"
      << "# use_hvd = " << (c.toggles.use_hvd ? "on" : "off") << "\n"
      << "# use_jst = " << (c.toggles.use_jst ? "on" : "off") << "\n";
}

}  // namespace

FitResult fit(HavanaModel& model, const FeatureSet& train, const TrainConfig& config,
              const FitPaths& paths, const EpochCallback& on_epoch) {
  config.validate();
  train.validate();
  set_precision(config.precision_mode);

  std::size_t num_classes = 0;
  std::vector<int> labels = remap_to_contiguous(train, num_classes);
  if (num_classes != model.dims.classes) {
    throw DataError("training set has " + std::to_string(num_classes) +
                    " identities but the model was built for " +
                    std::to_string(model.dims.classes));
  }
  if (train.dim() != model.dims.feat) {
    throw DataError("training set dim " + std::to_string(train.dim()) +
                    " does not match model D=" + std::to_string(model.dims.feat));
  }

  PkSampler sampler(train.person_ids, config.batch_p, config.batch_k);
  TrainConfig cfg = config;
  cfg.steps_per_epoch = static_cast<long>(sampler.batches_per_epoch());

  FitResult result;
  OptimizerState opt = OptimizerState::init(model);
  if (!paths.resume.empty()) {
    result.start_epoch = load_train_checkpoint(paths.resume, model, opt);
  }

  std::ofstream log;
  if (!paths.log_path.empty()) {
    bool fresh = result.start_epoch == 0;
    log.open(paths.log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw DataError("cannot write run log " + paths.log_path);
    if (fresh) {
      write_log_header(log, cfg);
      log << "# epoch,cls,jst,reconx,klz,klv,reconz,total,lr\n";
    }
  }

  if (!paths.checkpoint_dir.empty()) {
    std::filesystem::create_directories(paths.checkpoint_dir);
  }

  std::size_t dim = train.dim();
  for (int epoch = result.start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng erng(Rng::derive(cfg.seed, kEpochStreamBase + static_cast<std::uint64_t>(epoch)));
    auto batches = sampler.epoch_batches(erng);

    LossReport mean;
    for (const auto& batch : batches) {
      Tensor x = Tensor::zeros({batch.size(), dim});
      std::vector<int> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const double* src = train.features.data().data() + batch[i] * dim;
        std::copy(src, src + dim, x.mutable_data().begin() + static_cast<std::ptrdiff_t>(i * dim));
        y[i] = labels[batch[i]];
      }
      LossReport r = train_step(model, x, y, cfg, opt, erng);
      mean.cls += r.cls;
      mean.jst += r.jst;
      mean.reconx += r.reconx;
      mean.klz += r.klz;
      mean.klv += r.klv;
      mean.reconz += r.reconz;
    }
    double n = static_cast<double>(batches.size());
    mean.cls /= n;
    mean.jst /= n;
    mean.reconx /= n;
    mean.klz /= n;
    mean.klv /= n;
    mean.reconz /= n;
    mean = total_loss(mean, cfg.weights);
    result.epochs.push_back(mean);

    double lr_last = lr_at(opt.step - 1, cfg);
    append_log_row(log, epoch + 1, mean, lr_last);
    if (on_epoch) on_epoch(epoch + 1, mean);

    if (!paths.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
      std::string path = paths.checkpoint_dir + "/model_epoch_" + std::to_string(epoch + 1) +
                         ".hvck";
      save_train_checkpoint(path, model, opt, epoch + 1);
    }
  }

  if (!paths.checkpoint_dir.empty()) {
    result.final_checkpoint = paths.checkpoint_dir + "/model_final.hvck";
    save_train_checkpoint(result.final_checkpoint, model, opt, cfg.epochs);
  }
  return result;
}

}  // namespace havana
