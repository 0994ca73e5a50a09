#include "havana/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "havana/errors.hpp"

namespace havana {

ModelDims ModelDims::resolved() const {
  ModelDims r = *this;
  if (r.hidden == 0) r.hidden = r.feat;
  if (r.latent == 0) r.latent = r.hidden;
  if (r.hvd == 0) r.hvd = std::max<std::size_t>(1, r.latent / 4);
  return r;
}

void ModelDims::validate() const {
  if (feat == 0 || hidden == 0 || latent == 0 || hvd == 0 || classes == 0) {
    throw UsageError("model dims must all be positive");
  }
  if (hvd > latent) {
    throw UsageError("hvd dim M must not exceed latent dim L");
  }
}

namespace {

Affine init_affine(std::size_t in, std::size_t out, Rng& rng) {
  Affine f;
  f.W = scale(randn(rng, {in, out}), std::sqrt(2.0 / static_cast<double>(in)));
  f.b = Tensor::zeros({out});
  return f;
}

/// Log-sigma heads start at exactly zero so every sigma is 1 at step 0 and
/// the z prior term opens at half the squared mean. A hot head feeds exp()
/// an unbounded activation and can overflow the very first forward pass.
Affine init_zero_affine(std::size_t in, std::size_t out) {
  Affine f;
  f.W = Tensor::zeros({in, out});
  f.b = Tensor::zeros({out});
  return f;
}

}  // namespace

HavanaModel HavanaModel::init(const ModelDims& dims_in, bool covariance_constraint, Rng& rng) {
  ModelDims d = dims_in.resolved();
  d.validate();
  HavanaModel m;
  m.dims = d;
  m.covariance_constraint = covariance_constraint;
  m.enc_trunk = init_affine(d.feat, d.hidden, rng);
  m.enc_mu = init_affine(d.hidden, d.latent, rng);
  m.enc_logsig = init_zero_affine(d.hidden, d.latent);
  m.dec_hidden = init_affine(d.latent, d.hidden, rng);
  m.dec_out = init_affine(d.hidden, d.feat, rng);
  m.hvd_enc_trunk = init_affine(d.latent + d.classes, d.hidden, rng);
  m.hvd_enc_mu = init_affine(d.hidden, d.hvd, rng);
  m.hvd_enc_logsig = init_zero_affine(d.hidden, d.hvd);
  m.hvd_dec_trunk = init_affine(d.hvd + d.classes, d.hidden, rng);
  m.hvd_dec_mu = init_affine(d.hidden, d.latent, rng);
  m.hvd_dec_logsig = init_zero_affine(d.hidden, d.latent);
  m.classifier = init_affine(d.latent, d.classes, rng);
  return m;
}

namespace {

template <typename Model, typename TensorPtr>
std::vector<std::pair<std::string, TensorPtr>> enumerate_params(Model& m) {
  std::vector<std::pair<std::string, TensorPtr>> out;
  auto push = [&out](const std::string& name, auto& f) {
    out.emplace_back(name + ".W", &f.W);
    out.emplace_back(name + ".b", &f.b);
  };
  push("enc.trunk", m.enc_trunk);
  push("enc.mu", m.enc_mu);
  push("enc.logsig", m.enc_logsig);
  push("dec.hidden", m.dec_hidden);
  push("dec.out", m.dec_out);
  push("hvd.enc.trunk", m.hvd_enc_trunk);
  push("hvd.enc.mu", m.hvd_enc_mu);
  push("hvd.enc.logsig", m.hvd_enc_logsig);
  push("hvd.dec.trunk", m.hvd_dec_trunk);
  push("hvd.dec.mu", m.hvd_dec_mu);
  push("hvd.dec.logsig", m.hvd_dec_logsig);
  push("cls", m.classifier);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> HavanaModel::named_params() {
  return enumerate_params<HavanaModel, Tensor*>(*this);
}

std::vector<std::pair<std::string, const Tensor*>> HavanaModel::named_params() const {
  return enumerate_params<const HavanaModel, const Tensor*>(*this);
}

std::size_t HavanaModel::inference_param_count() const {
  return enc_trunk.W.numel() + enc_trunk.b.numel() + enc_mu.W.numel() + enc_mu.b.numel();
}

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor y = Tensor::zeros({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("label " + std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
    y.mutable_data()[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Tape-side forwards.
// ---------------------------------------------------------------------------

ModelVars push_params(Tape& tape, const HavanaModel& model) {
  ModelVars v;
  AffineVar* slots[] = {&v.enc_trunk,     &v.enc_mu,      &v.enc_logsig, &v.dec_hidden,
                        &v.dec_out,       &v.hvd_enc_trunk, &v.hvd_enc_mu, &v.hvd_enc_logsig,
                        &v.hvd_dec_trunk, &v.hvd_dec_mu,  &v.hvd_dec_logsig, &v.classifier};
  auto params = model.named_params();
  for (std::size_t i = 0; i < params.size(); i += 2) {
    slots[i / 2]->W = tape.leaf(*params[i].second);
    slots[i / 2]->b = tape.leaf(*params[i + 1].second);
    v.ordered.push_back(slots[i / 2]->W);
    v.ordered.push_back(slots[i / 2]->b);
  }
  return v;
}

Var affine(const AffineVar& f, Var x) {
  return add(matmul(x, f.W), f.b);
}

namespace {

void check_batch_input(const Tensor& x, std::size_t want_cols, const char* what) {
  if (x.rank() != 2 || x.shape()[1] != want_cols) {
    throw DataError(std::string(what) + " wants [batch, " + std::to_string(want_cols) +
                    "], got " + x.shape_str());
  }
}

void check_eps(const Tensor& eps, std::size_t rows, std::size_t cols, const char* what) {
  if (eps.rank() != 2 || eps.shape()[0] != rows || eps.shape()[1] != cols) {
    throw DataError(std::string(what) + " noise wants [" + std::to_string(rows) + ", " +
                    std::to_string(cols) + "], got " + eps.shape_str());
  }
}

}  // namespace

VnaeVars vnae_forward(Tape& tape, const ModelVars& vars, const HavanaModel& model,
                      Var x, const Tensor& eps) {
  const Tensor& xv = tape.value(x);
  check_batch_input(xv, model.dims.feat, "vnae_forward");
  std::size_t batch = xv.shape()[0];
  check_eps(eps, batch, model.dims.latent, "vnae_forward");

  Var h = relu(affine(vars.enc_trunk, x));
  VnaeVars out;
  out.z.mu = affine(vars.enc_mu, h);
  if (model.covariance_constraint) {
    out.z.log_sigma = tape.leaf(Tensor::zeros({batch, model.dims.latent}));
  } else {
    out.z.log_sigma = affine(vars.enc_logsig, h);
  }
  out.z_sample = reparameterize(out.z, tape.leaf(eps));
  Var g = relu(affine(vars.dec_hidden, out.z_sample));
  out.x_recon = affine(vars.dec_out, g);
  return out;
}

VnaeVars vnae_forward(Tape& tape, const ModelVars& vars, const HavanaModel& model,
                      Var x, Rng& rng) {
  const Tensor& xv = tape.value(x);
  check_batch_input(xv, model.dims.feat, "vnae_forward");
  Tensor eps = randn(rng, {xv.shape()[0], model.dims.latent});
  return vnae_forward(tape, vars, model, x, eps);
}

namespace {

void check_one_hot(const Tensor& y, std::size_t rows, std::size_t classes) {
  if (y.rank() != 2 || y.shape()[0] != rows || y.shape()[1] != classes) {
    throw DataError("one-hot labels want [" + std::to_string(rows) + ", " +
                    std::to_string(classes) + "], got " + y.shape_str());
  }
  for (std::size_t r = 0; r < rows; ++r) {
    int ones = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      double v = y.data()[r * classes + c];
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw DataError("labels row " + std::to_string(r) + " is not one-hot");
      }
    }
    if (ones != 1) {
      throw DataError("labels row " + std::to_string(r) + " is not one-hot");
    }
  }
}

}  // namespace

HvdVars hvd_forward(Tape& tape, const ModelVars& vars, const HavanaModel& model,
                    Var z_sample, const Tensor& y, const Tensor& eps) {
  const Tensor& zv = tape.value(z_sample);
  check_batch_input(zv, model.dims.latent, "hvd_forward");
  std::size_t batch = zv.shape()[0];
  check_one_hot(y, batch, model.dims.classes);
  check_eps(eps, batch, model.dims.hvd, "hvd_forward");

  Var y_leaf = tape.leaf(y);
  Var h = relu(affine(vars.hvd_enc_trunk, hcat(z_sample, y_leaf)));
  HvdVars out;
  out.v.mu = affine(vars.hvd_enc_mu, h);
  out.v.log_sigma = affine(vars.hvd_enc_logsig, h);
  out.v_sample = reparameterize(out.v, tape.leaf(eps));
  Var g = relu(affine(vars.hvd_dec_trunk, hcat(out.v_sample, y_leaf)));
  out.z_recon.mu = affine(vars.hvd_dec_mu, g);
  out.z_recon.log_sigma = affine(vars.hvd_dec_logsig, g);
  return out;
}

HvdVars hvd_forward(Tape& tape, const ModelVars& vars, const HavanaModel& model,
                    Var z_sample, const Tensor& y, Rng& rng) {
  const Tensor& zv = tape.value(z_sample);
  check_batch_input(zv, model.dims.latent, "hvd_forward");
  Tensor eps = randn(rng, {zv.shape()[0], model.dims.hvd});
  return hvd_forward(tape, vars, model, z_sample, y, eps);
}

Var classifier_logits(const ModelVars& vars, Var z_mu) {
  return affine(vars.classifier, z_mu);
}

// ---------------------------------------------------------------------------
// Inference path.
// ---------------------------------------------------------------------------

namespace {

Tensor as_matrix(const Tensor& x, std::size_t want_cols, const char* what) {
  if (x.rank() == 2) {
    if (x.shape()[1] != want_cols) {
      throw DataError(std::string(what) + ": feature width " + std::to_string(x.shape()[1]) +
                      " does not match model D=" + std::to_string(want_cols));
    }
    return x;
  }
  if (x.rank() == 1) {
    if (x.numel() != want_cols) {
      throw DataError(std::string(what) + ": feature length " + std::to_string(x.numel()) +
                      " does not match model D=" + std::to_string(want_cols));
    }
    Tensor m = Tensor::zeros({1, want_cols});
    m.mutable_data() = x.data();
    return m;
  }
  throw DataError(std::string(what) + ": wants rank-1 or rank-2 input, got " + x.shape_str());
}

Tensor restore_rank(const Tensor& out, bool was_vector) {
  if (!was_vector) return out;
  Tensor v = Tensor::zeros({out.shape()[1]});
  v.mutable_data() = out.data();
  return v;
}

}  // namespace

Tensor infer_embedding(const HavanaModel& model, const Tensor& x) {
  bool was_vector = x.rank() == 1;
  Tensor xm = as_matrix(x, model.dims.feat, "infer_embedding");
  Tensor h = relu(add(matmul(xm, model.enc_trunk.W), model.enc_trunk.b));
  Tensor mu = add(matmul(h, model.enc_mu.W), model.enc_mu.b);
  return restore_rank(mu, was_vector);
}

Tensor infer_logsigma(const HavanaModel& model, const Tensor& x) {
  bool was_vector = x.rank() == 1;
  Tensor xm = as_matrix(x, model.dims.feat, "infer_logsigma");
  if (model.covariance_constraint) {
    Tensor zero = Tensor::zeros({xm.shape()[0], model.dims.latent});
    return restore_rank(zero, was_vector);
  }
  Tensor h = relu(add(matmul(xm, model.enc_trunk.W), model.enc_trunk.b));
  Tensor ls = add(matmul(h, model.enc_logsig.W), model.enc_logsig.b);
  return restore_rank(ls, was_vector);
}

// ---------------------------------------------------------------------------
// Checkpoint IO.
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, double v) {
  float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}

struct ByteReader {
  std::ifstream in;
  std::size_t offset = 0;
  std::string path;

  ByteReader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw DataError("cannot open checkpoint " + p);
  }

  bool at_eof() {
    return in.peek() == std::ifstream::traits_type::eof();
  }

  void bytes(void* dst, std::size_t n, const char* what) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw DataError(path + ": truncated checkpoint reading " + what + " at byte " +
                      std::to_string(offset));
    }
    offset += n;
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  double f32(const char* what) {
    std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
  }
};

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path);
  os.write("HVCK", 4);
  put_u32(os, kCheckpointVersion);
  for (const auto& [name, tensor] : entries) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) put_f32(os, v);
  }
  if (!os) throw DataError("write failure on checkpoint " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  ByteReader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "HVCK", 4) != 0) {
    throw DataError(path + ": bad magic at byte 0, not an HVCK checkpoint");
  }
  std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<std::pair<std::string, Tensor>> entries;
  while (!r.at_eof()) {
    std::uint32_t name_len = r.u32("name length");
    if (name_len == 0 || name_len > (1u << 16)) {
      throw DataError(path + ": implausible name length " + std::to_string(name_len) +
                      " at byte " + std::to_string(r.offset - 4));
    }
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "name");
    std::uint32_t rank = r.u32("rank");
    if (rank > 8) {
      throw DataError(path + ": implausible rank " + std::to_string(rank) + " for entry " + name);
    }
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = r.u32("dims");
      numel *= shape[d];
    }
    if (numel > (1u << 28)) {
      throw DataError(path + ": implausible element count for entry " + name);
    }
    Tensor t = Tensor::zeros(shape);
    for (std::size_t i = 0; i < numel; ++i) t.mutable_data()[i] = r.f32("data");
    entries.emplace_back(std::move(name), std::move(t));
  }
  return entries;
}

void save_model(const std::string& path, const HavanaModel& model) {
  std::vector<std::pair<std::string, Tensor>> entries;
  for (const auto& [name, tensor] : model.named_params()) {
    entries.emplace_back(name, *tensor);
  }
  const ModelDims& d = model.dims;
  entries.emplace_back("meta.dims",
                       Tensor::vector({static_cast<double>(d.feat), static_cast<double>(d.hidden),
                                     static_cast<double>(d.latent), static_cast<double>(d.hvd),
                                     static_cast<double>(d.classes),
                                     model.covariance_constraint ? 1.0 : 0.0}));
  save_checkpoint(path, entries);
}

HavanaModel model_from_entries(const std::vector<std::pair<std::string, Tensor>>& entries,
                               const std::string& path) {
  auto find = [&entries, &path](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : entries) {
      if (n == name) return t;
    }
    throw DataError(path + ": checkpoint is missing entry " + name);
  };

  const Tensor& dims = find("meta.dims");
  if (dims.numel() != 6) {
    throw DataError(path + ": meta.dims wants 6 values, got " + std::to_string(dims.numel()));
  }
  HavanaModel m;
  m.dims.feat = static_cast<std::size_t>(dims.data()[0]);
  m.dims.hidden = static_cast<std::size_t>(dims.data()[1]);
  m.dims.latent = static_cast<std::size_t>(dims.data()[2]);
  m.dims.hvd = static_cast<std::size_t>(dims.data()[3]);
  m.dims.classes = static_cast<std::size_t>(dims.data()[4]);
  m.covariance_constraint = dims.data()[5] != 0.0;
  m.dims.validate();

  Rng scratch(0);
  HavanaModel shaped = HavanaModel::init(m.dims, m.covariance_constraint, scratch);
  for (auto& [name, slot] : shaped.named_params()) {
    const Tensor& loaded = find(name);
    if (loaded.shape() != slot->shape()) {
      throw DataError(path + ": entry " + name + " has shape " + loaded.shape_str() +
                      ", expected " + slot->shape_str());
    }
    *slot = loaded;
  }
  shaped.covariance_constraint = m.covariance_constraint;
  return shaped;
}

HavanaModel load_model(const std::string& path) {
  return model_from_entries(load_checkpoint(path), path);
}

}  // namespace havana
