#include "havana/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "havana/errors.hpp"

namespace havana {

void FeatureSet::validate() const {
  if (features.rank() != 2) {
    throw DataError("feature matrix must be rank 2, got " + features.shape_str());
  }
  std::size_t n = features.shape()[0];
  if (person_ids.size() != n || camera_ids.size() != n) {
    throw DataError("feature set length disagreement: " + std::to_string(n) + " rows, " +
                    std::to_string(person_ids.size()) + " person ids, " +
                    std::to_string(camera_ids.size()) + " camera ids");
  }
}

void SynthSpec::validate() const {
  if (num_ids < 2) throw UsageError("synth needs at least two train identities");
  if (samples_per_id < 2) {
    throw UsageError("synth needs at least two samples per identity (mining is impossible below that)");
  }
  if (dim < 1) throw UsageError("synth feature dim must be positive");
  if (id_scale <= 0.0) throw UsageError("id_scale must be positive");
  if (variation_scale < 0.0 || noise_scale < 0.0) {
    throw UsageError("variation_scale and noise_scale must be non-negative");
  }
  if (num_factors < 1 || num_factors >= dim) {
    throw UsageError("num_factors must satisfy 1 <= K_v < dim");
  }
  if (num_cameras < 1) throw UsageError("num_cameras must be positive");
  if (eval_ids < 1 || query_per_id < 1 || gallery_per_id < 1) {
    throw UsageError("eval split sizes must be positive");
  }
}

namespace {

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Orthonormal columns via modified Gram-Schmidt on a Gaussian draw.
std::vector<std::vector<double>> draw_basis(Rng& rng, std::size_t dim, std::size_t k) {
  std::vector<std::vector<double>> cols(k);
  for (std::size_t c = 0; c < k; ++c) {
    Tensor g = randn(rng, {dim});
    cols[c].assign(g.data().begin(), g.data().end());
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += cols[c][d] * cols[prev][d];
      for (std::size_t d = 0; d < dim; ++d) cols[c][d] -= dot * cols[prev][d];
    }
    double norm = 0.0;
    for (double v : cols[c]) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw NumericError("degenerate variation basis draw");
    for (double& v : cols[c]) v /= norm;
  }
  return cols;
}

struct SampleSink {
  FeatureSet set;
  std::size_t next_row = 0;

  SampleSink(std::size_t n, std::size_t d, Split split) {
    set.features = Tensor::zeros({n, d});
    set.person_ids.reserve(n);
    set.camera_ids.reserve(n);
    set.split = split;
  }

  void push(const std::vector<double>& x, std::uint32_t pid, std::uint16_t cam) {
    std::size_t d = x.size();
    for (std::size_t i = 0; i < d; ++i) set.features.mutable_data()[next_row * d + i] = to_f32(x[i]);
    set.person_ids.push_back(pid);
    set.camera_ids.push_back(cam);
    ++next_row;
  }
};

}  // namespace

SynthData synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::size_t dim = static_cast<std::size_t>(spec.dim);
  std::size_t kv = static_cast<std::size_t>(spec.num_factors);

  auto basis = draw_basis(rng, dim, kv);

  std::size_t total_ids = static_cast<std::size_t>(spec.num_ids + spec.eval_ids);
  std::vector<std::vector<double>> centers(total_ids);
  for (auto& c : centers) {
    Tensor g = randn(rng, {dim});
    c.assign(g.data().begin(), g.data().end());
    for (double& v : c) v *= spec.id_scale;
  }

  std::size_t n_train = static_cast<std::size_t>(spec.num_ids * spec.samples_per_id);
  std::size_t n_query = static_cast<std::size_t>(spec.eval_ids * spec.query_per_id);
  std::size_t n_gallery = static_cast<std::size_t>(spec.eval_ids * spec.gallery_per_id);

  SampleSink train(n_train, dim, Split::train);
  SampleSink query(n_query, dim, Split::query);
  SampleSink gallery(n_gallery, dim, Split::gallery);
  SampleSink factors(n_train + n_query + n_gallery, kv, Split::train);

  std::vector<double> x(dim);
  auto emit = [&](SampleSink& sink, std::uint32_t pid, int sample_idx) {
    Tensor a = randn(rng, {kv});
    Tensor noise = randn(rng, {dim});
    const auto& center = centers[pid];
    for (std::size_t d = 0; d < dim; ++d) {
      double acc = center[d];
      for (std::size_t f = 0; f < kv; ++f) {
        acc += basis[f][d] * (a.data()[f] * spec.variation_scale);
      }
      x[d] = acc + noise.data()[d] * spec.noise_scale;
    }
    std::uint16_t cam = static_cast<std::uint16_t>(sample_idx % spec.num_cameras);
    sink.push(x, pid, cam);
    std::vector<double> av(a.data().begin(), a.data().end());
    for (double& v : av) v *= spec.variation_scale;
    factors.push(av, pid, cam);
  };

  for (int id = 0; id < spec.num_ids; ++id) {
    for (int j = 0; j < spec.samples_per_id; ++j) {
      emit(train, static_cast<std::uint32_t>(id), j);
    }
  }
  for (int e = 0; e < spec.eval_ids; ++e) {
    std::uint32_t pid = static_cast<std::uint32_t>(spec.num_ids + e);
    for (int j = 0; j < spec.query_per_id; ++j) emit(query, pid, j);
  }
  for (int e = 0; e < spec.eval_ids; ++e) {
    std::uint32_t pid = static_cast<std::uint32_t>(spec.num_ids + e);
    for (int j = 0; j < spec.gallery_per_id; ++j) emit(gallery, pid, j);
  }

  SynthData out;
  out.train = std::move(train.set);
  out.query = std::move(query.set);
  out.gallery = std::move(gallery.set);
  out.factors = std::move(factors.set);
  return out;
}

// ---------------------------------------------------------------------------
// HVFT/HVLB IO.
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

struct FileReader {
  std::ifstream in;
  std::size_t offset = 0;
  std::string path;

  FileReader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw DataError("cannot open feature file " + p);
  }

  void bytes(void* dst, std::size_t n, const char* what) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw DataError(path + ": truncated reading " + what + " at byte " +
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

  std::uint16_t u16(const char* what) {
    unsigned char b[2];
    bytes(b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  double f32(const char* what) {
    std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
  }
};

constexpr std::uint32_t kFeatureVersion = 1;

}  // namespace

void write_features(const FeatureSet& set, const std::string& path) {
  set.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write feature file " + path);
  std::size_t n = set.size();
  std::size_t d = set.dim();
  os.write("HVFT", 4);
  put_u32(os, kFeatureVersion);
  put_u32(os, static_cast<std::uint32_t>(n));
  put_u32(os, static_cast<std::uint32_t>(d));
  for (double v : set.features.data()) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
  os.write("HVLB", 4);
  for (std::uint32_t pid : set.person_ids) put_u32(os, pid);
  for (std::uint16_t cam : set.camera_ids) put_u16(os, cam);
  if (!os) throw DataError("write failure on feature file " + path);
}

FeatureSet read_features(const std::string& path, Split split) {
  FileReader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "HVFT", 4) != 0) {
    throw DataError(path + ": bad magic at byte 0, not an HVFT feature file");
  }
  std::uint32_t version = r.u32("version");
  if (version != kFeatureVersion) {
    throw DataError(path + ": unsupported version " + std::to_string(version) + " at byte 4");
  }
  std::uint32_t n = r.u32("sample count");
  std::uint32_t d = r.u32("feature dim");
  if (static_cast<std::uint64_t>(n) * d > (1ull << 31)) {
    throw DataError(path + ": implausible size " + std::to_string(n) + "x" + std::to_string(d) +
                    " at byte 8");
  }
  FeatureSet set;
  set.split = split;
  set.features = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * d; ++i) {
    set.features.mutable_data()[i] = r.f32("feature data");
  }
  r.bytes(magic, 4, "label magic");
  if (std::memcmp(magic, "HVLB", 4) != 0) {
    throw DataError(path + ": bad label magic at byte " + std::to_string(r.offset - 4));
  }
  set.person_ids.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) set.person_ids[i] = r.u32("person ids");
  set.camera_ids.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) set.camera_ids[i] = r.u16("camera ids");
  return set;
}

std::vector<int> remap_to_contiguous(const FeatureSet& set, std::size_t& num_classes) {
  std::map<std::uint32_t, int> mapping;
  for (std::uint32_t pid : set.person_ids) mapping.emplace(pid, 0);
  int next = 0;
  for (auto& [pid, label] : mapping) label = next++;
  std::vector<int> labels;
  labels.reserve(set.person_ids.size());
  for (std::uint32_t pid : set.person_ids) labels.push_back(mapping[pid]);
  num_classes = static_cast<std::size_t>(next);
  return labels;
}

// ---------------------------------------------------------------------------
// PkSampler.
// ---------------------------------------------------------------------------

PkSampler::PkSampler(const std::vector<std::uint32_t>& person_ids, std::size_t p, std::size_t k)
    : p_(p), k_(k) {
  if (p < 2 || k < 2) {
    throw UsageError("PK sampler wants P >= 2 and K >= 2 (mining needs both)");
  }
  std::map<std::uint32_t, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < person_ids.size(); ++i) by_id[person_ids[i]].push_back(i);
  groups_.reserve(by_id.size());
  for (auto& [pid, indices] : by_id) groups_.push_back(std::move(indices));
  if (groups_.size() < p_) {
    throw UsageError("PK sampler wants at least P=" + std::to_string(p_) +
                     " identities, set has " + std::to_string(groups_.size()));
  }
}

std::size_t PkSampler::batches_per_epoch() const {
  return (groups_.size() + p_ - 1) / p_;
}

std::vector<std::vector<std::size_t>> PkSampler::epoch_batches(Rng& rng) const {
  std::size_t c = groups_.size();
  std::vector<std::size_t> perm(c);
  for (std::size_t i = 0; i < c; ++i) perm[i] = i;
  shuffle(perm, rng);

  std::vector<std::vector<std::size_t>> batches;
  batches.reserve(batches_per_epoch());
  for (std::size_t start = 0; start < c; start += p_) {
    std::vector<std::size_t> ids(perm.begin() + start,
                                 perm.begin() + std::min(start + p_, c));
    // Pad a short trailing group from the front of the permutation, keeping
    // the P identities distinct.
    for (std::size_t fill = 0; ids.size() < p_; ++fill) {
      std::size_t candidate = perm[fill];
      if (std::find(ids.begin(), ids.end(), candidate) == ids.end()) {
        ids.push_back(candidate);
      }
    }

    std::vector<std::size_t> batch;
    batch.reserve(p_ * k_);
    for (std::size_t id : ids) {
      const std::vector<std::size_t>& samples = groups_[id];
      if (samples.size() >= k_) {
        std::vector<std::size_t> pool = samples;
        for (std::size_t i = 0; i < k_; ++i) {
          std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
          std::swap(pool[i], pool[j]);
          batch.push_back(pool[i]);
        }
      } else {
        for (std::size_t s : samples) batch.push_back(s);
        for (std::size_t i = samples.size(); i < k_; ++i) {
          batch.push_back(samples[rng.below(samples.size())]);
        }
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<std::size_t> PkSampler::next_batch(Rng& rng) {
  if (pending_.empty()) {
    for (auto& b : epoch_batches(rng)) pending_.push_back(std::move(b));
  }
  std::vector<std::size_t> out = std::move(pending_.front());
  pending_.pop_front();
  return out;
}

}  // namespace havana
