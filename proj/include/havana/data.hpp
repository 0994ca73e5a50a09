#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "havana/tensor.hpp"

namespace havana {

enum class Split { train, query, gallery };

struct FeatureSet {
  Tensor features;  // [N, D]
  std::vector<std::uint32_t> person_ids;
  std::vector<std::uint16_t> camera_ids;
  Split split = Split::train;

  std::size_t size() const { return person_ids.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.shape()[1] : 0; }
  void validate() const;
};

/// Identities with a shared orthonormal variation basis:
/// x = c_y + V a + n, c_y ~ N(0, s_id^2 I), a ~ N(0, s_var^2 I),
/// n ~ N(0, s_noise^2 I), V common to every identity.
struct SynthSpec {
  int num_ids = 50;
  int samples_per_id = 20;
  int dim = 64;
  double id_scale = 1.0;
  int num_factors = 4;  // K_v
  double variation_scale = 2.0;
  double noise_scale = 0.1;
  int num_cameras = 4;
  int eval_ids = 25;
  int query_per_id = 4;
  int gallery_per_id = 16;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SynthData {
  FeatureSet train;
  FeatureSet query;
  FeatureSet gallery;
  /// Ground-truth factor coefficients a for every sample, in train, query,
  /// gallery order, with matching person/camera ids.
  FeatureSet factors;
};

/// Deterministic generation; eval identities are disjoint from train
/// identities and share the factor matrix V. Feature values are rounded to
/// f32 so in-memory sets match their on-disk form exactly.
SynthData synth_generate(const SynthSpec& spec);

/// Binary feature file: magic "HVFT", u32 version=1, u32 N, u32 D, N*D f32
/// row-major, then magic "HVLB", N u32 person ids, N u16 camera ids. All
/// little-endian. Parse errors name the byte offset.
void write_features(const FeatureSet& set, const std::string& path);
FeatureSet read_features(const std::string& path, Split split = Split::train);

/// Sorted-unique person ids mapped to [0, C); returns one label per sample.
std::vector<int> remap_to_contiguous(const FeatureSet& set, std::size_t& num_classes);

/// Identity-balanced batches: P distinct identities with K samples each.
/// An epoch is a permutation of all identities cut into groups of P; the
/// short trailing group is padded with identities from the front of the
/// permutation. Identities with at least K samples contribute K distinct
/// ones; smaller identities contribute all their samples plus
/// with-replacement draws.
class PkSampler {
 public:
  PkSampler(const std::vector<std::uint32_t>& person_ids, std::size_t p, std::size_t k);

  std::size_t num_identities() const { return groups_.size(); }
  std::size_t batches_per_epoch() const;

  /// All batches of one epoch; each batch is P*K sample indices grouped by
  /// identity.
  std::vector<std::vector<std::size_t>> epoch_batches(Rng& rng) const;

  /// Stateful convenience: pops from the current epoch, drawing a fresh one
  /// from the rng when exhausted.
  std::vector<std::size_t> next_batch(Rng& rng);

 private:
  std::size_t p_;
  std::size_t k_;
  std::vector<std::vector<std::size_t>> groups_;  // sample indices per identity
  std::deque<std::vector<std::size_t>> pending_;
};

}  // namespace havana
