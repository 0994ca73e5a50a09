#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "havana/data.hpp"
#include "havana/nets.hpp"
#include "havana/tensor.hpp"

namespace havana {

struct RetrievalResult {
  double map = 0.0;
  std::vector<double> cmc;           // cmc[k-1] = CMC@k, k = 1..gallery size
  std::vector<double> per_query_ap;  // one entry per counted query
  std::size_t skipped = 0;           // queries with no valid positive

  double cmc_at(std::size_t k) const;
};

/// Maps [N, D] features to [N, L] embeddings.
using EmbedFn = std::function<Tensor(const Tensor&)>;

/// Exact Euclidean distances between all rows of A [n, L] and B [m, L].
Tensor pairwise_dist(const Tensor& a, const Tensor& b);

/// Camera-filtered retrieval: per query, gallery items sharing both person
/// and camera id are excluded, the rest ranked by ascending embedding
/// distance (ties by gallery index). AP = mean over positive ranks r_j of
/// j / r_j; queries without a valid positive are skipped. num_threads > 1
/// splits queries across threads with results identical to the serial run.
RetrievalResult evaluate(const FeatureSet& query, const FeatureSet& gallery,
                         const EmbedFn& embed, int num_threads = 1);

/// Convenience: evaluate with the model's inference embedding.
RetrievalResult evaluate_model(const FeatureSet& query, const FeatureSet& gallery,
                               const HavanaModel& model, int num_threads = 1);

/// Writes z_mu and z_sigma (not log sigma; all-ones under the covariance
/// constraint) for every sample as HVFT/HVLB files with the set's labels.
void export_embeddings(const FeatureSet& set, const HavanaModel& model,
                       const std::string& mu_path, const std::string& sigma_path);

/// Text rows `metric,value` for map, cmc1, cmc5, cmc10 at full precision.
void write_metrics(const std::string& path, const RetrievalResult& result);

}  // namespace havana
