#include "havana/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "havana/errors.hpp"

namespace havana {

double RetrievalResult::cmc_at(std::size_t k) const {
  if (k == 0) throw UsageError("cmc rank must be at least 1");
  if (cmc.empty()) return 0.0;
  return cmc[std::min(k, cmc.size()) - 1];
}

Tensor pairwise_dist(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw DataError("pairwise_dist wants matching [n, L] and [m, L], got " + a.shape_str() +
                    " and " + b.shape_str());
  }
  std::size_t n = a.shape()[0];
  std::size_t m = b.shape()[0];
  std::size_t l = a.shape()[1];
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ra = a.data().data() + i * l;
    for (std::size_t j = 0; j < m; ++j) {
      const double* rb = b.data().data() + j * l;
      double acc = 0.0;
      for (std::size_t d = 0; d < l; ++d) {
        double diff = ra[d] - rb[d];
        acc += diff * diff;
      }
      out.mutable_data()[i * m + j] = std::sqrt(acc);
    }
  }
  return out;
}

namespace {

struct QueryOutcome {
  bool counted = false;
  double ap = 0.0;
  std::size_t first_positive_rank = 0;  // 1-based
};

QueryOutcome evaluate_one(std::size_t q, const FeatureSet& query, const FeatureSet& gallery,
                          const Tensor& dist) {
  std::uint32_t pid = query.person_ids[q];
  std::uint16_t cam = query.camera_ids[q];
  std::size_t m = gallery.size();

  std::vector<std::size_t> candidates;
  candidates.reserve(m);
  bool has_positive = false;
  for (std::size_t g = 0; g < m; ++g) {
    bool same_id = gallery.person_ids[g] == pid;
    if (same_id && gallery.camera_ids[g] == cam) continue;
    candidates.push_back(g);
    if (same_id) has_positive = true;
  }
  QueryOutcome out;
  if (!has_positive) return out;

  const double* drow = dist.data().data() + q * m;
  std::stable_sort(candidates.begin(), candidates.end(),
                   [drow](std::size_t x, std::size_t y) { return drow[x] < drow[y]; });

  double ap = 0.0;
  std::size_t positives = 0;
  for (std::size_t rank = 1; rank <= candidates.size(); ++rank) {
    if (gallery.person_ids[candidates[rank - 1]] == pid) {
      ++positives;
      ap += static_cast<double>(positives) / static_cast<double>(rank);
      if (positives == 1) out.first_positive_rank = rank;
    }
  }
  out.counted = true;
  out.ap = ap / static_cast<double>(positives);
  return out;
}

}  // namespace

RetrievalResult evaluate(const FeatureSet& query, const FeatureSet& gallery,
                         const EmbedFn& embed, int num_threads) {
  query.validate();
  gallery.validate();
  if (query.dim() != gallery.dim()) {
    throw DataError("query and gallery feature dims differ: " + std::to_string(query.dim()) +
                    " vs " + std::to_string(gallery.dim()));
  }
  if (query.size() == 0 || gallery.size() == 0) {
    throw DataError("evaluation needs non-empty query and gallery sets");
  }
  if (num_threads < 1) throw UsageError("num_threads must be at least 1");

  Tensor qe = embed(query.features);
  Tensor ge = embed(gallery.features);
  Tensor dist = pairwise_dist(qe, ge);

  std::size_t n = query.size();
  std::vector<QueryOutcome> outcomes(n);
  if (num_threads == 1) {
    for (std::size_t q = 0; q < n; ++q) outcomes[q] = evaluate_one(q, query, gallery, dist);
  } else {
    std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(num_threads), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        for (std::size_t q = w; q < n; q += workers) {
          outcomes[q] = evaluate_one(q, query, gallery, dist);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  RetrievalResult result;
  result.cmc.assign(gallery.size(), 0.0);
  for (const QueryOutcome& o : outcomes) {
    if (!o.counted) {
      ++result.skipped;
      continue;
    }
    result.per_query_ap.push_back(o.ap);
    for (std::size_t k = o.first_positive_rank; k <= result.cmc.size(); ++k) {
      result.cmc[k - 1] += 1.0;
    }
  }
  if (result.per_query_ap.empty()) {
    throw DataError("evaluation error: no query has a valid cross-camera positive");
  }
  double counted = static_cast<double>(result.per_query_ap.size());
  result.map = std::accumulate(result.per_query_ap.begin(), result.per_query_ap.end(), 0.0) /
               counted;
  for (double& c : result.cmc) c /= counted;
  return result;
}

RetrievalResult evaluate_model(const FeatureSet& query, const FeatureSet& gallery,
                               const HavanaModel& model, int num_threads) {
  return evaluate(query, gallery,
                  [&model](const Tensor& x) { return infer_embedding(model, x); }, num_threads);
}

void export_embeddings(const FeatureSet& set, const HavanaModel& model,
                       const std::string& mu_path, const std::string& sigma_path) {
  set.validate();
  FeatureSet mu_set;
  mu_set.features = infer_embedding(model, set.features);
  mu_set.person_ids = set.person_ids;
  mu_set.camera_ids = set.camera_ids;
  mu_set.split = set.split;
  write_features(mu_set, mu_path);

  FeatureSet sigma_set;
  sigma_set.features = exp(infer_logsigma(model, set.features));
  sigma_set.person_ids = set.person_ids;
  sigma_set.camera_ids = set.camera_ids;
  sigma_set.split = set.split;
  write_features(sigma_set, sigma_path);
}

void write_metrics(const std::string& path, const RetrievalResult& result) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write metrics file " + path);
  char buf[64];
  auto line = [&os, &buf](const char* name, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << name << "," << buf << "\n";
  };
  line("map", result.map);
  line("cmc1", result.cmc_at(1));
  line("cmc5", result.cmc_at(5));
  line("cmc10", result.cmc_at(10));
  if (!os) throw DataError("write failure on metrics file " + path);
}

}  // namespace havana
