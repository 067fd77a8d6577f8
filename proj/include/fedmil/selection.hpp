#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmil/errors.hpp"
#include "fedmil/linalg.hpp"
#include "fedmil/model.hpp"
#include "fedmil/partition.hpp"
#include "fedmil/rng.hpp"

namespace fedmil {

enum class SelectionMethod { random, dpp, dppq };

inline const char* method_name(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::random: return "random";
    case SelectionMethod::dpp: return "dpp";
    default: return "dppq";
  }
}

inline SelectionMethod method_from_name(const std::string& s) {
  if (s == "random") return SelectionMethod::random;
  if (s == "dpp") return SelectionMethod::dpp;
  if (s == "dppq") return SelectionMethod::dppq;
  fail(ErrorCode::config, "unknown selection method: " + s);
}

// What each client shares with the server, once, at initialization: the
// mean extracted feature of its shard and its mean loss under the initial
// global model.
struct ClientProfile {
  int client_id = 0;
  std::vector<double> mean_feature; // embed_dim
  double mean_loss = 0.0;
  int shard_size = 0;
};

// Every bag reduces to its instance-mean embedding, then the client profile
// is the mean of those over its shard.
inline ClientProfile profile_client(const ModelParams& global, const BagDataset& ds,
                                    const ClientShard& shard) {
  require(!shard.bag_indices.empty(), ErrorCode::config,
          "profile_client: empty shard for client " + std::to_string(shard.client_id));
  const int m = global.embed_dim;
  ClientProfile prof;
  prof.client_id = shard.client_id;
  prof.shard_size = static_cast<int>(shard.bag_indices.size());
  prof.mean_feature.assign(static_cast<std::size_t>(m), 0.0);
  double loss = 0.0;
  for (auto idx : shard.bag_indices) {
    const Bag& bag = ds.bags[static_cast<std::size_t>(idx)];
    ForwardAux aux = forward_loss(global, bag);
    loss += aux.loss;
    const double inv_n = 1.0 / static_cast<double>(bag.num_instances);
    for (int i = 0; i < bag.num_instances; ++i) {
      const double* h = aux.embeddings.data() + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) prof.mean_feature[static_cast<std::size_t>(j)] += inv_n * h[j];
    }
  }
  const double inv_b = 1.0 / static_cast<double>(shard.bag_indices.size());
  for (auto& v : prof.mean_feature) v *= inv_b;
  prof.mean_loss = loss * inv_b;
  return prof;
}

inline std::vector<ClientProfile> profile_clients(const ModelParams& global,
                                                  const BagDataset& ds,
                                                  const PartitionPlan& plan) {
  std::vector<ClientProfile> out;
  out.reserve(plan.shards.size());
  for (const auto& shard : plan.shards) out.push_back(profile_client(global, ds, shard));
  return out;
}

// Min-max-normalized similarity from pairwise feature distances. The min is
// taken over the full matrix including the zero diagonal, so diag(S) = 1 and
// the most-distant pair maps to 0. All-identical profiles degrade to the
// identity matrix (flagged) instead of dividing by zero.
struct SimilarityResult {
  Matrix s;
  bool degenerate = false;
};

inline SimilarityResult similarity_matrix(const std::vector<ClientProfile>& profiles) {
  const std::size_t n = profiles.size();
  require(n >= 2, ErrorCode::config, "similarity_matrix: need at least 2 profiles");
  Matrix dist(n, n);
  double dmax = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t t = r + 1; t < n; ++t) {
      const auto& a = profiles[r].mean_feature;
      const auto& b = profiles[t].mean_feature;
      require(a.size() == b.size(), ErrorCode::shape_mismatch, "profile dims differ");
      double s = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j) {
        double diff = a[j] - b[j];
        s += diff * diff;
      }
      double v = std::sqrt(s);
      dist(r, t) = v;
      dist(t, r) = v;
      dmax = std::max(dmax, v);
    }
  }

  SimilarityResult out;
  out.s = Matrix(n, n);
  if (dmax == 0.0) {
    out.degenerate = true;
    out.s = Matrix::identity(n);
    return out;
  }
  // min(S0) = 0 via the diagonal, so the map is 1 - d/dmax.
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t t = 0; t < n; ++t) out.s(r, t) = 1.0 - dist(r, t) / dmax;
  return out;
}

// Min-max scaled loss qualities on [floor, 1]; the floor keeps the kernel
// away from exact rank collapse. All-equal losses degrade to all-floor.
struct QualityResult {
  std::vector<double> q;
  bool degenerate = false;
};

inline QualityResult quality_matrix(const std::vector<ClientProfile>& profiles,
                                    double floor) {
  require(profiles.size() >= 2, ErrorCode::config, "quality_matrix: need at least 2 profiles");
  require(floor >= 0.0 && floor < 1.0, ErrorCode::config, "quality floor must be in [0, 1)");
  double lmin = profiles[0].mean_loss, lmax = profiles[0].mean_loss;
  for (const auto& p : profiles) {
    require(p.mean_loss >= 0.0, ErrorCode::config, "negative loss profile");
    lmin = std::min(lmin, p.mean_loss);
    lmax = std::max(lmax, p.mean_loss);
  }
  QualityResult out;
  out.q.resize(profiles.size());
  if (lmax == lmin) {
    out.degenerate = true;
    std::fill(out.q.begin(), out.q.end(), floor);
    return out;
  }
  for (std::size_t i = 0; i < profiles.size(); ++i)
    out.q[i] = floor + (profiles[i].mean_loss - lmin) / (lmax - lmin) * (1.0 - floor);
  return out;
}

// kernel = Q S^T S Q, positive semidefinite by construction (Gram form).
struct SelectionKernel {
  Matrix similarity;          // S
  std::vector<double> quality; // diag(Q)
  Matrix kernel;              // Q S^T S Q
  EigenDecomposition eig;    // of kernel, ascending
  double quality_floor = 0.0;
  bool degenerate_similarity = false;
  bool degenerate_quality = false;

  std::size_t size() const { return kernel.rows; }

  int rank(double tol = 1e-12) const {
    int r = 0;
    for (double v : eig.values)
      if (v > tol) ++r;
    return r;
  }
};

inline SelectionKernel build_kernel(const Matrix& similarity,
                                    const std::vector<double>& quality,
                                    double quality_floor = 0.0) {
  const std::size_t n = similarity.rows;
  require(similarity.cols == n && quality.size() == n, ErrorCode::shape_mismatch,
          "build_kernel: shape mismatch");
  SelectionKernel k;
  k.similarity = similarity;
  k.quality = quality;
  k.quality_floor = quality_floor;

  // Q S^T S Q without forming intermediates: entry (i,j) = q_i q_j (S^T S)_ij.
  k.kernel = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) acc += similarity(r, i) * similarity(r, j);
      double v = quality[i] * quality[j] * acc;
      k.kernel(i, j) = v;
      k.kernel(j, i) = v;
    }
  }
  k.eig = sym_eig(k.kernel);

  double lam_max = k.eig.values.empty() ? 0.0 : k.eig.values.back();
  double lam_min = k.eig.values.empty() ? 0.0 : k.eig.values.front();
  require(lam_min >= -1e-8 * std::max(1.0, lam_max), ErrorCode::numeric,
          "selection kernel lost positive semidefiniteness");
  return k;
}

inline SelectionKernel build_kernel(const std::vector<ClientProfile>& profiles,
                                    double quality_floor, bool with_quality) {
  SimilarityResult sim = similarity_matrix(profiles);
  SelectionKernel k;
  if (with_quality) {
    QualityResult q = quality_matrix(profiles, quality_floor);
    k = build_kernel(sim.s, q.q, quality_floor);
    k.degenerate_quality = q.degenerate;
  } else {
    std::vector<double> ones(profiles.size(), 1.0);
    k = build_kernel(sim.s, ones, quality_floor);
  }
  k.degenerate_similarity = sim.degenerate;
  return k;
}

struct Subset {
  std::vector<int> indices; // 0-based into the profile list, ascending
  SelectionMethod method = SelectionMethod::random;
};

// e_j(lambda_1..lambda_i) for j <= k, i <= n, by the standard recurrence.
// Row j, column i; column 0 is the empty prefix.
inline std::vector<std::vector<double>> elementary_symmetric(
    const std::vector<double>& eigenvalues, int k) {
  const int n = static_cast<int>(eigenvalues.size());
  require(k >= 0 && k <= n, ErrorCode::config, "elementary_symmetric: k out of range");
  std::vector<std::vector<double>> e(static_cast<std::size_t>(k) + 1,
                                     std::vector<double>(static_cast<std::size_t>(n) + 1, 0.0));
  for (int i = 0; i <= n; ++i) e[0][static_cast<std::size_t>(i)] = 1.0;
  for (int j = 1; j <= k; ++j)
    for (int i = 1; i <= n; ++i)
      e[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
          e[static_cast<std::size_t>(j)][static_cast<std::size_t>(i - 1)] +
          eigenvalues[static_cast<std::size_t>(i - 1)] *
              e[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(i - 1)];
  return e;
}

namespace detail {

// Phase 1 of exact k-DPP sampling: pick a size-k eigenvector subset with
// P(include i | remaining r) = lambda_i e_{r-1}^{i-1} / e_r^i.
inline std::vector<int> sample_eigenvector_subset(const std::vector<double>& lambda,
                                                  int k, Rng& rng) {
  const int n = static_cast<int>(lambda.size());
  auto e = elementary_symmetric(lambda, k);
  require(e[static_cast<std::size_t>(k)][static_cast<std::size_t>(n)] > 0.0,
          ErrorCode::infeasible, "k-DPP: e_k over all eigenvalues is zero");
  std::vector<int> picked;
  picked.reserve(static_cast<std::size_t>(k));
  int remaining = k;
  for (int i = n; i >= 1 && remaining > 0; --i) {
    double marg;
    if (i == remaining) {
      marg = 1.0; // must take everything that is left
    } else {
      double denom = e[static_cast<std::size_t>(remaining)][static_cast<std::size_t>(i)];
      if (denom <= 0.0) continue;
      marg = lambda[static_cast<std::size_t>(i - 1)] *
             e[static_cast<std::size_t>(remaining - 1)][static_cast<std::size_t>(i - 1)] / denom;
    }
    if (rng.uniform() < marg) {
      picked.push_back(i - 1);
      --remaining;
    }
  }
  require(remaining == 0, ErrorCode::numeric, "k-DPP eigenvector selection failed");
  return picked;
}

// Phase 2: sample items one by one proportional to the squared row norms of
// the orthonormal subspace basis, deflating the chosen coordinate each time.
inline std::vector<int> sample_items_from_subspace(const Matrix& eigvecs,
                                                   const std::vector<int>& cols,
                                                   Rng& rng) {
  const std::size_t n = eigvecs.rows;
  std::size_t k = cols.size();
  // Column-major working set of the chosen eigenvectors.
  std::vector<std::vector<double>> v(k, std::vector<double>(n));
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < n; ++i)
      v[j][i] = eigvecs(i, static_cast<std::size_t>(cols[j]));

  std::vector<int> items;
  items.reserve(k);
  std::vector<double> row_mass(n);
  while (!v.empty()) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (const auto& col : v) s += col[i] * col[i];
      row_mass[i] = s;
      total += s;
    }
    require(total > 0.0, ErrorCode::numeric, "k-DPP: subspace mass vanished");
    double r = rng.uniform() * total;
    std::size_t pick = n - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += row_mass[i];
      if (r < acc) { pick = i; break; }
    }
    items.push_back(static_cast<int>(pick));

    if (v.size() == 1) break;

    // Eliminate coordinate `pick`: pivot on the column with the largest
    // component there, subtract it from the others, drop it, re-orthonormalize.
    std::size_t pivot = 0;
    double best = -1.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      double a = std::abs(v[j][pick]);
      if (a > best) { best = a; pivot = j; }
    }
    std::vector<double> pv = std::move(v[pivot]);
    v.erase(v.begin() + static_cast<std::ptrdiff_t>(pivot));
    for (auto& col : v) {
      double f = col[pick] / pv[pick];
      for (std::size_t i = 0; i < n; ++i) col[i] -= f * pv[i];
    }
    for (std::size_t j = 0; j < v.size(); ++j) { // modified Gram-Schmidt
      for (std::size_t prev = 0; prev < j; ++prev) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += v[prev][i] * v[j][i];
        for (std::size_t i = 0; i < n; ++i) v[j][i] -= dot * v[prev][i];
      }
      double norm2 = 0.0;
      for (double x : v[j]) norm2 += x * x;
      require(norm2 > 1e-24, ErrorCode::numeric, "k-DPP: degenerate subspace basis");
      double inv = 1.0 / std::sqrt(norm2);
      for (auto& x : v[j]) x *= inv;
    }
  }
  std::sort(items.begin(), items.end());
  return items;
}

} // namespace detail

// Exact k-DPP sample of the given size: P(G) proportional to det(kernel_G)
// over subsets with |G| = size.
inline Subset sample_dppq(const SelectionKernel& kernel, int size, Rng& rng) {
  const int n = static_cast<int>(kernel.size());
  require(size >= 1, ErrorCode::config, "sample size must be >= 1");
  require(size <= n, ErrorCode::config, "sample size exceeds ground set");
  require(kernel.rank() >= size, ErrorCode::infeasible,
          "kernel rank " + std::to_string(kernel.rank()) +
              " below requested subset size " + std::to_string(size));

  Subset out;
  out.method = SelectionMethod::dppq;
  if (size == n) {
    out.indices.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.indices[static_cast<std::size_t>(i)] = i;
    return out;
  }
  std::vector<int> cols = detail::sample_eigenvector_subset(kernel.eig.values, size, rng);
  out.indices = detail::sample_items_from_subspace(kernel.eig.vectors, cols, rng);
  return out;
}

// Diversity-only baseline: same machinery with the quality diagonal fixed
// to the identity (kernel S^T S).
inline Subset sample_dpp_baseline(const SelectionKernel& kernel, int size, Rng& rng) {
  Subset out = sample_dppq(kernel, size, rng);
  out.method = SelectionMethod::dpp;
  return out;
}

// Uniform subset without replacement (Fisher-Yates prefix).
inline Subset sample_random(int n, int size, Rng& rng) {
  require(size >= 1, ErrorCode::config, "sample size must be >= 1");
  require(size <= n, ErrorCode::config, "sample size exceeds ground set");
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < size; ++i) {
    int j = i + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  Subset out;
  out.method = SelectionMethod::random;
  out.indices.assign(idx.begin(), idx.begin() + size);
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

// --- JSON dumps for offline inspection ------------------------------------

inline nlohmann::json profiles_to_json(const std::vector<ClientProfile>& profiles) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : profiles)
    arr.push_back({{"client", p.client_id},
                   {"mean_loss", p.mean_loss},
                   {"shard_size", p.shard_size},
                   {"mean_feature", p.mean_feature}});
  return arr;
}

inline nlohmann::json kernel_to_json(const SelectionKernel& k) {
  const std::size_t n = k.size();
  nlohmann::json j;
  j["quality_floor"] = k.quality_floor;
  j["degenerate_similarity"] = k.degenerate_similarity;
  j["degenerate_quality"] = k.degenerate_quality;
  j["quality"] = k.quality;
  j["eigenvalues"] = k.eig.values;
  nlohmann::json s = nlohmann::json::array();
  nlohmann::json l = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::json srow = nlohmann::json::array();
    nlohmann::json lrow = nlohmann::json::array();
    for (std::size_t jj = 0; jj < n; ++jj) {
      srow.push_back(k.similarity(i, jj));
      lrow.push_back(k.kernel(i, jj));
    }
    s.push_back(std::move(srow));
    l.push_back(std::move(lrow));
  }
  j["similarity"] = std::move(s);
  j["kernel"] = std::move(l);
  return j;
}

} // namespace fedmil
