#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmil/dataset.hpp"
#include "fedmil/errors.hpp"
#include "fedmil/rng.hpp"

namespace fedmil {

// Power-law label imbalance: client p (1-based) targets a class-1 fraction
// of v_scale * (p + h_shift)^exponent, clamped to [0, 1].
struct PowerLawConfig {
  double exponent = 0.5;
  double v_scale = -1.0; // < 0: auto = 0.9 / (n_clients + h_shift)^exponent
  double h_shift = 1.0;
  double holdout_fraction = 0.1; // clients that get a single-class shard
  std::uint64_t rng_seed = 0;

  void validate() const {
    require(exponent >= 0.0, ErrorCode::config, "power-law: exponent must be >= 0");
    require(h_shift >= 0.0, ErrorCode::config, "power-law: h_shift must be >= 0");
    require(holdout_fraction >= 0.0 && holdout_fraction < 1.0, ErrorCode::config,
            "power-law: holdout_fraction must be in [0, 1)");
  }

  double resolved_v_scale(int n_clients) const {
    if (v_scale >= 0.0) return v_scale;
    return 0.9 / std::pow(static_cast<double>(n_clients) + h_shift, exponent);
  }

  double target_fraction(int client /*1-based*/, int n_clients) const {
    double t = resolved_v_scale(n_clients) *
               std::pow(static_cast<double>(client) + h_shift, exponent);
    return std::clamp(t, 0.0, 1.0);
  }
};

struct DirichletConfig {
  double alpha = 0.5;
  int num_clusters = 10;
  std::uint64_t rng_seed = 0;

  void validate() const {
    require(alpha > 0.0, ErrorCode::config, "dirichlet: alpha must be > 0");
    require(num_clusters >= 1, ErrorCode::config, "dirichlet: num_clusters must be >= 1");
  }
};

struct UtilizationConfig {
  double rate = 1.0; // fraction of each shard kept
  std::uint64_t rng_seed = 0;

  void validate() const {
    require(rate > 0.0 && rate <= 1.0, ErrorCode::config,
            "utilization: rate must be in (0, 1]");
  }
};

struct ClientShard {
  int client_id = 0;               // 1-based, matching the target formula
  std::vector<std::int32_t> bag_indices; // indices into BagDataset::bags
};

struct PartitionPlan {
  std::string scheme;                     // "type1" | "type2"
  std::vector<ClientShard> shards;        // one per client
  std::vector<std::vector<double>> proportions; // per client: target/drawn proportions
  std::vector<int> holdout_class;         // type1: -1 normal, else the pure class
  std::vector<std::int32_t> remainder;    // bags left unassigned (type1 only)
  nlohmann::json provenance;              // config echo

  std::size_t assigned_count() const {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.bag_indices.size();
    return n;
  }
};

namespace detail {

// Largest-remainder apportionment of `total` items to `weights` (>= 0,
// not all zero). Counts sum to total exactly; ties break on lower index.
inline std::vector<int> largest_remainder(const std::vector<double>& weights, int total) {
  const std::size_t n = weights.size();
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  require(wsum > 0.0, ErrorCode::config, "largest_remainder: weights sum to zero");
  std::vector<int> counts(n, 0);
  std::vector<std::pair<double, std::size_t>> rema(n);
  int assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double exact = static_cast<double>(total) * weights[i] / wsum;
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    rema[i] = {exact - std::floor(exact), i};
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int k = 0; k < total - assigned; ++k) counts[rema[static_cast<std::size_t>(k)].second]++;
  return counts;
}

inline void repair_empty_shards(PartitionPlan& plan) {
  for (auto& shard : plan.shards) {
    if (!shard.bag_indices.empty()) continue;
    auto largest = std::max_element(
        plan.shards.begin(), plan.shards.end(), [](const auto& a, const auto& b) {
          return a.bag_indices.size() < b.bag_indices.size();
        });
    require(largest->bag_indices.size() >= 2, ErrorCode::infeasible,
            "cannot repair empty shard: no donor with spare bags");
    shard.bag_indices.push_back(largest->bag_indices.back());
    largest->bag_indices.pop_back();
  }
}

} // namespace detail

// Type I non-IID: per-client class-1 fraction follows the power law, a
// holdout subset of clients receives single-class shards. Shard sizes are
// equal (the largest size both class pools can support); whatever the pools
// cannot cover lands in plan.remainder.
inline PartitionPlan partition_type1(const BagDataset& ds, int n_clients,
                                     const PowerLawConfig& cfg) {
  cfg.validate();
  require(n_clients >= 1, ErrorCode::config, "partition: n_clients must be >= 1");
  require(ds.num_classes == 2, ErrorCode::unsupported,
          "type1 partition requires exactly 2 classes");

  Rng rng(derive_seed(cfg.rng_seed, "type1"));

  std::vector<std::int32_t> pool0, pool1;
  for (std::size_t i = 0; i < ds.bags.size(); ++i)
    (ds.bags[i].label == 1 ? pool1 : pool0).push_back(static_cast<std::int32_t>(i));
  rng.shuffle(pool0);
  rng.shuffle(pool1);

  // Holdout clients: chosen uniformly, first half pure class 0, rest pure 1.
  const int n_holdout = static_cast<int>(std::floor(cfg.holdout_fraction * n_clients));
  std::vector<int> order(static_cast<std::size_t>(n_clients));
  std::iota(order.begin(), order.end(), 1);
  rng.shuffle(order);
  std::vector<int> holdout_class(static_cast<std::size_t>(n_clients) + 1, -1); // by client id
  for (int k = 0; k < n_holdout; ++k)
    holdout_class[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] =
        (k < (n_holdout + 1) / 2) ? 0 : 1;

  std::vector<double> targets(static_cast<std::size_t>(n_clients));
  for (int p = 1; p <= n_clients; ++p)
    targets[static_cast<std::size_t>(p - 1)] = cfg.target_fraction(p, n_clients);

  // Demand per unit of shard size, with holdout overrides.
  double demand1 = 0.0;
  for (int p = 1; p <= n_clients; ++p) {
    int hc = holdout_class[static_cast<std::size_t>(p)];
    demand1 += hc == -1 ? targets[static_cast<std::size_t>(p - 1)] : (hc == 1 ? 1.0 : 0.0);
  }
  double demand0 = static_cast<double>(n_clients) - demand1;

  auto class1_count = [&](int p, int shard_size) {
    int hc = holdout_class[static_cast<std::size_t>(p)];
    if (hc == 0) return 0;
    if (hc == 1) return shard_size;
    return static_cast<int>(std::lround(targets[static_cast<std::size_t>(p - 1)] *
                                        static_cast<double>(shard_size)));
  };

  int shard_size = static_cast<int>(std::floor(std::min(
      demand1 > 0.0 ? static_cast<double>(pool1.size()) / demand1
                    : std::numeric_limits<double>::infinity(),
      demand0 > 0.0 ? static_cast<double>(pool0.size()) / demand0
                    : std::numeric_limits<double>::infinity())));
  shard_size = std::min<int>(shard_size,
                             static_cast<int>(ds.bags.size()) / n_clients);
  // Rounding can overdraw a pool by up to n_clients/2; back off until it fits.
  while (shard_size > 0) {
    long need1 = 0;
    for (int p = 1; p <= n_clients; ++p) need1 += class1_count(p, shard_size);
    long need0 = static_cast<long>(shard_size) * n_clients - need1;
    if (need1 <= static_cast<long>(pool1.size()) && need0 <= static_cast<long>(pool0.size()))
      break;
    --shard_size;
  }
  require(shard_size >= 1, ErrorCode::infeasible,
          "type1 partition infeasible: class pools cannot fill any shard size "
          "(first unsatisfiable client: 1)");

  PartitionPlan plan;
  plan.scheme = "type1";
  plan.shards.resize(static_cast<std::size_t>(n_clients));
  plan.proportions.resize(static_cast<std::size_t>(n_clients));
  std::size_t next0 = 0, next1 = 0;
  for (int p = 1; p <= n_clients; ++p) {
    ClientShard& shard = plan.shards[static_cast<std::size_t>(p - 1)];
    shard.client_id = p;
    const int want1 = class1_count(p, shard_size);
    const int want0 = shard_size - want1;
    require(next1 + static_cast<std::size_t>(want1) <= pool1.size() &&
                next0 + static_cast<std::size_t>(want0) <= pool0.size(),
            ErrorCode::infeasible,
            "type1 partition: pool exhausted at client " + std::to_string(p));
    shard.bag_indices.reserve(static_cast<std::size_t>(shard_size));
    for (int k = 0; k < want1; ++k) shard.bag_indices.push_back(pool1[next1++]);
    for (int k = 0; k < want0; ++k) shard.bag_indices.push_back(pool0[next0++]);
    plan.proportions[static_cast<std::size_t>(p - 1)] = {targets[static_cast<std::size_t>(p - 1)]};
  }
  plan.holdout_class.assign(holdout_class.begin() + 1, holdout_class.end());
  while (next1 < pool1.size()) plan.remainder.push_back(pool1[next1++]);
  while (next0 < pool0.size()) plan.remainder.push_back(pool0[next0++]);
  std::sort(plan.remainder.begin(), plan.remainder.end());

  detail::repair_empty_shards(plan);
  plan.provenance = {{"scheme", "type1"},
                     {"exponent", cfg.exponent},
                     {"v_scale", cfg.resolved_v_scale(n_clients)},
                     {"h_shift", cfg.h_shift},
                     {"holdout_fraction", cfg.holdout_fraction},
                     {"rng_seed", cfg.rng_seed},
                     {"shard_size", shard_size}};
  return plan;
}

// --- k-means over instance vectors -------------------------------------

struct KMeansResult {
  std::vector<int> bag_cluster;      // majority vote per bag
  std::vector<int> instance_cluster; // per instance, bag-major order
  std::vector<std::vector<double>> centroids;
  double inertia = 0.0;
  int iterations = 0;
};

namespace detail {

// One Lloyd run with k-means++ seeding over every instance vector of every
// bag, then a per-bag majority vote (ties -> lowest cluster id).
inline KMeansResult kmeans_single(const BagDataset& ds, int num_clusters,
                                  std::uint64_t rng_seed, int max_iters,
                                  double rel_tol) {
  const int d = ds.feature_dim;

  // Gather instance rows (pointers into bag storage).
  std::vector<const float*> points;
  std::vector<std::size_t> bag_of_point;
  for (std::size_t b = 0; b < ds.bags.size(); ++b)
    for (int i = 0; i < ds.bags[b].num_instances; ++i) {
      points.push_back(ds.bags[b].features.data() + static_cast<std::size_t>(i) * d);
      bag_of_point.push_back(b);
    }
  const std::size_t n = points.size();

  auto sq_dist = [d](const float* a, const double* b) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      double diff = static_cast<double>(a[j]) - b[j];
      s += diff * diff;
    }
    return s;
  };

  Rng rng(rng_seed);
  std::vector<std::vector<double>> centroids;
  centroids.reserve(static_cast<std::size_t>(num_clusters));

  // k-means++ seeding.
  {
    std::size_t first = static_cast<std::size_t>(rng.uniform_below(n));
    centroids.emplace_back(points[first], points[first] + d);
    std::vector<double> min_d2(n);
    for (std::size_t i = 0; i < n; ++i) min_d2[i] = sq_dist(points[i], centroids[0].data());
    while (centroids.size() < static_cast<std::size_t>(num_clusters)) {
      double total = std::accumulate(min_d2.begin(), min_d2.end(), 0.0);
      std::size_t pick = 0;
      if (total > 0.0) {
        double r = rng.uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          acc += min_d2[i];
          if (r < acc) { pick = i; break; }
          pick = i;
        }
      } else {
        pick = static_cast<std::size_t>(rng.uniform_below(n));
      }
      centroids.emplace_back(points[pick], points[pick] + d);
      const auto& c = centroids.back();
      for (std::size_t i = 0; i < n; ++i)
        min_d2[i] = std::min(min_d2[i], sq_dist(points[i], c.data()));
    }
  }

  KMeansResult out;
  out.instance_cluster.assign(n, 0);
  double prev_inertia = std::numeric_limits<double>::infinity();
  std::vector<double> sums(static_cast<std::size_t>(num_clusters) * d);
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_clusters));

  for (int iter = 0; iter < max_iters; ++iter) {
    out.iterations = iter + 1;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int best_k = 0;
      for (int k = 0; k < num_clusters; ++k) {
        double d2 = sq_dist(points[i], centroids[static_cast<std::size_t>(k)].data());
        if (d2 < best) { best = d2; best_k = k; }
      }
      out.instance_cluster[i] = best_k;
      inertia += best;
    }
    out.inertia = inertia;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      int k = out.instance_cluster[i];
      counts[static_cast<std::size_t>(k)]++;
      double* s = sums.data() + static_cast<std::size_t>(k) * d;
      const float* p = points[i];
      for (int j = 0; j < d; ++j) s[j] += p[j];
    }
    for (int k = 0; k < num_clusters; ++k) {
      if (counts[static_cast<std::size_t>(k)] == 0) {
        // Re-seed an empty cluster at the point farthest from its centroid.
        std::size_t far_i = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          double d2 = sq_dist(points[i],
                              centroids[static_cast<std::size_t>(out.instance_cluster[i])].data());
          if (d2 > far_d) { far_d = d2; far_i = i; }
        }
        centroids[static_cast<std::size_t>(k)].assign(points[far_i], points[far_i] + d);
        continue;
      }
      double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(k)]);
      const double* s = sums.data() + static_cast<std::size_t>(k) * d;
      for (int j = 0; j < d; ++j) centroids[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] = s[j] * inv;
    }

    if (std::isfinite(prev_inertia) &&
        std::abs(prev_inertia - inertia) <= rel_tol * std::max(prev_inertia, 1e-300))
      break;
    prev_inertia = inertia;
  }

  // Majority vote per bag; ties resolve to the lowest cluster id.
  out.bag_cluster.assign(ds.bags.size(), 0);
  std::vector<int> votes(static_cast<std::size_t>(num_clusters));
  std::size_t point_idx = 0;
  for (std::size_t b = 0; b < ds.bags.size(); ++b) {
    std::fill(votes.begin(), votes.end(), 0);
    for (int i = 0; i < ds.bags[b].num_instances; ++i)
      votes[static_cast<std::size_t>(out.instance_cluster[point_idx++])]++;
    out.bag_cluster[b] =
        static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }
  out.centroids = std::move(centroids);
  return out;
}

} // namespace detail

// k-means over all instance vectors, best of `n_init` seeded restarts by
// inertia (single-init Lloyd regularly loses a planted cluster). Each bag
// takes the majority cluster of its instances.
inline KMeansResult kmeans_clusters(const BagDataset& ds, int num_clusters,
                                    std::uint64_t rng_seed, int max_iters = 100,
                                    double rel_tol = 1e-6, int n_init = 8) {
  require(num_clusters >= 2, ErrorCode::config, "kmeans: num_clusters must be >= 2");
  require(!ds.bags.empty(), ErrorCode::config, "kmeans: empty dataset");
  require(n_init >= 1, ErrorCode::config, "kmeans: n_init must be >= 1");

  {
    std::unordered_set<std::string> distinct;
    bool enough = false;
    for (const Bag& bag : ds.bags) {
      for (int i = 0; i < bag.num_instances && !enough; ++i) {
        auto row = bag.instance(i, ds.feature_dim);
        distinct.emplace(reinterpret_cast<const char*>(row.data()),
                         row.size_bytes());
        enough = distinct.size() >= static_cast<std::size_t>(num_clusters);
      }
      if (enough) break;
    }
    require(enough, ErrorCode::degenerate,
            "kmeans: fewer distinct instance vectors than clusters");
  }

  KMeansResult best;
  for (int init = 0; init < n_init; ++init) {
    KMeansResult run = detail::kmeans_single(
        ds, num_clusters, derive_seed(rng_seed, "kmeans", static_cast<std::uint64_t>(init)),
        max_iters, rel_tol);
    if (init == 0 || run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

// Type II non-IID: every client draws a symmetric Dirichlet(alpha) proportion
// vector over the clusters; each cluster's bags are split across clients by
// largest-remainder rounding of those weights.
inline PartitionPlan partition_type2(const BagDataset& ds, int n_clients,
                                     const DirichletConfig& cfg,
                                     const std::vector<int>& bag_cluster) {
  cfg.validate();
  require(n_clients >= 1, ErrorCode::config, "partition: n_clients must be >= 1");
  require(bag_cluster.size() == ds.bags.size(), ErrorCode::shape_mismatch,
          "cluster map must cover all bags");

  Rng rng(derive_seed(cfg.rng_seed, "type2"));
  const int c = cfg.num_clusters;

  PartitionPlan plan;
  plan.scheme = "type2";
  plan.shards.resize(static_cast<std::size_t>(n_clients));
  plan.proportions.resize(static_cast<std::size_t>(n_clients));
  for (int p = 0; p < n_clients; ++p) {
    plan.shards[static_cast<std::size_t>(p)].client_id = p + 1;
    plan.proportions[static_cast<std::size_t>(p)] = rng.dirichlet(cfg.alpha, c);
  }

  std::vector<std::vector<std::int32_t>> by_cluster(static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < ds.bags.size(); ++i) {
    int k = bag_cluster[i];
    require(k >= 0 && k < c, ErrorCode::config, "cluster id out of range");
    by_cluster[static_cast<std::size_t>(k)].push_back(static_cast<std::int32_t>(i));
  }

  std::vector<double> weights(static_cast<std::size_t>(n_clients));
  for (int k = 0; k < c; ++k) {
    auto& bags = by_cluster[static_cast<std::size_t>(k)];
    if (bags.empty()) continue;
    rng.shuffle(bags);
    for (int p = 0; p < n_clients; ++p)
      weights[static_cast<std::size_t>(p)] =
          plan.proportions[static_cast<std::size_t>(p)][static_cast<std::size_t>(k)];
    std::vector<int> counts = detail::largest_remainder(weights, static_cast<int>(bags.size()));
    std::size_t next = 0;
    for (int p = 0; p < n_clients; ++p)
      for (int t = 0; t < counts[static_cast<std::size_t>(p)]; ++t)
        plan.shards[static_cast<std::size_t>(p)].bag_indices.push_back(bags[next++]);
  }

  detail::repair_empty_shards(plan);
  plan.provenance = {{"scheme", "type2"},
                     {"alpha", cfg.alpha},
                     {"num_clusters", c},
                     {"rng_seed", cfg.rng_seed}};
  return plan;
}

// Per-shard subsampling: keeps ceil(rate * |shard|) bags, uniformly.
// rate == 1 is the identity.
inline PartitionPlan apply_utilization(const PartitionPlan& plan,
                                       const UtilizationConfig& cfg) {
  cfg.validate();
  if (cfg.rate == 1.0) return plan;
  PartitionPlan out = plan;
  for (auto& shard : out.shards) {
    const auto keep = static_cast<std::size_t>(
        std::ceil(cfg.rate * static_cast<double>(shard.bag_indices.size())));
    if (keep >= shard.bag_indices.size()) continue;
    Rng rng(derive_seed(cfg.rng_seed, "utilization", static_cast<std::uint64_t>(shard.client_id)));
    rng.shuffle(shard.bag_indices);
    shard.bag_indices.resize(keep);
    std::sort(shard.bag_indices.begin(), shard.bag_indices.end());
  }
  out.provenance["utilization_rate"] = cfg.rate;
  out.provenance["utilization_seed"] = cfg.rng_seed;
  return out;
}

// --- JSON audit format ---------------------------------------------------

inline nlohmann::json plan_to_json(const PartitionPlan& plan, const BagDataset& ds) {
  nlohmann::json j;
  j["scheme"] = plan.scheme;
  j["provenance"] = plan.provenance;
  j["proportions"] = plan.proportions;
  j["holdout_class"] = plan.holdout_class;
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& shard : plan.shards) {
    nlohmann::json ids = nlohmann::json::array();
    for (auto idx : shard.bag_indices) ids.push_back(ds.bags[static_cast<std::size_t>(idx)].id);
    clients.push_back({{"client", shard.client_id}, {"bag_ids", std::move(ids)}});
  }
  j["clients"] = std::move(clients);
  nlohmann::json rem = nlohmann::json::array();
  for (auto idx : plan.remainder) rem.push_back(ds.bags[static_cast<std::size_t>(idx)].id);
  j["remainder_bag_ids"] = std::move(rem);
  return j;
}

inline PartitionPlan plan_from_json(const nlohmann::json& j, const BagDataset& ds) {
  std::map<std::int64_t, std::int32_t> index_of;
  for (std::size_t i = 0; i < ds.bags.size(); ++i)
    index_of[ds.bags[i].id] = static_cast<std::int32_t>(i);
  auto lookup = [&](std::int64_t id) {
    auto it = index_of.find(id);
    require(it != index_of.end(), ErrorCode::config,
            "plan references unknown bag id " + std::to_string(id));
    return it->second;
  };

  PartitionPlan plan;
  plan.scheme = j.at("scheme").get<std::string>();
  plan.provenance = j.at("provenance");
  plan.proportions = j.at("proportions").get<std::vector<std::vector<double>>>();
  plan.holdout_class = j.at("holdout_class").get<std::vector<int>>();
  for (const auto& cj : j.at("clients")) {
    ClientShard shard;
    shard.client_id = cj.at("client").get<int>();
    for (const auto& id : cj.at("bag_ids"))
      shard.bag_indices.push_back(lookup(id.get<std::int64_t>()));
    plan.shards.push_back(std::move(shard));
  }
  for (const auto& id : j.at("remainder_bag_ids"))
    plan.remainder.push_back(lookup(id.get<std::int64_t>()));
  return plan;
}

} // namespace fedmil
