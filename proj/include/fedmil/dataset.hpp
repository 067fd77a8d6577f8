#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedmil/errors.hpp"
#include "fedmil/rng.hpp"

namespace fedmil {

enum class Split : std::uint8_t { train = 0, test = 1, other = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    default: return "other";
  }
}

// One sample: an ordered set of instance feature vectors sharing a label.
// Instances are stored flat (row-major, float32 as on disk); math promotes
// to double.
struct Bag {
  std::int64_t id = 0;
  int label = 0;
  int num_instances = 0;
  std::vector<float> features; // num_instances * feature_dim

  std::span<const float> instance(int i, int feature_dim) const {
    return std::span<const float>(features.data() +
                                      static_cast<std::size_t>(i) * feature_dim,
                                  static_cast<std::size_t>(feature_dim));
  }

  bool operator==(const Bag&) const = default;
};

struct BagDataset {
  std::vector<Bag> bags;
  int feature_dim = 0;
  int num_classes = 0;
  Split split = Split::other;

  std::size_t size() const { return bags.size(); }

  bool operator==(const BagDataset&) const = default;

  void validate() const {
    require(feature_dim >= 1, ErrorCode::config, "dataset: feature_dim must be >= 1");
    require(num_classes >= 2, ErrorCode::config, "dataset: num_classes must be >= 2");
    std::vector<std::int64_t> ids;
    ids.reserve(bags.size());
    for (const Bag& b : bags) {
      require(b.num_instances >= 1, ErrorCode::config, "dataset: empty bag");
      require(b.features.size() == static_cast<std::size_t>(b.num_instances) *
                                       static_cast<std::size_t>(feature_dim),
              ErrorCode::shape_mismatch, "dataset: bag feature size mismatch");
      require(b.label >= 0 && b.label < num_classes, ErrorCode::config,
              "dataset: label out of range");
      ids.push_back(b.id);
    }
    std::sort(ids.begin(), ids.end());
    require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(),
            ErrorCode::config, "dataset: duplicate bag ids");
  }
};

struct SyntheticSpec {
  int num_bags = 4500;
  int instances_per_bag = 50;
  int feature_dim = 64;
  int num_classes = 2;
  int num_latent_clusters = 10;
  double class_separation = 3.0;
  std::uint64_t rng_seed = 0;

  void validate() const {
    require(num_bags > 0, ErrorCode::config, "synthetic: num_bags must be positive");
    require(instances_per_bag > 0, ErrorCode::config,
            "synthetic: instances_per_bag must be positive");
    require(feature_dim > 0, ErrorCode::config, "synthetic: feature_dim must be positive");
    require(num_classes >= 2, ErrorCode::config, "synthetic: num_classes must be >= 2");
    require(num_latent_clusters > 0, ErrorCode::config,
            "synthetic: num_latent_clusters must be positive");
    require(class_separation > 0.0, ErrorCode::config,
            "synthetic: class_separation must be > 0");
  }
};

// Generated alongside the dataset: which latent cluster each bag was drawn
// from. Used by tests to score k-means recovery; not part of the dataset.
struct SyntheticTruth {
  std::vector<int> latent_cluster; // per bag
};

// Feature-bag generator. Every bag picks a latent cluster uniformly and a
// class label uniformly; instances are unit Gaussians around the
// (cluster, class) centroid. Class centroids within a cluster sit
// class_separation apart, cluster centers are spread wide so the latent
// structure is recoverable by k-means.
inline BagDataset generate_synthetic(const SyntheticSpec& spec,
                                     SyntheticTruth* truth = nullptr) {
  spec.validate();
  Rng rng(derive_seed(spec.rng_seed, "synthetic"));

  const int d = spec.feature_dim;
  const int num_centroids = spec.num_latent_clusters * spec.num_classes;

  // Cluster centers: N(0, 3^2 I). Class offsets: class 0 sits on the
  // center, higher classes at class_separation along a random unit vector.
  std::vector<double> centroids(static_cast<std::size_t>(num_centroids) * d);
  for (int c = 0; c < spec.num_latent_clusters; ++c) {
    std::vector<double> center(d);
    for (auto& v : center) v = 3.0 * rng.normal();
    for (int y = 0; y < spec.num_classes; ++y) {
      double* out = centroids.data() + (static_cast<std::size_t>(c) * spec.num_classes + y) * d;
      if (y == 0) {
        std::copy(center.begin(), center.end(), out);
        continue;
      }
      std::vector<double> dir(d);
      double norm2 = 0.0;
      for (auto& v : dir) {
        v = rng.normal();
        norm2 += v * v;
      }
      double scale = spec.class_separation / std::sqrt(norm2);
      for (int j = 0; j < d; ++j) out[j] = center[j] + scale * dir[j];
    }
  }

  BagDataset ds;
  ds.feature_dim = d;
  ds.num_classes = spec.num_classes;
  ds.split = Split::other;
  ds.bags.resize(static_cast<std::size_t>(spec.num_bags));
  if (truth) truth->latent_cluster.resize(static_cast<std::size_t>(spec.num_bags));

  for (int b = 0; b < spec.num_bags; ++b) {
    int cluster = static_cast<int>(rng.uniform_below(spec.num_latent_clusters));
    int label = static_cast<int>(rng.uniform_below(spec.num_classes));
    if (truth) truth->latent_cluster[static_cast<std::size_t>(b)] = cluster;

    Bag& bag = ds.bags[static_cast<std::size_t>(b)];
    bag.id = b;
    bag.label = label;
    bag.num_instances = spec.instances_per_bag;
    bag.features.resize(static_cast<std::size_t>(spec.instances_per_bag) * d);
    const double* mu = centroids.data() +
                       (static_cast<std::size_t>(cluster) * spec.num_classes + label) * d;
    for (int i = 0; i < spec.instances_per_bag; ++i) {
      float* row = bag.features.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j)
        row[j] = static_cast<float>(mu[j] + rng.normal());
    }
  }
  return ds;
}

// First n_train bags become the train split, the rest the test split.
// Bags are exchangeable by construction, so an index split is unbiased.
inline std::pair<BagDataset, BagDataset> split_dataset(const BagDataset& ds,
                                                       std::size_t n_train) {
  require(n_train >= 1 && n_train < ds.bags.size(), ErrorCode::config,
          "split_dataset: n_train out of range");
  BagDataset train, test;
  train.feature_dim = test.feature_dim = ds.feature_dim;
  train.num_classes = test.num_classes = ds.num_classes;
  train.split = Split::train;
  test.split = Split::test;
  train.bags.assign(ds.bags.begin(), ds.bags.begin() + static_cast<std::ptrdiff_t>(n_train));
  test.bags.assign(ds.bags.begin() + static_cast<std::ptrdiff_t>(n_train), ds.bags.end());
  return {std::move(train), std::move(test)};
}

} // namespace fedmil
