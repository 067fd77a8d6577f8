#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "fedmil/dataset.hpp"
#include "fedmil/partition.hpp"
#include "helpers.hpp"

using fedmil::BagDataset;
using fedmil::DirichletConfig;
using fedmil::Error;
using fedmil::PartitionPlan;
using fedmil::PowerLawConfig;
using fedmil::UtilizationConfig;

namespace {

BagDataset binary_dataset(int num_bags, std::uint64_t seed) {
  fedmil::SyntheticSpec spec;
  spec.num_bags = num_bags;
  spec.instances_per_bag = 2;
  spec.feature_dim = 4;
  spec.num_classes = 2;
  spec.num_latent_clusters = 3;
  spec.rng_seed = seed;
  return fedmil::generate_synthetic(spec);
}

double class1_fraction(const BagDataset& ds, const fedmil::ClientShard& shard) {
  int ones = 0;
  for (auto idx : shard.bag_indices)
    ones += ds.bags[static_cast<std::size_t>(idx)].label == 1;
  return static_cast<double>(ones) / static_cast<double>(shard.bag_indices.size());
}

void check_disjoint_and_conserved(const PartitionPlan& plan, std::size_t num_bags,
                                  bool expect_full_cover) {
  std::set<std::int32_t> seen;
  std::size_t total = 0;
  for (const auto& shard : plan.shards) {
    REQUIRE_FALSE(shard.bag_indices.empty());
    for (auto idx : shard.bag_indices) {
      REQUIRE(seen.insert(idx).second); // no index in two shards
      ++total;
    }
  }
  for (auto idx : plan.remainder) {
    REQUIRE(seen.insert(idx).second); // remainder never overlaps shards
    ++total;
  }
  if (expect_full_cover) REQUIRE(total == num_bags);
}

} // namespace

TEST_CASE("power-law exponent zero gives a flat class-1 fraction", "[partition]") {
  BagDataset ds = binary_dataset(600, 1);
  PowerLawConfig cfg;
  cfg.exponent = 0.0;
  cfg.v_scale = 0.4;
  cfg.holdout_fraction = 0.0;
  cfg.rng_seed = 3;
  PartitionPlan plan = fedmil::partition_type1(ds, 10, cfg);
  for (const auto& shard : plan.shards) {
    double frac = class1_fraction(ds, shard);
    // Within rounding of the shared target 0.4.
    REQUIRE(std::abs(frac - 0.4) <= 1.0 / static_cast<double>(shard.bag_indices.size()));
  }
  check_disjoint_and_conserved(plan, ds.bags.size(), true);
}

TEST_CASE("power-law linear ramp matches p/N targets", "[partition]") {
  BagDataset ds = binary_dataset(800, 2);
  const int n = 8;
  PowerLawConfig cfg;
  cfg.exponent = 1.0;
  cfg.h_shift = 0.0;
  cfg.v_scale = 1.0 / n;
  cfg.holdout_fraction = 0.0;
  cfg.rng_seed = 4;
  PartitionPlan plan = fedmil::partition_type1(ds, n, cfg);
  for (int p = 1; p <= n; ++p) {
    const auto& shard = plan.shards[static_cast<std::size_t>(p - 1)];
    double target = static_cast<double>(p) / n;
    REQUIRE(std::abs(class1_fraction(ds, shard) - target) <=
            1.0 / static_cast<double>(shard.bag_indices.size()));
  }
}

TEST_CASE("type1 realized fractions track targets across exponents", "[partition]") {
  BagDataset ds = binary_dataset(2000, 5);
  for (double beta : {0.2, 0.5, 0.8, 1.0}) {
    PowerLawConfig cfg;
    cfg.exponent = beta;
    cfg.rng_seed = 11;
    const int n = 100;
    PartitionPlan plan = fedmil::partition_type1(ds, n, cfg);
    check_disjoint_and_conserved(plan, ds.bags.size(), false);
    int holdouts = 0;
    for (int p = 1; p <= n; ++p) {
      const auto& shard = plan.shards[static_cast<std::size_t>(p - 1)];
      if (plan.holdout_class[static_cast<std::size_t>(p - 1)] != -1) {
        ++holdouts;
        double frac = class1_fraction(ds, shard);
        REQUIRE((frac == 0.0 || frac == 1.0)); // single-class shard
        continue;
      }
      // Recompute the target straight from the formula.
      double target =
          std::clamp(cfg.resolved_v_scale(n) * std::pow(p + cfg.h_shift, beta), 0.0, 1.0);
      REQUIRE(std::abs(class1_fraction(ds, shard) - target) <=
              1.0 / static_cast<double>(shard.bag_indices.size()));
    }
    REQUIRE(holdouts == 10);
  }
}

TEST_CASE("type1 rejects more than two classes", "[partition]") {
  fedmil::SyntheticSpec spec;
  spec.num_bags = 50;
  spec.instances_per_bag = 2;
  spec.feature_dim = 4;
  spec.num_classes = 3;
  spec.rng_seed = 6;
  BagDataset ds = fedmil::generate_synthetic(spec);
  PowerLawConfig cfg;
  try {
    fedmil::partition_type1(ds, 5, cfg);
    FAIL();
  } catch (const Error& e) {
    REQUIRE(e.code() == fedmil::ErrorCode::unsupported);
  }
}

TEST_CASE("type1 is deterministic in (dataset, config, seed)", "[partition]") {
  BagDataset ds = binary_dataset(400, 7);
  PowerLawConfig cfg;
  cfg.rng_seed = 17;
  PartitionPlan a = fedmil::partition_type1(ds, 20, cfg);
  PartitionPlan b = fedmil::partition_type1(ds, 20, cfg);
  for (std::size_t i = 0; i < a.shards.size(); ++i)
    REQUIRE(a.shards[i].bag_indices == b.shards[i].bag_indices);
  REQUIRE(a.remainder == b.remainder);
}

TEST_CASE("kmeans recovers well-separated point clusters", "[partition]") {
  // Three far-apart points, bags sitting exactly on them.
  BagDataset ds;
  ds.feature_dim = 2;
  ds.num_classes = 2;
  float centers[3][2] = {{0.f, 0.f}, {100.f, 0.f}, {0.f, 100.f}};
  for (int b = 0; b < 30; ++b) {
    fedmil::Bag bag;
    bag.id = b;
    bag.label = b % 2;
    bag.num_instances = 2;
    int c = b % 3;
    bag.features = {centers[c][0], centers[c][1], centers[c][0], centers[c][1]};
    ds.bags.push_back(bag);
  }
  auto km = fedmil::kmeans_clusters(ds, 3, 9);
  REQUIRE(km.inertia == Catch::Approx(0.0).margin(1e-9));
  // Bags on the same point share a cluster; different points differ.
  for (int b = 0; b < 30; ++b)
    REQUIRE(km.bag_cluster[static_cast<std::size_t>(b)] ==
            km.bag_cluster[static_cast<std::size_t>(b % 3)]);
  REQUIRE(std::set<int>(km.bag_cluster.begin(), km.bag_cluster.end()).size() == 3);
}

TEST_CASE("single-instance bags vote as their instance", "[partition]") {
  BagDataset ds;
  ds.feature_dim = 1;
  ds.num_classes = 2;
  for (int b = 0; b < 20; ++b) {
    fedmil::Bag bag;
    bag.id = b;
    bag.label = 0;
    bag.num_instances = 1;
    bag.features = {b < 10 ? -50.0f : 50.0f};
    ds.bags.push_back(bag);
  }
  auto km = fedmil::kmeans_clusters(ds, 2, 1);
  for (int b = 0; b < 20; ++b)
    REQUIRE(km.bag_cluster[static_cast<std::size_t>(b)] ==
            km.instance_cluster[static_cast<std::size_t>(b)]);
}

TEST_CASE("kmeans rejects degenerate inputs", "[partition]") {
  BagDataset ds;
  ds.feature_dim = 1;
  ds.num_classes = 2;
  for (int b = 0; b < 5; ++b) {
    fedmil::Bag bag;
    bag.id = b;
    bag.label = 0;
    bag.num_instances = 1;
    bag.features = {1.0f}; // every instance identical
    ds.bags.push_back(bag);
  }
  try {
    fedmil::kmeans_clusters(ds, 2, 1);
    FAIL();
  } catch (const Error& e) {
    REQUIRE(e.code() == fedmil::ErrorCode::degenerate);
  }
}

TEST_CASE("kmeans recovers synthetic latent clusters", "[partition]") {
  fedmil::SyntheticSpec spec;
  spec.num_bags = 500;
  spec.instances_per_bag = 5;
  spec.feature_dim = 16;
  spec.num_latent_clusters = 10;
  spec.class_separation = 1.0;
  spec.rng_seed = 13;
  fedmil::SyntheticTruth truth;
  BagDataset ds = fedmil::generate_synthetic(spec, &truth);
  auto km = fedmil::kmeans_clusters(ds, 10, 21);

  // Greedy best matching on the contingency table.
  int table[10][10] = {};
  for (std::size_t b = 0; b < ds.bags.size(); ++b)
    table[truth.latent_cluster[b]][km.bag_cluster[b]]++;
  bool used_row[10] = {}, used_col[10] = {};
  int agree = 0;
  for (int pick = 0; pick < 10; ++pick) {
    int best = -1, br = 0, bc = 0;
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 10; ++c)
        if (!used_row[r] && !used_col[c] && table[r][c] > best) {
          best = table[r][c];
          br = r;
          bc = c;
        }
    used_row[br] = used_col[bc] = true;
    agree += best;
  }
  REQUIRE(static_cast<double>(agree) / static_cast<double>(ds.bags.size()) > 0.9);
}

TEST_CASE("dirichlet concentration limit is uniform", "[partition]") {
  fedmil::Rng rng(fedmil::derive_seed(101, "type2"));
  for (int draw = 0; draw < 100; ++draw) {
    auto w = rng.dirichlet(1e6, 10);
    for (double v : w) REQUIRE(std::abs(v - 0.1) < 0.01);
  }
}

TEST_CASE("single-cluster dirichlet is the point mass", "[partition]") {
  BagDataset ds = binary_dataset(60, 8);
  DirichletConfig cfg;
  cfg.alpha = 0.5;
  cfg.num_clusters = 1;
  cfg.rng_seed = 2;
  std::vector<int> clusters(ds.bags.size(), 0);
  PartitionPlan plan = fedmil::partition_type2(ds, 6, cfg, clusters);
  for (const auto& row : plan.proportions) {
    REQUIRE(row.size() == 1);
    REQUIRE(row[0] == 1.0);
  }
  check_disjoint_and_conserved(plan, ds.bags.size(), true);
}

TEST_CASE("type2 counts equal largest-remainder rounding exactly", "[partition]") {
  BagDataset ds = binary_dataset(900, 9);
  auto km = fedmil::kmeans_clusters(ds, 3, 33);
  for (double alpha : {0.2, 0.5, 0.8, 1.0}) {
    DirichletConfig cfg;
    cfg.alpha = alpha;
    cfg.num_clusters = 3;
    cfg.rng_seed = 55;
    const int n = 12;
    PartitionPlan plan = fedmil::partition_type2(ds, n, cfg, km.bag_cluster);
    check_disjoint_and_conserved(plan, ds.bags.size(), true);

    // Re-derive the expected allocation from the drawn proportions recorded
    // in the plan (independent largest-remainder pass).
    std::vector<std::size_t> cluster_sizes(3, 0);
    for (int c : km.bag_cluster) cluster_sizes[static_cast<std::size_t>(c)]++;
    for (int k = 0; k < 3; ++k) {
      std::vector<double> weights(n);
      for (int p = 0; p < n; ++p)
        weights[static_cast<std::size_t>(p)] =
            plan.proportions[static_cast<std::size_t>(p)][static_cast<std::size_t>(k)];
      double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
      std::vector<int> expected(n, 0);
      std::vector<std::pair<double, int>> rem(n);
      int assigned = 0;
      for (int p = 0; p < n; ++p) {
        double exact = static_cast<double>(cluster_sizes[static_cast<std::size_t>(k)]) *
                       weights[static_cast<std::size_t>(p)] / wsum;
        expected[static_cast<std::size_t>(p)] = static_cast<int>(std::floor(exact));
        rem[static_cast<std::size_t>(p)] = {exact - std::floor(exact), p};
        assigned += expected[static_cast<std::size_t>(p)];
      }
      std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (int extra = 0;
           extra < static_cast<int>(cluster_sizes[static_cast<std::size_t>(k)]) - assigned;
           ++extra)
        expected[static_cast<std::size_t>(rem[static_cast<std::size_t>(extra)].second)]++;

      for (int p = 0; p < n; ++p) {
        int realized = 0;
        for (auto idx : plan.shards[static_cast<std::size_t>(p)].bag_indices)
          realized += km.bag_cluster[static_cast<std::size_t>(idx)] == k;
        REQUIRE(realized == expected[static_cast<std::size_t>(p)]);
      }
    }
  }
}

TEST_CASE("type2 rejects bad alpha and bad cluster maps", "[partition]") {
  BagDataset ds = binary_dataset(40, 10);
  DirichletConfig cfg;
  cfg.alpha = 0.0;
  std::vector<int> clusters(ds.bags.size(), 0);
  REQUIRE_THROWS_AS(fedmil::partition_type2(ds, 4, cfg, clusters), Error);
  cfg.alpha = 0.5;
  std::vector<int> short_map(ds.bags.size() - 1, 0);
  REQUIRE_THROWS_AS(fedmil::partition_type2(ds, 4, cfg, short_map), Error);
}

TEST_CASE("utilization keeps ceil(rate * size) bags from each shard", "[partition]") {
  BagDataset ds = binary_dataset(200, 11);
  DirichletConfig cfg;
  cfg.rng_seed = 3;
  cfg.num_clusters = 3;
  auto km = fedmil::kmeans_clusters(ds, 3, 12);
  PartitionPlan plan = fedmil::partition_type2(ds, 10, cfg, km.bag_cluster);

  SECTION("identity at rate 1") {
    UtilizationConfig util;
    util.rate = 1.0;
    PartitionPlan same = fedmil::apply_utilization(plan, util);
    for (std::size_t i = 0; i < plan.shards.size(); ++i)
      REQUIRE(same.shards[i].bag_indices == plan.shards[i].bag_indices);
  }
  SECTION("subset property at rate 0.5") {
    UtilizationConfig util;
    util.rate = 0.5;
    util.rng_seed = 77;
    PartitionPlan half = fedmil::apply_utilization(plan, util);
    for (std::size_t i = 0; i < plan.shards.size(); ++i) {
      const auto& orig = plan.shards[i].bag_indices;
      const auto& kept = half.shards[i].bag_indices;
      REQUIRE(kept.size() ==
              static_cast<std::size_t>(std::ceil(0.5 * static_cast<double>(orig.size()))));
      std::set<std::int32_t> pool(orig.begin(), orig.end());
      for (auto idx : kept) REQUIRE(pool.count(idx) == 1);
    }
  }
  SECTION("invalid rates rejected") {
    UtilizationConfig util;
    util.rate = 0.0;
    REQUIRE_THROWS_AS(fedmil::apply_utilization(plan, util), Error);
    util.rate = 1.5;
    REQUIRE_THROWS_AS(fedmil::apply_utilization(plan, util), Error);
  }
}

TEST_CASE("plan json round-trips", "[partition]") {
  BagDataset ds = binary_dataset(120, 12);
  PowerLawConfig cfg;
  cfg.rng_seed = 5;
  PartitionPlan plan = fedmil::partition_type1(ds, 6, cfg);
  auto j = fedmil::plan_to_json(plan, ds);
  PartitionPlan back = fedmil::plan_from_json(j, ds);
  REQUIRE(back.scheme == plan.scheme);
  REQUIRE(back.remainder == plan.remainder);
  REQUIRE(back.holdout_class == plan.holdout_class);
  for (std::size_t i = 0; i < plan.shards.size(); ++i) {
    REQUIRE(back.shards[i].client_id == plan.shards[i].client_id);
    REQUIRE(back.shards[i].bag_indices == plan.shards[i].bag_indices);
  }
}
