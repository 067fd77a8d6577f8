#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fedmil/errors.hpp"
#include "fedmil/metrics.hpp"
#include "fedmil/model.hpp"
#include "fedmil/partition.hpp"
#include "fedmil/selection.hpp"

namespace fedmil {

struct FederationConfig {
  int n_clients = 100;
  int cohort_size = 10;     // clients trained per round
  int rounds = 50;          // communication rounds
  int local_epochs = 1;     // full-batch steps per round per client
  SelectionMethod method = SelectionMethod::random;
  bool reselect_per_round = false; // default: select once before round 1
  LookaheadConfig optimizer;
  int embed_dim = 128;
  int attention_dim = 64;
  double quality_floor = 0.01; // epsilon of the quality scaling
  int eval_every = 1;
  bool parallel_clients = false;
  std::uint64_t seed = 0;

  void validate() const {
    require(n_clients >= 1, ErrorCode::config, "federation: n_clients must be >= 1");
    require(cohort_size >= 1 && cohort_size <= n_clients, ErrorCode::config,
            "federation: need 1 <= cohort_size <= n_clients");
    require(rounds >= 1, ErrorCode::config, "federation: rounds must be >= 1");
    require(local_epochs >= 1, ErrorCode::config, "federation: local_epochs must be >= 1");
    require(eval_every >= 1, ErrorCode::config, "federation: eval_every must be >= 1");
    optimizer.validate();
  }
};

struct RoundRecord {
  int round = 0;                 // 1-based
  std::vector<int> cohort;       // selected client indices (0-based)
  double train_loss = 0.0;       // size-weighted cohort mean (global loss)
  std::optional<EvalResult> eval; // present on eval rounds
  double wall_seconds = 0.0;     // not part of serialized outputs
};

// Size-weighted FedAvg: weights normalized over the participating cohort.
inline ModelParams aggregate(const std::vector<std::pair<ModelParams, int>>& updates) {
  require(!updates.empty(), ErrorCode::config, "aggregate: empty update list");
  double total = 0.0;
  for (const auto& [params, count] : updates) {
    require(count > 0, ErrorCode::config, "aggregate: non-positive sample count");
    require(params.same_shape(updates.front().first), ErrorCode::shape_mismatch,
            "aggregate: parameter shapes differ");
    total += static_cast<double>(count);
  }
  ModelConfig shape{updates.front().first.input_dim, updates.front().first.embed_dim,
                    updates.front().first.attention_dim, updates.front().first.num_classes, 0};
  ModelParams out = ModelParams::zeros(shape);
  for (const auto& [params, count] : updates)
    out.add_scaled(params, static_cast<double>(count) / total);
  return out;
}

// Size-weighted mean of cohort losses.
inline double global_loss(const std::vector<std::pair<double, int>>& losses) {
  require(!losses.empty(), ErrorCode::config, "global_loss: empty cohort");
  double total = 0.0, acc = 0.0;
  for (const auto& [loss, count] : losses) {
    require(count > 0, ErrorCode::config, "global_loss: non-positive sample count");
    total += static_cast<double>(count);
    acc += static_cast<double>(count) * loss;
  }
  return acc / total;
}

struct FederationResult {
  std::vector<RoundRecord> history;
  ModelParams final_params;
  std::vector<ClientProfile> profiles;
  Subset cohort; // round-1 selection
};

namespace detail {

inline Subset select_cohort(SelectionMethod method, const SelectionKernel* kernel,
                            int n_clients, int cohort_size, Rng& rng) {
  switch (method) {
    case SelectionMethod::random: return sample_random(n_clients, cohort_size, rng);
    case SelectionMethod::dpp: return sample_dpp_baseline(*kernel, cohort_size, rng);
    default: return sample_dppq(*kernel, cohort_size, rng);
  }
}

[[noreturn]] inline void abort_non_finite(int round, const std::vector<int>& cohort,
                                          const std::vector<std::pair<double, int>>& losses) {
  std::ostringstream msg;
  msg << "aggregated weights non-finite at round " << round << "; cohort:";
  for (std::size_t i = 0; i < cohort.size(); ++i)
    msg << " client" << cohort[i] << "(loss=" << losses[i].first
        << ",n=" << losses[i].second << ")";
  fail(ErrorCode::numeric, msg.str());
}

} // namespace detail

// One federated run: profile every client under the initial global model,
// select the cohort, then for each round train the cohort from the current
// global weights and aggregate. Selection happens once before round 1
// unless reselect_per_round is set (profiles are never recomputed).
inline FederationResult run_federation(const BagDataset& train, const BagDataset& test,
                                       const PartitionPlan& plan,
                                       const FederationConfig& cfg) {
  cfg.validate();
  require(static_cast<int>(plan.shards.size()) >= cfg.n_clients, ErrorCode::config,
          "plan has fewer shards than n_clients");
  for (int p = 0; p < cfg.n_clients; ++p)
    require(!plan.shards[static_cast<std::size_t>(p)].bag_indices.empty(),
            ErrorCode::config, "client " + std::to_string(p) + " has an empty shard");

  ModelConfig model_cfg{train.feature_dim, cfg.embed_dim, cfg.attention_dim,
                        train.num_classes, derive_seed(cfg.seed, "init")};
  ModelParams global = ModelParams::init(model_cfg);

  FederationResult result;
  result.profiles = profile_clients(global, train, plan);
  if (static_cast<int>(result.profiles.size()) > cfg.n_clients)
    result.profiles.resize(static_cast<std::size_t>(cfg.n_clients));

  SelectionKernel kernel;
  if (cfg.method != SelectionMethod::random)
    kernel = build_kernel(result.profiles, cfg.quality_floor,
                          cfg.method == SelectionMethod::dppq);

  Rng select_rng(derive_seed(cfg.seed, "select"));
  result.cohort = detail::select_cohort(cfg.method, &kernel, cfg.n_clients,
                                        cfg.cohort_size, select_rng);

  Subset cohort = result.cohort;
  for (int round = 1; round <= cfg.rounds; ++round) {
    auto t0 = std::chrono::steady_clock::now();
    if (cfg.reselect_per_round && round > 1)
      cohort = detail::select_cohort(cfg.method, &kernel, cfg.n_clients,
                                     cfg.cohort_size, select_rng);

    const std::size_t p = cohort.indices.size();
    std::vector<LocalTrainResult> locals(p);
    auto train_one = [&](std::size_t slot) {
      int client = cohort.indices[slot];
      const ClientShard& shard = plan.shards[static_cast<std::size_t>(client)];
      Rng rng(derive_seed(cfg.seed, "train", static_cast<std::uint64_t>(round),
                          static_cast<std::uint64_t>(client)));
      locals[slot] = train_local(global, train, shard.bag_indices, cfg.optimizer,
                                 cfg.local_epochs, rng);
    };
    if (cfg.parallel_clients && p > 1) {
      std::vector<std::thread> workers;
      workers.reserve(p);
      for (std::size_t slot = 0; slot < p; ++slot) workers.emplace_back(train_one, slot);
      for (auto& w : workers) w.join();
    } else {
      for (std::size_t slot = 0; slot < p; ++slot) train_one(slot);
    }

    // Aggregate in client-index order so the summation is deterministic.
    std::vector<std::pair<ModelParams, int>> updates;
    std::vector<std::pair<double, int>> losses;
    updates.reserve(p);
    losses.reserve(p);
    for (std::size_t slot = 0; slot < p; ++slot) {
      int shard_size = static_cast<int>(
          plan.shards[static_cast<std::size_t>(cohort.indices[slot])].bag_indices.size());
      updates.emplace_back(std::move(locals[slot].params), shard_size);
      losses.emplace_back(locals[slot].mean_loss, shard_size);
    }
    global = aggregate(updates);
    if (!global.finite()) detail::abort_non_finite(round, cohort.indices, losses);

    RoundRecord rec;
    rec.round = round;
    rec.cohort = cohort.indices;
    rec.train_loss = global_loss(losses);
    if (round % cfg.eval_every == 0 || round == cfg.rounds)
      rec.eval = evaluate(global, test);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(std::move(rec));
  }

  result.final_params = std::move(global);
  return result;
}

} // namespace fedmil
