#pragma once

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmil/bag_io.hpp"
#include "fedmil/dataset.hpp"
#include "fedmil/errors.hpp"
#include "fedmil/federation.hpp"
#include "fedmil/metrics.hpp"
#include "fedmil/mnist.hpp"
#include "fedmil/model.hpp"
#include "fedmil/partition.hpp"
#include "fedmil/selection.hpp"

namespace fedmil {

using nlohmann::json;

struct DatasetSpec {
  std::string kind = "synthetic"; // synthetic | mnist | fbag
  // synthetic
  int num_train_bags = 4500;
  int num_test_bags = 900;
  int instances_per_bag = 50;
  int feature_dim = 64;
  int num_classes = 2;
  int num_latent_clusters = 10;
  double class_separation = 3.0;
  // mnist
  std::string path = "data/mnist";
  int train_subset = 10000; // 0 = all
  int test_subset = 0;      // 0 = all
  // fbag
  std::string train_path;
  std::string test_path;

  void validate() const {
    require(kind == "synthetic" || kind == "mnist" || kind == "fbag",
            ErrorCode::config, "dataset.kind must be synthetic|mnist|fbag");
    if (kind == "synthetic") {
      require(num_train_bags > 0 && num_test_bags > 0, ErrorCode::config,
              "dataset: bag counts must be positive");
    }
    if (kind == "fbag")
      require(!train_path.empty() && !test_path.empty(), ErrorCode::config,
              "dataset: fbag needs train_path and test_path");
  }
};

struct PartitionSpec {
  std::string scheme = "type2"; // type1 | type2
  std::vector<double> strengths = {0.5}; // beta (type1) or alpha (type2)
  int num_clusters = 10;        // type2
  double holdout_fraction = 0.1; // type1
  double v_scale = -1.0;         // type1; < 0 = auto
  double h_shift = 1.0;          // type1

  void validate() const {
    require(scheme == "type1" || scheme == "type2", ErrorCode::config,
            "partition.scheme must be type1|type2");
    require(!strengths.empty(), ErrorCode::config, "partition: no strength values");
    for (double s : strengths)
      require(s > 0.0, ErrorCode::config, "partition: strength must be > 0");
  }
};

struct ExperimentConfig {
  DatasetSpec dataset;
  PartitionSpec partition;
  std::vector<double> utilizations = {1.0};
  FederationConfig federation; // method/seed stamped per cell
  std::vector<SelectionMethod> methods = {SelectionMethod::random, SelectionMethod::dpp,
                                          SelectionMethod::dppq};
  int n_runs = 1;
  std::uint64_t base_seed = 1;
  int n_workers = 0; // 0 = hardware concurrency
  std::string output_dir = "out";

  void validate() const {
    dataset.validate();
    partition.validate();
    require(!utilizations.empty(), ErrorCode::config, "no utilization values");
    for (double u : utilizations)
      require(u > 0.0 && u <= 1.0, ErrorCode::config, "utilization must be in (0, 1]");
    require(!methods.empty(), ErrorCode::config, "no methods selected");
    require(n_runs >= 1, ErrorCode::config, "n_runs must be >= 1");
    require(n_workers >= 0, ErrorCode::config, "n_workers must be >= 0");
    require(!output_dir.empty(), ErrorCode::config, "output_dir must be set");
    federation.validate();
  }
};

// --- config <-> JSON. Parsing fills defaults; serialization echoes every
// resolved field so no default stays silent. -------------------------------

namespace detail {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

inline std::vector<double> scalar_or_list(const json& j, const char* key,
                                          std::vector<double> fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (v.is_array()) return v.get<std::vector<double>>();
  return {v.get<double>()};
}

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> known,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) { ok = true; break; }
    require(ok, ErrorCode::config, "unknown config key \"" + it.key() + "\" in " + where);
  }
}

} // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  detail::reject_unknown_keys(j,
                              {"dataset", "partition", "utilization", "federation",
                               "methods", "n_runs", "base_seed", "n_workers", "output_dir"},
                              "config root");
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    detail::reject_unknown_keys(d,
                                {"kind", "num_train_bags", "num_test_bags", "instances_per_bag",
                                 "feature_dim", "num_classes", "num_latent_clusters",
                                 "class_separation", "path", "train_subset", "test_subset",
                                 "train_path", "test_path"},
                                "dataset");
    auto& s = cfg.dataset;
    s.kind = detail::get_or<std::string>(d, "kind", s.kind);
    s.num_train_bags = detail::get_or(d, "num_train_bags", s.num_train_bags);
    s.num_test_bags = detail::get_or(d, "num_test_bags", s.num_test_bags);
    s.instances_per_bag = detail::get_or(d, "instances_per_bag", s.instances_per_bag);
    s.feature_dim = detail::get_or(d, "feature_dim", s.feature_dim);
    s.num_classes = detail::get_or(d, "num_classes", s.num_classes);
    s.num_latent_clusters = detail::get_or(d, "num_latent_clusters", s.num_latent_clusters);
    s.class_separation = detail::get_or(d, "class_separation", s.class_separation);
    s.path = detail::get_or<std::string>(d, "path", s.path);
    s.train_subset = detail::get_or(d, "train_subset", s.train_subset);
    s.test_subset = detail::get_or(d, "test_subset", s.test_subset);
    s.train_path = detail::get_or<std::string>(d, "train_path", s.train_path);
    s.test_path = detail::get_or<std::string>(d, "test_path", s.test_path);
  }
  if (j.contains("partition")) {
    const json& p = j.at("partition");
    detail::reject_unknown_keys(p,
                                {"scheme", "strength", "num_clusters", "holdout_fraction",
                                 "v_scale", "h_shift"},
                                "partition");
    auto& s = cfg.partition;
    s.scheme = detail::get_or<std::string>(p, "scheme", s.scheme);
    s.strengths = detail::scalar_or_list(p, "strength", s.strengths);
    s.num_clusters = detail::get_or(p, "num_clusters", s.num_clusters);
    s.holdout_fraction = detail::get_or(p, "holdout_fraction", s.holdout_fraction);
    s.v_scale = detail::get_or(p, "v_scale", s.v_scale);
    s.h_shift = detail::get_or(p, "h_shift", s.h_shift);
  }
  cfg.utilizations = detail::scalar_or_list(j, "utilization", cfg.utilizations);
  if (j.contains("federation")) {
    const json& f = j.at("federation");
    detail::reject_unknown_keys(f,
                                {"n_clients", "cohort_size", "rounds", "local_epochs",
                                 "learning_rate", "lookahead_steps", "lookahead_alpha",
                                 "embed_dim", "attention_dim", "quality_floor", "eval_every",
                                 "reselect_per_round", "parallel_clients"},
                                "federation");
    auto& s = cfg.federation;
    s.n_clients = detail::get_or(f, "n_clients", s.n_clients);
    s.cohort_size = detail::get_or(f, "cohort_size", s.cohort_size);
    s.rounds = detail::get_or(f, "rounds", s.rounds);
    s.local_epochs = detail::get_or(f, "local_epochs", s.local_epochs);
    s.optimizer.learning_rate = detail::get_or(f, "learning_rate", s.optimizer.learning_rate);
    s.optimizer.lookahead_steps = detail::get_or(f, "lookahead_steps", s.optimizer.lookahead_steps);
    s.optimizer.lookahead_alpha = detail::get_or(f, "lookahead_alpha", s.optimizer.lookahead_alpha);
    s.embed_dim = detail::get_or(f, "embed_dim", s.embed_dim);
    s.attention_dim = detail::get_or(f, "attention_dim", s.attention_dim);
    s.quality_floor = detail::get_or(f, "quality_floor", s.quality_floor);
    s.eval_every = detail::get_or(f, "eval_every", s.eval_every);
    s.reselect_per_round = detail::get_or(f, "reselect_per_round", s.reselect_per_round);
    s.parallel_clients = detail::get_or(f, "parallel_clients", s.parallel_clients);
  }
  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const auto& m : j.at("methods"))
      cfg.methods.push_back(method_from_name(m.get<std::string>()));
  }
  cfg.n_runs = detail::get_or(j, "n_runs", cfg.n_runs);
  cfg.base_seed = detail::get_or(j, "base_seed", cfg.base_seed);
  cfg.n_workers = detail::get_or(j, "n_workers", cfg.n_workers);
  cfg.output_dir = detail::get_or<std::string>(j, "output_dir", cfg.output_dir);
  cfg.validate();
  return cfg;
}

inline json config_to_json(const ExperimentConfig& cfg) {
  json d = {{"kind", cfg.dataset.kind}};
  if (cfg.dataset.kind == "synthetic") {
    d["num_train_bags"] = cfg.dataset.num_train_bags;
    d["num_test_bags"] = cfg.dataset.num_test_bags;
    d["instances_per_bag"] = cfg.dataset.instances_per_bag;
    d["feature_dim"] = cfg.dataset.feature_dim;
    d["num_classes"] = cfg.dataset.num_classes;
    d["num_latent_clusters"] = cfg.dataset.num_latent_clusters;
    d["class_separation"] = cfg.dataset.class_separation;
  } else if (cfg.dataset.kind == "mnist") {
    d["path"] = cfg.dataset.path;
    d["train_subset"] = cfg.dataset.train_subset;
    d["test_subset"] = cfg.dataset.test_subset;
  } else {
    d["train_path"] = cfg.dataset.train_path;
    d["test_path"] = cfg.dataset.test_path;
  }
  json p = {{"scheme", cfg.partition.scheme}, {"strength", cfg.partition.strengths}};
  if (cfg.partition.scheme == "type2") {
    p["num_clusters"] = cfg.partition.num_clusters;
  } else {
    p["holdout_fraction"] = cfg.partition.holdout_fraction;
    p["v_scale"] = cfg.partition.v_scale;
    p["h_shift"] = cfg.partition.h_shift;
  }
  json methods = json::array();
  for (auto m : cfg.methods) methods.push_back(method_name(m));
  return json{{"dataset", std::move(d)},
              {"partition", std::move(p)},
              {"utilization", cfg.utilizations},
              {"federation",
               {{"n_clients", cfg.federation.n_clients},
                {"cohort_size", cfg.federation.cohort_size},
                {"rounds", cfg.federation.rounds},
                {"local_epochs", cfg.federation.local_epochs},
                {"learning_rate", cfg.federation.optimizer.learning_rate},
                {"lookahead_steps", cfg.federation.optimizer.lookahead_steps},
                {"lookahead_alpha", cfg.federation.optimizer.lookahead_alpha},
                {"embed_dim", cfg.federation.embed_dim},
                {"attention_dim", cfg.federation.attention_dim},
                {"quality_floor", cfg.federation.quality_floor},
                {"eval_every", cfg.federation.eval_every},
                {"reselect_per_round", cfg.federation.reselect_per_round},
                {"parallel_clients", cfg.federation.parallel_clients}}},
              {"methods", std::move(methods)},
              {"n_runs", cfg.n_runs},
              {"base_seed", cfg.base_seed},
              {"n_workers", cfg.n_workers},
              {"output_dir", cfg.output_dir}};
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::missing_file, "cannot open config " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::config, "config parse error in " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// --- deterministic number formatting for CSV ------------------------------

namespace detail {

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::string fmt_metric(const std::optional<double>& v) {
  return v ? fmt_g(*v) : "nan";
}

inline std::string strength_tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

} // namespace detail

// --- per-run context building ---------------------------------------------

struct DataBundle {
  BagDataset train;
  BagDataset test;
  std::vector<int> bag_cluster; // type2 only
};

namespace detail {

inline BagDataset subset_bags(const BagDataset& ds, int keep, std::uint64_t seed) {
  if (keep <= 0 || static_cast<std::size_t>(keep) >= ds.bags.size()) return ds;
  std::vector<std::int32_t> idx(ds.bags.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());
  BagDataset out;
  out.feature_dim = ds.feature_dim;
  out.num_classes = ds.num_classes;
  out.split = ds.split;
  out.bags.reserve(idx.size());
  for (auto i : idx) out.bags.push_back(ds.bags[static_cast<std::size_t>(i)]);
  return out;
}

inline std::shared_ptr<const DataBundle> build_bundle(const ExperimentConfig& cfg,
                                                      std::uint64_t run_seed) {
  auto bundle = std::make_shared<DataBundle>();
  const auto& ds = cfg.dataset;
  if (ds.kind == "synthetic") {
    SyntheticSpec spec;
    spec.num_bags = ds.num_train_bags + ds.num_test_bags;
    spec.instances_per_bag = ds.instances_per_bag;
    spec.feature_dim = ds.feature_dim;
    spec.num_classes = ds.num_classes;
    spec.num_latent_clusters = ds.num_latent_clusters;
    spec.class_separation = ds.class_separation;
    spec.rng_seed = derive_seed(run_seed, "data");
    BagDataset all = generate_synthetic(spec);
    auto [train, test] = split_dataset(all, static_cast<std::size_t>(ds.num_train_bags));
    bundle->train = std::move(train);
    bundle->test = std::move(test);
  } else if (ds.kind == "mnist") {
    MnistData mnist = load_mnist(ds.path);
    bundle->train = subset_bags(mnist.train, ds.train_subset,
                                derive_seed(run_seed, "train-subset"));
    bundle->test = subset_bags(mnist.test, ds.test_subset,
                               derive_seed(run_seed, "test-subset"));
  } else {
    bundle->train = load_bags(ds.train_path);
    bundle->test = load_bags(ds.test_path);
    require(bundle->train.feature_dim == bundle->test.feature_dim &&
                bundle->train.num_classes == bundle->test.num_classes,
            ErrorCode::config, "fbag train/test metadata mismatch");
  }
  if (cfg.partition.scheme == "type2")
    bundle->bag_cluster = kmeans_clusters(bundle->train, cfg.partition.num_clusters,
                                          derive_seed(run_seed, "clusters"))
                              .bag_cluster;
  return bundle;
}

inline PartitionPlan build_plan(const ExperimentConfig& cfg, const DataBundle& bundle,
                                double strength, std::uint64_t run_seed) {
  if (cfg.partition.scheme == "type1") {
    PowerLawConfig pl;
    pl.exponent = strength;
    pl.v_scale = cfg.partition.v_scale;
    pl.h_shift = cfg.partition.h_shift;
    pl.holdout_fraction = cfg.partition.holdout_fraction;
    pl.rng_seed = derive_seed(run_seed, "partition");
    return partition_type1(bundle.train, cfg.federation.n_clients, pl);
  }
  DirichletConfig dir;
  dir.alpha = strength;
  dir.num_clusters = cfg.partition.num_clusters;
  dir.rng_seed = derive_seed(run_seed, "partition");
  return partition_type2(bundle.train, cfg.federation.n_clients, dir, bundle.bag_cluster);
}

} // namespace detail

// --- sweep runner ----------------------------------------------------------

struct CellKey {
  double strength = 0.0;
  double utilization = 1.0;
  SelectionMethod method = SelectionMethod::random;
  int run = 0;

  std::string file_stem(const std::string& scheme) const {
    std::ostringstream name;
    name << method_name(method) << "_" << scheme << "-s" << detail::strength_tag(strength)
         << "_u" << detail::strength_tag(utilization) << "_run" << run;
    return name.str();
  }
};

struct CellResult {
  CellKey key;
  std::uint64_t seed = 0;
  std::vector<int> cohort;
  double final_loss = 0.0;
  EvalResult final_eval;
  std::string error; // empty on success
};

namespace detail {

inline void write_rounds_csv(const std::filesystem::path& path,
                             const std::vector<RoundRecord>& history,
                             SelectionMethod method) {
  std::ostringstream out;
  out << "round,method,loss,accuracy,f1,auc\n";
  for (const auto& rec : history) {
    out << rec.round << ',' << method_name(method) << ',' << fmt_g(rec.train_loss) << ',';
    if (rec.eval) {
      out << fmt_g(rec.eval->accuracy) << ',' << fmt_g(rec.eval->f1) << ','
          << fmt_metric(rec.eval->auc);
    } else {
      out << "nan,nan,nan";
    }
    out << '\n';
  }
  write_file(path, out.str());
}

inline json eval_to_json(const EvalResult& e) {
  json j = {{"accuracy", e.accuracy},
            {"f1", e.f1},
            {"f1_kind", e.f1_kind},
            {"f1_zero_division", e.f1_zero_division},
            {"num_samples", e.num_samples},
            {"confusion", e.confusion}};
  if (e.auc)
    j["auc"] = *e.auc;
  else
    j["auc"] = nullptr;
  return j;
}

} // namespace detail

// Runs the full sweep (methods x strengths x utilizations x runs) and writes
// per-round CSVs, per-run JSON summaries, model checkpoints, and the
// aggregate summary shaped like a utilization-by-strength table.
// Returns 0 on success, 1 if any cell failed (outputs labeled incomplete).
inline int run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path out_dir(cfg.output_dir);
  fs::create_directories(out_dir / "runs");

  {
    std::ofstream f(out_dir / "resolved_config.json");
    f << config_to_json(cfg).dump(2) << '\n';
  }

  std::vector<CellKey> cells;
  for (double strength : cfg.partition.strengths)
    for (double util : cfg.utilizations)
      for (auto method : cfg.methods)
        for (int run = 0; run < cfg.n_runs; ++run)
          cells.push_back(CellKey{strength, util, method, run});

  std::vector<CellResult> results(cells.size());

  // Shared per-run dataset bundles (and per strength plans), built lazily so
  // parallel workers never duplicate a k-means pass.
  std::mutex cache_mu;
  std::map<int, std::shared_future<std::shared_ptr<const DataBundle>>> bundle_cache;
  std::map<std::pair<int, double>, std::shared_future<std::shared_ptr<const PartitionPlan>>>
      plan_cache;

  auto bundle_for = [&](int run) {
    std::shared_future<std::shared_ptr<const DataBundle>> fut;
    bool creator = false;
    std::packaged_task<std::shared_ptr<const DataBundle>()> task;
    {
      std::lock_guard<std::mutex> lock(cache_mu);
      auto it = bundle_cache.find(run);
      if (it == bundle_cache.end()) {
        std::uint64_t run_seed = cfg.base_seed + static_cast<std::uint64_t>(run);
        task = std::packaged_task<std::shared_ptr<const DataBundle>()>(
            [&cfg, run_seed] { return detail::build_bundle(cfg, run_seed); });
        fut = task.get_future().share();
        bundle_cache.emplace(run, fut);
        creator = true;
      } else {
        fut = it->second;
      }
    }
    if (creator) task();
    return fut.get();
  };

  auto plan_for = [&](int run, double strength) {
    std::shared_future<std::shared_ptr<const PartitionPlan>> fut;
    bool creator = false;
    std::packaged_task<std::shared_ptr<const PartitionPlan>()> task;
    {
      std::lock_guard<std::mutex> lock(cache_mu);
      auto it = plan_cache.find({run, strength});
      if (it == plan_cache.end()) {
        std::uint64_t run_seed = cfg.base_seed + static_cast<std::uint64_t>(run);
        task = std::packaged_task<std::shared_ptr<const PartitionPlan>()>(
            [&cfg, &bundle_for, run, strength, run_seed] {
              auto bundle = bundle_for(run);
              return std::make_shared<const PartitionPlan>(
                  detail::build_plan(cfg, *bundle, strength, run_seed));
            });
        fut = task.get_future().share();
        plan_cache.emplace(std::make_pair(run, strength), fut);
        creator = true;
      } else {
        fut = it->second;
      }
    }
    if (creator) task();
    return fut.get();
  };

  auto run_cell = [&](std::size_t idx) {
    const CellKey& key = cells[idx];
    CellResult& res = results[idx];
    res.key = key;
    res.seed = cfg.base_seed + static_cast<std::uint64_t>(key.run);
    try {
      auto bundle = bundle_for(key.run);
      auto base_plan = plan_for(key.run, key.strength);
      UtilizationConfig util;
      util.rate = key.utilization;
      util.rng_seed = derive_seed(res.seed, "utilization");
      PartitionPlan plan = apply_utilization(*base_plan, util);

      FederationConfig fed = cfg.federation;
      fed.method = key.method;
      fed.seed = res.seed;
      FederationResult fr = run_federation(bundle->train, bundle->test, plan, fed);

      const std::string stem = key.file_stem(cfg.partition.scheme);
      detail::write_rounds_csv(out_dir / "runs" / (stem + ".rounds.csv"), fr.history,
                               key.method);
      save_params(fr.final_params, out_dir / "runs" / (stem + ".model.fmp"));

      res.cohort = fr.cohort.indices;
      res.final_loss = fr.history.back().train_loss;
      require(fr.history.back().eval.has_value(), ErrorCode::numeric,
              "final round has no evaluation");
      res.final_eval = *fr.history.back().eval;

      json run_json = {{"method", method_name(key.method)},
                       {"scheme", cfg.partition.scheme},
                       {"strength", key.strength},
                       {"utilization", key.utilization},
                       {"run", key.run},
                       {"seed", res.seed},
                       {"cohort", res.cohort},
                       {"final_loss", res.final_loss},
                       {"final_eval", detail::eval_to_json(res.final_eval)},
                       {"rounds_csv", "runs/" + stem + ".rounds.csv"},
                       {"model_blob", "runs/" + stem + ".model.fmp"}};
      detail::write_file(out_dir / "runs" / (stem + ".summary.json"),
                         run_json.dump(2) + "\n");
    } catch (const std::exception& e) {
      res.error = e.what();
    }
  };

  unsigned workers = cfg.n_workers > 0 ? static_cast<unsigned>(cfg.n_workers)
                                       : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(cells.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= cells.size()) return;
          run_cell(i);
        }
      });
    for (auto& t : pool) t.join();
  }

  // Aggregate: per (strength, utilization, method) across runs.
  json summary;
  summary["config"] = config_to_json(cfg);
  json table = json::array();
  std::vector<std::string> errors;
  std::ostringstream csv;
  csv << "utilization,method";
  for (double s : cfg.partition.strengths) {
    const std::string tag = detail::strength_tag(s);
    csv << ",auc@s=" << tag << ",f1@s=" << tag << ",acc@s=" << tag;
  }
  csv << '\n';

  for (double util : cfg.utilizations) {
    for (auto method : cfg.methods) {
      csv << detail::strength_tag(util) << ',' << method_name(method);
      for (double strength : cfg.partition.strengths) {
        std::vector<double> accs, f1s, aucs, losses;
        for (const auto& res : results) {
          if (res.key.strength != strength || res.key.utilization != util ||
              res.key.method != method)
            continue;
          if (!res.error.empty()) {
            errors.push_back(res.key.file_stem(cfg.partition.scheme) + ": " + res.error);
            continue;
          }
          accs.push_back(res.final_eval.accuracy);
          f1s.push_back(res.final_eval.f1);
          if (res.final_eval.auc) aucs.push_back(*res.final_eval.auc);
          losses.push_back(res.final_loss);
        }
        json cell = {{"strength", strength},
                     {"utilization", util},
                     {"method", method_name(method)},
                     {"n_completed", accs.size()}};
        auto put = [&](const char* name, const std::vector<double>& vals) {
          if (vals.empty()) {
            cell[name] = nullptr;
            return std::string("nan");
          }
          MeanStd ms = aggregate_runs(vals);
          cell[name] = {{"mean", ms.mean}, {"std", ms.std}, {"n", ms.n}, {"values", vals}};
          char buf[64];
          std::snprintf(buf, sizeof(buf), "%.4f±%.4f", ms.mean, ms.std);
          return std::string(buf);
        };
        std::string acc_s = put("accuracy", accs);
        std::string f1_s = put("f1", f1s);
        std::string auc_s = put("auc", aucs);
        put("loss", losses);
        table.push_back(std::move(cell));
        csv << ',' << auc_s << ',' << f1_s << ',' << acc_s;
      }
      csv << '\n';
    }
  }
  summary["cells"] = std::move(table);
  summary["incomplete"] = !errors.empty();
  summary["errors"] = errors;
  detail::write_file(out_dir / "summary.json", summary.dump(2) + "\n");
  detail::write_file(out_dir / "summary.csv", csv.str());
  return errors.empty() ? 0 : 1;
}

// --- plot-data emission -----------------------------------------------------

namespace detail {

struct ParsedRounds {
  std::vector<int> rounds;
  std::vector<double> loss, accuracy, f1, auc;
};

inline ParsedRounds parse_rounds_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::missing_file, "cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  require(line == "round,method,loss,accuracy,f1,auc", ErrorCode::config,
          path.string() + ": unexpected CSV header");
  ParsedRounds out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::getline(row, field, ',');
    out.rounds.push_back(std::stoi(field));
    std::getline(row, field, ','); // method
    auto next_double = [&] {
      std::getline(row, field, ',');
      return std::strtod(field.c_str(), nullptr);
    };
    out.loss.push_back(next_double());
    out.accuracy.push_back(next_double());
    out.f1.push_back(next_double());
    out.auc.push_back(next_double());
  }
  return out;
}

} // namespace detail

// Reads a completed results directory and writes per-figure CSVs:
// round-vs-mean-metric convergence curves per (strength, utilization), and
// utilization-vs-final-accuracy.
inline void emit_plot_data(const std::filesystem::path& results_dir) {
  namespace fs = std::filesystem;
  const fs::path cfg_path = results_dir / "resolved_config.json";
  require(fs::exists(cfg_path), ErrorCode::missing_file,
          "no resolved_config.json under " + results_dir.string() +
              " (zero completed runs found)");
  ExperimentConfig cfg = load_config(cfg_path);

  std::vector<std::string> missing;
  for (double strength : cfg.partition.strengths)
    for (double util : cfg.utilizations)
      for (auto method : cfg.methods)
        for (int run = 0; run < cfg.n_runs; ++run) {
          CellKey key{strength, util, method, run};
          auto p = results_dir / "runs" / (key.file_stem(cfg.partition.scheme) + ".rounds.csv");
          if (!fs::exists(p)) missing.push_back(p.filename().string());
        }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += "\n  " + m;
    fail(ErrorCode::missing_file, "missing per-run results:" + list);
  }

  fs::create_directories(results_dir / "plots");

  // Convergence curves: mean over runs, one file per (strength, utilization).
  for (double strength : cfg.partition.strengths) {
    for (double util : cfg.utilizations) {
      std::ostringstream out;
      out << "round,method,loss,accuracy,f1,auc\n";
      for (auto method : cfg.methods) {
        std::vector<detail::ParsedRounds> runs;
        for (int run = 0; run < cfg.n_runs; ++run) {
          CellKey key{strength, util, method, run};
          runs.push_back(detail::parse_rounds_csv(
              results_dir / "runs" / (key.file_stem(cfg.partition.scheme) + ".rounds.csv")));
          require(runs.back().rounds.size() == runs.front().rounds.size(),
                  ErrorCode::config, "round counts differ across runs");
        }
        for (std::size_t r = 0; r < runs.front().rounds.size(); ++r) {
          auto mean_of = [&](auto field) {
            double acc = 0.0;
            for (const auto& pr : runs) acc += (pr.*field)[r];
            return acc / static_cast<double>(runs.size());
          };
          out << runs.front().rounds[r] << ',' << method_name(method) << ','
              << detail::fmt_g(mean_of(&detail::ParsedRounds::loss)) << ','
              << detail::fmt_g(mean_of(&detail::ParsedRounds::accuracy)) << ','
              << detail::fmt_g(mean_of(&detail::ParsedRounds::f1)) << ','
              << detail::fmt_g(mean_of(&detail::ParsedRounds::auc)) << '\n';
        }
      }
      std::ostringstream name;
      name << "convergence_" << cfg.partition.scheme << "-s" << detail::strength_tag(strength)
           << "_u" << detail::strength_tag(util) << ".csv";
      detail::write_file(results_dir / "plots" / name.str(), out.str());
    }
  }

  // Utilization sweep: final accuracy per method (mean and std over runs),
  // averaged over strengths inside each utilization level.
  {
    std::ostringstream out;
    out << "utilization,method,accuracy_mean,accuracy_std\n";
    for (double util : cfg.utilizations) {
      for (auto method : cfg.methods) {
        std::vector<double> finals;
        for (double strength : cfg.partition.strengths)
          for (int run = 0; run < cfg.n_runs; ++run) {
            CellKey key{strength, util, method, run};
            auto pr = detail::parse_rounds_csv(
                results_dir / "runs" /
                (key.file_stem(cfg.partition.scheme) + ".rounds.csv"));
            finals.push_back(pr.accuracy.back());
          }
        MeanStd ms = aggregate_runs(finals);
        out << detail::strength_tag(util) << ',' << method_name(method) << ','
            << detail::fmt_g(ms.mean) << ',' << detail::fmt_g(ms.std) << '\n';
      }
    }
    detail::write_file(results_dir / "plots" / "utilization_accuracy.csv", out.str());
  }
}

// Builds the selection state of run 0 (first strength/utilization) and
// returns the profile and kernel dump.
inline json inspect_kernel(const ExperimentConfig& cfg) {
  std::uint64_t run_seed = cfg.base_seed;
  auto bundle = detail::build_bundle(cfg, run_seed);
  PartitionPlan plan =
      detail::build_plan(cfg, *bundle, cfg.partition.strengths.front(), run_seed);
  UtilizationConfig util;
  util.rate = cfg.utilizations.front();
  util.rng_seed = derive_seed(run_seed, "utilization");
  plan = apply_utilization(plan, util);

  ModelConfig model_cfg{bundle->train.feature_dim, cfg.federation.embed_dim,
                        cfg.federation.attention_dim, bundle->train.num_classes,
                        derive_seed(run_seed, "init")};
  ModelParams params = ModelParams::init(model_cfg);
  auto profiles = profile_clients(params, bundle->train, plan);
  SelectionKernel dppq = build_kernel(profiles, cfg.federation.quality_floor, true);
  SelectionKernel dpp = build_kernel(profiles, cfg.federation.quality_floor, false);

  json j;
  j["strength"] = cfg.partition.strengths.front();
  j["utilization"] = cfg.utilizations.front();
  j["seed"] = run_seed;
  j["profiles"] = profiles_to_json(profiles);
  j["dppq_kernel"] = kernel_to_json(dppq);
  j["dpp_eigenvalues"] = dpp.eig.values;
  return j;
}

} // namespace fedmil
