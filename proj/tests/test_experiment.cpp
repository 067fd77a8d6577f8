#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "fedmil/experiment.hpp"

namespace fs = std::filesystem;
using fedmil::ExperimentConfig;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "fedmil_exp" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// Small synthetic smoke config: N=10 clients, P=3, T=2 rounds.
ExperimentConfig smoke_config(const fs::path& out) {
  json j = {
      {"dataset",
       {{"kind", "synthetic"},
        {"num_train_bags", 80},
        {"num_test_bags", 30},
        {"instances_per_bag", 3},
        {"feature_dim", 8},
        {"num_classes", 2},
        {"num_latent_clusters", 4},
        {"class_separation", 3.0}}},
      {"partition", {{"scheme", "type2"}, {"strength", 0.5}, {"num_clusters", 4}}},
      {"utilization", 1.0},
      {"federation",
       {{"n_clients", 10},
        {"cohort_size", 3},
        {"rounds", 2},
        {"local_epochs", 1},
        {"learning_rate", 0.05},
        {"embed_dim", 6},
        {"attention_dim", 4}}},
      {"methods", {"random", "dpp", "dppq"}},
      {"n_runs", 1},
      {"base_seed", 7},
      {"n_workers", 2},
      {"output_dir", out.string()}};
  return fedmil::config_from_json(j);
}

} // namespace

TEST_CASE("config json round-trips with defaults echoed", "[experiment]") {
  json minimal = {{"dataset", {{"kind", "synthetic"}}}};
  ExperimentConfig cfg = fedmil::config_from_json(minimal);
  json echoed = fedmil::config_to_json(cfg);

  // Every defaulted field appears in the echo.
  REQUIRE(echoed.at("federation").at("n_clients") == 100);
  REQUIRE(echoed.at("federation").at("learning_rate") == 0.01);
  REQUIRE(echoed.at("partition").at("scheme") == "type2");
  REQUIRE(echoed.at("utilization") == json::array({1.0}));
  REQUIRE(echoed.at("n_runs") == 1);
  REQUIRE(echoed.at("base_seed") == 1);

  // Parsing the echo reproduces the echo (fixed point).
  ExperimentConfig back = fedmil::config_from_json(echoed);
  REQUIRE(fedmil::config_to_json(back) == echoed);
}

TEST_CASE("scalar and list strengths both parse", "[experiment]") {
  json j1 = {{"partition", {{"scheme", "type2"}, {"strength", 0.2}}}};
  REQUIRE(fedmil::config_from_json(j1).partition.strengths == std::vector<double>{0.2});
  json j2 = {{"partition", {{"scheme", "type2"}, {"strength", {0.2, 0.5, 1.0}}}}};
  REQUIRE(fedmil::config_from_json(j2).partition.strengths ==
          std::vector<double>{0.2, 0.5, 1.0});
}

TEST_CASE("unknown config keys are rejected", "[experiment]") {
  json j = {{"dataset", {{"kind", "synthetic"}}}, {"typo_field", 1}};
  REQUIRE_THROWS_AS(fedmil::config_from_json(j), fedmil::Error);
  json j2 = {{"federation", {{"learning_rat", 0.1}}}};
  REQUIRE_THROWS_AS(fedmil::config_from_json(j2), fedmil::Error);
}

TEST_CASE("invalid config values are rejected before any work", "[experiment]") {
  json j = {{"partition", {{"scheme", "type2"}, {"strength", -0.5}}}};
  REQUIRE_THROWS_AS(fedmil::config_from_json(j), fedmil::Error);
  json j2 = {{"utilization", 0.0}};
  REQUIRE_THROWS_AS(fedmil::config_from_json(j2), fedmil::Error);
  json j3 = {{"methods", {"dppq", "bogus"}}};
  REQUIRE_THROWS_AS(fedmil::config_from_json(j3), fedmil::Error);
}

TEST_CASE("smoke run emits per-cell artifacts and a summary", "[experiment]") {
  auto out = temp_dir("smoke");
  ExperimentConfig cfg = smoke_config(out);
  REQUIRE(fedmil::run_experiment(cfg) == 0);

  REQUIRE(fs::exists(out / "resolved_config.json"));
  REQUIRE(fs::exists(out / "summary.json"));
  REQUIRE(fs::exists(out / "summary.csv"));
  for (const char* m : {"random", "dpp", "dppq"}) {
    auto stem = std::string(m) + "_type2-s0.5_u1_run0";
    REQUIRE(fs::exists(out / "runs" / (stem + ".rounds.csv")));
    REQUIRE(fs::exists(out / "runs" / (stem + ".summary.json")));
    REQUIRE(fs::exists(out / "runs" / (stem + ".model.fmp")));

    // 2 rounds -> header + 2 rows.
    std::string csv = slurp(out / "runs" / (stem + ".rounds.csv"));
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 3);
    REQUIRE(csv.rfind("round,method,loss,accuracy,f1,auc\n", 0) == 0);
  }

  json summary = json::parse(slurp(out / "summary.json"));
  REQUIRE(summary.at("incomplete") == false);
  REQUIRE(summary.at("cells").size() == 3);
  REQUIRE(summary.at("config").at("n_runs") == 1);
}

TEST_CASE("rerunning a config overwrites outputs byte-identically", "[experiment]") {
  auto out = temp_dir("determinism");
  ExperimentConfig cfg = smoke_config(out);
  REQUIRE(fedmil::run_experiment(cfg) == 0);
  std::string summary1 = slurp(out / "summary.json");
  std::string csv1 = slurp(out / "runs" / "dppq_type2-s0.5_u1_run0.rounds.csv");
  std::string model1 = slurp(out / "runs" / "dppq_type2-s0.5_u1_run0.model.fmp");

  REQUIRE(fedmil::run_experiment(cfg) == 0);
  REQUIRE(slurp(out / "summary.json") == summary1);
  REQUIRE(slurp(out / "runs" / "dppq_type2-s0.5_u1_run0.rounds.csv") == csv1);
  REQUIRE(slurp(out / "runs" / "dppq_type2-s0.5_u1_run0.model.fmp") == model1);
}

TEST_CASE("summary embeds a config that reproduces the summary", "[experiment]") {
  auto out = temp_dir("roundtrip");
  ExperimentConfig cfg = smoke_config(out);
  REQUIRE(fedmil::run_experiment(cfg) == 0);
  std::string summary1 = slurp(out / "summary.json");

  json embedded = json::parse(summary1).at("config");
  ExperimentConfig cfg2 = fedmil::config_from_json(embedded);
  REQUIRE(fedmil::run_experiment(cfg2) == 0);
  REQUIRE(slurp(out / "summary.json") == summary1);
}

TEST_CASE("plot emission aggregates runs and lists absentees", "[experiment]") {
  auto out = temp_dir("plots");
  ExperimentConfig cfg = smoke_config(out);
  cfg.n_runs = 2;
  REQUIRE(fedmil::run_experiment(cfg) == 0);

  fedmil::emit_plot_data(out);
  auto conv = out / "plots" / "convergence_type2-s0.5_u1.csv";
  REQUIRE(fs::exists(conv));
  std::string csv = slurp(conv);
  // 3 methods x 2 rounds of data rows + header.
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 7);

  // Mean equals recomputation from the raw per-run CSVs.
  auto parse_acc = [&](const std::string& stem) {
    std::string raw = slurp(out / "runs" / (stem + ".rounds.csv"));
    auto last_line = raw.substr(raw.rfind("2,dppq"));
    // round,method,loss,accuracy,...
    std::istringstream row(last_line);
    std::string field;
    std::getline(row, field, ',');
    std::getline(row, field, ',');
    std::getline(row, field, ',');
    std::getline(row, field, ',');
    return std::stod(field);
  };
  double mean_acc =
      0.5 * (parse_acc("dppq_type2-s0.5_u1_run0") + parse_acc("dppq_type2-s0.5_u1_run1"));
  REQUIRE(csv.find("2,dppq") != std::string::npos);
  std::istringstream last(csv.substr(csv.rfind("2,dppq")));
  std::string field;
  std::getline(last, field, ',');
  std::getline(last, field, ',');
  std::getline(last, field, ',');
  std::getline(last, field, ',');
  REQUIRE(std::stod(field) == Catch::Approx(mean_acc).margin(1e-9));

  REQUIRE(fs::exists(out / "plots" / "utilization_accuracy.csv"));

  SECTION("missing runs are listed by name") {
    fs::remove(out / "runs" / "dpp_type2-s0.5_u1_run1.rounds.csv");
    try {
      fedmil::emit_plot_data(out);
      FAIL();
    } catch (const fedmil::Error& e) {
      REQUIRE(std::string(e.what()).find("dpp_type2-s0.5_u1_run1.rounds.csv") !=
              std::string::npos);
    }
  }
  SECTION("empty directory reports zero runs") {
    auto empty = temp_dir("empty");
    try {
      fedmil::emit_plot_data(empty);
      FAIL();
    } catch (const fedmil::Error& e) {
      REQUIRE(std::string(e.what()).find("zero completed runs") != std::string::npos);
    }
  }
}

TEST_CASE("inspect_kernel dumps profiles and eigenvalues", "[experiment]") {
  auto out = temp_dir("inspect");
  ExperimentConfig cfg = smoke_config(out);
  json j = fedmil::inspect_kernel(cfg);
  REQUIRE(j.at("profiles").size() == 10);
  REQUIRE(j.at("dppq_kernel").at("eigenvalues").size() == 10);
  REQUIRE(j.at("dpp_eigenvalues").size() == 10);
  REQUIRE(j.at("dppq_kernel").at("similarity").size() == 10);
}

TEST_CASE("failing cells mark the summary incomplete", "[experiment]") {
  auto out = temp_dir("failing");
  ExperimentConfig cfg = smoke_config(out);
  cfg.dataset.kind = "fbag";
  cfg.dataset.train_path = (out / "missing_train.fbag").string();
  cfg.dataset.test_path = (out / "missing_test.fbag").string();
  REQUIRE(fedmil::run_experiment(cfg) == 1);
  json summary = json::parse(slurp(out / "summary.json"));
  REQUIRE(summary.at("incomplete") == true);
  REQUIRE(summary.at("errors").size() > 0);
}
