#include <doctest.h>

#include <filesystem>

#include "ldcbm/config.hpp"
#include "ldcbm/error.hpp"
#include "ldcbm/io_util.hpp"

using namespace ldcbm;
using nlohmann::json;

TEST_CASE("an empty document resolves to the documented defaults") {
  const RunConfig c = run_config_from_json(json::object());
  CHECK(c.data == DatasetSpec{});
  CHECK(c.train == TrainConfig{});
  CHECK(c.train.epochs == 50);
  CHECK(c.train.batch_size == 32);
  CHECK(c.train.learning_rate == 0.05);
  CHECK(c.train.recluster_period == 2);
  CHECK(c.train.groups == 4);
  CHECK(c.train.grouping_epsilon == 0.5);
  CHECK(c.train.concept_substitution == 0.25);
  CHECK(c.eval.repetitions == 5);
  CHECK(c.eval.rates == std::vector<double>{0.0, 0.2, 0.4, 0.6, 0.8, 1.0});
}

TEST_CASE("resolved configs round trip through JSON") {
  json j = json::parse(R"({
    "data": {"concepts": 12, "parts": 4, "noise": 0.0, "seed": 9},
    "backbone": {"stages": [{"filters": 8, "kernel": 3, "stride": 2}, {"filters": 16, "kernel": 1, "stride": 1}],
                 "grouped_layer_index": 1},
    "train": {"lambda_g": 0.25, "grouping_epsilon": 0.2, "groups": 3, "concept_to_group": [0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2]},
    "eval": {"modes": ["incorrect"], "unit": "group", "rates": [0, 1]}
  })");
  const RunConfig c = run_config_from_json(j);
  CHECK(c.data.concepts == 12);
  CHECK(c.train.backbone.grouped_filters() == 16);
  CHECK(c.train.grouping_epsilon == 0.2);
  CHECK(c.train.concept_groups.kind == ConceptGroupPolicy::Kind::kExplicit);
  CHECK(c.eval.unit == InterventionUnit::kConceptGroup);
  const RunConfig again = run_config_from_json(to_json(c));
  CHECK(again.data == c.data);
  CHECK(again.train == c.train);
  CHECK(again.eval.rates == c.eval.rates);
  CHECK(again.eval.modes == c.eval.modes);
  CHECK(to_json(again) == to_json(c));
}

TEST_CASE("unknown keys are rejected with their path") {
  auto message = [](const char* text) {
    try {
      (void)run_config_from_json(json::parse(text));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(R"({"trian": {}})").find("trian") != std::string::npos);
  CHECK(message(R"({"train": {"lamda_g": 0.1}})").find("train: unknown key \"lamda_g\"") != std::string::npos);
  CHECK(message(R"({"backbone": {"stages": [{"filters": 8, "size": 3}]}})").find("size") != std::string::npos);
}

TEST_CASE("type and invariant violations are configuration errors") {
  const char* bad[] = {
      R"({"train": {"epochs": -1}})",
      R"({"train": {"epochs": 2.5}})",
      R"({"train": {"grouping": "yes"}})",
      R"({"train": {"learning_rate": "fast"}})",
      R"({"train": {"concept_to_group": "random"}})",
      R"({"data": {"concepts": 6}})",
      R"({"eval": {"rates": [0, 1.5]}})",
      R"({"eval": {"modes": ["sideways"]}})",
      R"({"backbone": {"input_height": 28}})",
      R"({"train": {"groups": 40}})",
      R"({"train": {"grouping_epsilon": 0}})",
      R"([1, 2])",
  };
  for (const char* text : bad) {
    INFO(text);
    CHECK_THROWS_AS(run_config_from_json(json::parse(text)), ConfigError);
  }
}

TEST_CASE("config files load from disk") {
  const auto dir = std::filesystem::temp_directory_path() / "ldcbm_config_test";
  std::filesystem::create_directories(dir);
  io::write_text(dir / "run.json", R"({"data": {"train_samples": 10}, "train": {"epochs": 3}})");
  io::write_text(dir / "data.json", R"({"train_samples": 12})");
  io::write_text(dir / "broken.json", "{");
  CHECK(load_run_config(dir / "run.json").train.epochs == 3);
  CHECK(load_run_config("").train.epochs == 50);
  CHECK(load_dataset_spec(dir / "run.json").train_samples == 10);
  CHECK(load_dataset_spec(dir / "data.json").train_samples == 12);
  CHECK_THROWS_AS(load_run_config(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(dir / "absent.json"), IoError);
  std::filesystem::remove_all(dir);
}
