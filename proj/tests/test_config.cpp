#include <doctest.h>

#include "arcgen/common.hpp"
#include "arcgen/config.hpp"

using namespace arcgen;
using namespace arcgen::cli;

TEST_CASE("empty config resolves to the published defaults") {
  RunConfig cfg = RunConfig::from_json_text("");
  const auto& j = cfg.resolved();
  // the resolved dump echoes the training-setup defaults
  CHECK(j["detector"]["lr"].get<double>() == 1e-2);
  CHECK(j["detector"]["batch"].get<int>() == 32);
  CHECK(j["detector"]["epochs"].get<int>() == 90);
  CHECK(j["detector"]["tau_epoch"].get<int>() == 5);
  CHECK(j["detector"]["lambda_dla"].get<double>() == 1.0);
  CHECK(j["detector"]["clip_norm"].get<double>() == 1.0);
  CHECK(j["detector"]["seed"].get<int>() == 0);
  CHECK(j["detector"]["sched_step"].get<int>() == 30);
  CHECK(j["detector"]["sched_gamma"].get<double>() == 0.6);
  CHECK(cfg.experiment_seeds().size() == 5);  // 5 repetitions, average reported

  // whitespace-only behaves like empty
  RunConfig ws = RunConfig::from_json_text("  \n\t ");
  CHECK(ws.dump() == cfg.dump());
}

TEST_CASE("unknown keys are rejected by name") {
  try {
    RunConfig::from_json_text(R"({"foo": 1})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("foo") != std::string::npos);
  }
  try {
    RunConfig::from_json_text(R"({"detector": {"lr": 0.1, "bar": 2}, "baz": {}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find("detector.bar") != std::string::npos);
    CHECK(msg.find("baz") != std::string::npos);
  }
}

TEST_CASE("type mismatches are rejected") {
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"detector": {"lr": "fast"}})"),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"zoo": {"seen_archs": 3}})"),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text("[1,2,3]"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text("{"), ConfigError);
}

TEST_CASE("unsupported schema version is rejected") {
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"version": 2})"), ConfigError);
}

TEST_CASE("load -> dump -> load round trips to an equal config") {
  RunConfig a =
      RunConfig::from_json_text(R"({"detector": {"lambda_dla": 0.5}, "zoo": {"seed": 3}})");
  RunConfig b = RunConfig::from_json_text(a.dump());
  CHECK(a.dump() == b.dump());
  CHECK(a.hash() == b.hash());
}

TEST_CASE("overrides: dotted paths, json values, rejection of unknown keys") {
  RunConfig cfg = RunConfig::from_json_text("");
  cfg.apply_override("detector.lambda_dla=0.25");
  CHECK(cfg.detector_config().lambda_dla == 0.25);
  cfg.apply_override("zoo.seen_archs=[\"cnn\",\"mlp\"]");
  CHECK(cfg.resolved()["zoo"]["seen_archs"].size() == 2);
  cfg.apply_override("dataset.kind=\"synthetic\"");
  CHECK(cfg.resolved()["dataset"]["kind"] == "synthetic");
  CHECK_THROWS_AS(cfg.apply_override("detector.nope=1"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("no-equals-sign"), ConfigError);
}

TEST_CASE("detector config round trips through json with variant overrides") {
  RunConfig cfg = RunConfig::from_json_text(R"({"detector": {"use_sla": false}})");
  auto d = cfg.detector_config();
  CHECK_FALSE(d.use_sla);
  auto back = detector::DetectorConfig::from_json(d.to_json());
  CHECK(back.to_json() == d.to_json());
}

TEST_CASE("synthetic dataset section produces a loadable pair") {
  RunConfig cfg = RunConfig::from_json_text(
      R"({"dataset": {"kind": "synthetic", "synthetic_n": 64, "synthetic_test_n": 32}})");
  auto [train, test] = cfg.load_datasets();
  CHECK(train.size() == 64);
  CHECK(test.size() == 32);
  CHECK(train.num_classes == 10);
}

TEST_CASE("zoo config resolves archs and rejects unknown arch names") {
  RunConfig cfg = RunConfig::from_json_text(
      R"({"zoo": {"seen_archs": ["cnn", "mlp"], "unseen_archs": ["dw_cnn"]}})");
  auto zc = cfg.zoo_config({8, 8, 1}, 10);
  CHECK(zc.archs.size() == 3);
  RunConfig bad = RunConfig::from_json_text(R"({"zoo": {"seen_archs": ["resnet50"]}})");
  CHECK_THROWS_AS(bad.zoo_config({8, 8, 1}, 10), ConfigError);
}
