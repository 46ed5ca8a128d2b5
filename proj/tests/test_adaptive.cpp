#include <doctest.h>

#include <cmath>

#include "arcgen/adaptive.hpp"
#include "arcgen/common.hpp"
#include "arcgen/io.hpp"
#include "zoo_fixture.hpp"

using namespace arcgen;
using namespace arcgen::adaptive;

TEST_CASE("loss_conflate: hand-enumerated cases") {
  std::vector<double> e{1.0, 0.0};
  std::vector<double> f{0.0, 1.0};
  // all features identical across sets: 0 - 0 = 0
  CHECK(loss_conflate({{0, {e, e}}, {1, {e, e}}}) == doctest::Approx(0.0).epsilon(1e-12));
  // two singleton sets with orthogonal features: 0 - (1 + 1) = -2
  CHECK(loss_conflate({{0, {e}}, {1, {f}}}) == doctest::Approx(-2.0).epsilon(1e-12));
  // sets {e, e} and {f}: intra 0, cross 4 ordered pairs of distance 1 -> -4
  CHECK(loss_conflate({{0, {e, e}}, {1, {f}}}) == doctest::Approx(-4.0).epsilon(1e-12));
  // fewer than two sets is invalid
  CHECK_THROWS_AS(loss_conflate({{0, {e, e}}}), InvalidSpecError);
  // zero vectors are undefined
  CHECK_THROWS_AS(loss_conflate({{0, {std::vector<double>{0, 0}}}, {1, {f}}}),
                  InvalidSpecError);
}

TEST_CASE("loss_conflate is invariant under permutations of models and sets") {
  Rng rng(1);
  std::vector<std::vector<double>> a(3), b(2);
  for (auto& v : a) {
    v.resize(6);
    for (auto& x : v) x = rng.normal();
  }
  for (auto& v : b) {
    v.resize(6);
    for (auto& x : v) x = rng.normal();
  }
  double base = loss_conflate({{0, a}, {1, b}});
  std::swap(a[0], a[2]);
  CHECK(loss_conflate({{0, a}, {1, b}}) == doctest::Approx(base).epsilon(1e-12));
  CHECK(loss_conflate({{5, b}, {2, a}}) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("purge losses vanish when the target model equals the benign reference") {
  const MicroZoo& z = micro_zoo();
  data::DataSplit split = data::split_dataset(z.train, z.manifest.attacker_frac,
                                              z.manifest.split_seed);
  detector::DetectorConfig cfg;
  cfg.n_queries = 2;
  cfg.epochs = 1;
  cfg.use_sla = false;
  auto trained = detector::train_detector(z.manifest, z.dir, split.defender, cfg);
  detector::DetectorState& state = trained.state;

  const zoo::ModelRecord* benign = nullptr;
  for (const auto* rec : z.manifest.select(zoo::SplitRole::target))
    if (rec->role == zoo::ModelRole::benign) {
      benign = rec;
      break;
    }
  REQUIRE(benign != nullptr);
  zoo::TrainableModel mb(z.manifest.arch(benign->arch_id), z.dir / benign->weights_ref);

  nn::Tensor q = state.query_batch();
  auto fn = [&mb](const nn::Tensor& x) { return mb.forward_probs(x); };
  auto p = mb.forward_probs(q);
  CHECK(detector::cosine_distance(p.v, p.v) == doctest::Approx(0.0).epsilon(1e-12));
  auto feats = detector::extract_features(fn, state, false, nullptr);
  CHECK(detector::cosine_distance(feats.e, feats.e) == doctest::Approx(0.0).epsilon(1e-12));
  auto s = detector::detect_score(fn, state);
  CHECK(std::abs(s.score - s.score) == 0.0);  // l1(g(m), g(m)) = 0
}

TEST_CASE("purge config errors when the variant needs more knowledge than supplied") {
  const MicroZoo& z = micro_zoo();
  data::DataSplit split = data::split_dataset(z.train, z.manifest.attacker_frac,
                                              z.manifest.split_seed);
  detector::DetectorConfig cfg;
  cfg.n_queries = 2;
  cfg.epochs = 1;
  cfg.use_sla = false;
  auto trained = detector::train_detector(z.manifest, z.dir, split.defender, cfg);

  const zoo::ModelRecord* bd = nullptr;
  const zoo::ModelRecord* bn = nullptr;
  for (const auto* rec : z.manifest.select(zoo::SplitRole::target)) {
    if (rec->role == zoo::ModelRole::backdoored && !bd) bd = rec;
    if (rec->role == zoo::ModelRole::benign && !bn) bn = rec;
  }
  REQUIRE(bd);
  REQUIRE(bn);
  zoo::TrainableModel mt(z.manifest.arch(bd->arch_id), z.dir / bd->weights_ref);
  zoo::TrainableModel mb(z.manifest.arch(bn->arch_id), z.dir / bn->weights_ref);

  PurgeConfig pc;
  pc.variant = PurgeVariant::features;
  pc.knowledge = PurgeKnowledge::queries_only;
  CHECK_THROWS_AS(purge_finetune(pc, mt, mb, *bd->trigger, trained.state, split.attacker,
                                 z.test),
                  ConfigError);
  pc.variant = PurgeVariant::detection;
  pc.knowledge = PurgeKnowledge::extractor;
  CHECK_THROWS_AS(purge_finetune(pc, mt, mb, *bd->trigger, trained.state, split.attacker,
                                 z.test),
                  ConfigError);
}

TEST_CASE("purge fine-tune runs, logs per-epoch metrics and leaves the detector frozen") {
  const MicroZoo& z = micro_zoo();
  data::DataSplit split = data::split_dataset(z.train, z.manifest.attacker_frac,
                                              z.manifest.split_seed);
  detector::DetectorConfig cfg;
  cfg.n_queries = 2;
  cfg.epochs = 2;
  cfg.use_sla = false;
  auto trained = detector::train_detector(z.manifest, z.dir, split.defender, cfg);

  auto dir = std::filesystem::temp_directory_path() / "arcgen_purge_frozen";
  std::filesystem::create_directories(dir);
  trained.state.save(dir / "before.arcs");

  const zoo::ModelRecord* bd = nullptr;
  const zoo::ModelRecord* bn = nullptr;
  for (const auto* rec : z.manifest.select(zoo::SplitRole::target)) {
    if (rec->arch_id != "cnn") continue;
    if (rec->role == zoo::ModelRole::backdoored && !bd) bd = rec;
    if (rec->role == zoo::ModelRole::benign && !bn) bn = rec;
  }
  REQUIRE(bd);
  REQUIRE(bn);
  zoo::TrainableModel mt(z.manifest.arch("cnn"), z.dir / bd->weights_ref);
  zoo::TrainableModel mb(z.manifest.arch("cnn"), z.dir / bn->weights_ref);

  PurgeConfig pc;
  pc.variant = PurgeVariant::output;
  pc.epochs = 2;
  auto res = purge_finetune(pc, mt, mb, *bd->trigger, trained.state, split.attacker,
                            z.test);
  CHECK(res.report.per_epoch.size() == 2);
  for (const auto& m : res.report.per_epoch) {
    CHECK(m.ba >= 0.0);
    CHECK(m.ba <= 1.0);
    CHECK(m.asr >= 0.0);
    CHECK(m.asr <= 1.0);
    CHECK(std::isfinite(m.detector_score));
  }

  trained.state.save(dir / "after.arcs");
  CHECK(io::read_file(dir / "before.arcs") == io::read_file(dir / "after.arcs"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("conflate with lambda 0 reproduces the standard zoo training trajectory") {
  const MicroZoo& z = micro_zoo();
  data::DataSplit split = data::split_dataset(z.train, z.manifest.attacker_frac,
                                              z.manifest.split_seed);
  detector::DetectorConfig cfg;
  cfg.n_queries = 2;
  cfg.epochs = 1;
  cfg.use_sla = false;
  auto trained = detector::train_detector(z.manifest, z.dir, split.defender, cfg);

  ConflateConfig cc;
  cc.arch_ids = {"cnn", "mlp"};
  cc.models_per_set = 1;
  cc.lambda_con = 0.0;
  cc.seed = 5;
  cc.train.epochs = 2;
  Rng trig_rng(99);
  cc.trigger = data::sample_random_trigger(trig_rng, z.train.shape, 10);
  cc.trigger.poisoning_ratio = 0.1;
  cc.trigger.alpha = 1.0;

  auto run = train_conflated(cc, trained.state, z.manifest, split.attacker, z.test);
  REQUIRE(run.model_ids.size() == 2);

  // replicate one model with the standard zoo path under the same derived seeds
  const zoo::ArchSpec& arch = z.manifest.arch("cnn");
  uint64_t seed = derive_seed(cc.seed, io::fnv1a64(run.model_ids[0].data(),
                                                   run.model_ids[0].size()));
  Rng poison_rng(derive_seed(seed, 1));
  auto poisoned = data::poison_dataset(split.attacker, cc.trigger, poison_rng).dataset;
  Rng init_rng(derive_seed(seed, 2));
  auto model = zoo::build_arch_model(arch, init_rng);
  zoo::TrainOptions opts = cc.train;
  zoo::train_classifier(*model, poisoned, opts, derive_seed(seed, 3));
  auto fn = [&](const nn::Tensor& x) {
    auto local = model->clone();
    return nn::softmax_rows(local->forward(x, false, nullptr));
  };
  double ba = zoo::measure_ba(fn, z.test);
  double asr = zoo::measure_asr(fn, z.test, cc.trigger);
  CHECK(run.final_ba[0] == doctest::Approx(ba).epsilon(1e-12));
  CHECK(run.final_asr[0] == doctest::Approx(asr).epsilon(1e-12));
}
