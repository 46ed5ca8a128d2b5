#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "arcgen/common.hpp"
#include "arcgen/detector.hpp"
#include "arcgen/io.hpp"
#include "zoo_fixture.hpp"

using namespace arcgen;
using namespace arcgen::detector;

namespace fs = std::filesystem;

namespace {

data::LabeledDataset tiny_query_init(const data::ImageShape& shape, int classes) {
  data::LabeledDataset d;
  d.shape = shape;
  d.num_classes = classes;
  Rng rng(17);
  for (int i = 0; i < 12; ++i) {
    std::vector<double> img(static_cast<size_t>(shape.size()));
    for (auto& v : img) v = rng.uniform();
    d.images.push_back(std::move(img));
    d.labels.push_back(static_cast<int>(rng.uniform_int(0, classes - 1)));
  }
  return d;
}

DetectorState small_state(int n_queries = 2, int classes = 3,
                          data::ImageShape shape = {2, 2, 1},
                          std::vector<std::string> archs = {"a", "b"},
                          DetectorConfig cfg = {}) {
  cfg.n_queries = n_queries;
  return DetectorState(cfg, classes, shape, archs, tiny_query_init(shape, classes));
}

}  // namespace

TEST_CASE("loss_target: the BCE-with-logits hand values") {
  CHECK(loss_target(0.0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(loss_target(2.0, 0) ==
        doctest::Approx(std::log(1.0 + std::exp(2.0))).epsilon(1e-12));
  CHECK(loss_target(2.0, 0) == doctest::Approx(2.126928011).epsilon(1e-8));
  CHECK(loss_target(40.0, 1) < 1e-12);  // score -> +inf, label 1 -> loss -> 0
}

TEST_CASE("loss_discriminator: uniform and one-hot-dominant hand values") {
  nn::Tensor logits({1, 3});
  logits.v = {0.0, 0.0, 0.0};
  CHECK(loss_discriminator(logits, {1}) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  logits.v = {1.0, 0.0, 0.0};
  double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK(loss_discriminator(logits, {0}) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(loss_discriminator(logits, {0}) == doctest::Approx(0.551444713).epsilon(1e-8));

  logits.v = {40.0, 0.0, 0.0};
  CHECK(loss_discriminator(logits, {0}) < 1e-12);
}

TEST_CASE("loss_dla is exactly the negative discriminator loss (100 random batches)") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    int n = static_cast<int>(rng.uniform_int(1, 8));
    int k = static_cast<int>(rng.uniform_int(2, 5));
    nn::Tensor logits({n, k});
    for (auto& v : logits.v) v = rng.normal(0, 3);
    std::vector<int> idx;
    for (int i = 0; i < n; ++i) idx.push_back(static_cast<int>(rng.uniform_int(0, k - 1)));
    CHECK(loss_dla(logits, idx) == -loss_discriminator(logits, idx));
  }
}

TEST_CASE("cosine distance: 0 / 1 / 2 triple, symmetry, scale invariance, zero error") {
  std::vector<double> u{1.0, 2.0, -0.5};
  std::vector<double> e1{1.0, 0.0}, e2{0.0, 1.0};
  CHECK(cosine_distance(u, u) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cosine_distance(e1, e2) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> nu{-1.0, -2.0, 0.5};
  CHECK(cosine_distance(u, nu) == doctest::Approx(2.0).epsilon(1e-12));

  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    double d = cosine_distance(a, b);
    CHECK(d == doctest::Approx(cosine_distance(b, a)).epsilon(1e-12));
    CHECK(d >= 0.0);
    CHECK(d <= 2.0);
    std::vector<double> a3(6), b7(6);
    for (size_t i = 0; i < 6; ++i) {
      a3[i] = 3.0 * a[i];
      b7[i] = 7.0 * b[i];
    }
    CHECK(cosine_distance(a3, b7) == doctest::Approx(d).epsilon(1e-9));
  }
  CHECK_THROWS_AS(cosine_distance({0, 0}, {1, 0}), InvalidSpecError);
}

TEST_CASE("cosine distance gradient matches finite differences") {
  Rng rng(5);
  const double h = 1e-6;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> u(5), v(5);
    for (auto& x : u) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    auto g = cosine_distance_grad_u(u, v);
    for (size_t k = 0; k < u.size(); ++k) {
      auto up = u, um = u;
      up[k] += h;
      um[k] -= h;
      double fd = (cosine_distance(up, v) - cosine_distance(um, v)) / (2 * h);
      CHECK(g[k] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("loss_sla: hand-enumerated cases") {
  std::vector<double> e1{1.0, 0.0}, e2{0.0, 1.0};
  // all identical -> 0
  CHECK(loss_sla({{e1, e1, e1}}) == doctest::Approx(0.0).epsilon(1e-12));
  // one group of two orthogonal features -> (1/2)*(1+1) = 1
  CHECK(loss_sla({{e1, e2}}) == doctest::Approx(1.0).epsilon(1e-12));
  // e1 = e2, e3 orthogonal: (1/6)*(0+0+1+1+1+1) = 2/3
  CHECK(loss_sla({{e1, e1, e2}}) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  // undersized group skipped with a warning
  CHECK(loss_sla({{e1}, {e1, e2}}) == doctest::Approx(1.0).epsilon(1e-12));
  // permutation invariance within a group
  CHECK(loss_sla({{e2, e1, e1}}) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("extract_features: block-identity alignment copies nonnegative p") {
  DetectorState state = small_state();
  const int d = state.feature_dim();  // 6
  auto& fc1 = dynamic_cast<nn::Dense&>(state.alignment().layer(0));
  auto& fc2 = dynamic_cast<nn::Dense&>(state.alignment().layer(3));
  std::fill(fc1.weight().value.begin(), fc1.weight().value.end(), 0.0);
  std::fill(fc1.bias().value.begin(), fc1.bias().value.end(), 0.0);
  std::fill(fc2.weight().value.begin(), fc2.weight().value.end(), 0.0);
  std::fill(fc2.bias().value.begin(), fc2.bias().value.end(), 0.0);
  for (int k = 0; k < d; ++k) {
    fc1.weight().value[static_cast<size_t>(k) * (4 * d) + k] = 1.0;  // d -> 4d
    fc2.weight().value[static_cast<size_t>(k) * d + k] = 1.0;        // 4d -> d
  }
  auto model = [](const nn::Tensor& q) {
    nn::Tensor out({q.rows(), 3});
    out.v = {0.2, 0.5, 0.3, 0.1, 0.8, 0.1};
    return out;
  };
  auto f = extract_features(model, state, false, nullptr);
  CHECK(f.p == std::vector<double>{0.2, 0.5, 0.3, 0.1, 0.8, 0.1});
  for (int k = 0; k < d; ++k)
    CHECK(f.e[static_cast<size_t>(k)] == doctest::Approx(f.p[static_cast<size_t>(k)]).epsilon(1e-12));
}

TEST_CASE("extract_features: uniform model, determinism, class-count mismatch") {
  DetectorState state = small_state();
  auto uniform = [](const nn::Tensor& q) {
    nn::Tensor out({q.rows(), 3});
    for (auto& v : out.v) v = 1.0 / 3.0;
    return out;
  };
  auto f1 = extract_features(uniform, state, false, nullptr);
  auto f2 = extract_features(uniform, state, false, nullptr);
  for (double v : f1.p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(f1.e == f2.e);
  CHECK(static_cast<int>(f1.e.size()) == state.feature_dim());

  auto wrong = [](const nn::Tensor& q) {
    nn::Tensor out({q.rows(), 5});
    for (auto& v : out.v) v = 0.2;
    return out;
  };
  CHECK_THROWS_AS(extract_features(wrong, state, false, nullptr), NumericalError);
  auto nonfinite = [](const nn::Tensor& q) {
    nn::Tensor out({q.rows(), 3});
    out.v[0] = std::nan("");
    return out;
  };
  CHECK_THROWS_AS(extract_features(nonfinite, state, false, nullptr), NumericalError);
}

TEST_CASE("no_als variant relocates the stack: g param count = full minus theta_ad") {
  DetectorConfig base;
  base.n_queries = 2;
  DetectorState full = small_state(2, 3, {2, 2, 1}, {"a", "b"}, base);
  DetectorConfig no_als_cfg = apply_variant(base, "no_als");
  DetectorState no_als = small_state(2, 3, {2, 2, 1}, {"a", "b"}, no_als_cfg);

  int64_t full_total = nn::param_count(full.trainable_params());
  int64_t full_disc = nn::param_count(full.discriminator().params());
  int64_t no_als_total = nn::param_count(no_als.trainable_params());
  CHECK(full_disc > 0);
  CHECK(no_als_total == full_total - full_disc);
  CHECK(no_als.g_param_count() == full.g_param_count());
  CHECK(no_als.discriminator().depth() == 0);
  CHECK_FALSE(no_als.has_alignment());
}

TEST_CASE("detector state: save -> load -> save is byte identical and scores agree") {
  DetectorState state = small_state();
  auto dir = fs::temp_directory_path() / "arcgen_state_test";
  fs::create_directories(dir);
  state.save(dir / "s.arcs");
  DetectorState loaded = DetectorState::load(dir / "s.arcs");
  loaded.save(dir / "s2.arcs");
  CHECK(io::read_file(dir / "s.arcs") == io::read_file(dir / "s2.arcs"));

  auto model = [](const nn::Tensor& q) {
    nn::Tensor out({q.rows(), 3});
    for (int i = 0; i < q.rows(); ++i) {
      out.row(i)[0] = 0.6;
      out.row(i)[1] = 0.3;
      out.row(i)[2] = 0.1;
    }
    return out;
  };
  DetectorState loaded2 = DetectorState::load(dir / "s.arcs");
  auto s1 = detect_score(model, loaded);
  auto s2 = detect_score(model, loaded2);
  CHECK(s1.score == s2.score);
  CHECK(s1.probability == doctest::Approx(1.0 / (1.0 + std::exp(-s1.score))).epsilon(1e-12));
  CHECK(s1.probability > 0.0);
  CHECK(s1.probability < 1.0);
  fs::remove_all(dir);

  CHECK_THROWS_AS(DetectorState::load(dir / "missing.arcs"), MissingArtifactError);
}

TEST_CASE("query clamp projects q into [0,1] and rejects non-finite values") {
  DetectorState state = small_state();
  state.queries().value[0] = -0.5;
  state.queries().value[1] = 1.7;
  state.clamp_queries();
  CHECK(state.queries().value[0] == 0.0);
  CHECK(state.queries().value[1] == 1.0);
  for (double v : state.queries().value) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  state.queries().value[2] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(state.clamp_queries(), NumericalError);
}

TEST_CASE("gradient routing: GRL pass equals grad(L_t) - lambda * grad(L_ad) on (q, al)") {
  const MicroZoo& z = micro_zoo();
  auto models = load_given_models(z.manifest, z.dir);
  REQUIRE(models.size() >= 6);

  DetectorConfig cfg;
  cfg.n_queries = 2;
  cfg.seed = 9;
  const auto& arch0 = z.manifest.archs.front();
  data::DataSplit split = data::split_dataset(z.train, z.manifest.attacker_frac,
                                              z.manifest.split_seed);
  DetectorState state(cfg, arch0.num_classes, arch0.input_shape, z.manifest.seen_archs,
                      split.defender);

  std::vector<GivenModel*> batch;
  for (size_t i = 0; i < 6; ++i) batch.push_back(&models[i]);
  auto params = state.trainable_params();
  auto snapshot = [&](std::vector<std::vector<double>>& dst) {
    dst.clear();
    for (auto* p : params) dst.push_back(p->grad);
  };

  const double lambda = 0.7;
  std::vector<std::vector<double>> gA, gB, gC;
  {
    Rng rng(55);
    nn::zero_grads(params);
    BatchPassOptions opts;
    opts.grl_lambda = lambda;
    detector_batch_pass(state, batch, opts, &rng);
    snapshot(gA);
  }
  {
    Rng rng(55);
    nn::zero_grads(params);
    BatchPassOptions opts;
    opts.use_disc = false;
    detector_batch_pass(state, batch, opts, &rng);
    snapshot(gB);
  }
  {
    Rng rng(55);
    nn::zero_grads(params);
    BatchPassOptions opts;
    opts.use_target = false;
    opts.grl_lambda = -1.0;  // un-reversed: leaves +grad(L_ad) on the extractor
    detector_batch_pass(state, batch, opts, &rng);
    snapshot(gC);
  }

  size_t n_extractor = state.extractor_params().size();
  for (size_t pi = 0; pi < params.size(); ++pi) {
    bool in_extractor = pi < n_extractor;
    bool in_disc = false;
    for (auto* dp : state.discriminator().params())
      if (dp == params[pi]) in_disc = true;
    for (size_t k = 0; k < gA[pi].size(); ++k) {
      if (in_extractor) {
        // Eqs: extractor descends L_t - lambda * L_ad
        CHECK(gA[pi][k] ==
              doctest::Approx(gB[pi][k] - lambda * gC[pi][k]).epsilon(1e-9).scale(1.0));
      } else if (in_disc) {
        // the discriminator's own gradient is plain grad(L_ad), independent of lambda
        CHECK(gA[pi][k] == doctest::Approx(gC[pi][k]).epsilon(1e-9).scale(1.0));
      } else {
        // head gets only grad(L_t)
        CHECK(gA[pi][k] == doctest::Approx(gB[pi][k]).epsilon(1e-12).scale(1.0));
      }
    }
  }
}

TEST_CASE("train_detector: bookkeeping, loss drop, sla logging and csv columns") {
  const MicroZoo& z = micro_zoo();
  data::DataSplit split = data::split_dataset(z.train, z.manifest.attacker_frac,
                                              z.manifest.split_seed);
  DetectorConfig cfg;
  cfg.n_queries = 2;
  cfg.epochs = 5;
  cfg.batch = 5;
  cfg.tau_epoch = 2;
  cfg.lr = 5e-3;
  cfg.seed = 1;
  auto res = train_detector(z.manifest, z.dir, split.defender, cfg);

  // exactly ceil(16/5) = 4 batch entries per epoch
  std::vector<int> per_epoch(static_cast<size_t>(cfg.epochs), 0);
  for (const auto& row : res.log) per_epoch[static_cast<size_t>(row.epoch)]++;
  for (int count : per_epoch) CHECK(count == 4);
  CHECK(res.log.size() == 20);

  // sla ran on epochs 0, 2, 4 and its loss is logged on those epochs' rows
  for (const auto& row : res.log) {
    if (row.epoch % 2 == 0) CHECK(row.lsla.has_value());
    else CHECK_FALSE(row.lsla.has_value());
    CHECK(row.lad.has_value());
    CHECK(*row.ldla == -*row.lad);
  }
  CHECK(res.final_lt < res.initial_lt);

  std::string csv = loss_log_csv(res.log, cfg);
  CHECK(csv.rfind("epoch,batch,L_t,L_ad,L_dla,L_sla\n", 0) == 0);

  // queries stay in the pixel box after training
  for (double v : res.state.queries().value) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // no_dla: discriminator loss columns absent from the log
  DetectorConfig nd = apply_variant(cfg, "no_dla");
  auto res2 = train_detector(z.manifest, z.dir, split.defender, nd);
  std::string csv2 = loss_log_csv(res2.log, nd);
  CHECK(csv2.rfind("epoch,batch,L_t,L_sla\n", 0) == 0);
  for (const auto& row : res2.log) CHECK_FALSE(row.lad.has_value());
}

TEST_CASE("train_detector: sla without attack groups is a configuration error") {
  const MicroZoo& z = micro_zoo();
  zoo::ZooManifest stripped = z.manifest;
  stripped.attack_groups.clear();
  data::DataSplit split = data::split_dataset(z.train, z.manifest.attacker_frac,
                                              z.manifest.split_seed);
  DetectorConfig cfg;
  cfg.n_queries = 2;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_detector(stripped, z.dir, split.defender, cfg), ConfigError);
}

TEST_CASE("train_detector: divergence aborts with the last good checkpoint") {
  const MicroZoo& z = micro_zoo();
  data::DataSplit split = data::split_dataset(z.train, z.manifest.attacker_frac,
                                              z.manifest.split_seed);
  DetectorConfig cfg;
  cfg.n_queries = 2;
  cfg.epochs = 2;
  cfg.batch = 4;
  cfg.use_sla = false;
  cfg.optimizer = "sgd";
  cfg.lr = 1e155;
  cfg.clip_norm = 1e300;  // let it blow up
  bool threw = false;
  try {
    train_detector(z.manifest, z.dir, split.defender, cfg);
  } catch (TrainingDiverged& e) {
    threw = true;
    auto model = [](const nn::Tensor& q) {
      nn::Tensor out({q.rows(), 10});
      for (auto& v : out.v) v = 0.1;
      return out;
    };
    auto s = detect_score(model, e.last_good);
    CHECK(std::isfinite(s.score));
  }
  CHECK(threw);
}
