#include "arcgen/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "arcgen/common.hpp"
#include "arcgen/io.hpp"

namespace arcgen::adaptive {

namespace fs = std::filesystem;
using detector::cosine_distance;
using detector::cosine_distance_grad_u;

double loss_conflate(
    const std::map<int, std::vector<std::vector<double>>>& features_by_set) {
  if (features_by_set.size() < 2)
    throw InvalidSpecError("loss_conflate: need >= 2 sets");
  double intra = 0.0, cross = 0.0;
  for (const auto& [i, set_i] : features_by_set) {
    for (size_t k = 0; k < set_i.size(); ++k)
      for (size_t l = 0; l < set_i.size(); ++l) {
        if (k == l) continue;
        intra += cosine_distance(set_i[k], set_i[l]);
      }
    for (const auto& [j, set_j] : features_by_set) {
      if (i == j) continue;
      for (const auto& ek : set_i)
        for (const auto& el : set_j) cross += cosine_distance(ek, el);
    }
  }
  return intra - cross;
}

std::string AttackReport::csv() const {
  std::string out = "epoch,model_id,ba,asr,detector_score\n";
  for (const auto& m : per_epoch)
    out += std::to_string(m.epoch) + "," + m.model_id + "," + io::fmt_double(m.ba) +
           "," + io::fmt_double(m.asr) + "," + io::fmt_double(m.detector_score) + "\n";
  return out;
}

// --- conflating attack ----------------------------------------------------------

namespace {

struct JointModel {
  std::string model_id;
  int set_index;
  std::unique_ptr<zoo::TrainableModel> model;
  std::unique_ptr<nn::Optimizer> optim;
  data::LabeledDataset poisoned;
  std::vector<int> order;  // private shuffle order, advanced per epoch
  Rng shuffle_rng{0};
};

double score_model(detector::DetectorState& state, zoo::TrainableModel& m) {
  auto fn = [&m](const nn::Tensor& x) { return m.forward_probs(x); };
  return detector::detect_score(fn, state).score;
}

}  // namespace

ConflateResult train_conflated(const ConflateConfig& config,
                               detector::DetectorState& frozen_detector,
                               const zoo::ZooManifest& manifest,
                               const data::LabeledDataset& train_data,
                               const data::LabeledDataset& test_data) {
  if (config.arch_ids.size() < 2)
    throw InvalidSpecError("train_conflated: need >= 2 architecture sets");
  if (config.models_per_set < 1)
    throw InvalidSpecError("train_conflated: need >= 1 model per set");
  if (config.lambda_con < 0)
    throw InvalidSpecError("train_conflated: lambda_con must be >= 0");

  const std::string frozen_before = [&] {
    fs::path tmp = fs::temp_directory_path() / "arcgen_frozen_check.arcs";
    frozen_detector.save(tmp);
    std::string bytes = io::read_file(tmp);
    fs::remove(tmp);
    return bytes;
  }();

  std::vector<JointModel> joint;
  for (size_t s = 0; s < config.arch_ids.size(); ++s) {
    const zoo::ArchSpec& arch = manifest.arch(config.arch_ids[s]);
    for (int k = 0; k < config.models_per_set; ++k) {
      JointModel jm;
      jm.model_id = "conflate_" + arch.arch_id + "_" + std::to_string(k);
      jm.set_index = static_cast<int>(s);
      uint64_t seed = derive_seed(config.seed,
                                  io::fnv1a64(jm.model_id.data(), jm.model_id.size()));
      Rng poison_rng(derive_seed(seed, 1));
      jm.poisoned = data::poison_dataset(train_data, config.trigger, poison_rng).dataset;
      Rng init_rng(derive_seed(seed, 2));
      auto model = zoo::build_arch_model(arch, init_rng);
      jm.model = std::make_unique<zoo::TrainableModel>(arch, std::move(model));
      jm.optim = std::make_unique<nn::Optimizer>(config.train.optim, jm.model->params());
      jm.shuffle_rng = Rng(derive_seed(seed, 3));
      jm.order.resize(jm.poisoned.size());
      for (size_t i = 0; i < jm.order.size(); ++i) jm.order[i] = static_cast<int>(i);
      joint.push_back(std::move(jm));
    }
  }

  const int d = frozen_detector.feature_dim();
  const int n_in = frozen_detector.config().n_queries;
  const int classes = frozen_detector.num_classes();
  nn::Tensor queries = frozen_detector.query_batch();
  size_t steps_per_epoch =
      (train_data.size() + static_cast<size_t>(config.train.batch) - 1) /
      static_cast<size_t>(config.train.batch);

  ConflateResult result;
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    for (auto& jm : joint) jm.shuffle_rng.shuffle(jm.order);
    for (size_t step = 0; step < steps_per_epoch; ++step) {
      // Task step gradients for every model.
      for (auto& jm : joint) {
        size_t start = step * static_cast<size_t>(config.train.batch);
        size_t end = std::min(jm.order.size(),
                              start + static_cast<size_t>(config.train.batch));
        if (start >= end) continue;
        std::vector<std::vector<double>> imgs;
        std::vector<int> labels;
        for (size_t i = start; i < end; ++i) {
          imgs.push_back(jm.poisoned.images[static_cast<size_t>(jm.order[i])]);
          labels.push_back(jm.poisoned.labels[static_cast<size_t>(jm.order[i])]);
        }
        nn::Tensor x = zoo::batch_from_images(imgs, train_data.shape);
        nn::zero_grads(jm.model->params());
        nn::Tensor logits = jm.model->logits(x, true, &jm.shuffle_rng);
        auto lg = nn::softmax_cross_entropy(logits, labels);
        if (!std::isfinite(lg.loss))
          throw NumericalError("train_conflated: task loss diverged at epoch " +
                               std::to_string(epoch));
        jm.model->backward_from_logits(lg.grad);
      }

      // Conflating term on the current feature snapshot of all models.
      if (config.lambda_con > 0.0) {
        nn::Tensor pmat({static_cast<int>(joint.size()), d});
        std::vector<std::vector<double>> feats(joint.size());
        for (size_t m = 0; m < joint.size(); ++m) {
          nn::Tensor probs = joint[m].model->forward_probs(queries);
          std::copy(probs.v.begin(), probs.v.end(), pmat.row(static_cast<int>(m)));
        }
        nn::Tensor e = frozen_detector.has_alignment()
                           ? frozen_detector.alignment().forward(pmat, false, nullptr)
                           : pmat;
        for (size_t m = 0; m < joint.size(); ++m)
          feats[m].assign(e.row(static_cast<int>(m)), e.row(static_cast<int>(m)) + d);

        nn::Tensor de({static_cast<int>(joint.size()), d});
        for (size_t a = 0; a < joint.size(); ++a)
          for (size_t b = 0; b < joint.size(); ++b) {
            if (a == b) continue;
            double sign = joint[a].set_index == joint[b].set_index ? 1.0 : -1.0;
            auto ga = cosine_distance_grad_u(feats[a], feats[b]);
            auto gb = cosine_distance_grad_u(feats[b], feats[a]);
            for (int k = 0; k < d; ++k) {
              de.row(static_cast<int>(a))[k] += sign * ga[static_cast<size_t>(k)];
              de.row(static_cast<int>(b))[k] += sign * gb[static_cast<size_t>(k)];
            }
          }
        nn::Tensor dp = frozen_detector.has_alignment()
                            ? frozen_detector.alignment().backward(de)
                            : de;
        for (size_t m = 0; m < joint.size(); ++m) {
          nn::Tensor dprobs({n_in, classes});
          for (int k = 0; k < d; ++k)
            dprobs.v[static_cast<size_t>(k)] =
                config.lambda_con * dp.row(static_cast<int>(m))[k];
          joint[m].model->backward_to_input(dprobs);
        }
      }

      for (auto& jm : joint) jm.optim->step();
    }

    for (auto& jm : joint) {
      auto fn = [&jm](const nn::Tensor& x) { return jm.model->forward_probs(x); };
      EpochMetric em;
      em.epoch = epoch;
      em.model_id = jm.model_id;
      em.ba = zoo::measure_ba(fn, test_data);
      em.asr = zoo::measure_asr(fn, test_data, config.trigger);
      em.detector_score = score_model(frozen_detector, *jm.model);
      result.report.per_epoch.push_back(em);
    }
  }

  for (auto& jm : joint) {
    auto fn = [&jm](const nn::Tensor& x) { return jm.model->forward_probs(x); };
    result.model_ids.push_back(jm.model_id);
    result.final_ba.push_back(zoo::measure_ba(fn, test_data));
    result.final_asr.push_back(zoo::measure_asr(fn, test_data, config.trigger));
  }

  // Frozen-detector contract: bit-identical before and after the run.
  fs::path tmp = fs::temp_directory_path() / "arcgen_frozen_check.arcs";
  frozen_detector.save(tmp);
  std::string after = io::read_file(tmp);
  fs::remove(tmp);
  if (after != frozen_before)
    throw NumericalError("train_conflated: frozen detector was modified");
  return result;
}

// --- purge attacks -----------------------------------------------------------------

PurgeVariant purge_variant_from_string(const std::string& s) {
  if (s == "output") return PurgeVariant::output;
  if (s == "features") return PurgeVariant::features;
  if (s == "detection") return PurgeVariant::detection;
  throw ConfigError("unknown purge variant: " + s);
}

std::string to_string(PurgeVariant v) {
  switch (v) {
    case PurgeVariant::output: return "output";
    case PurgeVariant::features: return "features";
    case PurgeVariant::detection: return "detection";
  }
  return "?";
}

PurgeResult purge_finetune(const PurgeConfig& config, zoo::TrainableModel& m_t,
                           zoo::TrainableModel& m_b, const data::TriggerSpec& trigger,
                           detector::DetectorState& frozen_detector,
                           const data::LabeledDataset& train_data,
                           const data::LabeledDataset& test_data) {
  if (config.variant == PurgeVariant::features &&
      config.knowledge == PurgeKnowledge::queries_only)
    throw ConfigError("purge: the features variant needs the feature extractor g_f");
  if (config.variant == PurgeVariant::detection &&
      config.knowledge != PurgeKnowledge::full)
    throw ConfigError("purge: the detection variant needs the full detector g");

  const int d = frozen_detector.feature_dim();
  const int n_in = frozen_detector.config().n_queries;
  const int classes = frozen_detector.num_classes();
  nn::Tensor queries = frozen_detector.query_batch();

  PurgeResult result;
  result.purged = m_t.clone();
  zoo::TrainableModel& model = *result.purged;

  auto model_fn = [&model](const nn::Tensor& x) { return model.forward_probs(x); };
  result.pre_score = detector::detect_score(model_fn, frozen_detector).score;

  // Benign reference signatures are fixed during the fine-tune.
  nn::Tensor probs_b = m_b.forward_probs(queries);
  std::vector<double> p_b = probs_b.v;
  detector::Features feat_b;
  {
    auto fn_b = [&m_b](const nn::Tensor& x) { return m_b.forward_probs(x); };
    feat_b = detector::extract_features(fn_b, frozen_detector, false, nullptr);
  }
  double score_b = 0.0;
  {
    auto fn_b = [&m_b](const nn::Tensor& x) { return m_b.forward_probs(x); };
    score_b = detector::detect_score(fn_b, frozen_detector).score;
  }

  // Continued poisoning keeps the backdoor objective alive while purging.
  uint64_t seed = derive_seed(config.seed, 0x9a);
  Rng poison_rng(derive_seed(seed, 1));
  data::LabeledDataset poisoned =
      data::poison_dataset(train_data, trigger, poison_rng).dataset;

  nn::Optimizer optim(config.train.optim, model.params());
  Rng rng(derive_seed(seed, 3));
  std::vector<int> order(poisoned.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.train.batch)) {
      size_t end =
          std::min(order.size(), start + static_cast<size_t>(config.train.batch));
      std::vector<std::vector<double>> imgs;
      std::vector<int> labels;
      for (size_t i = start; i < end; ++i) {
        imgs.push_back(poisoned.images[static_cast<size_t>(order[i])]);
        labels.push_back(poisoned.labels[static_cast<size_t>(order[i])]);
      }
      nn::Tensor x = zoo::batch_from_images(imgs, poisoned.shape);
      nn::zero_grads(model.params());
      nn::Tensor logits = model.logits(x, true, &rng);
      auto lg = nn::softmax_cross_entropy(logits, labels);
      if (!std::isfinite(lg.loss))
        throw NumericalError("purge_finetune: task loss diverged");
      for (auto& g : lg.grad.v) g *= config.task_weight;
      model.backward_from_logits(lg.grad);

      if (config.lambda_purge > 0.0) {
        nn::Tensor probs_t = model.forward_probs(queries);
        std::vector<double> p_t = probs_t.v;
        nn::Tensor dprobs({n_in, classes});
        if (config.variant == PurgeVariant::output) {
          auto g = cosine_distance_grad_u(p_t, p_b);
          for (int k = 0; k < d; ++k)
            dprobs.v[static_cast<size_t>(k)] = config.lambda_purge * g[static_cast<size_t>(k)];
        } else if (config.variant == PurgeVariant::features) {
          nn::Tensor pt({1, d});
          pt.v = p_t;
          nn::Tensor e = frozen_detector.has_alignment()
                             ? frozen_detector.alignment().forward(pt, false, nullptr)
                             : pt;
          std::vector<double> e_t(e.v);
          auto ge = cosine_distance_grad_u(e_t, feat_b.e);
          nn::Tensor de({1, d});
          de.v = ge;
          nn::Tensor dp = frozen_detector.has_alignment()
                              ? frozen_detector.alignment().backward(de)
                              : de;
          for (int k = 0; k < d; ++k)
            dprobs.v[static_cast<size_t>(k)] = config.lambda_purge * dp.v[static_cast<size_t>(k)];
        } else {
          nn::Tensor pt({1, d});
          pt.v = p_t;
          nn::Tensor e = frozen_detector.has_alignment()
                             ? frozen_detector.alignment().forward(pt, false, nullptr)
                             : pt;
          nn::Tensor s = frozen_detector.head().forward(e, false, nullptr);
          double score_t = s.v.at(0);
          // l1 loss between the scalar detection outputs
          double dsign = score_t > score_b ? 1.0 : (score_t < score_b ? -1.0 : 0.0);
          nn::Tensor dscore({1, 1});
          dscore.v[0] = config.lambda_purge * dsign;
          nn::Tensor de = frozen_detector.head().backward(dscore);
          nn::Tensor dp = frozen_detector.has_alignment()
                              ? frozen_detector.alignment().backward(de)
                              : de;
          for (int k = 0; k < d; ++k)
            dprobs.v[static_cast<size_t>(k)] = dp.v[static_cast<size_t>(k)];
        }
        model.backward_to_input(dprobs);
      }
      optim.step();
    }

    EpochMetric em;
    em.epoch = epoch;
    em.model_id = "purged";
    em.ba = zoo::measure_ba(model_fn, test_data);
    em.asr = zoo::measure_asr(model_fn, test_data, trigger);
    em.detector_score = detector::detect_score(model_fn, frozen_detector).score;
    result.report.per_epoch.push_back(em);
  }

  result.post_score = detector::detect_score(model_fn, frozen_detector).score;
  return result;
}

eval::ResultTable evaluate_under_attack(
    const zoo::ZooManifest& manifest, const fs::path& zoo_dir,
    detector::DetectorState& frozen_detector,
    const std::map<std::string, std::vector<std::pair<std::string, double>>>&
        purged_scores_by_variant,
    uint64_t seed) {
  eval::ResultTable table;
  // Benign targets scored by the frozen detector (shared across variants).
  std::vector<std::pair<const zoo::ModelRecord*, double>> benign;
  for (const auto* rec : manifest.select(zoo::SplitRole::target)) {
    if (rec->role != zoo::ModelRole::benign) continue;
    zoo::Blackbox box(manifest.arch(rec->arch_id), zoo_dir / rec->weights_ref);
    double s = detector::detect_score(box.as_fn(), frozen_detector).score;
    benign.emplace_back(rec, s);
  }

  std::set<std::string> seen(manifest.seen_archs.begin(), manifest.seen_archs.end());
  for (const auto& [variant, purged] : purged_scores_by_variant) {
    std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> per_arch;
    std::vector<double> all_scores;
    std::vector<int> all_labels;
    for (const auto& [rec, s] : benign) {
      per_arch[rec->arch_id].first.push_back(s);
      per_arch[rec->arch_id].second.push_back(0);
      all_scores.push_back(s);
      all_labels.push_back(0);
      eval::ScoreRow row{rec->model_id, rec->arch_id, "benign", seed, s};
      table.scores.push_back(row);
    }
    for (const auto& [model_id, s] : purged) {
      // purged ids are "<original_target_id>__purged"; arch comes from the original
      std::string orig = model_id.substr(0, model_id.find("__purged"));
      const auto& rec = manifest.record(orig);
      per_arch[rec.arch_id].first.push_back(s);
      per_arch[rec.arch_id].second.push_back(1);
      all_scores.push_back(s);
      all_labels.push_back(1);
      eval::ScoreRow row{model_id, rec.arch_id, "backdoored", seed, s};
      table.scores.push_back(row);
    }
    auto emit = [&](const std::string& arch, const std::string& scope,
                    const std::vector<double>& sc, const std::vector<int>& lb) {
      bool has0 = false, has1 = false;
      for (int l : lb) (l ? has1 : has0) = true;
      if (!has0 || !has1) return;
      eval::ResultRow r;
      r.approach = "arcgen";
      r.variant = variant;
      r.attack = "purge";
      r.arch = arch;
      r.scope = scope;
      r.seed = seed;
      r.auc = eval::compute_auc(sc, lb);
      table.rows.push_back(std::move(r));
    };
    for (const auto& [arch, pools] : per_arch)
      emit(arch, seen.count(arch) ? "seen" : "unseen", pools.first, pools.second);
    emit("All", "all", all_scores, all_labels);
  }
  return table;
}

}  // namespace arcgen::adaptive
