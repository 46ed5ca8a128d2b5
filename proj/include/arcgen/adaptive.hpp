#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "arcgen/dataset.hpp"
#include "arcgen/detector.hpp"
#include "arcgen/evaluate.hpp"
#include "arcgen/zoo.hpp"

namespace arcgen::adaptive {

// Conflating loss: intra-set ordered-pair cosine distances minus cross-set
// ordered-pair cosine distances, summed unnormalized.
double loss_conflate(
    const std::map<int, std::vector<std::vector<double>>>& features_by_set);

struct EpochMetric {
  int epoch;
  std::string model_id;
  double ba;
  double asr;
  double detector_score;
};

struct AttackReport {
  std::vector<EpochMetric> per_epoch;
  double benign_score_mean = 0.0;  // score band of the zoo's benign targets
  double benign_score_std = 0.0;

  std::string csv() const;  // epoch,model_id,ba,asr,detector_score
};

struct ConflateConfig {
  std::vector<std::string> arch_ids;  // one set S^i per architecture, N = size
  int models_per_set = 2;             // k
  double lambda_con = 1.0;            // 0 recovers plain backdoor training
  data::TriggerSpec trigger;
  zoo::TrainOptions train;
  uint64_t seed = 0;
};

struct ConflateResult {
  AttackReport report;
  std::vector<std::string> model_ids;
  std::vector<double> final_ba;
  std::vector<double> final_asr;
};

// Trains N*k backdoored models jointly on task cross-entropy plus
// lambda_con * L_con, extracting features through the frozen detector's
// feature extractor each step. With lambda_con = 0 the trajectories are
// identical to the standard zoo trainer under the same seeds.
ConflateResult train_conflated(const ConflateConfig& config,
                               detector::DetectorState& frozen_detector,
                               const zoo::ZooManifest& manifest,
                               const data::LabeledDataset& train_data,
                               const data::LabeledDataset& test_data);

enum class PurgeVariant { output, features, detection };
PurgeVariant purge_variant_from_string(const std::string& s);
std::string to_string(PurgeVariant v);

// What the adversary holds: just the queries, the feature extractor, or the
// full detection function. Variants needing more than is supplied are a
// configuration error.
enum class PurgeKnowledge { queries_only, extractor, full };

struct PurgeConfig {
  PurgeVariant variant = PurgeVariant::output;
  PurgeKnowledge knowledge = PurgeKnowledge::full;
  double lambda_purge = 1.0;
  double task_weight = 1.0;
  int epochs = 5;
  zoo::TrainOptions train;  // optimizer settings for the fine-tune
  uint64_t seed = 0;
};

struct PurgeResult {
  AttackReport report;
  std::unique_ptr<zoo::TrainableModel> purged;
  double pre_score = 0.0;
  double post_score = 0.0;
};

// Fine-tunes the backdoored model m_t against a frozen detector, pulling its
// outputs / features / detection outcome toward the benign reference m_b.
// Training data keeps its poisoning so the backdoor objective persists.
PurgeResult purge_finetune(const PurgeConfig& config, zoo::TrainableModel& m_t,
                           zoo::TrainableModel& m_b,
                           const data::TriggerSpec& trigger,
                           detector::DetectorState& frozen_detector,
                           const data::LabeledDataset& train_data,
                           const data::LabeledDataset& test_data);

// Frozen-detector AUC over {purged backdoored} vs {benign targets}, one row
// set per purge variant. Scores reuse the evaluation schema with the variant
// recorded in the `variant` column.
eval::ResultTable evaluate_under_attack(
    const zoo::ZooManifest& manifest, const std::filesystem::path& zoo_dir,
    detector::DetectorState& frozen_detector,
    const std::map<std::string, std::vector<std::pair<std::string, double>>>&
        purged_scores_by_variant,
    uint64_t seed);

}  // namespace arcgen::adaptive
