#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "arcgen/dataset.hpp"
#include "arcgen/detector.hpp"
#include "arcgen/zoo.hpp"

namespace arcgen::eval {

// Rank-based (Mann-Whitney) AUC; ties contribute 1/2 through average ranks.
// The exact rational core is exposed so symmetry properties can be asserted
// without floating-point caveats: auc = num2 / den2 with den2 = 2 * n1 * n0.
struct AucRational {
  int64_t num2 = 0;
  int64_t den2 = 0;
  double value() const { return static_cast<double>(num2) / static_cast<double>(den2); }
};

AucRational auc_rational(const std::vector<double>& scores, const std::vector<int>& labels);
double compute_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ScoreRow {
  std::string model_id;
  std::string arch;
  std::string role;  // benign | backdoored
  uint64_t seed;
  double raw_score;
};

struct ResultRow {
  std::string approach;
  std::string variant;
  std::string attack;
  std::string arch;   // arch id, or the pooled rows "seen_pool"/"unseen_pool"/"All"
  std::string scope;  // seen | unseen | all
  uint64_t seed;
  double auc;
};

struct AggregateCell {
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<ScoreRow> scores;

  std::string results_csv() const;
  std::string scores_csv() const;
  // mean/std over seeds for one (variant, attack, arch) cell
  std::optional<AggregateCell> cell(const std::string& variant, const std::string& attack,
                                    const std::string& arch) const;
  std::string render_text(const zoo::ZooManifest& manifest) const;
};

struct ExperimentConfig {
  std::filesystem::path zoo_dir;
  detector::DetectorConfig detector;
  std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::string> attacks;  // empty = every attack present among targets
  std::filesystem::path out_dir;
  std::filesystem::path detector_dir;  // cache for trained states; out_dir if empty
  std::string approach = "arcgen";
};

// Trains (or loads a cached) detector per seed, scores every target model,
// and emits per-architecture plus pooled AUC rows. Persists results.csv,
// scores CSV(s) and a rendered table under out_dir.
ResultTable run_experiment(const ExperimentConfig& config,
                           const data::LabeledDataset& train_set,
                           const std::string& variant = "full");

// Table VIII-style ablations: one run per requested variant (full always
// included first). Unknown variant names raise ConfigError.
ResultTable run_ablation(const ExperimentConfig& config,
                         const data::LabeledDataset& train_set,
                         const std::vector<std::string>& variants);

// Path of the cached detector state for (variant, seed) under out_dir.
std::filesystem::path detector_state_path(const std::filesystem::path& out_dir,
                                          const std::string& variant, uint64_t seed);

// Trains a detector for (variant, seed) or loads the cached state.
detector::DetectorState train_or_load_detector(const ExperimentConfig& config,
                                               const data::LabeledDataset& train_set,
                                               const std::string& variant, uint64_t seed);

// Accuracy of a freshly trained architecture classifier on held-out feature
// vectors; measures how much architecture identity survives in the features.
double arch_probe_accuracy(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& arch_labels, int n_arch,
                           uint64_t seed);

}  // namespace arcgen::eval
