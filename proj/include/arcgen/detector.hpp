#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "arcgen/common.hpp"
#include "arcgen/dataset.hpp"
#include "arcgen/nn.hpp"
#include "arcgen/zoo.hpp"

#include <nlohmann/json.hpp>

namespace arcgen::detector {

struct DetectorConfig {
  int n_queries = 10;      // N_in; feature dimension d = num_classes * N_in
  double lambda_dla = 1.0;
  int tau_epoch = 5;       // sample-level alignment every tau epochs
  double beta_mask = 0.05;
  double mask_prob = 0.5;  // chance a given model trains masked in an epoch
  int epochs = 90;
  int batch = 32;
  double lr = 1e-2;
  double clip_norm = 1.0;
  int sched_step = 30;
  double sched_gamma = 0.6;
  double sched_start_frac = 4.0 / 6.0;  // decay activates after this fraction of epochs
  uint64_t seed = 0;
  std::string optimizer = "adam_amsgrad";  // adam_amsgrad | adam | sgd
  double dropout = 0.5;
  int head_hidden = 20;   // N_h
  int disc_hidden = 512;
  // Component switches; the ablation variants toggle these.
  bool use_sla = true;
  bool use_dla = true;
  bool use_arch_rand = true;
  bool als_in_extractor = true;  // false: identical AL stack moves to the head

  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
};

// Named ablation variants mapped onto config overrides.
DetectorConfig apply_variant(DetectorConfig base, const std::string& variant);
extern const std::vector<std::string> kAblationVariants;

// g = g_b(g_f(.)): learnable queries + alignment layers form g_f, the head is
// g_b; the discriminator (behind a GRL) exists only during training but its
// parameters are part of the serialized state.
class DetectorState {
public:
  DetectorState() = default;
  // Fresh state; query images are drawn uniformly from query_init.
  DetectorState(const DetectorConfig& config, int num_classes,
                const data::ImageShape& shape, const std::vector<std::string>& seen_archs,
                const data::LabeledDataset& query_init);

  const DetectorConfig& config() const { return config_; }
  int num_classes() const { return num_classes_; }
  int n_arch() const { return static_cast<int>(seen_archs_.size()); }
  const std::vector<std::string>& seen_archs() const { return seen_archs_; }
  const data::ImageShape& input_shape() const { return shape_; }
  int feature_dim() const { return config_.n_queries * num_classes_; }
  int epoch() const { return epoch_; }
  void set_epoch(int e) { epoch_ = e; }

  nn::Param& queries() { return q_; }
  const nn::Param& queries() const { return q_; }
  nn::Tensor query_batch() const;  // {N_in, h, w, c}
  void clamp_queries();            // project q back into [0, 1]

  nn::Sequential& alignment() { return *alignment_; }
  nn::Sequential& head() { return *head_; }
  nn::Sequential& discriminator() { return *discriminator_; }
  bool has_alignment() const { return config_.als_in_extractor; }

  std::vector<nn::Param*> trainable_params();  // q, theta_al, theta_b, theta_ad
  std::vector<nn::Param*> extractor_params();  // q and theta_al only
  int64_t g_param_count();  // q + theta_al + theta_b (excludes discriminator)

  void save(const std::filesystem::path& path) const;
  static DetectorState load(const std::filesystem::path& path);

  DetectorState clone() const;

private:
  void build_layers(Rng& rng);

  DetectorConfig config_;
  int num_classes_ = 0;
  data::ImageShape shape_;
  std::vector<std::string> seen_archs_;
  int epoch_ = 0;
  nn::Param q_;
  std::unique_ptr<nn::Sequential> alignment_;
  std::unique_ptr<nn::Sequential> head_;
  std::unique_ptr<nn::Sequential> discriminator_;
};

// --- feature extraction -------------------------------------------------------

// p: the model's probability rows for the queries, concatenated in fixed
// (query, class) order; length d.
std::vector<double> concat_probs(const zoo::PredictFn& model, const nn::Tensor& queries,
                                 int num_classes);

struct Features {
  std::vector<double> p;
  std::vector<double> e;
};

// e = al(p; theta_al); dropout is active only when train_mode (an rng is then
// required). Throws NumericalError if the model emits non-finite output.
Features extract_features(const zoo::PredictFn& model, DetectorState& state,
                          bool train_mode = false, Rng* rng = nullptr);

struct DetectScore {
  double score;        // raw head output; higher = more likely backdoored
  double probability;  // sigmoid(score)
};

DetectScore detect_score(const zoo::PredictFn& model, DetectorState& state);

// --- losses ----------------------------------------------------------------------

double loss_target(double score, int label);  // BCE with logits, one example
double loss_target_batch(const std::vector<double>& scores, const std::vector<int>& labels);
double loss_discriminator(const nn::Tensor& arch_logits, const std::vector<int>& true_arch);
double loss_dla(const nn::Tensor& arch_logits, const std::vector<int>& true_arch);

double cosine_distance(const std::vector<double>& u, const std::vector<double>& v);
// Epsilon-guarded distance used inside training passes, where dropout can
// produce an all-zero feature row.
double cosine_distance_training(const std::vector<double>& u,
                                const std::vector<double>& v);
// Gradient of D_C(u, v) with respect to u (same epsilon guard).
std::vector<double> cosine_distance_grad_u(const std::vector<double>& u,
                                           const std::vector<double>& v);

// Sum over groups of the mean cosine distance across ordered intra-group
// pairs, normalized by n_i * (n_i - 1). Groups smaller than 2 are skipped
// with a warning.
double loss_sla(const std::vector<std::vector<std::vector<double>>>& group_features);

// --- training ----------------------------------------------------------------------

struct LossRow {
  int epoch;
  int batch;
  double lt;
  std::optional<double> lad;
  std::optional<double> ldla;
  std::optional<double> lsla;
};

struct TrainResult {
  DetectorState state;
  std::vector<LossRow> log;
  double initial_lt = 0.0;  // L_t over all given models before training (eval mode)
  double final_lt = 0.0;
};

std::string loss_log_csv(const std::vector<LossRow>& log, const DetectorConfig& config);

// Joint optimization over the given models of the zoo. query_init supplies
// the images the queries start from (the defender split). Throws
// TrainingDiverged carrying the last finite-loss state if a loss goes
// non-finite, ConfigError if sample-level alignment is enabled without
// attack groups.
TrainResult train_detector(const zoo::ZooManifest& manifest,
                           const std::filesystem::path& zoo_dir,
                           const data::LabeledDataset& query_init,
                           const DetectorConfig& config);

struct TrainingDiverged : NumericalError {
  TrainingDiverged(const std::string& w, DetectorState last)
      : NumericalError(w), last_good(std::move(last)) {}
  DetectorState last_good;
};

// --- internals exposed for the gradient-routing tests --------------------------------

struct GivenModel {
  std::unique_ptr<zoo::TrainableModel> model;
  int label = 0;       // 0 benign, 1 backdoored
  int arch_index = 0;  // index into seen_archs
  std::string model_id;
};

std::vector<GivenModel> load_given_models(const zoo::ZooManifest& manifest,
                                          const std::filesystem::path& zoo_dir);

struct BatchPassOptions {
  bool use_target = true;
  bool use_disc = true;
  double grl_lambda = 1.0;  // effective GRL coefficient for this pass
};

struct BatchPassResult {
  double lt = 0.0;
  double lad = 0.0;
};

// One forward/backward over a batch of models; leaves gradients accumulated
// in the state's parameters (callers zero them first).
BatchPassResult detector_batch_pass(DetectorState& state,
                                    const std::vector<GivenModel*>& batch,
                                    const BatchPassOptions& opts, Rng* rng);

// One sample-level-alignment pass over a single attack group; accumulates
// gradients into q and theta_al and returns the group's loss term.
double sla_group_pass(DetectorState& state, const std::vector<GivenModel*>& group,
                      Rng* rng);

}  // namespace arcgen::detector
