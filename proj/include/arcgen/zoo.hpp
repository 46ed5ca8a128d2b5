#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "arcgen/dataset.hpp"
#include "arcgen/nn.hpp"
#include "arcgen/trigger.hpp"

#include <nlohmann/json.hpp>

namespace arcgen::zoo {

struct ArchSpec {
  std::string arch_id;
  std::string family;           // mlp | cnn | cnn_bn | dw_cnn | res_cnn
  nlohmann::json builder_params;  // widths/channels per family
  int num_classes = 0;
  data::ImageShape input_shape;

  nlohmann::json to_json() const;
  static ArchSpec from_json(const nlohmann::json& j);
};

// Fresh randomly initialized classifier for the architecture.
std::unique_ptr<nn::Sequential> build_arch_model(const ArchSpec& arch, Rng& rng);

// The default desk-scale architecture pool (five tiny families sharing input
// and output shapes).
std::vector<ArchSpec> default_arch_pool(const data::ImageShape& shape, int num_classes);

enum class ModelRole { benign, backdoored };
enum class SplitRole { given, target };

struct ModelRecord {
  std::string model_id;
  std::string arch_id;
  ModelRole role = ModelRole::benign;
  std::optional<data::TriggerSpec> trigger;
  std::string weights_ref;  // path relative to the zoo directory
  double ba = 0.0;
  std::optional<double> asr;
  uint64_t train_seed = 0;
  SplitRole split_role = SplitRole::given;

  nlohmann::json to_json() const;
  static ModelRecord from_json(const nlohmann::json& j);
};

struct AttackGroup {
  int group_id = 0;
  data::TriggerSpec trigger;
  std::vector<std::string> model_ids;  // one per seen architecture
};

struct ZooManifest {
  int version = 1;
  std::string dataset_fingerprint;
  double attacker_frac = 0.55;
  uint64_t split_seed = 0;
  std::vector<ArchSpec> archs;
  std::vector<std::string> seen_archs;
  std::vector<std::string> unseen_archs;
  std::vector<ModelRecord> records;
  std::vector<AttackGroup> attack_groups;

  const ArchSpec& arch(const std::string& arch_id) const;
  const ModelRecord& record(const std::string& model_id) const;
  std::vector<const ModelRecord*> select(SplitRole split) const;
  void validate() const;

  nlohmann::json to_json() const;
  static ZooManifest from_json(const nlohmann::json& j);
};

void save_manifest(const ZooManifest& m, const std::filesystem::path& path);
ZooManifest load_manifest(const std::filesystem::path& path);

// Flat weight binary "ARCW": header (arch id, parameter index) followed by a
// little-endian float32 payload. Documented in the README.
void save_weights(const std::filesystem::path& path, const std::string& arch_id,
                  const std::vector<nn::Param*>& params);
void load_weights(const std::filesystem::path& path, const std::string& expect_arch,
                  const std::vector<nn::Param*>& params);

struct TrainOptions {
  int epochs = 8;
  int batch = 32;
  nn::OptimConfig optim{.kind = "adam", .lr = 5e-3};

  nlohmann::json to_json() const;
  static TrainOptions from_json(const nlohmann::json& j);
};

// Supervised training of one classifier; deterministic given seed. Throws
// NumericalError with diagnostics if the loss goes non-finite.
void train_classifier(nn::Sequential& model, const data::LabeledDataset& train,
                      const TrainOptions& opts, uint64_t seed);

using PredictFn = std::function<nn::Tensor(const nn::Tensor&)>;

nn::Tensor batch_from_images(const std::vector<std::vector<double>>& images,
                             const data::ImageShape& shape);

double measure_ba(const PredictFn& predict, const data::LabeledDataset& test_set);
double measure_asr(const PredictFn& predict, const data::LabeledDataset& test_set,
                   const data::TriggerSpec& trigger);

// Query-only handle to a stored model: batches of images in, probability
// rows out. Nothing else about the model is observable through this type.
class Blackbox {
public:
  Blackbox(const ArchSpec& arch, const std::filesystem::path& weights);
  nn::Tensor probs(const nn::Tensor& images) const;
  int num_classes() const { return num_classes_; }
  PredictFn as_fn() const;

private:
  std::shared_ptr<nn::Sequential> model_;  // eval mode only, never mutated
  int num_classes_;
};

// Trainable handle used only where the detector optimization (and the
// adaptive attacks, which own their models) must differentiate through a
// model: probabilities forward plus gradient w.r.t. the input pixels. The
// black-box detection path never touches this type.
class TrainableModel {
public:
  TrainableModel(const ArchSpec& arch, const std::filesystem::path& weights);
  TrainableModel(const ArchSpec& arch, std::unique_ptr<nn::Sequential> model);

  nn::Tensor forward_probs(const nn::Tensor& images);        // caches for backward
  nn::Tensor backward_to_input(const nn::Tensor& dprobs);    // d loss / d images
  std::vector<nn::Param*> params() { return model_->params(); }
  const ArchSpec& arch() const { return arch_; }
  // train = true runs batch statistics and dropout exactly like the zoo
  // trainer does, which keeps lambda = 0 adaptive runs bit-identical to it.
  nn::Tensor logits(const nn::Tensor& images, bool train = false, Rng* rng = nullptr);
  // Backward for a loss taken directly on the logits (pairs with logits()).
  nn::Tensor backward_from_logits(const nn::Tensor& dlogits);
  std::unique_ptr<TrainableModel> clone() const;

  // Bernoulli weight masking (architecture randomization): zeroes each
  // ParamKind::weight entry independently with probability beta_mask; biases
  // and normalization parameters are untouched. Operates on a fresh copy.
  std::unique_ptr<TrainableModel> masked_copy(double beta_mask, Rng& rng) const;

private:
  ArchSpec arch_;
  std::unique_ptr<nn::Sequential> model_;
  nn::Softmax softmax_;
};

// In-place masking utility exposed for tests and for the detector trainer.
void randomize_architecture(const std::vector<nn::Param*>& params, double beta_mask,
                            Rng& rng);

struct AttackSetting {
  std::string kind = "badnets";  // badnets | blended | sig | wanet | bpp
  double ratio_min = 0.05, ratio_max = 0.2;
  nlohmann::json to_json() const;
  static AttackSetting from_json(const nlohmann::json& j);
};

struct ZooConfig {
  std::vector<ArchSpec> archs;       // full pool; seen/unseen refer into it
  std::vector<std::string> seen_archs;
  std::vector<std::string> unseen_archs;
  int benign_per_seen_arch = 32;
  int proxy_per_seen_arch = 32;      // includes the shared-spec models
  int shared_trigger_specs = 4;      // w attack groups of size |seen|
  int target_benign_per_arch = 16;
  int target_attacked_per_arch = 16;
  std::vector<AttackSetting> attacks{{}};
  data::ProxyTriggerRanges proxy_ranges;
  TrainOptions train;
  double attacker_frac = 0.55;
  uint64_t split_seed = 0;
  uint64_t seed = 0;
  int workers = 2;
};

// Per-model plan entry, derived deterministically from the config before any
// training happens so interrupted builds resume to an identical manifest.
struct ModelPlan {
  std::string model_id;
  std::string arch_id;
  ModelRole role;
  SplitRole split_role;
  std::optional<data::TriggerSpec> trigger;
  std::string attack_kind;  // empty for benign / proxy
  int group_id = -1;
  uint64_t seed = 0;
};

std::vector<ModelPlan> make_zoo_plan(const ZooConfig& config);

// Trains every planned model (skipping ones whose artifacts already exist),
// measures BA/ASR on the test set, and writes manifest.json under out_dir.
// interrupt_after, when >= 0, aborts after that many newly trained models
// (test hook for the resume contract).
ZooManifest build_zoo(const ZooConfig& config, const data::LabeledDataset& train_set,
                      const data::LabeledDataset& test_set,
                      const std::filesystem::path& out_dir,
                      int interrupt_after = -1);

}  // namespace arcgen::zoo
