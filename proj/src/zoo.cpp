#include "arcgen/zoo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <set>
#include <thread>

#include "arcgen/common.hpp"
#include "arcgen/io.hpp"

namespace arcgen::zoo {

namespace fs = std::filesystem;
using nlohmann::json;
using data::ImageShape;
using data::LabeledDataset;
using data::TriggerSpec;

// --- ArchSpec ----------------------------------------------------------------

json ArchSpec::to_json() const {
  return json{{"arch_id", arch_id},
              {"family", family},
              {"builder_params", builder_params},
              {"num_classes", num_classes},
              {"input_shape", {input_shape.h, input_shape.w, input_shape.c}}};
}

ArchSpec ArchSpec::from_json(const json& j) {
  ArchSpec a;
  a.arch_id = j.at("arch_id").get<std::string>();
  a.family = j.at("family").get<std::string>();
  a.builder_params = j.at("builder_params");
  a.num_classes = j.at("num_classes").get<int>();
  a.input_shape = {j.at("input_shape").at(0).get<int>(),
                   j.at("input_shape").at(1).get<int>(),
                   j.at("input_shape").at(2).get<int>()};
  return a;
}

static int pooled_dim(int v) { return v / 2 / 2; }

std::unique_ptr<nn::Sequential> build_arch_model(const ArchSpec& arch, Rng& rng) {
  using namespace nn;
  const ImageShape& in = arch.input_shape;
  auto model = std::make_unique<Sequential>();
  const json& p = arch.builder_params;

  auto dense = [&](int i, int o, const std::string& name) {
    auto d = std::make_unique<Dense>(i, o, name);
    kaiming_init(d->weight(), i, rng);
    return d;
  };
  auto conv = [&](int ic, int oc, const std::string& name) {
    auto c = std::make_unique<Conv2D>(ic, oc, 3, 1, name);
    kaiming_init(*c->params()[0], 3 * 3 * ic, rng);
    return c;
  };

  if (arch.family == "mlp") {
    std::vector<int> hidden = p.value("hidden", std::vector<int>{48, 32});
    model->add(std::make_unique<Flatten>());
    int d = in.size();
    for (size_t i = 0; i < hidden.size(); ++i) {
      model->add(dense(d, hidden[i], "fc" + std::to_string(i)));
      model->add(std::make_unique<ReLU>());
      d = hidden[i];
    }
    model->add(dense(d, arch.num_classes, "out"));
    return model;
  }

  std::vector<int> ch = p.value("channels", std::vector<int>{8, 16});
  int c1 = ch.at(0), c2 = ch.at(1);
  int flat = pooled_dim(in.h) * pooled_dim(in.w) * c2;

  if (arch.family == "cnn") {
    model->add(conv(in.c, c1, "conv1"));
    model->add(std::make_unique<ReLU>());
    model->add(std::make_unique<MaxPool2D>(2));
    model->add(conv(c1, c2, "conv2"));
    model->add(std::make_unique<ReLU>());
    model->add(std::make_unique<MaxPool2D>(2));
    model->add(std::make_unique<Flatten>());
    model->add(dense(flat, arch.num_classes, "out"));
  } else if (arch.family == "cnn_bn") {
    model->add(conv(in.c, c1, "conv1"));
    model->add(std::make_unique<BatchNorm>(c1, 0.1, 1e-5, "bn1"));
    model->add(std::make_unique<ReLU>());
    model->add(std::make_unique<MaxPool2D>(2));
    model->add(conv(c1, c2, "conv2"));
    model->add(std::make_unique<BatchNorm>(c2, 0.1, 1e-5, "bn2"));
    model->add(std::make_unique<ReLU>());
    model->add(std::make_unique<MaxPool2D>(2));
    model->add(std::make_unique<Flatten>());
    model->add(dense(flat, arch.num_classes, "out"));
  } else if (arch.family == "dw_cnn") {
    model->add(conv(in.c, c1, "conv1"));
    model->add(std::make_unique<ReLU>());
    model->add(std::make_unique<MaxPool2D>(2));
    auto dw = std::make_unique<DepthwiseConv2D>(c1, 3, 1, "dw");
    kaiming_init(*dw->params()[0], 3 * 3, rng);
    model->add(std::move(dw));
    auto pw = std::make_unique<Conv2D>(c1, c2, 1, 0, "pw");
    kaiming_init(*pw->params()[0], c1, rng);
    model->add(std::move(pw));
    model->add(std::make_unique<ReLU>());
    model->add(std::make_unique<MaxPool2D>(2));
    model->add(std::make_unique<Flatten>());
    model->add(dense(flat, arch.num_classes, "out"));
  } else if (arch.family == "res_cnn") {
    model->add(conv(in.c, c1, "conv1"));
    model->add(std::make_unique<ReLU>());
    auto body = std::make_unique<Sequential>();
    body->add(conv(c1, c1, "res.conv1"));
    body->add(std::make_unique<ReLU>());
    body->add(conv(c1, c1, "res.conv2"));
    model->add(std::make_unique<Residual>(std::move(body)));
    model->add(std::make_unique<ReLU>());
    model->add(std::make_unique<MaxPool2D>(2));
    model->add(conv(c1, c2, "conv2"));
    model->add(std::make_unique<ReLU>());
    model->add(std::make_unique<MaxPool2D>(2));
    model->add(std::make_unique<Flatten>());
    model->add(dense(flat, arch.num_classes, "out"));
  } else {
    throw ConfigError("unknown architecture family: " + arch.family);
  }
  return model;
}

std::vector<ArchSpec> default_arch_pool(const ImageShape& shape, int num_classes) {
  std::vector<ArchSpec> pool;
  for (const char* fam : {"cnn", "cnn_bn", "res_cnn", "mlp", "dw_cnn"}) {
    ArchSpec a;
    a.arch_id = fam;
    a.family = fam;
    a.builder_params = json::object();
    a.num_classes = num_classes;
    a.input_shape = shape;
    pool.push_back(std::move(a));
  }
  return pool;
}

// --- records / manifest ---------------------------------------------------------

static std::string role_str(ModelRole r) {
  return r == ModelRole::benign ? "benign" : "backdoored";
}
static std::string split_str(SplitRole s) { return s == SplitRole::given ? "given" : "target"; }

json ModelRecord::to_json() const {
  json j{{"model_id", model_id}, {"arch_id", arch_id},      {"role", role_str(role)},
         {"weights_ref", weights_ref}, {"ba", ba},          {"train_seed", train_seed},
         {"split_role", split_str(split_role)}};
  if (trigger) j["trigger"] = trigger->to_json();
  if (asr) j["asr"] = *asr;
  return j;
}

ModelRecord ModelRecord::from_json(const json& j) {
  ModelRecord r;
  r.model_id = j.at("model_id").get<std::string>();
  r.arch_id = j.at("arch_id").get<std::string>();
  r.role = j.at("role").get<std::string>() == "benign" ? ModelRole::benign
                                                       : ModelRole::backdoored;
  r.weights_ref = j.at("weights_ref").get<std::string>();
  r.ba = j.at("ba").get<double>();
  r.train_seed = j.at("train_seed").get<uint64_t>();
  r.split_role = j.at("split_role").get<std::string>() == "given" ? SplitRole::given
                                                                  : SplitRole::target;
  if (j.contains("trigger")) r.trigger = TriggerSpec::from_json(j["trigger"]);
  if (j.contains("asr")) r.asr = j["asr"].get<double>();
  return r;
}

const ArchSpec& ZooManifest::arch(const std::string& arch_id) const {
  for (const auto& a : archs)
    if (a.arch_id == arch_id) return a;
  throw MissingArtifactError("arch not in manifest: " + arch_id);
}

const ModelRecord& ZooManifest::record(const std::string& model_id) const {
  for (const auto& r : records)
    if (r.model_id == model_id) return r;
  throw MissingArtifactError("model not in manifest: " + model_id);
}

std::vector<const ModelRecord*> ZooManifest::select(SplitRole split) const {
  std::vector<const ModelRecord*> out;
  for (const auto& r : records)
    if (r.split_role == split) out.push_back(&r);
  return out;
}

void ZooManifest::validate() const {
  std::set<std::string> seen(seen_archs.begin(), seen_archs.end());
  for (const auto& u : unseen_archs)
    if (seen.count(u))
      throw InvalidSpecError("manifest: arch both seen and unseen: " + u);
  std::set<std::string> ids;
  for (const auto& a : archs) {
    if (!ids.insert(a.arch_id).second)
      throw InvalidSpecError("manifest: duplicate arch_id " + a.arch_id);
    if (a.num_classes != archs.front().num_classes ||
        !(a.input_shape == archs.front().input_shape))
      throw InvalidSpecError("manifest: archs must share num_classes and input_shape");
  }
  for (const auto& r : records) {
    bool backdoored = r.role == ModelRole::backdoored;
    if (backdoored != r.trigger.has_value() || backdoored != r.asr.has_value())
      throw InvalidSpecError("manifest: role/trigger/asr inconsistent for " + r.model_id);
    if (r.ba < 0 || r.ba > 1 || (r.asr && (*r.asr < 0 || *r.asr > 1)))
      throw InvalidSpecError("manifest: metric out of [0,1] for " + r.model_id);
  }
  for (const auto& g : attack_groups) {
    if (g.model_ids.size() < 2)
      throw InvalidSpecError("manifest: attack group needs >= 2 models");
    std::set<std::string> group_archs;
    std::string spec_bytes = g.trigger.serialize();
    for (const auto& id : g.model_ids) {
      const auto& r = record(id);
      if (r.role != ModelRole::backdoored)
        throw InvalidSpecError("manifest: benign model in attack group: " + id);
      if (!r.trigger || r.trigger->serialize() != spec_bytes)
        throw InvalidSpecError("manifest: trigger mismatch in attack group: " + id);
      if (!group_archs.insert(r.arch_id).second)
        throw InvalidSpecError("manifest: duplicate arch in attack group: " + r.arch_id);
    }
  }
}

json ZooManifest::to_json() const {
  json j;
  j["version"] = version;
  j["dataset_fingerprint"] = dataset_fingerprint;
  j["attacker_frac"] = attacker_frac;
  j["split_seed"] = split_seed;
  j["archs"] = json::array();
  for (const auto& a : archs) j["archs"].push_back(a.to_json());
  j["seen_archs"] = seen_archs;
  j["unseen_archs"] = unseen_archs;
  j["records"] = json::array();
  for (const auto& r : records) j["records"].push_back(r.to_json());
  j["attack_groups"] = json::array();
  for (const auto& g : attack_groups)
    j["attack_groups"].push_back(json{{"group_id", g.group_id},
                                      {"trigger", g.trigger.to_json()},
                                      {"model_ids", g.model_ids}});
  return j;
}

ZooManifest ZooManifest::from_json(const json& j) {
  ZooManifest m;
  m.version = j.at("version").get<int>();
  m.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
  m.attacker_frac = j.value("attacker_frac", 0.55);
  m.split_seed = j.value("split_seed", uint64_t{0});
  for (const auto& a : j.at("archs")) m.archs.push_back(ArchSpec::from_json(a));
  m.seen_archs = j.at("seen_archs").get<std::vector<std::string>>();
  m.unseen_archs = j.at("unseen_archs").get<std::vector<std::string>>();
  for (const auto& r : j.at("records")) m.records.push_back(ModelRecord::from_json(r));
  for (const auto& g : j.at("attack_groups")) {
    AttackGroup grp;
    grp.group_id = g.at("group_id").get<int>();
    grp.trigger = TriggerSpec::from_json(g.at("trigger"));
    grp.model_ids = g.at("model_ids").get<std::vector<std::string>>();
    m.attack_groups.push_back(std::move(grp));
  }
  return m;
}

void save_manifest(const ZooManifest& m, const fs::path& path) {
  io::write_file_atomic(path, m.to_json().dump(2) + "\n");
}

ZooManifest load_manifest(const fs::path& path) {
  if (!io::file_exists(path))
    throw MissingArtifactError("zoo manifest not found: " + path.string() +
                               " (run `arcgen zoo-build` first)");
  auto m = ZooManifest::from_json(json::parse(io::read_file(path)));
  m.validate();
  return m;
}

// --- weight binary ---------------------------------------------------------------

void save_weights(const fs::path& path, const std::string& arch_id,
                  const std::vector<nn::Param*>& params) {
  std::string out;
  out += "ARCW";
  io::put_u32(out, 1);
  io::put_u32(out, static_cast<uint32_t>(arch_id.size()));
  out += arch_id;
  nn::append_params(out, params);
  io::write_file_atomic(path, out);
}

void load_weights(const fs::path& path, const std::string& expect_arch,
                  const std::vector<nn::Param*>& params) {
  if (!io::file_exists(path))
    throw MissingArtifactError("weights file not found: " + path.string());
  std::string in = io::read_file(path);
  if (in.size() < 12 || in.compare(0, 4, "ARCW") != 0)
    throw IoError("not an ARCW weights file: " + path.string());
  size_t off = 4;
  if (io::get_u32(in, off) != 1) throw IoError("unsupported ARCW version");
  uint32_t alen = io::get_u32(in, off);
  std::string arch = in.substr(off, alen);
  off += alen;
  if (!expect_arch.empty() && arch != expect_arch)
    throw IoError("weights arch mismatch: file has '" + arch + "', expected '" +
                  expect_arch + "'");
  nn::read_params(in, off, params);
}

// --- training / metrics ------------------------------------------------------------

json TrainOptions::to_json() const {
  return json{{"epochs", epochs},
              {"batch", batch},
              {"optimizer", optim.kind},
              {"lr", optim.lr},
              {"momentum", optim.momentum}};
}

TrainOptions TrainOptions::from_json(const json& j) {
  TrainOptions t;
  t.epochs = j.value("epochs", t.epochs);
  t.batch = j.value("batch", t.batch);
  t.optim.kind = j.value("optimizer", t.optim.kind);
  t.optim.lr = j.value("lr", t.optim.lr);
  t.optim.momentum = j.value("momentum", t.optim.momentum);
  return t;
}

nn::Tensor batch_from_images(const std::vector<std::vector<double>>& images,
                             const ImageShape& shape) {
  nn::Tensor t({static_cast<int>(images.size()), shape.h, shape.w, shape.c});
  size_t stride = static_cast<size_t>(shape.size());
  for (size_t i = 0; i < images.size(); ++i)
    std::copy(images[i].begin(), images[i].end(), t.v.begin() + i * stride);
  return t;
}

void train_classifier(nn::Sequential& model, const LabeledDataset& train,
                      const TrainOptions& opts, uint64_t seed) {
  if (train.size() == 0) throw InvalidSpecError("train_classifier: empty dataset");
  Rng rng(seed);
  auto params = model.params();
  nn::Optimizer optim(opts.optim, params);
  std::vector<int> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opts.batch)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(opts.batch));
      std::vector<std::vector<double>> imgs;
      std::vector<int> labels;
      imgs.reserve(end - start);
      for (size_t i = start; i < end; ++i) {
        imgs.push_back(train.images[static_cast<size_t>(order[i])]);
        labels.push_back(train.labels[static_cast<size_t>(order[i])]);
      }
      nn::Tensor x = batch_from_images(imgs, train.shape);
      nn::zero_grads(params);
      nn::Tensor logits = model.forward(x, true, &rng);
      auto lg = nn::softmax_cross_entropy(logits, labels);
      if (!std::isfinite(lg.loss))
        throw NumericalError("training diverged: non-finite loss at epoch " +
                             std::to_string(epoch) + " (lr=" +
                             io::fmt_double(opts.optim.lr) + ", batch " +
                             std::to_string(start / opts.batch) + ")");
      model.backward(lg.grad);
      optim.step();
    }
  }
}

static int argmax_row(const double* row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

double measure_ba(const PredictFn& predict, const LabeledDataset& test_set) {
  if (test_set.size() == 0) throw InvalidSpecError("measure_ba: empty test set");
  nn::Tensor probs = predict(batch_from_images(test_set.images, test_set.shape));
  int k = static_cast<int>(probs.stride0());
  size_t correct = 0;
  for (size_t i = 0; i < test_set.size(); ++i)
    if (argmax_row(probs.row(static_cast<int>(i)), k) == test_set.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

double measure_asr(const PredictFn& predict, const LabeledDataset& test_set,
                   const TriggerSpec& trigger) {
  if (test_set.size() == 0) throw InvalidSpecError("measure_asr: empty test set");
  std::vector<std::vector<double>> triggered;
  for (size_t i = 0; i < test_set.size(); ++i) {
    if (test_set.labels[i] == trigger.target_label) continue;
    triggered.push_back(data::apply_trigger(test_set.images[i], test_set.shape, trigger));
  }
  if (triggered.empty())
    throw InvalidSpecError("measure_asr: no samples with true label != target");
  nn::Tensor probs = predict(batch_from_images(triggered, test_set.shape));
  int k = static_cast<int>(probs.stride0());
  size_t hits = 0;
  for (size_t i = 0; i < triggered.size(); ++i)
    if (argmax_row(probs.row(static_cast<int>(i)), k) == trigger.target_label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(triggered.size());
}

// --- Blackbox / TrainableModel --------------------------------------------------------

Blackbox::Blackbox(const ArchSpec& arch, const fs::path& weights)
    : num_classes_(arch.num_classes) {
  Rng init_rng(0);
  auto model = build_arch_model(arch, init_rng);
  load_weights(weights, arch.arch_id, model->params());
  model_ = std::shared_ptr<nn::Sequential>(model.release());
}

nn::Tensor Blackbox::probs(const nn::Tensor& images) const {
  // Clone per call: layer forward caches are not shareable across threads.
  auto local = model_->clone();
  nn::Tensor logits = local->forward(images, false, nullptr);
  for (double v : logits.v)
    if (!std::isfinite(v)) throw NumericalError("blackbox produced non-finite output");
  return nn::softmax_rows(logits);
}

PredictFn Blackbox::as_fn() const {
  auto self = *this;
  return [self](const nn::Tensor& x) { return self.probs(x); };
}

TrainableModel::TrainableModel(const ArchSpec& arch, const fs::path& weights)
    : arch_(arch) {
  Rng init_rng(0);
  model_ = build_arch_model(arch, init_rng);
  load_weights(weights, arch.arch_id, model_->params());
}

TrainableModel::TrainableModel(const ArchSpec& arch, std::unique_ptr<nn::Sequential> model)
    : arch_(arch), model_(std::move(model)) {}

nn::Tensor TrainableModel::forward_probs(const nn::Tensor& images) {
  nn::Tensor logits = model_->forward(images, false, nullptr);
  return softmax_.forward(logits, false, nullptr);
}

nn::Tensor TrainableModel::backward_to_input(const nn::Tensor& dprobs) {
  nn::Tensor dlogits = softmax_.backward(dprobs);
  return model_->backward(dlogits);
}

nn::Tensor TrainableModel::logits(const nn::Tensor& images, bool train, Rng* rng) {
  return model_->forward(images, train, rng);
}

nn::Tensor TrainableModel::backward_from_logits(const nn::Tensor& dlogits) {
  return model_->backward(dlogits);
}

std::unique_ptr<TrainableModel> TrainableModel::clone() const {
  auto copy = model_->clone();
  auto* seq = dynamic_cast<nn::Sequential*>(copy.release());
  return std::make_unique<TrainableModel>(arch_, std::unique_ptr<nn::Sequential>(seq));
}

std::unique_ptr<TrainableModel> TrainableModel::masked_copy(double beta_mask,
                                                            Rng& rng) const {
  auto copy = clone();
  randomize_architecture(copy->params(), beta_mask, rng);
  return copy;
}

void randomize_architecture(const std::vector<nn::Param*>& params, double beta_mask,
                            Rng& rng) {
  if (!(beta_mask >= 0.0 && beta_mask <= 1.0))
    throw InvalidSpecError("randomize_architecture: beta_mask must be in [0,1]");
  for (nn::Param* p : params) {
    if (p->kind != nn::ParamKind::weight) continue;
    for (double& v : p->value)
      if (rng.bernoulli(beta_mask)) v = 0.0;
  }
}

// --- zoo plan / build -------------------------------------------------------------------

json AttackSetting::to_json() const {
  return json{{"kind", kind}, {"ratio_min", ratio_min}, {"ratio_max", ratio_max}};
}

AttackSetting AttackSetting::from_json(const json& j) {
  AttackSetting a;
  a.kind = j.value("kind", a.kind);
  a.ratio_min = j.value("ratio_min", a.ratio_min);
  a.ratio_max = j.value("ratio_max", a.ratio_max);
  return a;
}

// Named-attack trigger used for target models.
static TriggerSpec sample_attack_spec(const AttackSetting& setting, Rng& rng,
                                      const ImageShape& shape, int num_classes) {
  TriggerSpec s;
  s.kind = data::trigger_kind_from_string(setting.kind);
  s.target_label = static_cast<int>(rng.uniform_int(0, num_classes - 1));
  s.poisoning_ratio = rng.uniform(setting.ratio_min, setting.ratio_max);
  switch (s.kind) {
    case data::TriggerKind::badnets: {
      int size_max = std::max(2, shape.w / 3);
      s.pattern_h = static_cast<int>(rng.uniform_int(2, size_max));
      s.pattern_w = static_cast<int>(rng.uniform_int(2, size_max));
      s.pattern_c = shape.c;
      s.loc_row = static_cast<int>(rng.uniform_int(0, shape.h - s.pattern_h));
      s.loc_col = static_cast<int>(rng.uniform_int(0, shape.w - s.pattern_w));
      s.pattern.resize(static_cast<size_t>(s.pattern_h) * s.pattern_w * s.pattern_c);
      for (auto& v : s.pattern) v = static_cast<float>(rng.uniform());
      s.alpha = 1.0;  // BadNets replaces pixels
      break;
    }
    case data::TriggerKind::blended: {
      s.pattern_h = shape.h;
      s.pattern_w = shape.w;
      s.pattern_c = shape.c;
      s.pattern.resize(static_cast<size_t>(shape.size()));
      for (auto& v : s.pattern) v = static_cast<float>(rng.uniform());
      s.alpha = rng.uniform(0.1, 0.3);
      break;
    }
    case data::TriggerKind::sig:
      s.sig_delta = 0.08;
      s.sig_freq = 6.0;
      break;
    case data::TriggerKind::wanet: {
      s.wanet_grid = 4;
      s.wanet_strength = 0.5;
      s.pattern.resize(static_cast<size_t>(s.wanet_grid) * s.wanet_grid * 2);
      for (auto& v : s.pattern) v = static_cast<float>(rng.uniform());
      break;
    }
    case data::TriggerKind::bpp:
      s.bpp_bits = 3;
      break;
  }
  return s;
}

std::vector<ModelPlan> make_zoo_plan(const ZooConfig& config) {
  if (config.seen_archs.size() < 1) throw ConfigError("zoo: need at least one seen arch");
  if (config.shared_trigger_specs > config.proxy_per_seen_arch)
    throw ConfigError("zoo: shared_trigger_specs cannot exceed proxy_per_seen_arch");
  const ArchSpec& first = config.archs.front();
  const ImageShape& shape = first.input_shape;
  int classes = first.num_classes;

  auto pad = [](int v) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%03d", v);
    return std::string(buf);
  };

  std::vector<ModelPlan> plan;
  // Shared proxy triggers: one spec per attack group, reused across seen archs.
  std::vector<TriggerSpec> shared;
  {
    Rng rng(derive_seed(config.seed, io::fnv1a64("shared_specs", 12)));
    for (int g = 0; g < config.shared_trigger_specs; ++g)
      shared.push_back(data::sample_random_trigger(rng, shape, classes, config.proxy_ranges));
  }
  for (const auto& arch_id : config.seen_archs) {
    for (int k = 0; k < config.benign_per_seen_arch; ++k) {
      ModelPlan p;
      p.model_id = "given_" + arch_id + "_benign_" + pad(k);
      p.arch_id = arch_id;
      p.role = ModelRole::benign;
      p.split_role = SplitRole::given;
      p.seed = derive_seed(config.seed, io::fnv1a64(p.model_id.data(), p.model_id.size()));
      plan.push_back(std::move(p));
    }
    Rng spec_rng(derive_seed(config.seed,
                             io::fnv1a64(("proxy_specs_" + arch_id).data(),
                                         ("proxy_specs_" + arch_id).size())));
    for (int k = 0; k < config.proxy_per_seen_arch; ++k) {
      ModelPlan p;
      p.model_id = "given_" + arch_id + "_proxy_" + pad(k);
      p.arch_id = arch_id;
      p.role = ModelRole::backdoored;
      p.split_role = SplitRole::given;
      if (k < config.shared_trigger_specs) {
        p.trigger = shared[static_cast<size_t>(k)];
        p.group_id = k;
      } else {
        p.trigger = data::sample_random_trigger(spec_rng, shape, classes, config.proxy_ranges);
      }
      p.seed = derive_seed(config.seed, io::fnv1a64(p.model_id.data(), p.model_id.size()));
      plan.push_back(std::move(p));
    }
  }
  std::vector<std::string> target_archs = config.seen_archs;
  target_archs.insert(target_archs.end(), config.unseen_archs.begin(),
                      config.unseen_archs.end());
  for (const auto& arch_id : target_archs) {
    for (int k = 0; k < config.target_benign_per_arch; ++k) {
      ModelPlan p;
      p.model_id = "target_" + arch_id + "_benign_" + pad(k);
      p.arch_id = arch_id;
      p.role = ModelRole::benign;
      p.split_role = SplitRole::target;
      p.seed = derive_seed(config.seed, io::fnv1a64(p.model_id.data(), p.model_id.size()));
      plan.push_back(std::move(p));
    }
    for (const auto& attack : config.attacks) {
      std::string salt = "attack_specs_" + arch_id + "_" + attack.kind;
      Rng spec_rng(derive_seed(config.seed, io::fnv1a64(salt.data(), salt.size())));
      for (int k = 0; k < config.target_attacked_per_arch; ++k) {
        ModelPlan p;
        p.model_id = "target_" + arch_id + "_" + attack.kind + "_" + pad(k);
        p.arch_id = arch_id;
        p.role = ModelRole::backdoored;
        p.split_role = SplitRole::target;
        p.attack_kind = attack.kind;
        p.trigger = sample_attack_spec(attack, spec_rng, shape, classes);
        p.seed = derive_seed(config.seed, io::fnv1a64(p.model_id.data(), p.model_id.size()));
        plan.push_back(std::move(p));
      }
    }
  }
  return plan;
}

struct Interrupted {};

ZooManifest build_zoo(const ZooConfig& config, const LabeledDataset& train_set,
                      const LabeledDataset& test_set, const fs::path& out_dir,
                      int interrupt_after) {
  for (const auto& arch_id : config.seen_archs)
    for (const auto& u : config.unseen_archs)
      if (arch_id == u) throw ConfigError("zoo: arch both seen and unseen: " + arch_id);

  data::DataSplit split = data::split_dataset(train_set, config.attacker_frac,
                                              config.split_seed);
  std::vector<ModelPlan> plan = make_zoo_plan(config);
  fs::create_directories(out_dir / "models");

  auto arch_of = [&](const std::string& id) -> const ArchSpec& {
    for (const auto& a : config.archs)
      if (a.arch_id == id) return a;
    throw ConfigError("zoo: arch not in pool: " + id);
  };

  std::atomic<size_t> next{0};
  std::atomic<int> trained{0};
  std::atomic<bool> stop{false};
  std::mutex fail_mu;
  std::vector<std::string> failures;

  auto run_job = [&](const ModelPlan& p) {
    fs::path wpath = out_dir / "models" / (p.model_id + ".arcw");
    fs::path spath = out_dir / "models" / (p.model_id + ".json");
    if (io::file_exists(wpath) && io::file_exists(spath)) return;  // resume

    if (interrupt_after >= 0 && trained.load() >= interrupt_after) {
      stop.store(true);
      return;
    }

    const ArchSpec& arch = arch_of(p.arch_id);
    const LabeledDataset& base =
        p.split_role == SplitRole::given ? split.defender : split.attacker;
    LabeledDataset train_data = base;
    if (p.trigger) {
      Rng poison_rng(derive_seed(p.seed, 1));
      train_data = data::poison_dataset(base, *p.trigger, poison_rng).dataset;
    }
    Rng init_rng(derive_seed(p.seed, 2));
    auto model = build_arch_model(arch, init_rng);
    train_classifier(*model, train_data, config.train, derive_seed(p.seed, 3));
    save_weights(wpath, arch.arch_id, model->params());

    // Metrics are measured from the saved float32 weights so a resumed build
    // reproduces them bit for bit.
    Blackbox box(arch, wpath);
    json side;
    side["model_id"] = p.model_id;
    side["ba"] = measure_ba(box.as_fn(), test_set);
    if (p.trigger) side["asr"] = measure_asr(box.as_fn(), test_set, *p.trigger);
    io::write_file_atomic(spath, side.dump(2) + "\n");
    trained.fetch_add(1);
  };

  int workers = std::max(1, config.workers);
  std::vector<std::thread> pool;
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      while (!stop.load()) {
        size_t i = next.fetch_add(1);
        if (i >= plan.size()) break;
        try {
          run_job(plan[i]);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(fail_mu);
          failures.push_back(plan[i].model_id + ": " + e.what());
        }
      }
    });
  for (auto& t : pool) t.join();

  if (stop.load())
    throw IoError("zoo build interrupted after " + std::to_string(trained.load()) +
                  " newly trained models (rerun to resume)");

  if (!failures.empty()) {
    std::string log;
    for (const auto& f : failures) log += f + "\n";
    io::write_file_atomic(out_dir / "failures.log", log);
    log_warn("zoo build finished with " + std::to_string(failures.size()) +
             " failed models; see failures.log");
  }

  ZooManifest m;
  m.dataset_fingerprint = data::dataset_fingerprint(train_set);
  m.attacker_frac = config.attacker_frac;
  m.split_seed = config.split_seed;
  m.archs = config.archs;
  m.seen_archs = config.seen_archs;
  m.unseen_archs = config.unseen_archs;
  std::vector<std::vector<std::string>> group_members(
      static_cast<size_t>(std::max(0, config.shared_trigger_specs)));
  std::vector<TriggerSpec> group_specs(group_members.size());
  for (const auto& p : plan) {
    fs::path spath = out_dir / "models" / (p.model_id + ".json");
    if (!io::file_exists(spath)) continue;  // failed model: manifest keeps completed ones
    json side = json::parse(io::read_file(spath));
    ModelRecord r;
    r.model_id = p.model_id;
    r.arch_id = p.arch_id;
    r.role = p.role;
    r.trigger = p.trigger;
    r.weights_ref = "models/" + p.model_id + ".arcw";
    r.ba = side.at("ba").get<double>();
    if (side.contains("asr")) r.asr = side["asr"].get<double>();
    r.train_seed = p.seed;
    r.split_role = p.split_role;
    m.records.push_back(std::move(r));
    if (p.group_id >= 0) {
      group_members[static_cast<size_t>(p.group_id)].push_back(p.model_id);
      group_specs[static_cast<size_t>(p.group_id)] = *p.trigger;
    }
  }
  for (size_t g = 0; g < group_members.size(); ++g) {
    if (group_members[g].size() < 2) continue;
    AttackGroup grp;
    grp.group_id = static_cast<int>(g);
    grp.trigger = group_specs[g];
    grp.model_ids = group_members[g];
    m.attack_groups.push_back(std::move(grp));
  }
  m.validate();
  save_manifest(m, out_dir / "manifest.json");

  std::string csv = "model_id,arch_id,role,ba,asr,seed\n";
  for (const auto& r : m.records) {
    csv += r.model_id + "," + r.arch_id + "," + role_str(r.role) + "," +
           io::fmt_double(r.ba) + "," + (r.asr ? io::fmt_double(*r.asr) : "") + "," +
           std::to_string(r.train_seed) + "\n";
  }
  io::write_file_atomic(out_dir / "metrics.csv", csv);
  return m;
}

}  // namespace arcgen::zoo
