#include "arcgen/detector.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "arcgen/common.hpp"
#include "arcgen/io.hpp"

namespace arcgen::detector {

namespace fs = std::filesystem;
using nlohmann::json;

// --- config -------------------------------------------------------------------

json DetectorConfig::to_json() const {
  return json{{"n_queries", n_queries},
              {"lambda_dla", lambda_dla},
              {"tau_epoch", tau_epoch},
              {"beta_mask", beta_mask},
              {"mask_prob", mask_prob},
              {"epochs", epochs},
              {"batch", batch},
              {"lr", lr},
              {"clip_norm", clip_norm},
              {"sched_step", sched_step},
              {"sched_gamma", sched_gamma},
              {"sched_start_frac", sched_start_frac},
              {"seed", seed},
              {"optimizer", optimizer},
              {"dropout", dropout},
              {"head_hidden", head_hidden},
              {"disc_hidden", disc_hidden},
              {"use_sla", use_sla},
              {"use_dla", use_dla},
              {"use_arch_rand", use_arch_rand},
              {"als_in_extractor", als_in_extractor}};
}

DetectorConfig DetectorConfig::from_json(const json& j) {
  DetectorConfig c;
  c.n_queries = j.value("n_queries", c.n_queries);
  c.lambda_dla = j.value("lambda_dla", c.lambda_dla);
  c.tau_epoch = j.value("tau_epoch", c.tau_epoch);
  c.beta_mask = j.value("beta_mask", c.beta_mask);
  c.mask_prob = j.value("mask_prob", c.mask_prob);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.sched_step = j.value("sched_step", c.sched_step);
  c.sched_gamma = j.value("sched_gamma", c.sched_gamma);
  c.sched_start_frac = j.value("sched_start_frac", c.sched_start_frac);
  c.seed = j.value("seed", c.seed);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.dropout = j.value("dropout", c.dropout);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.disc_hidden = j.value("disc_hidden", c.disc_hidden);
  c.use_sla = j.value("use_sla", c.use_sla);
  c.use_dla = j.value("use_dla", c.use_dla);
  c.use_arch_rand = j.value("use_arch_rand", c.use_arch_rand);
  c.als_in_extractor = j.value("als_in_extractor", c.als_in_extractor);
  return c;
}

const std::vector<std::string> kAblationVariants = {
    "full", "no_sla", "no_dla", "no_sla_dla", "no_arch_rand", "no_als", "baseline"};

DetectorConfig apply_variant(DetectorConfig base, const std::string& variant) {
  if (variant == "full") return base;
  if (variant == "no_sla") {
    base.use_sla = false;
    return base;
  }
  if (variant == "no_dla") {
    base.use_dla = false;
    base.lambda_dla = 0.0;
    return base;
  }
  if (variant == "no_sla_dla") {
    base.use_sla = false;
    base.use_dla = false;
    base.lambda_dla = 0.0;
    return base;
  }
  if (variant == "no_arch_rand") {
    base.use_arch_rand = false;
    return base;
  }
  if (variant == "no_als") {
    // Fairness rule: the identical layer stack moves to the front of the
    // head; the discriminator is dropped with it.
    base.als_in_extractor = false;
    base.use_dla = false;
    base.lambda_dla = 0.0;
    return base;
  }
  if (variant == "baseline") {
    // The plain learning-based baseline: no alignment losses, ALs relocated.
    base.use_sla = false;
    base.use_dla = false;
    base.lambda_dla = 0.0;
    base.als_in_extractor = false;
    return base;
  }
  throw ConfigError("unknown detector variant: " + variant);
}

// --- state ---------------------------------------------------------------------

DetectorState::DetectorState(const DetectorConfig& config, int num_classes,
                             const data::ImageShape& shape,
                             const std::vector<std::string>& seen_archs,
                             const data::LabeledDataset& query_init)
    : config_(config), num_classes_(num_classes), shape_(shape), seen_archs_(seen_archs) {
  if (config_.n_queries < 1) throw ConfigError("detector: n_queries must be >= 1");
  if (query_init.size() == 0)
    throw ConfigError("detector: query initialization set is empty");
  if (!(query_init.shape == shape))
    throw ConfigError("detector: query init shape mismatch");
  q_.init("q", nn::ParamKind::weight,
          {config_.n_queries, shape.h, shape.w, shape.c});
  Rng rng(derive_seed(config_.seed, 0x71));
  size_t stride = static_cast<size_t>(shape.size());
  for (int i = 0; i < config_.n_queries; ++i) {
    size_t pick = static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(query_init.size()) - 1));
    std::copy(query_init.images[pick].begin(), query_init.images[pick].end(),
              q_.value.begin() + static_cast<size_t>(i) * stride);
  }
  build_layers(rng);
}

void DetectorState::build_layers(Rng& rng) {
  using namespace nn;
  int d = feature_dim();
  auto dense = [&](int i, int o, const std::string& name) {
    auto l = std::make_unique<Dense>(i, o, name);
    kaiming_init(l->weight(), i, rng);
    return l;
  };
  auto al_stack = [&](Sequential& seq, const std::string& prefix) {
    seq.add(dense(d, 4 * d, prefix + ".fc1"));
    seq.add(std::make_unique<ReLU>());
    seq.add(std::make_unique<Dropout>(config_.dropout));
    seq.add(dense(4 * d, d, prefix + ".fc2"));
    seq.add(std::make_unique<ReLU>());
    seq.add(std::make_unique<Dropout>(config_.dropout));
  };

  alignment_ = std::make_unique<Sequential>();
  if (config_.als_in_extractor) al_stack(*alignment_, "al");

  head_ = std::make_unique<Sequential>();
  if (!config_.als_in_extractor) al_stack(*head_, "head.al");
  head_->add(dense(d, config_.head_hidden, "head.fc1"));
  head_->add(dense(config_.head_hidden, 1, "head.fc2"));

  discriminator_ = std::make_unique<Sequential>();
  if (config_.use_dla && config_.als_in_extractor) {
    discriminator_->add(std::make_unique<GradientReversal>(config_.lambda_dla));
    discriminator_->add(dense(d, config_.disc_hidden, "ad.fc1"));
    discriminator_->add(std::make_unique<ReLU>());
    discriminator_->add(std::make_unique<Dropout>(config_.dropout));
    discriminator_->add(dense(config_.disc_hidden, n_arch(), "ad.fc2"));
  }
}

nn::Tensor DetectorState::query_batch() const {
  nn::Tensor t(q_.dims);
  t.v = q_.value;
  return t;
}

void DetectorState::clamp_queries() {
  for (double& v : q_.value) {
    if (!std::isfinite(v)) throw NumericalError("detector: query became non-finite");
    v = std::min(1.0, std::max(0.0, v));
  }
}

std::vector<nn::Param*> DetectorState::trainable_params() {
  std::vector<nn::Param*> out{&q_};
  for (auto* p : alignment_->params()) out.push_back(p);
  for (auto* p : head_->params()) out.push_back(p);
  for (auto* p : discriminator_->params()) out.push_back(p);
  return out;
}

std::vector<nn::Param*> DetectorState::extractor_params() {
  std::vector<nn::Param*> out{&q_};
  for (auto* p : alignment_->params()) out.push_back(p);
  return out;
}

int64_t DetectorState::g_param_count() {
  std::vector<nn::Param*> g{&q_};
  for (auto* p : alignment_->params()) g.push_back(p);
  for (auto* p : head_->params()) g.push_back(p);
  return nn::param_count(g);
}

void DetectorState::save(const fs::path& path) const {
  json header;
  header["version"] = 1;
  header["config"] = config_.to_json();
  header["num_classes"] = num_classes_;
  header["input_shape"] = {shape_.h, shape_.w, shape_.c};
  header["seen_archs"] = seen_archs_;
  header["epoch"] = epoch_;
  std::string hdr = header.dump();
  std::string out;
  out += "ARCS";
  io::put_u32(out, 1);
  io::put_u32(out, static_cast<uint32_t>(hdr.size()));
  out += hdr;
  auto self = const_cast<DetectorState*>(this);
  nn::append_params(out, self->trainable_params());
  io::write_file_atomic(path, out);
}

DetectorState DetectorState::load(const fs::path& path) {
  if (!io::file_exists(path))
    throw MissingArtifactError("detector state not found: " + path.string() +
                               " (run `arcgen train-detector` first)");
  std::string in = io::read_file(path);
  if (in.size() < 12 || in.compare(0, 4, "ARCS") != 0)
    throw IoError("not an ARCS detector state: " + path.string());
  size_t off = 4;
  if (io::get_u32(in, off) != 1) throw IoError("unsupported ARCS version");
  uint32_t hlen = io::get_u32(in, off);
  json header = json::parse(in.substr(off, hlen));
  off += hlen;
  DetectorState s;
  s.config_ = DetectorConfig::from_json(header.at("config"));
  s.num_classes_ = header.at("num_classes").get<int>();
  s.shape_ = {header.at("input_shape").at(0).get<int>(),
              header.at("input_shape").at(1).get<int>(),
              header.at("input_shape").at(2).get<int>()};
  s.seen_archs_ = header.at("seen_archs").get<std::vector<std::string>>();
  s.epoch_ = header.at("epoch").get<int>();
  s.q_.init("q", nn::ParamKind::weight,
            {s.config_.n_queries, s.shape_.h, s.shape_.w, s.shape_.c});
  Rng rng(0);
  s.build_layers(rng);
  nn::read_params(in, off, s.trainable_params());
  return s;
}

DetectorState DetectorState::clone() const {
  DetectorState s;
  s.config_ = config_;
  s.num_classes_ = num_classes_;
  s.shape_ = shape_;
  s.seen_archs_ = seen_archs_;
  s.epoch_ = epoch_;
  s.q_ = q_;
  auto al = alignment_->clone();
  s.alignment_.reset(dynamic_cast<nn::Sequential*>(al.release()));
  auto hd = head_->clone();
  s.head_.reset(dynamic_cast<nn::Sequential*>(hd.release()));
  auto dc = discriminator_->clone();
  s.discriminator_.reset(dynamic_cast<nn::Sequential*>(dc.release()));
  return s;
}

// --- feature extraction ------------------------------------------------------------

std::vector<double> concat_probs(const zoo::PredictFn& model, const nn::Tensor& queries,
                                 int num_classes) {
  nn::Tensor probs = model(queries);
  if (static_cast<int>(probs.stride0()) != num_classes)
    throw NumericalError("extract_features: model class count mismatch (got " +
                         std::to_string(probs.stride0()) + ", expected " +
                         std::to_string(num_classes) + ")");
  for (double v : probs.v)
    if (!std::isfinite(v))
      throw NumericalError("extract_features: model produced non-finite output");
  return probs.v;
}

Features extract_features(const zoo::PredictFn& model, DetectorState& state,
                          bool train_mode, Rng* rng) {
  Features f;
  f.p = concat_probs(model, state.query_batch(), state.num_classes());
  if (!state.has_alignment()) {
    f.e = f.p;
    return f;
  }
  nn::Tensor pt({1, state.feature_dim()});
  pt.v = f.p;
  nn::Tensor e = state.alignment().forward(pt, train_mode, rng);
  f.e = e.v;
  return f;
}

DetectScore detect_score(const zoo::PredictFn& model, DetectorState& state) {
  Features f = extract_features(model, state, false, nullptr);
  nn::Tensor e({1, state.feature_dim()});
  e.v = f.e;
  nn::Tensor s = state.head().forward(e, false, nullptr);
  double score = s.v.at(0);
  return {score, 1.0 / (1.0 + std::exp(-score))};
}

// --- losses --------------------------------------------------------------------------

double loss_target(double score, int label) {
  return std::log1p(std::exp(-std::abs(score))) + std::max(score, 0.0) -
         score * static_cast<double>(label);
}

double loss_target_batch(const std::vector<double>& scores, const std::vector<int>& labels) {
  double sum = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) sum += loss_target(scores[i], labels[i]);
  return sum / static_cast<double>(std::max<size_t>(1, scores.size()));
}

double loss_discriminator(const nn::Tensor& arch_logits, const std::vector<int>& true_arch) {
  auto lg = nn::softmax_cross_entropy(arch_logits, true_arch);
  return lg.loss;
}

double loss_dla(const nn::Tensor& arch_logits, const std::vector<int>& true_arch) {
  return -loss_discriminator(arch_logits, true_arch);
}

double cosine_distance(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw InvalidSpecError("cosine_distance: length mismatch");
  double uu = 0, vv = 0, uv = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0)
    throw InvalidSpecError("cosine_distance: undefined for zero vector");
  return 1.0 - uv / (std::sqrt(uu) * std::sqrt(vv));
}

// Epsilon-guarded variant for training passes: dropout can zero a whole
// feature row, and the pair then contributes distance 1 with a large (norm-
// clipped) gradient instead of aborting the run.
static const double kCosEps = 1e-8;

double cosine_distance_training(const std::vector<double>& u,
                                const std::vector<double>& v) {
  double uu = 0, vv = 0, uv = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  double nu = std::max(std::sqrt(uu), kCosEps), nv = std::max(std::sqrt(vv), kCosEps);
  return 1.0 - uv / (nu * nv);
}

std::vector<double> cosine_distance_grad_u(const std::vector<double>& u,
                                           const std::vector<double>& v) {
  double uu = 0, vv = 0, uv = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  double nu = std::max(std::sqrt(uu), kCosEps), nv = std::max(std::sqrt(vv), kCosEps);
  std::vector<double> g(u.size());
  for (size_t i = 0; i < u.size(); ++i)
    g[i] = uv * u[i] / (nu * nu * nu * nv) - v[i] / (nu * nv);
  return g;
}

double loss_sla(const std::vector<std::vector<std::vector<double>>>& group_features) {
  double total = 0.0;
  for (const auto& group : group_features) {
    size_t n = group.size();
    if (n < 2) {
      log_warn("loss_sla: skipping group of size " + std::to_string(n));
      continue;
    }
    double sum = 0.0;
    for (size_t k = 0; k < n; ++k)
      for (size_t l = 0; l < n; ++l) {
        if (k == l) continue;
        sum += cosine_distance(group[k], group[l]);
      }
    total += sum / (static_cast<double>(n) * static_cast<double>(n - 1));
  }
  return total;
}

// --- given-model loading ----------------------------------------------------------------

std::vector<GivenModel> load_given_models(const zoo::ZooManifest& manifest,
                                          const fs::path& zoo_dir) {
  std::vector<GivenModel> out;
  for (const auto* rec : manifest.select(zoo::SplitRole::given)) {
    GivenModel g;
    g.model_id = rec->model_id;
    g.label = rec->role == zoo::ModelRole::backdoored ? 1 : 0;
    auto it = std::find(manifest.seen_archs.begin(), manifest.seen_archs.end(),
                        rec->arch_id);
    if (it == manifest.seen_archs.end())
      throw ConfigError("given model " + rec->model_id + " has non-seen arch " +
                        rec->arch_id);
    g.arch_index = static_cast<int>(it - manifest.seen_archs.begin());
    g.model = std::make_unique<zoo::TrainableModel>(manifest.arch(rec->arch_id),
                                                    zoo_dir / rec->weights_ref);
    out.push_back(std::move(g));
  }
  return out;
}

// --- batch pass ----------------------------------------------------------------------------

BatchPassResult detector_batch_pass(DetectorState& state,
                                    const std::vector<GivenModel*>& batch,
                                    const BatchPassOptions& opts, Rng* rng) {
  const int b = static_cast<int>(batch.size());
  const int d = state.feature_dim();
  const int n_in = state.config().n_queries;
  const int classes = state.num_classes();
  nn::Tensor queries = state.query_batch();

  nn::Tensor pmat({b, d});
  std::vector<int> labels_i(static_cast<size_t>(b));
  std::vector<double> labels_d(static_cast<size_t>(b));
  std::vector<int> arch_idx(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    nn::Tensor probs = batch[static_cast<size_t>(i)]->model->forward_probs(queries);
    for (double v : probs.v)
      if (!std::isfinite(v))
        throw NumericalError("detector: model output non-finite during training");
    std::copy(probs.v.begin(), probs.v.end(), pmat.row(i));
    labels_i[static_cast<size_t>(i)] = batch[static_cast<size_t>(i)]->label;
    labels_d[static_cast<size_t>(i)] = batch[static_cast<size_t>(i)]->label;
    arch_idx[static_cast<size_t>(i)] = batch[static_cast<size_t>(i)]->arch_index;
  }

  bool train_mode = rng != nullptr;
  nn::Tensor e = state.has_alignment() ? state.alignment().forward(pmat, train_mode, rng)
                                       : pmat;

  BatchPassResult res;
  nn::Tensor de({b, d});
  if (opts.use_target) {
    nn::Tensor scores = state.head().forward(e, train_mode, rng);
    auto lt = nn::bce_with_logits(scores, labels_d);
    res.lt = lt.loss;
    nn::Tensor de_head = state.head().backward(lt.grad);
    for (size_t i = 0; i < de.v.size(); ++i) de.v[i] += de_head.v[i];
  }
  if (opts.use_disc && state.discriminator().depth() > 0) {
    auto* grl = dynamic_cast<nn::GradientReversal*>(&state.discriminator().layer(0));
    double saved = grl->lambda();
    grl->set_lambda(opts.grl_lambda);
    nn::Tensor logits = state.discriminator().forward(e, train_mode, rng);
    auto lad = nn::softmax_cross_entropy(logits, arch_idx);
    res.lad = lad.loss;
    nn::Tensor de_disc = state.discriminator().backward(lad.grad);
    for (size_t i = 0; i < de.v.size(); ++i) de.v[i] += de_disc.v[i];
    grl->set_lambda(saved);
  }

  nn::Tensor dp = state.has_alignment() ? state.alignment().backward(de) : de;
  for (int i = 0; i < b; ++i) {
    nn::Tensor dprobs({n_in, classes});
    std::copy(dp.row(i), dp.row(i) + d, dprobs.v.begin());
    auto* model = batch[static_cast<size_t>(i)]->model.get();
    nn::zero_grads(model->params());  // zoo weights are frozen; grads are discarded
    nn::Tensor dq = model->backward_to_input(dprobs);
    for (size_t k = 0; k < dq.v.size(); ++k) state.queries().grad[k] += dq.v[k];
  }
  return res;
}

double sla_group_pass(DetectorState& state, const std::vector<GivenModel*>& group,
                      Rng* rng) {
  const size_t n = group.size();
  if (n < 2) {
    log_warn("sla: skipping group of size " + std::to_string(n));
    return 0.0;
  }
  const int d = state.feature_dim();
  const int n_in = state.config().n_queries;
  const int classes = state.num_classes();
  nn::Tensor queries = state.query_batch();

  nn::Tensor pmat({static_cast<int>(n), d});
  for (size_t i = 0; i < n; ++i) {
    nn::Tensor probs = group[i]->model->forward_probs(queries);
    std::copy(probs.v.begin(), probs.v.end(), pmat.row(static_cast<int>(i)));
  }
  bool train_mode = rng != nullptr;
  nn::Tensor e = state.has_alignment() ? state.alignment().forward(pmat, train_mode, rng)
                                       : pmat;

  std::vector<std::vector<double>> feats(n);
  for (size_t i = 0; i < n; ++i)
    feats[i].assign(e.row(static_cast<int>(i)), e.row(static_cast<int>(i)) + d);

  double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
  double loss = 0.0;
  nn::Tensor de({static_cast<int>(n), d});
  for (size_t a = 0; a < n; ++a)
    for (size_t bidx = 0; bidx < n; ++bidx) {
      if (a == bidx) continue;
      loss += cosine_distance_training(feats[a], feats[bidx]);
      auto ga = cosine_distance_grad_u(feats[a], feats[bidx]);
      auto gb = cosine_distance_grad_u(feats[bidx], feats[a]);
      double* da = de.row(static_cast<int>(a));
      double* db = de.row(static_cast<int>(bidx));
      for (int k = 0; k < d; ++k) {
        da[k] += norm * ga[static_cast<size_t>(k)];
        db[k] += norm * gb[static_cast<size_t>(k)];
      }
    }
  loss *= norm;

  nn::Tensor dp = state.has_alignment() ? state.alignment().backward(de) : de;
  for (size_t i = 0; i < n; ++i) {
    nn::Tensor dprobs({n_in, classes});
    std::copy(dp.row(static_cast<int>(i)), dp.row(static_cast<int>(i)) + d,
              dprobs.v.begin());
    nn::zero_grads(group[i]->model->params());
    nn::Tensor dq = group[i]->model->backward_to_input(dprobs);
    for (size_t k = 0; k < dq.v.size(); ++k) state.queries().grad[k] += dq.v[k];
  }
  return loss;
}

// --- training ---------------------------------------------------------------------------------

static double eval_target_loss(DetectorState& state, std::vector<GivenModel>& models) {
  std::vector<double> scores;
  std::vector<int> labels;
  nn::Tensor queries = state.query_batch();
  for (auto& g : models) {
    nn::Tensor probs = g.model->forward_probs(queries);
    nn::Tensor p({1, state.feature_dim()});
    p.v = probs.v;
    nn::Tensor e = state.has_alignment() ? state.alignment().forward(p, false, nullptr) : p;
    nn::Tensor s = state.head().forward(e, false, nullptr);
    scores.push_back(s.v.at(0));
    labels.push_back(g.label);
  }
  return loss_target_batch(scores, labels);
}

std::string loss_log_csv(const std::vector<LossRow>& log, const DetectorConfig& config) {
  std::string csv = "epoch,batch,L_t";
  if (config.use_dla) csv += ",L_ad,L_dla";
  if (config.use_sla) csv += ",L_sla";
  csv += "\n";
  for (const auto& r : log) {
    csv += std::to_string(r.epoch) + "," + std::to_string(r.batch) + "," +
           io::fmt_double(r.lt);
    if (config.use_dla) {
      csv += "," + (r.lad ? io::fmt_double(*r.lad) : std::string());
      csv += "," + (r.ldla ? io::fmt_double(*r.ldla) : std::string());
    }
    if (config.use_sla) csv += "," + (r.lsla ? io::fmt_double(*r.lsla) : std::string());
    csv += "\n";
  }
  return csv;
}

TrainResult train_detector(const zoo::ZooManifest& manifest, const fs::path& zoo_dir,
                           const data::LabeledDataset& query_init,
                           const DetectorConfig& config) {
  if (manifest.seen_archs.size() < 2)
    throw ConfigError("train_detector: need >= 2 seen architectures");
  if (config.use_sla && manifest.attack_groups.empty())
    throw ConfigError(
        "train_detector: sample-level alignment enabled but the zoo has no "
        "attack groups");

  std::vector<GivenModel> models = load_given_models(manifest, zoo_dir);
  bool any_benign = false, any_backdoored = false;
  for (const auto& m : models) (m.label ? any_backdoored : any_benign) = true;
  if (!any_benign || !any_backdoored)
    throw ConfigError("train_detector: zoo needs both benign and backdoored given models");

  const auto& arch0 = manifest.archs.front();
  DetectorState state(config, arch0.num_classes, arch0.input_shape,
                      manifest.seen_archs, query_init);

  // Attack groups resolved to model indices once.
  std::vector<std::vector<size_t>> groups;
  for (const auto& g : manifest.attack_groups) {
    std::vector<size_t> idx;
    for (const auto& id : g.model_ids)
      for (size_t i = 0; i < models.size(); ++i)
        if (models[i].model_id == id) idx.push_back(i);
    groups.push_back(std::move(idx));
  }

  nn::OptimConfig ocfg;
  ocfg.lr = config.lr;
  if (config.optimizer == "sgd") {
    ocfg.kind = "sgd";
    ocfg.momentum = 0.0;
  } else {
    ocfg.kind = "adam";
    ocfg.amsgrad = config.optimizer == "adam_amsgrad";
  }
  auto params = state.trainable_params();
  nn::Optimizer optim(ocfg, params);
  auto extractor = state.extractor_params();

  TrainResult result;
  result.initial_lt = eval_target_loss(state, models);

  Rng rng(derive_seed(config.seed, 0x7e));
  DetectorState last_good = state.clone();
  std::vector<LossRow> log;

  int sched_start = static_cast<int>(std::floor(config.sched_start_frac * config.epochs));
  auto lr_scale_at = [&](int epoch) {
    if (epoch < sched_start || config.sched_step <= 0) return 1.0;
    int steps = 1 + (epoch - sched_start) / config.sched_step;
    return std::pow(config.sched_gamma, steps);
  };

  std::vector<size_t> order(models.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double lr_scale = lr_scale_at(epoch);

    // Architecture randomization: each given model independently trains as a
    // freshly masked copy this epoch with probability mask_prob. Stored zoo
    // weights are never touched.
    std::vector<GivenModel> masked_holders;
    masked_holders.reserve(models.size());
    std::vector<GivenModel*> effective(models.size());
    for (size_t i = 0; i < models.size(); ++i) {
      if (config.use_arch_rand && rng.bernoulli(config.mask_prob)) {
        GivenModel g;
        g.label = models[i].label;
        g.arch_index = models[i].arch_index;
        g.model_id = models[i].model_id;
        g.model = models[i].model->masked_copy(config.beta_mask, rng);
        masked_holders.push_back(std::move(g));
        effective[i] = &masked_holders.back();
      } else {
        effective[i] = &models[i];
      }
    }

    rng.shuffle(order);
    size_t first_row = log.size();
    int batch_index = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch), ++batch_index) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch));
      std::vector<GivenModel*> batch;
      for (size_t i = start; i < end; ++i) batch.push_back(effective[order[i]]);

      nn::zero_grads(params);
      BatchPassOptions opts;
      opts.use_target = true;
      opts.use_disc = config.use_dla && state.discriminator().depth() > 0;
      opts.grl_lambda = config.lambda_dla;
      BatchPassResult bp = detector_batch_pass(state, batch, opts, &rng);

      if (!std::isfinite(bp.lt) || (opts.use_disc && !std::isfinite(bp.lad)))
        throw TrainingDiverged("detector training diverged at epoch " +
                                   std::to_string(epoch),
                               std::move(last_good));
      nn::clip_global_norm(params, config.clip_norm);
      optim.step(lr_scale);
      state.clamp_queries();

      LossRow row;
      row.epoch = epoch;
      row.batch = batch_index;
      row.lt = bp.lt;
      if (opts.use_disc) {
        row.lad = bp.lad;
        row.ldla = -bp.lad;
      }
      log.push_back(row);
    }

    if (config.use_sla && config.tau_epoch > 0 && epoch % config.tau_epoch == 0 &&
        !groups.empty()) {
      double sla_sum = 0.0;
      int sla_count = 0;
      for (const auto& gidx : groups) {
        std::vector<GivenModel*> group;
        for (size_t i : gidx) group.push_back(&models[i]);
        if (group.size() < 2) continue;
        nn::zero_grads(params);
        double l = sla_group_pass(state, group, &rng);
        if (!std::isfinite(l))
          throw TrainingDiverged("sample-level alignment diverged at epoch " +
                                     std::to_string(epoch),
                                 std::move(last_good));
        nn::clip_global_norm(extractor, config.clip_norm);
        optim.step(lr_scale, &extractor);
        state.clamp_queries();
        sla_sum += l;
        ++sla_count;
      }
      if (sla_count > 0) {
        double mean = sla_sum / sla_count;
        for (size_t i = first_row; i < log.size(); ++i) log[i].lsla = mean;
      }
    }

    state.set_epoch(epoch + 1);
    last_good = state.clone();
  }

  result.final_lt = eval_target_loss(state, models);
  result.state = std::move(state);
  result.log = std::move(log);
  return result;
}

}  // namespace arcgen::detector
