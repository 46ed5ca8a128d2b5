#include "arcgen/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "arcgen/common.hpp"
#include "arcgen/io.hpp"

namespace arcgen::eval {

namespace fs = std::filesystem;

// --- AUC ---------------------------------------------------------------------

AucRational auc_rational(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw InvalidSpecError("compute_auc: scores and labels differ in length");
  int64_t n1 = 0, n0 = 0;
  for (int l : labels) (l ? n1 : n0)++;
  if (n1 == 0 || n0 == 0)
    throw InvalidSpecError("compute_auc: both classes must be present");

  size_t n = scores.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Twice the rank sum of positives, using average ranks for ties (kept as
  // exact integers: rank2 of a tie block spanning 1-based ranks [lo, hi] is
  // lo + hi for every member).
  int64_t rank2_sum_pos = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    int64_t rank2 = static_cast<int64_t>(i + 1) + static_cast<int64_t>(j + 1);
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]]) rank2_sum_pos += rank2;
    i = j + 1;
  }
  AucRational r;
  r.num2 = rank2_sum_pos - n1 * (n1 + 1);  // 2*(ranksum - n1(n1+1)/2)
  r.den2 = 2 * n1 * n0;
  return r;
}

double compute_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  return auc_rational(scores, labels).value();
}

// --- result table -------------------------------------------------------------

std::string ResultTable::results_csv() const {
  std::string csv = "approach,variant,attack,arch,seen_flag,seed,auc\n";
  for (const auto& r : rows)
    csv += r.approach + "," + r.variant + "," + r.attack + "," + r.arch + "," +
           r.scope + "," + std::to_string(r.seed) + "," + io::fmt_double(r.auc) + "\n";
  return csv;
}

std::string ResultTable::scores_csv() const {
  std::string csv = "model_id,arch,role,seed,raw_score\n";
  for (const auto& s : scores)
    csv += s.model_id + "," + s.arch + "," + s.role + "," + std::to_string(s.seed) +
           "," + io::fmt_double(s.raw_score) + "\n";
  return csv;
}

std::optional<AggregateCell> ResultTable::cell(const std::string& variant,
                                               const std::string& attack,
                                               const std::string& arch) const {
  std::vector<double> vals;
  for (const auto& r : rows)
    if (r.variant == variant && r.attack == attack && r.arch == arch)
      vals.push_back(r.auc);
  if (vals.empty()) return std::nullopt;
  AggregateCell c;
  c.n = static_cast<int>(vals.size());
  for (double v : vals) c.mean += v;
  c.mean /= c.n;
  for (double v : vals) c.stddev += (v - c.mean) * (v - c.mean);
  c.stddev = c.n > 1 ? std::sqrt(c.stddev / (c.n - 1)) : 0.0;
  return c;
}

std::string ResultTable::render_text(const zoo::ZooManifest& manifest) const {
  std::set<std::string> variants, attacks;
  for (const auto& r : rows) {
    variants.insert(r.variant);
    attacks.insert(r.attack);
  }
  // Table VIII row order for the known variants; anything else alphabetical.
  std::vector<std::string> variant_order;
  for (const auto& v : {"full", "no_sla", "no_dla", "no_sla_dla", "no_arch_rand",
                        "no_als", "baseline"})
    if (variants.count(v)) variant_order.push_back(v);
  for (const auto& v : variants)
    if (std::find(variant_order.begin(), variant_order.end(), v) == variant_order.end())
      variant_order.push_back(v);

  std::vector<std::string> arch_cols = manifest.seen_archs;
  arch_cols.insert(arch_cols.end(), manifest.unseen_archs.begin(),
                   manifest.unseen_archs.end());
  arch_cols.push_back("All");

  std::string out;
  for (const auto& attack : attacks) {
    out += "attack: " + attack + "  (seen: ";
    for (size_t i = 0; i < manifest.seen_archs.size(); ++i)
      out += (i ? ", " : "") + manifest.seen_archs[i];
    out += " | unseen: ";
    for (size_t i = 0; i < manifest.unseen_archs.size(); ++i)
      out += (i ? ", " : "") + manifest.unseen_archs[i];
    out += ")\n";
    out += "  variant";
    for (const auto& a : arch_cols) out += "\t" + a;
    out += "\n";
    for (const auto& v : variant_order) {
      out += "  " + v;
      for (const auto& a : arch_cols) {
        auto c = cell(v, attack, a);
        out += "\t" + (c ? io::fmt_fixed(c->mean, 4) : std::string("-"));
      }
      out += "\n";
    }
    out += "\n";
  }
  return out;
}

// --- experiment runner -----------------------------------------------------------

fs::path detector_state_path(const fs::path& out_dir, const std::string& variant,
                             uint64_t seed) {
  return out_dir / ("detector_" + variant + "_seed" + std::to_string(seed) + ".arcs");
}

detector::DetectorState train_or_load_detector(const ExperimentConfig& config,
                                               const data::LabeledDataset& train_set,
                                               const std::string& variant, uint64_t seed) {
  fs::path cache_dir = config.detector_dir.empty() ? config.out_dir : config.detector_dir;
  fs::path cache = detector_state_path(cache_dir, variant, seed);
  if (io::file_exists(cache)) return detector::DetectorState::load(cache);

  zoo::ZooManifest manifest = zoo::load_manifest(config.zoo_dir / "manifest.json");
  detector::DetectorConfig dcfg = detector::apply_variant(config.detector, variant);
  dcfg.seed = seed;
  data::DataSplit split =
      data::split_dataset(train_set, manifest.attacker_frac, manifest.split_seed);
  detector::TrainResult res =
      detector::train_detector(manifest, config.zoo_dir, split.defender, dcfg);
  fs::create_directories(cache_dir);
  res.state.save(cache);
  io::write_file_atomic(cache_dir / ("loss_log_" + variant + "_seed" +
                                     std::to_string(seed) + ".csv"),
                        detector::loss_log_csv(res.log, dcfg));
  return detector::DetectorState::load(cache);  // scores come from saved bytes
}

static void score_targets(const zoo::ZooManifest& manifest, const fs::path& zoo_dir,
                          detector::DetectorState& state, uint64_t seed,
                          ResultTable& table) {
  for (const auto* rec : manifest.select(zoo::SplitRole::target)) {
    zoo::Blackbox box(manifest.arch(rec->arch_id), zoo_dir / rec->weights_ref);
    auto ds = detector::detect_score(box.as_fn(), state);
    ScoreRow s;
    s.model_id = rec->model_id;
    s.arch = rec->arch_id;
    s.role = rec->role == zoo::ModelRole::benign ? "benign" : "backdoored";
    s.seed = seed;
    s.raw_score = ds.score;
    table.scores.push_back(std::move(s));
  }
}

// Builds per-arch and pooled AUC rows for one (variant, seed) score pass.
static void auc_rows(const zoo::ZooManifest& manifest, const ResultTable& table,
                     const std::string& approach, const std::string& variant,
                     uint64_t seed, const std::vector<std::string>& attacks,
                     ResultTable& out) {
  std::set<std::string> seen(manifest.seen_archs.begin(), manifest.seen_archs.end());
  for (const auto& attack : attacks) {
    // score lookup for this seed
    std::map<std::string, double> score_of;
    for (const auto& s : table.scores)
      if (s.seed == seed) score_of[s.model_id] = s.raw_score;

    struct Pool {
      std::vector<double> scores;
      std::vector<int> labels;
    };
    std::map<std::string, Pool> per_arch;
    Pool all, seen_pool, unseen_pool;
    for (const auto* rec : manifest.select(zoo::SplitRole::target)) {
      bool positive = rec->role == zoo::ModelRole::backdoored;
      if (positive &&
          (!rec->trigger || data::to_string(rec->trigger->kind) != attack))
        continue;  // backdoored targets of other attacks stay out of this pool
      auto it = score_of.find(rec->model_id);
      if (it == score_of.end()) continue;
      int label = positive ? 1 : 0;
      per_arch[rec->arch_id].scores.push_back(it->second);
      per_arch[rec->arch_id].labels.push_back(label);
      all.scores.push_back(it->second);
      all.labels.push_back(label);
      Pool& sp = seen.count(rec->arch_id) ? seen_pool : unseen_pool;
      sp.scores.push_back(it->second);
      sp.labels.push_back(label);
    }
    auto emit = [&](const std::string& arch, const std::string& scope, const Pool& p) {
      bool has0 = false, has1 = false;
      for (int l : p.labels) (l ? has1 : has0) = true;
      if (!has0 || !has1) return;  // cell absent, run continues
      ResultRow r;
      r.approach = approach;
      r.variant = variant;
      r.attack = attack;
      r.arch = arch;
      r.scope = scope;
      r.seed = seed;
      r.auc = compute_auc(p.scores, p.labels);
      out.rows.push_back(std::move(r));
    };
    for (const auto& [arch, pool] : per_arch)
      emit(arch, seen.count(arch) ? "seen" : "unseen", pool);
    emit("seen_pool", "seen", seen_pool);
    emit("unseen_pool", "unseen", unseen_pool);
    emit("All", "all", all);
  }
}

static std::vector<std::string> attacks_present(const zoo::ZooManifest& manifest) {
  std::set<std::string> kinds;
  for (const auto* rec : manifest.select(zoo::SplitRole::target))
    if (rec->trigger) kinds.insert(data::to_string(rec->trigger->kind));
  return {kinds.begin(), kinds.end()};
}

ResultTable run_experiment(const ExperimentConfig& config,
                           const data::LabeledDataset& train_set,
                           const std::string& variant) {
  return run_ablation(config, train_set, {variant});
}

ResultTable run_ablation(const ExperimentConfig& config,
                         const data::LabeledDataset& train_set,
                         const std::vector<std::string>& variants) {
  if (config.seeds.empty()) throw ConfigError("experiment: seeds must be nonempty");
  zoo::ZooManifest manifest = zoo::load_manifest(config.zoo_dir / "manifest.json");
  std::vector<std::string> attacks =
      config.attacks.empty() ? attacks_present(manifest) : config.attacks;
  fs::create_directories(config.out_dir);

  ResultTable combined;
  for (const auto& variant : variants) {
    ResultTable per_variant;
    for (uint64_t seed : config.seeds) {
      detector::DetectorState state =
          train_or_load_detector(config, train_set, variant, seed);
      score_targets(manifest, config.zoo_dir, state, seed, per_variant);
      auc_rows(manifest, per_variant, config.approach, variant, seed, attacks,
               per_variant);
    }
    io::write_file_atomic(config.out_dir / ("scores_" + variant + ".csv"),
                          per_variant.scores_csv());
    combined.rows.insert(combined.rows.end(), per_variant.rows.begin(),
                         per_variant.rows.end());
    combined.scores.insert(combined.scores.end(), per_variant.scores.begin(),
                           per_variant.scores.end());
  }
  io::write_file_atomic(config.out_dir / "results.csv", combined.results_csv());
  io::write_file_atomic(config.out_dir / "table.txt", combined.render_text(manifest));
  return combined;
}

// --- architecture probe -------------------------------------------------------------

double arch_probe_accuracy(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& arch_labels, int n_arch,
                           uint64_t seed) {
  if (features.size() != arch_labels.size() || features.size() < 8)
    throw InvalidSpecError("arch_probe: need >= 8 labelled features");
  int d = static_cast<int>(features.front().size());
  Rng rng(derive_seed(seed, 0xa7c));

  std::vector<size_t> order(features.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  size_t n_test = std::max<size_t>(1, features.size() / 4);
  std::vector<size_t> test_idx(order.begin(), order.begin() + static_cast<long>(n_test));
  std::vector<size_t> train_idx(order.begin() + static_cast<long>(n_test), order.end());

  nn::Sequential probe;
  auto fc1 = std::make_unique<nn::Dense>(d, 64, "probe.fc1");
  nn::kaiming_init(fc1->weight(), d, rng);
  probe.add(std::move(fc1));
  probe.add(std::make_unique<nn::ReLU>());
  auto fc2 = std::make_unique<nn::Dense>(64, n_arch, "probe.fc2");
  nn::kaiming_init(fc2->weight(), 64, rng);
  probe.add(std::move(fc2));

  auto params = probe.params();
  nn::Optimizer optim(nn::OptimConfig{.kind = "adam", .lr = 1e-3}, params);
  const int epochs = 80, batch = 16;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(train_idx);
    for (size_t start = 0; start < train_idx.size(); start += batch) {
      size_t end = std::min(train_idx.size(), start + batch);
      nn::Tensor x({static_cast<int>(end - start), d});
      std::vector<int> y;
      for (size_t i = start; i < end; ++i) {
        std::copy(features[train_idx[i]].begin(), features[train_idx[i]].end(),
                  x.row(static_cast<int>(i - start)));
        y.push_back(arch_labels[train_idx[i]]);
      }
      nn::zero_grads(params);
      nn::Tensor logits = probe.forward(x, true, &rng);
      auto lg = nn::softmax_cross_entropy(logits, y);
      probe.backward(lg.grad);
      optim.step();
    }
  }
  size_t correct = 0;
  for (size_t i : test_idx) {
    nn::Tensor x({1, d});
    std::copy(features[i].begin(), features[i].end(), x.v.begin());
    nn::Tensor logits = probe.forward(x, false, nullptr);
    int best = 0;
    for (int j = 1; j < n_arch; ++j)
      if (logits.v[static_cast<size_t>(j)] > logits.v[static_cast<size_t>(best)]) best = j;
    if (best == arch_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_idx.size());
}

}  // namespace arcgen::eval
