#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "arcgen/adaptive.hpp"
#include "arcgen/common.hpp"
#include "arcgen/config.hpp"
#include "arcgen/dataset.hpp"
#include "arcgen/detector.hpp"
#include "arcgen/endpoint.hpp"
#include "arcgen/evaluate.hpp"
#include "arcgen/io.hpp"
#include "arcgen/report.hpp"
#include "arcgen/tsne.hpp"
#include "arcgen/zoo.hpp"

namespace fs = std::filesystem;
using namespace arcgen;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

cli::RunConfig resolve_config(const Common& common) {
  cli::RunConfig cfg = common.config_path.empty()
                           ? cli::RunConfig::from_json_text("")
                           : cli::load_config(common.config_path);
  for (const auto& o : common.overrides) cfg.apply_override(o);
  const char* env_root = std::getenv("ARCGEN_OUTPUT_ROOT");
  if (env_root != nullptr && *env_root != '\0')
    cfg.apply_override(std::string("output_root=\"") + env_root + "\"");
  return cfg;
}

// Every command leaves a manifest of its inputs beside its outputs.
void write_run_manifest(const fs::path& dir, const std::string& command,
                        const cli::RunConfig& cfg, const fs::path& zoo_dir) {
  json m;
  m["version"] = 1;
  m["command"] = command;
  m["config_hash"] = cfg.hash();
  m["seed"] = cfg.resolved().at("detector").at("seed");
  fs::path zm = zoo_dir / "manifest.json";
  if (io::file_exists(zm)) m["zoo_hash"] = io::fingerprint(io::read_file(zm));
  io::write_file_atomic(dir / "run_manifest.json", m.dump(2) + "\n");
}

eval::ExperimentConfig experiment_config(const cli::RunConfig& cfg,
                                         const fs::path& out_dir) {
  eval::ExperimentConfig e;
  e.zoo_dir = cfg.output_root() / "zoo";
  e.detector = cfg.detector_config();
  e.seeds = cfg.experiment_seeds();
  e.attacks = cfg.experiment_attacks();
  e.out_dir = out_dir;
  e.detector_dir = cfg.output_root() / "detector";
  return e;
}

int run_zoo_build(const Common& common) {
  cli::RunConfig cfg = resolve_config(common);
  auto [train, test] = cfg.load_datasets();
  zoo::ZooConfig zc = cfg.zoo_config(train.shape, train.num_classes);
  fs::path out = cfg.output_root() / "zoo";
  zoo::ZooManifest manifest = zoo::build_zoo(zc, train, test, out);
  write_run_manifest(out, "zoo-build", cfg, out);
  std::printf("zoo: %zu models, %zu attack groups -> %s\n", manifest.records.size(),
              manifest.attack_groups.size(), out.string().c_str());
  return 0;
}

int run_train_detector(const Common& common, const std::string& variant,
                       int64_t seed_flag) {
  cli::RunConfig cfg = resolve_config(common);
  auto [train, test] = cfg.load_datasets();
  (void)test;
  eval::ExperimentConfig e = experiment_config(cfg, cfg.output_root() / "detector");
  uint64_t seed = seed_flag >= 0 ? static_cast<uint64_t>(seed_flag)
                                 : cfg.detector_config().seed;
  eval::ExperimentConfig one = e;
  one.out_dir = e.detector_dir;
  detector::DetectorState state =
      eval::train_or_load_detector(one, train, variant, seed);
  (void)state;
  write_run_manifest(e.detector_dir, "train-detector", cfg, e.zoo_dir);
  std::printf("detector: %s\n",
              eval::detector_state_path(e.detector_dir, variant, seed).string().c_str());
  return 0;
}

int run_detect(const Common& common, const std::string& state_path,
               const std::string& model_id, const std::string& weights,
               const std::string& arch_id, const std::string& endpoint_url,
               int batch_size, int timeout_ms) {
  cli::RunConfig cfg = resolve_config(common);
  fs::path root = cfg.output_root();
  fs::path sp = state_path.empty()
                    ? eval::detector_state_path(root / "detector", "full",
                                                cfg.detector_config().seed)
                    : fs::path(state_path);
  detector::DetectorState state = detector::DetectorState::load(sp);

  zoo::PredictFn fn;
  std::string label;
  if (!model_id.empty()) {
    zoo::ZooManifest manifest = zoo::load_manifest(root / "zoo" / "manifest.json");
    const auto& rec = manifest.record(model_id);
    zoo::Blackbox box(manifest.arch(rec.arch_id), root / "zoo" / rec.weights_ref);
    fn = box.as_fn();
    label = model_id;
  } else if (!weights.empty()) {
    if (arch_id.empty())
      throw ConfigError("detect --weights needs --arch (an arch_id from the zoo manifest)");
    zoo::ZooManifest manifest = zoo::load_manifest(root / "zoo" / "manifest.json");
    zoo::Blackbox box(manifest.arch(arch_id), weights);
    fn = box.as_fn();
    label = fs::path(weights).stem().string();
  } else if (!endpoint_url.empty()) {
    cli::EndpointDescriptor ep;
    ep.url = endpoint_url;
    ep.batch_size = batch_size;
    ep.timeout_ms = timeout_ms;
    fn = cli::remote_blackbox(ep, state.num_classes());
    label = endpoint_url;
  } else {
    throw ConfigError("detect needs one of --model, --weights or --endpoint");
  }

  auto score = detector::detect_score(fn, state);
  std::printf("%s,%s,%s\n", label.c_str(), io::fmt_double(score.score).c_str(),
              io::fmt_double(score.probability).c_str());
  return 0;
}

void require_trained_detectors(const eval::ExperimentConfig& e,
                               const std::vector<std::string>& variants) {
  for (const auto& variant : variants)
    for (uint64_t seed : e.seeds) {
      fs::path p = eval::detector_state_path(e.detector_dir, variant, seed);
      if (!io::file_exists(p))
        throw MissingArtifactError("no trained detector at " + p.string() +
                                   "; run `arcgen train-detector --variant " + variant +
                                   " --seed " + std::to_string(seed) + "` first");
    }
}

int run_evaluate(const Common& common) {
  cli::RunConfig cfg = resolve_config(common);
  auto [train, test] = cfg.load_datasets();
  (void)test;
  fs::path out = cfg.output_root() / "eval";
  eval::ExperimentConfig e = experiment_config(cfg, out);
  require_trained_detectors(e, {"full"});
  eval::ResultTable table = eval::run_experiment(e, train, "full");
  zoo::ZooManifest manifest = zoo::load_manifest(e.zoo_dir / "manifest.json");
  write_run_manifest(out, "evaluate", cfg, e.zoo_dir);
  cli::write_report(out, manifest, cfg.hash());
  std::fputs(table.render_text(manifest).c_str(), stdout);
  return 0;
}

int run_ablate(const Common& common) {
  cli::RunConfig cfg = resolve_config(common);
  auto [train, test] = cfg.load_datasets();
  (void)test;
  fs::path out = cfg.output_root() / "ablate";
  eval::ExperimentConfig e = experiment_config(cfg, out);
  eval::ResultTable table = eval::run_ablation(e, train, cfg.experiment_variants());
  zoo::ZooManifest manifest = zoo::load_manifest(e.zoo_dir / "manifest.json");
  write_run_manifest(out, "ablate", cfg, e.zoo_dir);
  cli::write_report(out, manifest, cfg.hash());
  std::fputs(table.render_text(manifest).c_str(), stdout);
  return 0;
}

int run_attack(const Common& common, const std::string& which) {
  cli::RunConfig cfg = resolve_config(common);
  auto [train, test] = cfg.load_datasets();
  fs::path root = cfg.output_root();
  fs::path out = root / "attack";
  fs::create_directories(out);
  eval::ExperimentConfig e = experiment_config(cfg, out);
  zoo::ZooManifest manifest = zoo::load_manifest(e.zoo_dir / "manifest.json");
  data::DataSplit split =
      data::split_dataset(train, manifest.attacker_frac, manifest.split_seed);

  uint64_t dseed = e.seeds.empty() ? 0 : e.seeds.front();
  fs::path state_path = eval::detector_state_path(e.detector_dir, "full", dseed);
  if (!io::file_exists(state_path))
    throw MissingArtifactError("no trained detector at " + state_path.string() +
                               "; run `arcgen train-detector` first");
  detector::DetectorState state = detector::DetectorState::load(state_path);

  if (which == "conflate" || which == "all") {
    auto cs = cfg.conflate_section();
    adaptive::ConflateConfig cc;
    cc.arch_ids = cs.arch_ids.empty() ? manifest.seen_archs : cs.arch_ids;
    cc.models_per_set = cs.models_per_set;
    cc.lambda_con = cs.lambda_con;
    cc.seed = cs.seed;
    cc.train = zoo::TrainOptions{};
    cc.train.epochs = cs.epochs;
    Rng trig_rng(derive_seed(cs.seed, 0x31));
    zoo::AttackSetting setting;  // badnets
    setting.ratio_min = setting.ratio_max = 0.1;
    cc.trigger = [&] {
      data::TriggerSpec t = data::sample_random_trigger(
          trig_rng, manifest.archs.front().input_shape,
          manifest.archs.front().num_classes);
      t.alpha = 1.0;
      t.poisoning_ratio = 0.1;
      return t;
    }();
    auto run = adaptive::train_conflated(cc, state, manifest, split.attacker, test);
    io::write_file_atomic(out / "conflate_report.csv", run.report.csv());
    adaptive::ConflateConfig control = cc;
    control.lambda_con = 0.0;
    auto ctrl = adaptive::train_conflated(control, state, manifest, split.attacker, test);
    io::write_file_atomic(out / "conflate_control.csv", ctrl.report.csv());
    std::printf("conflate: reports in %s\n", out.string().c_str());
  }

  if (which == "purge" || which == "all") {
    auto ps = cfg.purge_section();
    std::map<std::string, std::vector<std::pair<std::string, double>>> scores_by_variant;
    for (const auto& vname : ps.variants) {
      adaptive::PurgeConfig pc;
      pc.variant = adaptive::purge_variant_from_string(vname);
      pc.lambda_purge = ps.lambda_purge;
      pc.task_weight = ps.task_weight;
      pc.epochs = ps.epochs;
      pc.seed = ps.seed;
      std::vector<std::pair<std::string, double>> scores;
      std::string report_csv;
      for (const auto& arch_id : manifest.seen_archs) {
        int done = 0;
        std::vector<const zoo::ModelRecord*> benign;
        for (const auto* rec : manifest.select(zoo::SplitRole::target))
          if (rec->arch_id == arch_id && rec->role == zoo::ModelRole::benign)
            benign.push_back(rec);
        for (const auto* rec : manifest.select(zoo::SplitRole::target)) {
          if (rec->arch_id != arch_id || rec->role != zoo::ModelRole::backdoored)
            continue;
          if (done >= ps.models_per_arch || benign.empty()) break;
          zoo::TrainableModel mt(manifest.arch(arch_id), e.zoo_dir / rec->weights_ref);
          const auto* brec = benign[static_cast<size_t>(done) % benign.size()];
          zoo::TrainableModel mb(manifest.arch(arch_id), e.zoo_dir / brec->weights_ref);
          auto res = adaptive::purge_finetune(pc, mt, mb, *rec->trigger, state,
                                              split.attacker, test);
          scores.emplace_back(rec->model_id + "__purged", res.post_score);
          report_csv += res.report.csv();
          ++done;
        }
      }
      scores_by_variant[vname] = std::move(scores);
      io::write_file_atomic(out / ("purge_report_" + vname + ".csv"), report_csv);
    }
    auto table =
        adaptive::evaluate_under_attack(manifest, e.zoo_dir, state, scores_by_variant,
                                        dseed);
    io::write_file_atomic(out / "purge_results.csv", table.results_csv());
    std::printf("purge: results in %s\n", out.string().c_str());
  }

  write_run_manifest(out, "attack", cfg, e.zoo_dir);
  return 0;
}

int run_tsne_cmd(const Common& common, const std::string& state_path) {
  cli::RunConfig cfg = resolve_config(common);
  fs::path root = cfg.output_root();
  fs::path sp = state_path.empty()
                    ? eval::detector_state_path(root / "detector", "full",
                                                cfg.detector_config().seed)
                    : fs::path(state_path);
  detector::DetectorState state = detector::DetectorState::load(sp);
  zoo::ZooManifest manifest = zoo::load_manifest(root / "zoo" / "manifest.json");
  std::vector<std::vector<double>> feats;
  std::vector<tsne::EmbeddingMeta> meta;
  for (const auto& rec : manifest.records) {
    zoo::Blackbox box(manifest.arch(rec.arch_id), root / "zoo" / rec.weights_ref);
    auto f = detector::extract_features(box.as_fn(), state, false, nullptr);
    feats.push_back(f.e);
    meta.push_back({rec.model_id, rec.arch_id,
                    rec.role == zoo::ModelRole::benign ? "benign" : "backdoored"});
  }
  fs::path out = root / "tsne";
  fs::create_directories(out);
  tsne::emit_tsne(feats, meta, out / "embedding.csv", out / "embedding.svg");
  write_run_manifest(out, "tsne", cfg, root / "zoo");
  std::printf("tsne: %zu points -> %s\n", feats.size(), out.string().c_str());
  return 0;
}

int run_dataset_synth(const Common& common, const std::string& out_path) {
  cli::RunConfig cfg = resolve_config(common);
  const auto& d = cfg.resolved().at("dataset");
  uint64_t seed = d.at("synthetic_seed").get<uint64_t>();
  auto train = data::make_synthetic_digits(d.at("synthetic_n").get<int>(), seed);
  auto test =
      data::make_synthetic_digits(d.at("synthetic_test_n").get<int>(), derive_seed(seed, 1));
  fs::path base = out_path.empty() ? fs::path("data") : fs::path(out_path);
  fs::create_directories(base);
  data::save_packed(train, base / "synthetic_train.bin");
  data::save_packed(test, base / "synthetic_test.bin");
  std::printf("dataset-synth: %zu train / %zu test -> %s\n", train.size(), test.size(),
              base.string().c_str());
  return 0;
}

int run_report(const Common& common, const std::string& dir) {
  cli::RunConfig cfg = resolve_config(common);
  fs::path run_dir = dir.empty() ? cfg.output_root() / "eval" : fs::path(dir);
  zoo::ZooManifest manifest =
      zoo::load_manifest(cfg.output_root() / "zoo" / "manifest.json");
  cli::write_report(run_dir, manifest, cfg.hash());
  std::printf("report: %s\n", (run_dir / "report.html").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"arcgen: architecture-generalizing black-box backdoor detection lab"};
  app.require_subcommand(1);

  Common common;
  app.add_option("--config", common.config_path, "run configuration (JSON)");
  app.add_option("--override", common.overrides,
                 "config override key.path=value (repeatable)");

  app.add_subcommand("zoo-build", "train the benign/backdoored model zoo");
  app.add_subcommand("train-detector", "train the detection function");
  app.add_subcommand("detect", "score one model (zoo id, weights file or endpoint)");
  app.add_subcommand("evaluate", "score all target models with trained detectors");
  app.add_subcommand("ablate", "run the component-removal variants");
  app.add_subcommand("attack", "run the adaptive attacks against a trained detector");
  app.add_subcommand("tsne", "export a 2-d feature embedding of the zoo");
  app.add_subcommand("dataset-synth", "write the synthetic digits dataset");
  app.add_subcommand("report", "render report.html for a finished run");

  std::string variant = "full";
  int64_t seed_flag = -1;
  auto* td = app.get_subcommand("train-detector");
  td->add_option("--variant", variant, "detector variant (full or an ablation name)");
  td->add_option("--seed", seed_flag, "training seed (default: detector.seed)");

  std::string state_path, model_id, weights, arch_id, endpoint_url;
  int batch_size = 32, timeout_ms = 5000;
  auto* det = app.get_subcommand("detect");
  det->add_option("--state", state_path, "detector state file");
  det->add_option("--model", model_id, "model id from the zoo manifest");
  det->add_option("--weights", weights, "ARCW weights file");
  det->add_option("--arch", arch_id, "arch id for --weights");
  det->add_option("--endpoint", endpoint_url, "remote probability endpoint (http://...)");
  det->add_option("--batch-size", batch_size, "endpoint batch size");
  det->add_option("--timeout-ms", timeout_ms, "endpoint timeout");

  std::string which = "all";
  app.get_subcommand("attack")->add_option("--which", which, "conflate | purge | all");

  std::string tsne_state;
  app.get_subcommand("tsne")->add_option("--state", tsne_state, "detector state file");

  std::string synth_out;
  app.get_subcommand("dataset-synth")->add_option("--out", synth_out, "output directory");

  std::string report_dir;
  app.get_subcommand("report")->add_option("--dir", report_dir, "run directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("zoo-build")) return run_zoo_build(common);
    if (app.got_subcommand("train-detector"))
      return run_train_detector(common, variant, seed_flag);
    if (app.got_subcommand("detect"))
      return run_detect(common, state_path, model_id, weights, arch_id, endpoint_url,
                        batch_size, timeout_ms);
    if (app.got_subcommand("evaluate")) return run_evaluate(common);
    if (app.got_subcommand("ablate")) return run_ablate(common);
    if (app.got_subcommand("attack")) return run_attack(common, which);
    if (app.got_subcommand("tsne")) return run_tsne_cmd(common, tsne_state);
    if (app.got_subcommand("dataset-synth")) return run_dataset_synth(common, synth_out);
    if (app.got_subcommand("report")) return run_report(common, report_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
