#include "arcgen/config.hpp"

#include <algorithm>

#include "arcgen/common.hpp"
#include "arcgen/io.hpp"

namespace arcgen::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json RunConfig::defaults() {
  json j;
  j["version"] = 1;
  j["output_root"] = "runs";
  j["dataset"] = {
      {"name", "digits"},
      {"kind", "packed"},  // packed | image_dir | synthetic
      {"path", "data/digits_train.bin"},
      {"test_path", "data/digits_test.bin"},
      {"synthetic_n", 4000},
      {"synthetic_test_n", 1000},
      {"synthetic_seed", 12345},
      {"split_seed", 0},
  };
  j["zoo"] = {
      {"seen_archs", json::array({"cnn", "cnn_bn", "res_cnn"})},
      {"unseen_archs", json::array({"mlp", "dw_cnn"})},
      {"arch_params", json::object()},
      {"benign_per_seen_arch", 32},
      {"proxy_per_seen_arch", 32},
      {"shared_trigger_specs", 4},
      {"target_benign_per_arch", 16},
      {"target_attacked_per_arch", 16},
      {"attacks", json::array({json{{"kind", "badnets"},
                                    {"ratio_min", 0.05},
                                    {"ratio_max", 0.2}}})},
      {"proxy",
       {{"size_min", 2},
        {"size_max", -1},
        {"alpha_min", 0.2},
        {"alpha_max", 1.0},
        {"ratio_min", 0.05},
        {"ratio_max", 0.2}}},
      {"train",
       {{"epochs", 8}, {"batch", 32}, {"optimizer", "adam"}, {"lr", 0.005},
        {"momentum", 0.9}}},
      {"attacker_frac", 0.55},
      {"workers", 2},
      {"seed", 0},
  };
  j["detector"] = detector::DetectorConfig{}.to_json();
  j["experiment"] = {
      {"seeds", json::array({0, 1, 2, 3, 4})},  // 5 repetitions, average reported
      {"attacks", json::array()},
      {"variants", json::array({"full", "no_sla", "no_dla", "no_sla_dla",
                                "no_arch_rand", "no_als"})},
  };
  j["attack"] = {
      {"conflate",
       {{"arch_ids", json::array()},
        {"models_per_set", 2},
        {"lambda_con", 1.0},
        {"epochs", 8},
        {"seed", 0}}},
      {"purge",
       {{"variants", json::array({"output", "features", "detection"})},
        {"lambda_purge", 1.0},
        {"task_weight", 1.0},
        {"epochs", 5},
        {"models_per_arch", 8},
        {"seed", 0}}},
  };
  return j;
}

// Keys whose subobjects are free-form (validated only by their consumers).
static bool free_form(const std::string& path) {
  return path == "zoo.arch_params";
}

static bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

static void validate_against(const json& user, const json& schema,
                             const std::string& path,
                             std::vector<std::string>& errors) {
  if (user.is_object()) {
    if (!schema.is_object()) {
      errors.push_back(path + ": expected " + std::string(schema.type_name()) +
                       ", got object");
      return;
    }
    for (auto it = user.begin(); it != user.end(); ++it) {
      std::string sub = path.empty() ? it.key() : path + "." + it.key();
      if (!schema.contains(it.key())) {
        errors.push_back(sub + ": unknown key");
        continue;
      }
      if (free_form(sub)) continue;
      validate_against(it.value(), schema.at(it.key()), sub, errors);
    }
    return;
  }
  if (user.is_array()) {
    if (!schema.is_array()) {
      errors.push_back(path + ": expected " + std::string(schema.type_name()) +
                       ", got array");
      return;
    }
    if (!schema.empty()) {
      for (size_t i = 0; i < user.size(); ++i)
        validate_against(user.at(i), schema.at(0), path + "[" + std::to_string(i) + "]",
                         errors);
    }
    return;
  }
  if (!schema.is_null() && !same_kind(user, schema))
    errors.push_back(path + ": expected " + std::string(schema.type_name()) + ", got " +
                     std::string(user.type_name()));
}

static void deep_merge(json& base, const json& overlay) {
  if (!overlay.is_object() || !base.is_object()) {
    base = overlay;
    return;
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (base.contains(it.key()) && base.at(it.key()).is_object() &&
        it.value().is_object()) {
      deep_merge(base.at(it.key()), it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json user;
  std::string trimmed = text;
  trimmed.erase(std::remove_if(trimmed.begin(), trimmed.end(),
                               [](unsigned char c) { return std::isspace(c); }),
                trimmed.end());
  if (trimmed.empty()) {
    user = json::object();
  } else {
    try {
      user = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
  }
  if (!user.is_object()) throw ConfigError("config root must be a JSON object");

  json schema = defaults();
  if (user.contains("version") && user["version"].is_number() &&
      user["version"].get<int>() != 1)
    throw ConfigError("config: unsupported schema version " +
                      user["version"].dump() + " (this build understands 1)");
  std::vector<std::string> errors;
  validate_against(user, schema, "", errors);
  if (!errors.empty()) {
    std::string msg = "config schema violations:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  RunConfig c;
  c.resolved_ = schema;
  deep_merge(c.resolved_, user);
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!io::file_exists(path))
    throw ConfigError("config file not found: " + path.string());
  return RunConfig::from_json_text(io::read_file(path));
}

std::string RunConfig::hash() const { return io::fingerprint(resolved_.dump()); }

void RunConfig::apply_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like key.path=value: " + assignment);
  std::string key = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;  // plain string
  }
  std::vector<std::string> parts;
  {
    std::string cur;
    for (char c : key) {
      if (c == '.') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    parts.push_back(cur);
  }
  json patch = parsed;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    json wrapped = json::object();
    wrapped[*it] = patch;
    patch = wrapped;
  }
  std::vector<std::string> errors;
  validate_against(patch, defaults(), "", errors);
  if (!errors.empty()) {
    std::string msg = "override rejected:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  deep_merge(resolved_, patch);
}

fs::path RunConfig::output_root() const {
  return fs::path(resolved_.at("output_root").get<std::string>());
}

std::pair<data::LabeledDataset, data::LabeledDataset> RunConfig::load_datasets() const {
  const json& d = resolved_.at("dataset");
  std::string kind = d.at("kind").get<std::string>();
  if (kind == "synthetic") {
    uint64_t seed = d.at("synthetic_seed").get<uint64_t>();
    auto train = data::make_synthetic_digits(d.at("synthetic_n").get<int>(), seed);
    auto test = data::make_synthetic_digits(d.at("synthetic_test_n").get<int>(),
                                            derive_seed(seed, 1));
    return {std::move(train), std::move(test)};
  }
  if (kind == "packed") {
    auto train = data::load_packed(d.at("path").get<std::string>());
    auto test = data::load_packed(d.at("test_path").get<std::string>());
    return {std::move(train), std::move(test)};
  }
  if (kind == "image_dir") {
    auto train = data::load_image_dir(d.at("path").get<std::string>());
    auto test = data::load_image_dir(d.at("test_path").get<std::string>());
    return {std::move(train), std::move(test)};
  }
  throw ConfigError("dataset.kind must be packed, image_dir or synthetic");
}

zoo::ZooConfig RunConfig::zoo_config(const data::ImageShape& shape,
                                     int num_classes) const {
  const json& z = resolved_.at("zoo");
  zoo::ZooConfig c;
  c.archs = zoo::default_arch_pool(shape, num_classes);
  const json& overrides = z.at("arch_params");
  for (auto& arch : c.archs)
    if (overrides.contains(arch.arch_id)) arch.builder_params = overrides[arch.arch_id];
  c.seen_archs = z.at("seen_archs").get<std::vector<std::string>>();
  c.unseen_archs = z.at("unseen_archs").get<std::vector<std::string>>();
  c.benign_per_seen_arch = z.at("benign_per_seen_arch").get<int>();
  c.proxy_per_seen_arch = z.at("proxy_per_seen_arch").get<int>();
  c.shared_trigger_specs = z.at("shared_trigger_specs").get<int>();
  c.target_benign_per_arch = z.at("target_benign_per_arch").get<int>();
  c.target_attacked_per_arch = z.at("target_attacked_per_arch").get<int>();
  c.attacks.clear();
  for (const auto& a : z.at("attacks"))
    c.attacks.push_back(zoo::AttackSetting::from_json(a));
  const json& p = z.at("proxy");
  c.proxy_ranges = {p.at("size_min").get<int>(), p.at("size_max").get<int>(),
                    p.at("alpha_min").get<double>(), p.at("alpha_max").get<double>(),
                    p.at("ratio_min").get<double>(), p.at("ratio_max").get<double>()};
  c.train = zoo::TrainOptions::from_json(z.at("train"));
  c.attacker_frac = z.at("attacker_frac").get<double>();
  c.split_seed = resolved_.at("dataset").at("split_seed").get<uint64_t>();
  c.seed = z.at("seed").get<uint64_t>();
  c.workers = z.at("workers").get<int>();

  std::vector<std::string> wanted = c.seen_archs;
  wanted.insert(wanted.end(), c.unseen_archs.begin(), c.unseen_archs.end());
  std::vector<zoo::ArchSpec> pool;
  for (const auto& id : wanted) {
    auto it = std::find_if(c.archs.begin(), c.archs.end(),
                           [&](const zoo::ArchSpec& a) { return a.arch_id == id; });
    if (it == c.archs.end()) throw ConfigError("zoo: unknown architecture " + id);
    pool.push_back(*it);
  }
  c.archs = std::move(pool);
  return c;
}

detector::DetectorConfig RunConfig::detector_config() const {
  return detector::DetectorConfig::from_json(resolved_.at("detector"));
}

std::vector<uint64_t> RunConfig::experiment_seeds() const {
  return resolved_.at("experiment").at("seeds").get<std::vector<uint64_t>>();
}

std::vector<std::string> RunConfig::experiment_variants() const {
  return resolved_.at("experiment").at("variants").get<std::vector<std::string>>();
}

std::vector<std::string> RunConfig::experiment_attacks() const {
  return resolved_.at("experiment").at("attacks").get<std::vector<std::string>>();
}

RunConfig::ConflateSection RunConfig::conflate_section() const {
  const json& a = resolved_.at("attack").at("conflate");
  ConflateSection s;
  s.arch_ids = a.at("arch_ids").get<std::vector<std::string>>();
  s.models_per_set = a.at("models_per_set").get<int>();
  s.lambda_con = a.at("lambda_con").get<double>();
  s.epochs = a.at("epochs").get<int>();
  s.seed = a.at("seed").get<uint64_t>();
  return s;
}

RunConfig::PurgeSection RunConfig::purge_section() const {
  const json& a = resolved_.at("attack").at("purge");
  PurgeSection s;
  s.variants = a.at("variants").get<std::vector<std::string>>();
  s.lambda_purge = a.at("lambda_purge").get<double>();
  s.task_weight = a.at("task_weight").get<double>();
  s.epochs = a.at("epochs").get<int>();
  s.models_per_arch = a.at("models_per_arch").get<int>();
  s.seed = a.at("seed").get<uint64_t>();
  return s;
}

}  // namespace arcgen::cli
