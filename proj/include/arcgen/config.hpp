#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "arcgen/adaptive.hpp"
#include "arcgen/dataset.hpp"
#include "arcgen/detector.hpp"
#include "arcgen/zoo.hpp"

#include <nlohmann/json.hpp>

namespace arcgen::cli {

// The resolved run configuration: user JSON deep-merged over the built-in
// defaults (which carry the published training setup). Validation rejects
// unknown keys and type mismatches before any work starts.
class RunConfig {
public:
  static RunConfig from_json_text(const std::string& text);
  static nlohmann::json defaults();

  const nlohmann::json& resolved() const { return resolved_; }
  std::string dump() const { return resolved_.dump(2) + "\n"; }
  std::string hash() const;  // fingerprint of the canonical dump

  // Dotted-path override, e.g. "detector.lambda_dla=0.5". The value is
  // parsed as JSON when possible, else taken as a string. Re-validates.
  void apply_override(const std::string& assignment);

  std::filesystem::path output_root() const;

  // dataset section: returns {train, test}
  std::pair<data::LabeledDataset, data::LabeledDataset> load_datasets() const;

  zoo::ZooConfig zoo_config(const data::ImageShape& shape, int num_classes) const;
  detector::DetectorConfig detector_config() const;

  std::vector<uint64_t> experiment_seeds() const;
  std::vector<std::string> experiment_variants() const;
  std::vector<std::string> experiment_attacks() const;

  struct ConflateSection {
    std::vector<std::string> arch_ids;  // empty = seen archs of the zoo
    int models_per_set;
    double lambda_con;
    int epochs;
    uint64_t seed;
  };
  ConflateSection conflate_section() const;

  struct PurgeSection {
    std::vector<std::string> variants;
    double lambda_purge;
    double task_weight;
    int epochs;
    int models_per_arch;
    uint64_t seed;
  };
  PurgeSection purge_section() const;

private:
  nlohmann::json resolved_;
};

RunConfig load_config(const std::filesystem::path& path);

}  // namespace arcgen::cli
