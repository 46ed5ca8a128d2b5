#pragma once

#include <filesystem>

#include "arcgen/dataset.hpp"
#include "arcgen/zoo.hpp"

// A small zoo shared by the detector / evaluation / attack tests so the
// expensive model training happens once per test-binary run.
struct MicroZoo {
  std::filesystem::path dir;
  arcgen::zoo::ZooManifest manifest;
  arcgen::data::LabeledDataset train;
  arcgen::data::LabeledDataset test;
};

inline arcgen::zoo::ZooConfig micro_zoo_config(const arcgen::data::LabeledDataset& train) {
  arcgen::zoo::ZooConfig zc;
  zc.archs = arcgen::zoo::default_arch_pool(train.shape, train.num_classes);
  zc.seen_archs = {"cnn", "mlp"};
  zc.unseen_archs = {"dw_cnn"};
  zc.benign_per_seen_arch = 4;
  zc.proxy_per_seen_arch = 4;
  zc.shared_trigger_specs = 2;
  zc.target_benign_per_arch = 2;
  zc.target_attacked_per_arch = 2;
  zc.train.epochs = 3;
  zc.train.batch = 32;
  zc.train.optim.lr = 2e-3;
  zc.workers = 2;
  zc.seed = 0;
  zc.split_seed = 0;
  // keep only the architectures the config references
  std::vector<arcgen::zoo::ArchSpec> pool;
  for (const auto& a : zc.archs)
    if (a.arch_id == "cnn" || a.arch_id == "mlp" || a.arch_id == "dw_cnn")
      pool.push_back(a);
  zc.archs = pool;
  return zc;
}

inline const MicroZoo& micro_zoo() {
  static MicroZoo zoo = [] {
    MicroZoo z;
    z.train = arcgen::data::make_synthetic_digits(600, 21);
    z.test = arcgen::data::make_synthetic_digits(200, 22);
    z.dir = std::filesystem::temp_directory_path() / "arcgen_micro_zoo";
    std::filesystem::remove_all(z.dir);
    z.manifest = arcgen::zoo::build_zoo(micro_zoo_config(z.train), z.train, z.test, z.dir);
    return z;
  }();
  return zoo;
}
