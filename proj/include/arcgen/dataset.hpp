#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "arcgen/rng.hpp"

namespace arcgen::data {

struct ImageShape {
  int h = 0;
  int w = 0;
  int c = 0;
  int size() const { return h * w * c; }
  bool operator==(const ImageShape&) const = default;
};

// Images are stored as float64 in [0, 1], row-major (h, w, c). Integer image
// sources are divided by 255 on load.
struct LabeledDataset {
  std::string name;
  ImageShape shape;
  int num_classes = 0;
  std::vector<std::vector<double>> images;
  std::vector<int> labels;

  size_t size() const { return images.size(); }
  void validate() const;  // throws InvalidSpecError on a broken invariant
};

struct DataSplit {
  LabeledDataset attacker;
  LabeledDataset defender;
  uint64_t seed = 0;
};

// Disjoint attacker/defender split; |attacker| = round(frac * n).
DataSplit split_dataset(const LabeledDataset& dataset, double attacker_frac,
                        uint64_t seed);

LabeledDataset subset(const LabeledDataset& dataset, const std::vector<int>& idx);

// Packed binary format "ARCD" (documented in the README): uint8 pixels of
// shape (n, H, W, C) followed by uint32 labels.
LabeledDataset load_packed(const std::filesystem::path& path);
void save_packed(const LabeledDataset& dataset, const std::filesystem::path& path);

// Directory loader: dir/<label>/<image>.pgm|ppm (binary P5/P6).
LabeledDataset load_image_dir(const std::filesystem::path& dir);

// Byte fingerprint of the packed representation, used as the zoo's dataset
// fingerprint.
std::string dataset_fingerprint(const LabeledDataset& dataset);

// Procedurally rendered digit glyphs (10 classes, grayscale) with random
// shift, intensity jitter and pixel noise. Deterministic for a fixed seed;
// stands in for MNIST at desk scale when no packed dataset is supplied.
LabeledDataset make_synthetic_digits(int n, uint64_t seed, int h = 8, int w = 8);

}  // namespace arcgen::data
