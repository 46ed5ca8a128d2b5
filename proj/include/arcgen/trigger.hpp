#pragma once

#include <string>
#include <vector>

#include "arcgen/dataset.hpp"
#include "arcgen/rng.hpp"

#include <nlohmann/json.hpp>

namespace arcgen::data {

enum class TriggerKind { badnets, blended, sig, wanet, bpp };

std::string to_string(TriggerKind k);
TriggerKind trigger_kind_from_string(const std::string& s);

// One poisoning attack instance. `pattern` holds, depending on kind:
//   badnets  patch pixels, shape (size_h, size_w, C)
//   blended  full-image pixels, shape (H, W, C)
//   sig      unused (empty)
//   wanet    control grid, shape (k, k, 2); entries encode displacements
//            in [-1, 1] as (v + 1) / 2 so the [0,1] pattern invariant holds
//   bpp      unused (empty)
struct TriggerSpec {
  TriggerKind kind = TriggerKind::badnets;
  std::vector<float> pattern;
  int pattern_h = 0, pattern_w = 0, pattern_c = 0;
  int loc_row = 0, loc_col = 0;   // patch kinds
  double alpha = 1.0;             // patch/blend transparency; 1 = replace
  int target_label = 0;
  double poisoning_ratio = 0.1;
  // kind-specific parameters
  double sig_delta = 0.08;
  double sig_freq = 6.0;
  int wanet_grid = 4;
  double wanet_strength = 0.5;
  bool wanet_noise_mode = false;
  int bpp_bits = 3;

  nlohmann::json to_json() const;
  static TriggerSpec from_json(const nlohmann::json& j);
  std::string serialize() const;  // canonical text record (stable bytes)
  static TriggerSpec parse(const std::string& text);
};

// Shape/parameter validation against a target image shape. Throws
// InvalidSpecError with a description of the violated precondition.
void validate_trigger(const TriggerSpec& spec, const ImageShape& shape);

// All transforms are pure: they return a new image, clipped to [0, 1].
std::vector<double> apply_badnets(const std::vector<double>& image,
                                  const ImageShape& shape, const TriggerSpec& spec);
std::vector<double> apply_blended(const std::vector<double>& image,
                                  const ImageShape& shape, const TriggerSpec& spec);
std::vector<double> apply_sig(const std::vector<double>& image,
                              const ImageShape& shape, const TriggerSpec& spec);
std::vector<double> apply_wanet(const std::vector<double>& image,
                                const ImageShape& shape, const TriggerSpec& spec);
std::vector<double> apply_bpp(const std::vector<double>& image,
                              const ImageShape& shape, const TriggerSpec& spec);
std::vector<double> apply_trigger(const std::vector<double>& image,
                                  const ImageShape& shape, const TriggerSpec& spec);

struct ProxyTriggerRanges {
  int size_min = 2;          // per-side patch size range; max defaults to floor(W/3)
  int size_max = -1;         // -1 = floor(W/3)
  double alpha_min = 0.2, alpha_max = 1.0;
  double ratio_min = 0.05, ratio_max = 0.2;
};

// Randomized badnets-style patch trigger used for proxy backdoored models:
// i.i.d. uniform pattern, uniform size/location/alpha/ratio, uniform target.
TriggerSpec sample_random_trigger(Rng& rng, const ImageShape& shape,
                                  int num_classes,
                                  const ProxyTriggerRanges& ranges = {});

struct PoisonResult {
  LabeledDataset dataset;
  std::vector<int> poisoned_indices;  // sorted
};

// Applies the trigger to round(ratio * n) samples picked uniformly without
// replacement and relabels them to the target class. If the count rounds to
// zero the input is returned unmodified with a warning.
PoisonResult poison_dataset(const LabeledDataset& dataset, const TriggerSpec& spec,
                            Rng& rng);

}  // namespace arcgen::data
