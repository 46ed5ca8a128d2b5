#include "arcgen/trigger.hpp"

#include <algorithm>
#include <cmath>

#include "arcgen/common.hpp"
#include "arcgen/io.hpp"

namespace arcgen::data {

using nlohmann::json;

std::string to_string(TriggerKind k) {
  switch (k) {
    case TriggerKind::badnets: return "badnets";
    case TriggerKind::blended: return "blended";
    case TriggerKind::sig: return "sig";
    case TriggerKind::wanet: return "wanet";
    case TriggerKind::bpp: return "bpp";
  }
  return "?";
}

TriggerKind trigger_kind_from_string(const std::string& s) {
  if (s == "badnets") return TriggerKind::badnets;
  if (s == "blended") return TriggerKind::blended;
  if (s == "sig") return TriggerKind::sig;
  if (s == "wanet") return TriggerKind::wanet;
  if (s == "bpp") return TriggerKind::bpp;
  throw InvalidSpecError("unknown trigger kind: " + s);
}

json TriggerSpec::to_json() const {
  json j;
  j["kind"] = to_string(kind);
  j["pattern"] = io::base64_of_floats(pattern);
  j["pattern_shape"] = {pattern_h, pattern_w, pattern_c};
  j["location"] = {loc_row, loc_col};
  j["alpha"] = alpha;
  j["target_label"] = target_label;
  j["poisoning_ratio"] = poisoning_ratio;
  switch (kind) {
    case TriggerKind::sig:
      j["sig"] = {{"delta", sig_delta}, {"freq", sig_freq}};
      break;
    case TriggerKind::wanet:
      j["wanet"] = {{"grid", wanet_grid},
                    {"strength", wanet_strength},
                    {"noise_mode", wanet_noise_mode}};
      break;
    case TriggerKind::bpp:
      j["bpp"] = {{"bits", bpp_bits}};
      break;
    default:
      break;
  }
  return j;
}

TriggerSpec TriggerSpec::from_json(const json& j) {
  TriggerSpec s;
  s.kind = trigger_kind_from_string(j.at("kind").get<std::string>());
  s.pattern = io::floats_of_base64(j.at("pattern").get<std::string>());
  auto ps = j.at("pattern_shape");
  s.pattern_h = ps.at(0).get<int>();
  s.pattern_w = ps.at(1).get<int>();
  s.pattern_c = ps.at(2).get<int>();
  auto loc = j.at("location");
  s.loc_row = loc.at(0).get<int>();
  s.loc_col = loc.at(1).get<int>();
  s.alpha = j.at("alpha").get<double>();
  s.target_label = j.at("target_label").get<int>();
  s.poisoning_ratio = j.at("poisoning_ratio").get<double>();
  if (j.contains("sig")) {
    s.sig_delta = j["sig"].at("delta").get<double>();
    s.sig_freq = j["sig"].at("freq").get<double>();
  }
  if (j.contains("wanet")) {
    s.wanet_grid = j["wanet"].at("grid").get<int>();
    s.wanet_strength = j["wanet"].at("strength").get<double>();
    s.wanet_noise_mode = j["wanet"].at("noise_mode").get<bool>();
  }
  if (j.contains("bpp")) s.bpp_bits = j["bpp"].at("bits").get<int>();
  return s;
}

std::string TriggerSpec::serialize() const { return to_json().dump(); }

TriggerSpec TriggerSpec::parse(const std::string& text) {
  return from_json(json::parse(text));
}

void validate_trigger(const TriggerSpec& spec, const ImageShape& shape) {
  if (!(spec.alpha >= 0.0 && spec.alpha <= 1.0))
    throw InvalidSpecError("trigger: alpha must be in [0,1]");
  if (!(spec.poisoning_ratio > 0.0 && spec.poisoning_ratio <= 1.0))
    throw InvalidSpecError("trigger: poisoning_ratio must be in (0,1]");
  if (spec.target_label < 0)
    throw InvalidSpecError("trigger: target_label must be nonnegative");
  switch (spec.kind) {
    case TriggerKind::badnets:
      if (spec.pattern_c != shape.c)
        throw InvalidSpecError("badnets: patch channel count mismatch");
      if (spec.pattern_h <= 0 || spec.pattern_w <= 0 ||
          spec.loc_row < 0 || spec.loc_col < 0 ||
          spec.loc_row + spec.pattern_h > shape.h ||
          spec.loc_col + spec.pattern_w > shape.w)
        throw InvalidSpecError("badnets: patch exceeds image bounds");
      if (spec.pattern.size() !=
          static_cast<size_t>(spec.pattern_h) * spec.pattern_w * spec.pattern_c)
        throw InvalidSpecError("badnets: pattern size mismatch");
      break;
    case TriggerKind::blended:
      if (spec.pattern_h != shape.h || spec.pattern_w != shape.w ||
          spec.pattern_c != shape.c)
        throw InvalidSpecError("blended: pattern must match image shape");
      if (spec.pattern.size() != static_cast<size_t>(shape.size()))
        throw InvalidSpecError("blended: pattern size mismatch");
      break;
    case TriggerKind::sig:
      if (spec.sig_delta < 0.0) throw InvalidSpecError("sig: delta must be >= 0");
      if (!(spec.sig_freq > 0.0)) throw InvalidSpecError("sig: freq must be > 0");
      break;
    case TriggerKind::wanet:
      if (spec.wanet_grid < 2) throw InvalidSpecError("wanet: grid size must be >= 2");
      if (spec.pattern.size() !=
          static_cast<size_t>(spec.wanet_grid) * spec.wanet_grid * 2)
        throw InvalidSpecError("wanet: control grid size mismatch");
      break;
    case TriggerKind::bpp:
      if (spec.bpp_bits < 1 || spec.bpp_bits > 8)
        throw InvalidSpecError("bpp: bit depth must be in [1,8]");
      break;
  }
  for (float v : spec.pattern)
    if (!(v >= 0.0f && v <= 1.0f))
      throw InvalidSpecError("trigger: pattern values must be in [0,1]");
}

static double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

std::vector<double> apply_badnets(const std::vector<double>& image,
                                  const ImageShape& shape, const TriggerSpec& spec) {
  if (spec.kind != TriggerKind::badnets) throw InvalidSpecError("apply_badnets: wrong kind");
  validate_trigger(spec, shape);
  std::vector<double> out = image;
  // The patch is stamped with transparency alpha; alpha = 1 is the plain
  // pixel-replacing BadNets patch, alpha < 1 is the randomized proxy variant.
  for (int r = 0; r < spec.pattern_h; ++r)
    for (int c = 0; c < spec.pattern_w; ++c)
      for (int ch = 0; ch < shape.c; ++ch) {
        size_t dst = (static_cast<size_t>(spec.loc_row + r) * shape.w +
                      (spec.loc_col + c)) * shape.c + ch;
        size_t src = (static_cast<size_t>(r) * spec.pattern_w + c) * spec.pattern_c + ch;
        double pat = spec.pattern[src];
        out[dst] = clip01((1.0 - spec.alpha) * out[dst] + spec.alpha * pat);
      }
  return out;
}

std::vector<double> apply_blended(const std::vector<double>& image,
                                  const ImageShape& shape, const TriggerSpec& spec) {
  if (spec.kind != TriggerKind::blended) throw InvalidSpecError("apply_blended: wrong kind");
  validate_trigger(spec, shape);
  std::vector<double> out(image.size());
  for (size_t i = 0; i < image.size(); ++i)
    out[i] = clip01((1.0 - spec.alpha) * image[i] + spec.alpha * spec.pattern[i]);
  return out;
}

std::vector<double> apply_sig(const std::vector<double>& image,
                              const ImageShape& shape, const TriggerSpec& spec) {
  if (spec.kind != TriggerKind::sig) throw InvalidSpecError("apply_sig: wrong kind");
  validate_trigger(spec, shape);
  std::vector<double> out(image.size());
  const double two_pi = 6.283185307179586476925286766559;
  for (int i = 0; i < shape.h; ++i)
    for (int j = 0; j < shape.w; ++j) {
      double stripe = spec.sig_delta *
                      std::sin(two_pi * j * spec.sig_freq / static_cast<double>(shape.w));
      for (int ch = 0; ch < shape.c; ++ch) {
        size_t k = (static_cast<size_t>(i) * shape.w + j) * shape.c + ch;
        out[k] = clip01(image[k] + stripe);
      }
    }
  return out;
}

// Bilinear sample with border replication.
static double sample_bilinear(const std::vector<double>& image, const ImageShape& shape,
                              double y, double x, int ch) {
  y = std::min(static_cast<double>(shape.h - 1), std::max(0.0, y));
  x = std::min(static_cast<double>(shape.w - 1), std::max(0.0, x));
  int y0 = static_cast<int>(std::floor(y));
  int x0 = static_cast<int>(std::floor(x));
  int y1 = std::min(y0 + 1, shape.h - 1);
  int x1 = std::min(x0 + 1, shape.w - 1);
  double fy = y - y0, fx = x - x0;
  auto at = [&](int r, int c) {
    return image[(static_cast<size_t>(r) * shape.w + c) * shape.c + ch];
  };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
         fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

std::vector<double> apply_wanet(const std::vector<double>& image,
                                const ImageShape& shape, const TriggerSpec& spec) {
  if (spec.kind != TriggerKind::wanet) throw InvalidSpecError("apply_wanet: wrong kind");
  validate_trigger(spec, shape);
  const int k = spec.wanet_grid;
  // Decode the control grid: stored value v in [0,1] encodes 2v - 1 in [-1,1].
  auto grid_at = [&](int gy, int gx, int axis) {
    size_t idx = (static_cast<size_t>(gy) * k + gx) * 2 + axis;
    return (2.0 * spec.pattern[idx] - 1.0) * spec.wanet_strength;
  };
  std::vector<double> out(image.size());
  for (int i = 0; i < shape.h; ++i)
    for (int j = 0; j < shape.w; ++j) {
      // Upsample the kxk grid to pixel (i, j) bilinearly.
      double gy = (k - 1) * static_cast<double>(i) / std::max(1, shape.h - 1);
      double gx = (k - 1) * static_cast<double>(j) / std::max(1, shape.w - 1);
      int y0 = std::min(static_cast<int>(std::floor(gy)), k - 2);
      int x0 = std::min(static_cast<int>(std::floor(gx)), k - 2);
      double fy = gy - y0, fx = gx - x0;
      double dy = 0, dx = 0;
      for (int axis = 0; axis < 2; ++axis) {
        double v = (1 - fy) * ((1 - fx) * grid_at(y0, x0, axis) + fx * grid_at(y0, x0 + 1, axis)) +
                   fy * ((1 - fx) * grid_at(y0 + 1, x0, axis) + fx * grid_at(y0 + 1, x0 + 1, axis));
        if (axis == 0) dy = v; else dx = v;
      }
      for (int ch = 0; ch < shape.c; ++ch) {
        size_t idx = (static_cast<size_t>(i) * shape.w + j) * shape.c + ch;
        out[idx] = clip01(sample_bilinear(image, shape, i + dy, j + dx, ch));
      }
    }
  return out;
}

std::vector<double> apply_bpp(const std::vector<double>& image,
                              const ImageShape& shape, const TriggerSpec& spec) {
  if (spec.kind != TriggerKind::bpp) throw InvalidSpecError("apply_bpp: wrong kind");
  validate_trigger(spec, shape);
  const double levels = static_cast<double>((1 << spec.bpp_bits) - 1);
  auto quantize = [&](double v) { return clip01(std::round(v * levels) / levels); };
  // Floyd-Steinberg error diffusion, row-major: right 7/16, down-left 3/16,
  // down 5/16, down-right 1/16, per channel.
  std::vector<double> work = image;
  std::vector<double> out(image.size());
  auto idx = [&](int r, int c, int ch) {
    return (static_cast<size_t>(r) * shape.w + c) * shape.c + ch;
  };
  for (int r = 0; r < shape.h; ++r)
    for (int c = 0; c < shape.w; ++c)
      for (int ch = 0; ch < shape.c; ++ch) {
        double old = work[idx(r, c, ch)];
        double q = quantize(old);
        out[idx(r, c, ch)] = q;
        double err = old - q;
        if (c + 1 < shape.w) work[idx(r, c + 1, ch)] += err * 7.0 / 16.0;
        if (r + 1 < shape.h) {
          if (c - 1 >= 0) work[idx(r + 1, c - 1, ch)] += err * 3.0 / 16.0;
          work[idx(r + 1, c, ch)] += err * 5.0 / 16.0;
          if (c + 1 < shape.w) work[idx(r + 1, c + 1, ch)] += err * 1.0 / 16.0;
        }
      }
  return out;
}

std::vector<double> apply_trigger(const std::vector<double>& image,
                                  const ImageShape& shape, const TriggerSpec& spec) {
  switch (spec.kind) {
    case TriggerKind::badnets: return apply_badnets(image, shape, spec);
    case TriggerKind::blended: return apply_blended(image, shape, spec);
    case TriggerKind::sig: return apply_sig(image, shape, spec);
    case TriggerKind::wanet: return apply_wanet(image, shape, spec);
    case TriggerKind::bpp: return apply_bpp(image, shape, spec);
  }
  throw InvalidSpecError("apply_trigger: bad kind");
}

TriggerSpec sample_random_trigger(Rng& rng, const ImageShape& shape,
                                  int num_classes, const ProxyTriggerRanges& ranges) {
  TriggerSpec s;
  s.kind = TriggerKind::badnets;
  int size_max = ranges.size_max > 0 ? ranges.size_max : std::max(2, shape.w / 3);
  int size_min = std::min(ranges.size_min, size_max);
  s.pattern_h = static_cast<int>(rng.uniform_int(size_min, size_max));
  s.pattern_w = static_cast<int>(rng.uniform_int(size_min, size_max));
  s.pattern_c = shape.c;
  s.loc_row = static_cast<int>(rng.uniform_int(0, shape.h - s.pattern_h));
  s.loc_col = static_cast<int>(rng.uniform_int(0, shape.w - s.pattern_w));
  s.pattern.resize(static_cast<size_t>(s.pattern_h) * s.pattern_w * s.pattern_c);
  for (auto& v : s.pattern) v = static_cast<float>(rng.uniform());
  s.alpha = rng.uniform(ranges.alpha_min, ranges.alpha_max);
  s.poisoning_ratio = rng.uniform(ranges.ratio_min, ranges.ratio_max);
  s.target_label = static_cast<int>(rng.uniform_int(0, num_classes - 1));
  return s;
}

PoisonResult poison_dataset(const LabeledDataset& dataset, const TriggerSpec& spec,
                            Rng& rng) {
  validate_trigger(spec, dataset.shape);
  if (spec.target_label >= dataset.num_classes)
    throw InvalidSpecError("poison_dataset: target_label out of range");
  PoisonResult res;
  res.dataset = dataset;
  size_t n = dataset.size();
  size_t count = static_cast<size_t>(std::llround(spec.poisoning_ratio * static_cast<double>(n)));
  if (count == 0) {
    log_warn("poison_dataset: ratio * n rounds to 0, returning unmodified copy");
    return res;
  }
  std::vector<int> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  rng.shuffle(idx);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  for (int i : idx) {
    auto& img = res.dataset.images[static_cast<size_t>(i)];
    img = apply_trigger(img, dataset.shape, spec);
    res.dataset.labels[static_cast<size_t>(i)] = spec.target_label;
  }
  res.poisoned_indices = std::move(idx);
  // WaNet "noise mode": an equal number of additional clean samples receive a
  // fresh random warp with their labels kept, making the warp less separable.
  if (spec.kind == TriggerKind::wanet && spec.wanet_noise_mode) {
    std::vector<int> rest;
    for (size_t i = 0; i < n; ++i)
      if (!std::binary_search(res.poisoned_indices.begin(), res.poisoned_indices.end(),
                              static_cast<int>(i)))
        rest.push_back(static_cast<int>(i));
    rng.shuffle(rest);
    size_t extra = std::min(rest.size(), res.poisoned_indices.size());
    for (size_t k = 0; k < extra; ++k) {
      TriggerSpec noise = spec;
      noise.wanet_noise_mode = false;
      for (auto& v : noise.pattern) v = static_cast<float>(rng.uniform());
      auto& img = res.dataset.images[static_cast<size_t>(rest[k])];
      img = apply_wanet(img, dataset.shape, noise);
    }
  }
  return res;
}

}  // namespace arcgen::data
