#include <doctest.h>

#include <cmath>

#include "arcgen/common.hpp"
#include "arcgen/trigger.hpp"

using namespace arcgen;
using namespace arcgen::data;

namespace {

std::vector<double> constant_image(const ImageShape& s, double v) {
  return std::vector<double>(static_cast<size_t>(s.size()), v);
}

TriggerSpec patch_spec(int h, int w, int c, int row, int col, float fill,
                       double alpha = 1.0) {
  TriggerSpec s;
  s.kind = TriggerKind::badnets;
  s.pattern_h = h;
  s.pattern_w = w;
  s.pattern_c = c;
  s.loc_row = row;
  s.loc_col = col;
  s.alpha = alpha;
  s.pattern.assign(static_cast<size_t>(h) * w * c, fill);
  return s;
}

}  // namespace

TEST_CASE("badnets: 2x2 all-one patch on zero image flips exactly 4 pixels") {
  ImageShape shape{28, 28, 1};
  auto img = constant_image(shape, 0.0);
  auto spec = patch_spec(2, 2, 1, 0, 0, 1.0f);
  auto out = apply_badnets(img, shape, spec);
  int ones = 0;
  for (double v : out) {
    if (v == 1.0) ++ones;
    else CHECK(v == 0.0);
  }
  CHECK(ones == 4);
}

TEST_CASE("badnets: full-image patch replaces everything; reapplication is stable") {
  ImageShape shape{6, 5, 1};
  auto img = constant_image(shape, 0.3);
  auto spec = patch_spec(6, 5, 1, 0, 0, 0.7f);
  auto once = apply_badnets(img, shape, spec);
  for (double v : once) CHECK(v == static_cast<double>(0.7f));
  auto twice = apply_badnets(once, shape, spec);
  CHECK(once == twice);
}

TEST_CASE("badnets: patch out of bounds is an invalid spec") {
  ImageShape shape{8, 8, 1};
  auto img = constant_image(shape, 0.0);
  auto spec = patch_spec(3, 3, 1, 6, 6, 1.0f);
  CHECK_THROWS_AS(apply_badnets(img, shape, spec), InvalidSpecError);
}

TEST_CASE("blended: alpha endpoints and midpoint arithmetic") {
  ImageShape shape{4, 4, 1};
  auto img = constant_image(shape, 0.2);
  TriggerSpec s;
  s.kind = TriggerKind::blended;
  s.pattern_h = 4;
  s.pattern_w = 4;
  s.pattern_c = 1;
  s.pattern.assign(16, 0.6f);

  const double pat = static_cast<double>(0.6f);  // pattern is stored as float32
  s.alpha = 0.0;
  CHECK(apply_blended(img, shape, s) == img);
  s.alpha = 1.0;
  for (double v : apply_blended(img, shape, s)) CHECK(v == pat);
  s.alpha = 0.5;
  for (double v : apply_blended(img, shape, s))
    CHECK(v == doctest::Approx(0.5 * 0.2 + 0.5 * pat).epsilon(1e-14));
}

TEST_CASE("blended: pattern shape mismatch is an invalid spec") {
  ImageShape shape{4, 4, 1};
  auto img = constant_image(shape, 0.2);
  TriggerSpec s;
  s.kind = TriggerKind::blended;
  s.pattern_h = 2;
  s.pattern_w = 2;
  s.pattern_c = 1;
  s.pattern.assign(4, 0.5f);
  CHECK_THROWS_AS(apply_blended(img, shape, s), InvalidSpecError);
}

TEST_CASE("blended is linear in alpha away from the clip boundary") {
  ImageShape shape{3, 3, 1};
  auto img = constant_image(shape, 0.4);
  TriggerSpec s;
  s.kind = TriggerKind::blended;
  s.pattern_h = s.pattern_w = 3;
  s.pattern_c = 1;
  s.pattern.assign(9, 0.8f);
  for (double alpha : {0.1, 0.25, 0.5, 0.75, 0.9}) {
    s.alpha = alpha;
    auto out = apply_blended(img, shape, s);
    for (size_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == (1.0 - alpha) * img[i] + alpha * static_cast<double>(s.pattern[i]));
  }
}

TEST_CASE("sig: closed-form pixel value and the zero/clip cases") {
  ImageShape shape{4, 4, 1};
  TriggerSpec s;
  s.kind = TriggerKind::sig;

  s.sig_delta = 0.0;
  s.sig_freq = 1.0;
  auto img = constant_image(shape, 0.37);
  CHECK(apply_sig(img, shape, s) == img);

  // delta=0.1, f=1, W=4, column j=1: 0.5 + 0.1*sin(pi/2) = 0.6
  s.sig_delta = 0.1;
  auto half = constant_image(shape, 0.5);
  auto out = apply_sig(half, shape, s);
  CHECK(out[1] == doctest::Approx(0.6).epsilon(1e-12));

  auto white = constant_image(shape, 1.0);
  auto clipped = apply_sig(white, shape, s);
  CHECK(clipped[1] == 1.0);  // stays 1.0 where sin > 0

  s.sig_delta = -0.1;
  CHECK_THROWS_AS(apply_sig(half, shape, s), InvalidSpecError);
}

namespace {

TriggerSpec wanet_spec(int k, double strength, float grid_fill = 0.5f) {
  TriggerSpec s;
  s.kind = TriggerKind::wanet;
  s.wanet_grid = k;
  s.wanet_strength = strength;
  s.pattern.assign(static_cast<size_t>(k) * k * 2, grid_fill);  // 0.5 encodes 0
  return s;
}

}  // namespace

TEST_CASE("wanet: zero displacement grid is the identity warp") {
  ImageShape shape{8, 8, 1};
  std::vector<double> img(64);
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i) / 63.0;
  auto s = wanet_spec(4, 0.7);
  auto out = apply_wanet(img, shape, s);
  for (size_t i = 0; i < img.size(); ++i)
    CHECK(out[i] == doctest::Approx(img[i]).epsilon(1e-12));
}

TEST_CASE("wanet: warping a constant field changes nothing") {
  ImageShape shape{8, 8, 1};
  auto img = constant_image(shape, 0.42);
  auto s = wanet_spec(4, 0.9);
  for (auto& v : s.pattern) v = 0.9f;  // strong uniform displacement
  auto out = apply_wanet(img, shape, s);
  for (double v : out) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("wanet: +s and -s grids differ on an asymmetric image") {
  ImageShape shape{4, 4, 1};
  std::vector<double> img(16, 0.0);
  img[1] = 1.0;  // asymmetric
  auto plus = wanet_spec(2, 0.8, 0.9f);
  auto minus = wanet_spec(2, -0.8, 0.9f);
  auto a = apply_wanet(img, shape, plus);
  auto b = apply_wanet(img, shape, minus);
  CHECK(a != b);
}

TEST_CASE("wanet: grid smaller than 2 is an invalid spec") {
  ImageShape shape{4, 4, 1};
  auto img = constant_image(shape, 0.5);
  auto s = wanet_spec(1, 0.5);
  CHECK_THROWS_AS(apply_wanet(img, shape, s), InvalidSpecError);
}

TEST_CASE("bpp: b=8 on an 8-bit-grid image is the identity") {
  ImageShape shape{5, 5, 1};
  std::vector<double> img(25);
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i * 10) / 255.0;
  TriggerSpec s;
  s.kind = TriggerKind::bpp;
  s.bpp_bits = 8;
  auto out = apply_bpp(img, shape, s);
  for (size_t i = 0; i < img.size(); ++i)
    CHECK(out[i] == doctest::Approx(img[i]).epsilon(1e-12));
}

TEST_CASE("bpp: b=1 on constant 0.9 quantizes the first pixel to 1.0") {
  ImageShape shape{3, 3, 1};
  auto img = constant_image(shape, 0.9);
  TriggerSpec s;
  s.kind = TriggerKind::bpp;
  s.bpp_bits = 1;
  auto out = apply_bpp(img, shape, s);
  CHECK(out[0] == 1.0);
}

TEST_CASE("bpp: error diffusion preserves the local mean on a 1x2 image") {
  // hand-run: p0 = 0.5 -> 1.0, err -0.5, p1 = 0.5 - 7/16*0.5 = 0.28125 -> 0.0
  ImageShape shape{1, 2, 1};
  std::vector<double> img{0.5, 0.5};
  TriggerSpec s;
  s.kind = TriggerKind::bpp;
  s.bpp_bits = 1;
  auto out = apply_bpp(img, shape, s);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 0.0);
  double mean = (out[0] + out[1]) / 2.0;
  CHECK(std::abs(mean - 0.5) <= 0.25);
}

TEST_CASE("bpp: bit depth outside [1,8] is an invalid spec") {
  ImageShape shape{2, 2, 1};
  auto img = constant_image(shape, 0.5);
  TriggerSpec s;
  s.kind = TriggerKind::bpp;
  s.bpp_bits = 0;
  CHECK_THROWS_AS(apply_bpp(img, shape, s), InvalidSpecError);
  s.bpp_bits = 9;
  CHECK_THROWS_AS(apply_bpp(img, shape, s), InvalidSpecError);
}

TEST_CASE("every transform keeps pixels in [0,1] on random inputs") {
  ImageShape shape{9, 9, 1};
  Rng rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> img(static_cast<size_t>(shape.size()));
    for (auto& v : img) v = rng.uniform();
    std::vector<TriggerSpec> specs;
    specs.push_back(sample_random_trigger(rng, shape, 10));
    TriggerSpec blended;
    blended.kind = TriggerKind::blended;
    blended.pattern_h = blended.pattern_w = 9;
    blended.pattern_c = 1;
    blended.pattern.assign(81, 0.0f);
    for (auto& v : blended.pattern) v = static_cast<float>(rng.uniform());
    blended.alpha = rng.uniform();
    specs.push_back(blended);
    TriggerSpec sig;
    sig.kind = TriggerKind::sig;
    sig.sig_delta = rng.uniform(0, 0.5);
    sig.sig_freq = rng.uniform(0.5, 8);
    specs.push_back(sig);
    TriggerSpec wn;
    wn.kind = TriggerKind::wanet;
    wn.wanet_grid = 4;
    wn.wanet_strength = rng.uniform(-2, 2);
    wn.pattern.assign(32, 0.0f);
    for (auto& v : wn.pattern) v = static_cast<float>(rng.uniform());
    specs.push_back(wn);
    TriggerSpec bpp;
    bpp.kind = TriggerKind::bpp;
    bpp.bpp_bits = static_cast<int>(rng.uniform_int(1, 8));
    specs.push_back(bpp);
    for (const auto& spec : specs)
      for (double v : apply_trigger(img, shape, spec)) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
  }
}

TEST_CASE("random trigger sampler: target labels are uniform (chi-square)") {
  ImageShape shape{12, 12, 1};
  Rng rng(4242);
  const int n = 10000, classes = 10;
  std::vector<int> counts(classes, 0);
  for (int i = 0; i < n; ++i)
    counts[static_cast<size_t>(sample_random_trigger(rng, shape, classes).target_label)]++;
  double expected = static_cast<double>(n) / classes;
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 9 dof; far tail bound comparable to a 3-sigma multinomial band
  CHECK(chi2 < 27.88);
  for (int c : counts) {
    double sigma = std::sqrt(n * 0.1 * 0.9);
    CHECK(std::abs(c - expected) < 3.0 * sigma + 1.0);
  }
}

TEST_CASE("random trigger sampler: degenerate ranges and determinism") {
  ImageShape shape{9, 9, 1};
  ProxyTriggerRanges ranges;
  ranges.size_min = ranges.size_max = 3;
  ranges.alpha_min = ranges.alpha_max = 1.0;
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    auto s = sample_random_trigger(rng, shape, 10, ranges);
    CHECK(s.pattern_h == 3);
    CHECK(s.pattern_w == 3);
    CHECK(s.alpha == 1.0);
  }
  Rng r1(77), r2(77);
  for (int i = 0; i < 10; ++i)
    CHECK(sample_random_trigger(r1, shape, 10).serialize() ==
          sample_random_trigger(r2, shape, 10).serialize());
}

TEST_CASE("poison_dataset: counts, locality and the all-poisoned case") {
  auto d = make_synthetic_digits(100, 3);
  TriggerSpec s = patch_spec(2, 2, 1, 0, 0, 1.0f);
  s.target_label = 7;
  s.poisoning_ratio = 0.1;
  Rng rng(11);
  auto res = poison_dataset(d, s, rng);
  CHECK(res.poisoned_indices.size() == 10);
  size_t modified = 0;
  for (size_t i = 0; i < d.size(); ++i)
    if (res.dataset.images[i] != d.images[i] || res.dataset.labels[i] != d.labels[i])
      ++modified;
  CHECK(modified <= 10);  // trigger may coincide with original pixels
  for (size_t i = 0; i < d.size(); ++i) {
    bool poisoned = std::binary_search(res.poisoned_indices.begin(),
                                       res.poisoned_indices.end(), static_cast<int>(i));
    if (!poisoned) {
      CHECK(res.dataset.images[i] == d.images[i]);
      CHECK(res.dataset.labels[i] == d.labels[i]);
    } else {
      CHECK(res.dataset.labels[i] == 7);
    }
  }

  s.poisoning_ratio = 1.0;
  Rng rng2(12);
  auto all = poison_dataset(d, s, rng2);
  for (int label : all.dataset.labels) CHECK(label == 7);
}

TEST_CASE("poison_dataset: ratio rounding to zero returns an unmodified copy") {
  auto d = make_synthetic_digits(4, 3);
  TriggerSpec s = patch_spec(2, 2, 1, 0, 0, 1.0f);
  s.poisoning_ratio = 0.1;  // 0.4 rounds to 0
  Rng rng(1);
  auto res = poison_dataset(d, s, rng);
  CHECK(res.poisoned_indices.empty());
  CHECK(res.dataset.images == d.images);
  CHECK(res.dataset.labels == d.labels);
}

TEST_CASE("trigger spec serialization round trips byte-identically") {
  ImageShape shape{10, 10, 1};
  Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    auto s = sample_random_trigger(rng, shape, 10);
    auto text = s.serialize();
    CHECK(TriggerSpec::parse(text).serialize() == text);
  }
}
