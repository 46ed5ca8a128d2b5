#include "arcgen/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "arcgen/common.hpp"
#include "arcgen/io.hpp"

namespace arcgen::data {

namespace fs = std::filesystem;

void LabeledDataset::validate() const {
  if (images.size() != labels.size())
    throw InvalidSpecError("dataset: images and labels differ in length");
  if (num_classes <= 0) throw InvalidSpecError("dataset: num_classes must be positive");
  size_t expect = static_cast<size_t>(shape.size());
  for (size_t i = 0; i < images.size(); ++i) {
    if (images[i].size() != expect)
      throw InvalidSpecError("dataset: image " + std::to_string(i) + " has wrong size");
    for (double v : images[i])
      if (!(v >= 0.0 && v <= 1.0))
        throw InvalidSpecError("dataset: pixel out of [0,1] in image " + std::to_string(i));
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw InvalidSpecError("dataset: label out of range at " + std::to_string(i));
  }
}

DataSplit split_dataset(const LabeledDataset& dataset, double attacker_frac,
                        uint64_t seed) {
  if (dataset.size() == 0) throw InvalidSpecError("split_dataset: empty dataset");
  if (!(attacker_frac > 0.0 && attacker_frac < 1.0))
    throw InvalidSpecError("split_dataset: attacker_frac must be in (0,1)");
  size_t n = dataset.size();
  std::vector<int> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(idx);
  size_t n_attacker = static_cast<size_t>(std::llround(attacker_frac * static_cast<double>(n)));
  std::vector<int> a(idx.begin(), idx.begin() + static_cast<long>(n_attacker));
  std::vector<int> d(idx.begin() + static_cast<long>(n_attacker), idx.end());
  std::sort(a.begin(), a.end());
  std::sort(d.begin(), d.end());
  DataSplit out;
  out.attacker = subset(dataset, a);
  out.attacker.name = dataset.name + "/attacker";
  out.defender = subset(dataset, d);
  out.defender.name = dataset.name + "/defender";
  out.seed = seed;
  return out;
}

LabeledDataset subset(const LabeledDataset& dataset, const std::vector<int>& idx) {
  LabeledDataset out;
  out.name = dataset.name;
  out.shape = dataset.shape;
  out.num_classes = dataset.num_classes;
  out.images.reserve(idx.size());
  out.labels.reserve(idx.size());
  for (int i : idx) {
    out.images.push_back(dataset.images.at(static_cast<size_t>(i)));
    out.labels.push_back(dataset.labels.at(static_cast<size_t>(i)));
  }
  return out;
}

static std::string pack_bytes(const LabeledDataset& d) {
  std::string out;
  out += "ARCD";
  io::put_u32(out, 1);  // version
  io::put_u32(out, static_cast<uint32_t>(d.size()));
  io::put_u32(out, static_cast<uint32_t>(d.shape.h));
  io::put_u32(out, static_cast<uint32_t>(d.shape.w));
  io::put_u32(out, static_cast<uint32_t>(d.shape.c));
  io::put_u32(out, static_cast<uint32_t>(d.num_classes));
  for (const auto& img : d.images)
    for (double v : img)
      out.push_back(static_cast<char>(static_cast<uint8_t>(std::llround(v * 255.0))));
  for (int l : d.labels) io::put_u32(out, static_cast<uint32_t>(l));
  return out;
}

LabeledDataset load_packed(const fs::path& path) {
  std::string in = io::read_file(path);
  if (in.size() < 28 || in.compare(0, 4, "ARCD") != 0)
    throw IoError("not an ARCD packed dataset: " + path.string());
  size_t off = 4;
  uint32_t version = io::get_u32(in, off);
  if (version != 1) throw IoError("unsupported ARCD version");
  uint32_t n = io::get_u32(in, off);
  LabeledDataset d;
  d.shape.h = static_cast<int>(io::get_u32(in, off));
  d.shape.w = static_cast<int>(io::get_u32(in, off));
  d.shape.c = static_cast<int>(io::get_u32(in, off));
  d.num_classes = static_cast<int>(io::get_u32(in, off));
  d.name = path.stem().string();
  size_t pixels = static_cast<size_t>(n) * static_cast<size_t>(d.shape.size());
  if (in.size() < off + pixels + 4ull * n) throw IoError("ARCD payload truncated");
  d.images.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    auto& img = d.images[i];
    img.resize(static_cast<size_t>(d.shape.size()));
    for (size_t k = 0; k < img.size(); ++k)
      img[k] = static_cast<uint8_t>(in[off + k]) / 255.0;
    off += img.size();
  }
  d.labels.resize(n);
  for (uint32_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(io::get_u32(in, off));
  d.validate();
  return d;
}

void save_packed(const LabeledDataset& dataset, const fs::path& path) {
  dataset.validate();
  io::write_file_atomic(path, pack_bytes(dataset));
}

std::string dataset_fingerprint(const LabeledDataset& dataset) {
  return io::fingerprint(pack_bytes(dataset));
}

// --- PGM / PPM -------------------------------------------------------------

static void skip_pnm_space(const std::string& s, size_t& off) {
  while (off < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[off]))) {
      ++off;
    } else if (s[off] == '#') {
      while (off < s.size() && s[off] != '\n') ++off;
    } else {
      break;
    }
  }
}

static int read_pnm_int(const std::string& s, size_t& off) {
  skip_pnm_space(s, off);
  int v = 0;
  bool any = false;
  while (off < s.size() && std::isdigit(static_cast<unsigned char>(s[off]))) {
    v = v * 10 + (s[off] - '0');
    ++off;
    any = true;
  }
  if (!any) throw IoError("malformed PNM header");
  return v;
}

static std::vector<double> load_pnm(const fs::path& path, ImageShape& shape) {
  std::string s = io::read_file(path);
  if (s.size() < 2 || s[0] != 'P' || (s[1] != '5' && s[1] != '6'))
    throw IoError("unsupported image format (want binary PGM/PPM): " + path.string());
  int channels = (s[1] == '5') ? 1 : 3;
  size_t off = 2;
  int w = read_pnm_int(s, off);
  int h = read_pnm_int(s, off);
  int maxval = read_pnm_int(s, off);
  if (maxval <= 0 || maxval > 255) throw IoError("PNM maxval out of range: " + path.string());
  ++off;  // single whitespace after maxval
  size_t need = static_cast<size_t>(w) * h * channels;
  if (s.size() < off + need) throw IoError("PNM pixel data truncated: " + path.string());
  std::vector<double> img(need);
  for (size_t i = 0; i < need; ++i)
    img[i] = static_cast<uint8_t>(s[off + i]) / static_cast<double>(maxval);
  shape = {h, w, channels};
  return img;
}

LabeledDataset load_image_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<int, std::vector<fs::path>> by_class;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    const std::string cls = entry.path().filename().string();
    char* end = nullptr;
    long label = std::strtol(cls.c_str(), &end, 10);
    if (end == cls.c_str() || *end != '\0') continue;  // non-numeric dirs ignored
    auto& files = by_class[static_cast<int>(label)];
    for (const auto& f : fs::directory_iterator(entry.path())) {
      auto ext = f.path().extension().string();
      if (ext == ".pgm" || ext == ".ppm") files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
  }
  if (by_class.empty()) throw IoError("no class subdirectories in " + dir.string());
  LabeledDataset d;
  d.name = dir.filename().string();
  int max_label = by_class.rbegin()->first;
  d.num_classes = max_label + 1;
  bool first = true;
  for (const auto& [label, files] : by_class) {
    for (const auto& f : files) {
      ImageShape shape;
      auto img = load_pnm(f, shape);
      if (first) {
        d.shape = shape;
        first = false;
      } else if (!(shape == d.shape)) {
        throw IoError("image shape mismatch: " + f.string());
      }
      d.images.push_back(std::move(img));
      d.labels.push_back(label);
    }
  }
  d.validate();
  return d;
}

// --- Synthetic digits --------------------------------------------------------

// 5x7 glyph masks for digits 0..9 (row-major, '1' = ink).
static const char* kGlyphs[10] = {
    "01110100011001110101110011000101110",  // 0
    "00100011000010000100001000010001110",  // 1
    "01110100010000100110010001000111111",  // 2
    "01110100010000101110000011000101110",  // 3
    "00010001100101010010111110001000010",  // 4
    "11111100001111000001000011000101110",  // 5
    "01110100011000011110100011000101110",  // 6
    "11111000010001000100010001000010000",  // 7
    "01110100011000101110100011000101110",  // 8
    "01110100011000101111000011000101110",  // 9
};

LabeledDataset make_synthetic_digits(int n, uint64_t seed, int h, int w) {
  if (n <= 0) throw InvalidSpecError("make_synthetic_digits: n must be positive");
  if (h < 8 || w < 6) throw InvalidSpecError("make_synthetic_digits: canvas too small");
  LabeledDataset d;
  d.name = "synthetic_digits";
  d.shape = {h, w, 1};
  d.num_classes = 10;
  Rng rng(seed);
  d.images.reserve(static_cast<size_t>(n));
  d.labels.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int label = static_cast<int>(rng.uniform_int(0, 9));
    std::vector<double> img(static_cast<size_t>(h) * w, 0.0);
    int dy = static_cast<int>(rng.uniform_int(0, h - 7));
    int dx = static_cast<int>(rng.uniform_int(0, w - 5));
    double ink = rng.uniform(0.6, 1.0);
    const char* g = kGlyphs[label];
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 5; ++c)
        if (g[r * 5 + c] == '1') img[static_cast<size_t>(r + dy) * w + (c + dx)] = ink;
    for (auto& v : img) {
      v += rng.normal(0.0, 0.05);
      v = std::min(1.0, std::max(0.0, v));
      // snap to the 8-bit grid like a real uint8 source would
      v = std::llround(v * 255.0) / 255.0;
    }
    d.images.push_back(std::move(img));
    d.labels.push_back(label);
  }
  return d;
}

}  // namespace arcgen::data
