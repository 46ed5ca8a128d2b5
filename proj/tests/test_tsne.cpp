#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "arcgen/common.hpp"
#include "arcgen/io.hpp"
#include "arcgen/rng.hpp"
#include "arcgen/tsne.hpp"

using namespace arcgen;
using namespace arcgen::tsne;

namespace fs = std::filesystem;

namespace {

std::vector<std::vector<double>> random_points(int n, int d, uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> x(static_cast<size_t>(n),
                                     std::vector<double>(static_cast<size_t>(d)));
  for (auto& row : x)
    for (auto& v : row) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("tsne: n points in, n 2-d rows out; deterministic with pca init") {
  auto x = random_points(40, 10, 1);
  TsneOptions opt;
  opt.iterations = 150;
  auto y1 = run_tsne(x, opt);
  auto y2 = run_tsne(x, opt);
  REQUIRE(y1.size() == 40);
  CHECK(y1 == y2);
  for (const auto& r : y1) {
    CHECK(std::isfinite(r[0]));
    CHECK(std::isfinite(r[1]));
  }
}

TEST_CASE("tsne: fewer than 4 points is an error") {
  auto x = random_points(3, 5, 2);
  CHECK_THROWS_AS(run_tsne(x), InvalidSpecError);
}

TEST_CASE("tsne: duplicate feature vectors collapse together") {
  auto x = random_points(80, 16, 3);
  x[41] = x[17];  // byte-identical pair
  TsneOptions opt;
  opt.iterations = 400;
  auto y = run_tsne(x, opt);

  auto dist = [&](size_t a, size_t b) {
    double dx = y[a][0] - y[b][0], dy = y[a][1] - y[b][1];
    return std::sqrt(dx * dx + dy * dy);
  };
  std::vector<double> all;
  for (size_t i = 0; i < y.size(); ++i)
    for (size_t j = i + 1; j < y.size(); ++j) all.push_back(dist(i, j));
  std::sort(all.begin(), all.end());
  double pair_dist = dist(17, 41);
  // within the closest 1% of all pairwise distances
  double p01 = all[static_cast<size_t>(std::ceil(0.01 * all.size())) - 1];
  CHECK(pair_dist <= p01);
}

TEST_CASE("emit_tsne writes the embedding csv and an svg scatter") {
  auto x = random_points(30, 8, 4);
  std::vector<EmbeddingMeta> meta;
  for (int i = 0; i < 30; ++i)
    meta.push_back({"m" + std::to_string(i), i % 2 ? "cnn" : "mlp",
                    i % 3 ? "benign" : "backdoored"});
  auto dir = fs::temp_directory_path() / "arcgen_tsne_test";
  fs::create_directories(dir);
  TsneOptions opt;
  opt.iterations = 100;
  emit_tsne(x, meta, dir / "embedding.csv", dir / "embedding.svg", opt);

  std::string csv = io::read_file(dir / "embedding.csv");
  CHECK(csv.rfind("model_id,arch,role,x,y\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 31);
  std::string svg = io::read_file(dir / "embedding.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  fs::remove_all(dir);
}
