#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace arcgen::tsne {

struct TsneOptions {
  double perplexity = 30.0;
  double learning_rate = 200.0;
  int iterations = 1000;
  double early_exaggeration = 12.0;
  int exaggeration_iters = 250;
  uint64_t seed = 0;  // only used when pca_init is off
  bool pca_init = true;
};

// Exact (quadratic) t-SNE to 2 dimensions, Euclidean metric. The perplexity
// is reduced to floor((n - 1) / 3) with a warning when n < 3 * perplexity;
// fewer than 4 points is an error.
std::vector<std::array<double, 2>> run_tsne(const std::vector<std::vector<double>>& x,
                                            const TsneOptions& options = {});

struct EmbeddingMeta {
  std::string model_id;
  std::string arch;
  std::string role;
};

// Writes (model_id, arch, role, x, y) CSV plus an SVG scatter next to it.
void emit_tsne(const std::vector<std::vector<double>>& features,
               const std::vector<EmbeddingMeta>& meta,
               const std::filesystem::path& csv_path,
               const std::filesystem::path& svg_path,
               const TsneOptions& options = {});

}  // namespace arcgen::tsne
