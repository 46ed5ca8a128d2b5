#include "arcgen/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "arcgen/common.hpp"
#include "arcgen/io.hpp"
#include "arcgen/rng.hpp"

namespace arcgen::tsne {

namespace fs = std::filesystem;

// Top-2 principal components via cyclic Jacobi on the covariance matrix.
// Deterministic; eigenvector signs are fixed so reruns agree bytewise.
static std::vector<std::array<double, 2>> pca2(const std::vector<std::vector<double>>& x) {
  size_t n = x.size();
  size_t d = x.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& row : x)
    for (size_t j = 0; j < d; ++j) mean[j] += row[j];
  for (auto& m : mean) m /= static_cast<double>(n);

  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (const auto& row : x)
    for (size_t a = 0; a < d; ++a) {
      double da = row[a] - mean[a];
      for (size_t b = a; b < d; ++b) cov[a][b] += da * (row[b] - mean[b]);
    }
  for (size_t a = 0; a < d; ++a)
    for (size_t b = a; b < d; ++b) {
      cov[a][b] /= static_cast<double>(n);
      cov[b][a] = cov[a][b];
    }

  std::vector<std::vector<double>> vecs(d, std::vector<double>(d, 0.0));
  for (size_t i = 0; i < d; ++i) vecs[i][i] = 1.0;
  for (int sweep = 0; sweep < 32; ++sweep) {
    double off = 0.0;
    for (size_t p = 0; p < d; ++p)
      for (size_t q = p + 1; q < d; ++q) off += cov[p][q] * cov[p][q];
    if (off < 1e-18) break;
    for (size_t p = 0; p < d; ++p)
      for (size_t q = p + 1; q < d; ++q) {
        if (std::abs(cov[p][q]) < 1e-300) continue;
        double theta = 0.5 * std::atan2(2.0 * cov[p][q], cov[q][q] - cov[p][p]);
        double c = std::cos(theta), s = std::sin(theta);
        for (size_t k = 0; k < d; ++k) {
          double akp = cov[k][p], akq = cov[k][q];
          cov[k][p] = c * akp - s * akq;
          cov[k][q] = s * akp + c * akq;
        }
        for (size_t k = 0; k < d; ++k) {
          double apk = cov[p][k], aqk = cov[q][k];
          cov[p][k] = c * apk - s * aqk;
          cov[q][k] = s * apk + c * aqk;
        }
        for (size_t k = 0; k < d; ++k) {
          double vkp = vecs[k][p], vkq = vecs[k][q];
          vecs[k][p] = c * vkp - s * vkq;
          vecs[k][q] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<size_t> idx(d);
  for (size_t i = 0; i < d; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return cov[a][a] > cov[b][b]; });
  std::array<size_t, 2> top{idx[0], d > 1 ? idx[1] : idx[0]};
  for (size_t comp = 0; comp < 2; ++comp) {
    size_t big = 0;
    for (size_t k = 1; k < d; ++k)
      if (std::abs(vecs[k][top[comp]]) > std::abs(vecs[big][top[comp]])) big = k;
    if (vecs[big][top[comp]] < 0.0)
      for (size_t k = 0; k < d; ++k) vecs[k][top[comp]] = -vecs[k][top[comp]];
  }
  std::vector<std::array<double, 2>> y(n);
  for (size_t i = 0; i < n; ++i)
    for (size_t comp = 0; comp < 2; ++comp) {
      double acc = 0.0;
      for (size_t k = 0; k < d; ++k) acc += (x[i][k] - mean[k]) * vecs[k][top[comp]];
      y[i][comp] = acc;
    }
  return y;
}

std::vector<std::array<double, 2>> run_tsne(const std::vector<std::vector<double>>& x,
                                            const TsneOptions& options) {
  size_t n = x.size();
  if (n < 4) throw InvalidSpecError("tsne: need at least 4 points");
  double perplexity = options.perplexity;
  if (static_cast<double>(n) < 3.0 * perplexity + 1.0) {
    perplexity = std::floor(static_cast<double>(n - 1) / 3.0);
    log_warn("tsne: perplexity reduced to " + io::fmt_double(perplexity) +
             " for n = " + std::to_string(n));
  }

  // Pairwise squared distances.
  std::vector<std::vector<double>> d2(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (size_t k = 0; k < x[i].size(); ++k) {
        double diff = x[i][k] - x[j][k];
        acc += diff * diff;
      }
      d2[i][j] = d2[j][i] = acc;
    }

  // Per-point precision via binary search on the conditional entropy.
  double log_perp = std::log(perplexity);
  std::vector<std::vector<double>> p(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    double beta = 1.0, beta_lo = -1e300, beta_hi = 1e300;
    for (int it = 0; it < 64; ++it) {
      double sum = 0.0, dsum = 0.0;
      for (size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        double w = std::exp(-d2[i][j] * beta);
        p[i][j] = w;
        sum += w;
        dsum += d2[i][j] * w;
      }
      double entropy = sum > 0 ? std::log(sum) + beta * dsum / sum : 0.0;
      double diff = entropy - log_perp;
      if (std::abs(diff) < 1e-7) break;
      if (diff > 0) {
        beta_lo = beta;
        beta = beta_hi > 1e299 ? beta * 2.0 : (beta + beta_hi) / 2.0;
      } else {
        beta_hi = beta;
        beta = beta_lo < -1e299 ? beta / 2.0 : (beta + beta_lo) / 2.0;
      }
    }
    double sum = 0.0;
    for (size_t j = 0; j < n; ++j) sum += p[i][j];
    if (sum <= 0) sum = 1.0;
    for (size_t j = 0; j < n; ++j) p[i][j] /= sum;
  }
  // Symmetrize.
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      double v = (p[i][j] + p[j][i]) / (2.0 * static_cast<double>(n));
      p[i][j] = p[j][i] = std::max(v, 1e-12);
    }
  for (size_t i = 0; i < n; ++i) p[i][i] = 0.0;

  std::vector<std::array<double, 2>> y;
  if (options.pca_init) {
    y = pca2(x);
    double sd = 0.0, mean0 = 0.0;
    for (const auto& r : y) mean0 += r[0];
    mean0 /= static_cast<double>(n);
    for (const auto& r : y) sd += (r[0] - mean0) * (r[0] - mean0);
    sd = std::sqrt(sd / static_cast<double>(n));
    double scale = sd > 0 ? 1e-4 / sd : 1e-4;
    for (auto& r : y) {
      r[0] *= scale;
      r[1] *= scale;
    }
  } else {
    Rng rng(options.seed);
    y.resize(n);
    for (auto& r : y) {
      r[0] = rng.normal(0.0, 1e-4);
      r[1] = rng.normal(0.0, 1e-4);
    }
  }

  std::vector<std::array<double, 2>> vel(n, {0.0, 0.0}), gains(n, {1.0, 1.0});
  std::vector<std::array<double, 2>> grad(n);
  for (int iter = 0; iter < options.iterations; ++iter) {
    double exagg = iter < options.exaggeration_iters ? options.early_exaggeration : 1.0;
    double momentum = iter < options.exaggeration_iters ? 0.5 : 0.8;

    std::vector<std::vector<double>> qw(n, std::vector<double>(n, 0.0));
    double qsum = 0.0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) {
        double dy0 = y[i][0] - y[j][0], dy1 = y[i][1] - y[j][1];
        double w = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
        qw[i][j] = qw[j][i] = w;
        qsum += 2.0 * w;
      }
    for (size_t i = 0; i < n; ++i) {
      grad[i] = {0.0, 0.0};
      for (size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        double q = std::max(qw[i][j] / qsum, 1e-12);
        double mult = 4.0 * (exagg * p[i][j] - q) * qw[i][j];
        grad[i][0] += mult * (y[i][0] - y[j][0]);
        grad[i][1] += mult * (y[i][1] - y[j][1]);
      }
    }
    for (size_t i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c) {
        bool same_sign = (grad[i][c] > 0) == (vel[i][c] > 0);
        gains[i][c] = same_sign ? gains[i][c] * 0.8 : gains[i][c] + 0.2;
        gains[i][c] = std::max(gains[i][c], 0.01);
        vel[i][c] = momentum * vel[i][c] -
                    options.learning_rate * gains[i][c] * grad[i][c];
        y[i][c] += vel[i][c];
      }
    // re-center
    double m0 = 0.0, m1 = 0.0;
    for (const auto& r : y) {
      m0 += r[0];
      m1 += r[1];
    }
    m0 /= static_cast<double>(n);
    m1 /= static_cast<double>(n);
    for (auto& r : y) {
      r[0] -= m0;
      r[1] -= m1;
    }
  }
  return y;
}

void emit_tsne(const std::vector<std::vector<double>>& features,
               const std::vector<EmbeddingMeta>& meta, const fs::path& csv_path,
               const fs::path& svg_path, const TsneOptions& options) {
  if (features.size() != meta.size())
    throw InvalidSpecError("emit_tsne: features and metadata differ in length");
  auto y = run_tsne(features, options);

  std::string csv = "model_id,arch,role,x,y\n";
  for (size_t i = 0; i < y.size(); ++i)
    csv += meta[i].model_id + "," + meta[i].arch + "," + meta[i].role + "," +
           io::fmt_double(y[i][0]) + "," + io::fmt_double(y[i][1]) + "\n";
  io::write_file_atomic(csv_path, csv);

  // Scatter: color by role, glyph label by arch index.
  double lo0 = 1e300, hi0 = -1e300, lo1 = 1e300, hi1 = -1e300;
  for (const auto& r : y) {
    lo0 = std::min(lo0, r[0]);
    hi0 = std::max(hi0, r[0]);
    lo1 = std::min(lo1, r[1]);
    hi1 = std::max(hi1, r[1]);
  }
  double span0 = std::max(1e-9, hi0 - lo0), span1 = std::max(1e-9, hi1 - lo1);
  const int w = 640, h = 480, margin = 24;
  std::map<std::string, int> arch_index;
  for (const auto& m : meta)
    arch_index.emplace(m.arch, static_cast<int>(arch_index.size()));
  static const char* kPalette[] = {"#e6761b", "#1b6fe6", "#1bb24c", "#a41be6",
                                   "#e61b4d", "#7a7a1b"};
  std::string svg = "<svg xmlns='http://www.w3.org/2000/svg' width='" +
                    std::to_string(w) + "' height='" + std::to_string(h) + "'>\n";
  svg += "<rect width='100%' height='100%' fill='white'/>\n";
  for (size_t i = 0; i < y.size(); ++i) {
    double px = margin + (y[i][0] - lo0) / span0 * (w - 2 * margin);
    double py = margin + (y[i][1] - lo1) / span1 * (h - 2 * margin);
    const char* color = meta[i].role == "benign" ? kPalette[0] : kPalette[1];
    int shape = arch_index[meta[i].arch] % 3;
    if (shape == 0) {
      svg += "<circle cx='" + io::fmt_fixed(px, 2) + "' cy='" + io::fmt_fixed(py, 2) +
             "' r='3.5' fill='" + color + "' fill-opacity='0.75'/>\n";
    } else if (shape == 1) {
      svg += "<rect x='" + io::fmt_fixed(px - 3, 2) + "' y='" + io::fmt_fixed(py - 3, 2) +
             "' width='6' height='6' fill='" + color + "' fill-opacity='0.75'/>\n";
    } else {
      svg += "<path d='M " + io::fmt_fixed(px, 2) + " " + io::fmt_fixed(py - 4, 2) +
             " L " + io::fmt_fixed(px - 3.5, 2) + " " + io::fmt_fixed(py + 3, 2) + " L " +
             io::fmt_fixed(px + 3.5, 2) + " " + io::fmt_fixed(py + 3, 2) +
             " Z' fill='" + color + "' fill-opacity='0.75'/>\n";
    }
  }
  svg += "</svg>\n";
  io::write_file_atomic(svg_path, svg);
}

}  // namespace arcgen::tsne
