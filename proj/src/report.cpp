#include "arcgen/report.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "arcgen/common.hpp"
#include "arcgen/io.hpp"

namespace arcgen::cli {

namespace fs = std::filesystem;

namespace {

struct Row {
  std::string variant, attack, arch, scope;
  uint64_t seed;
  double auc;
};

std::vector<Row> read_results(const fs::path& file) {
  std::vector<Row> rows;
  std::istringstream in(io::read_file(file));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = io::split_csv_line(line);
    if (f.size() != 7) continue;
    rows.push_back({f[1], f[2], f[3], f[4], std::strtoull(f[5].c_str(), nullptr, 10),
                    std::strtod(f[6].c_str(), nullptr)});
  }
  return rows;
}

std::string mean_cell(const std::vector<Row>& rows, const std::string& variant,
                      const std::string& attack, const std::string& arch) {
  double sum = 0;
  int n = 0;
  for (const auto& r : rows)
    if (r.variant == variant && r.attack == attack && r.arch == arch) {
      sum += r.auc;
      ++n;
    }
  if (n == 0) return "-";
  return io::fmt_fixed(sum / n, 4);
}

// Loss-curve SVG: one polyline per column of the loss log, per-epoch means.
std::string loss_curve_svg(const fs::path& file) {
  std::istringstream in(io::read_file(file));
  std::string line;
  if (!std::getline(in, line)) return "";
  auto header = io::split_csv_line(line);
  size_t ncols = header.size();
  std::map<int, std::vector<std::pair<double, int>>> sums;  // epoch -> per-col (sum, n)
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = io::split_csv_line(line);
    if (f.size() != ncols) continue;
    int epoch = std::atoi(f[0].c_str());
    auto& acc = sums[epoch];
    acc.resize(ncols - 2, {0.0, 0});
    for (size_t c = 2; c < ncols; ++c) {
      if (f[c].empty()) continue;
      acc[c - 2].first += std::strtod(f[c].c_str(), nullptr);
      acc[c - 2].second += 1;
    }
  }
  if (sums.empty()) return "";
  const int w = 560, h = 260, margin = 36;
  double lo = 1e300, hi = -1e300;
  std::vector<std::vector<std::pair<int, double>>> series(ncols - 2);
  for (const auto& [epoch, acc] : sums)
    for (size_t c = 0; c < acc.size(); ++c)
      if (acc[c].second > 0) {
        double v = acc[c].first / acc[c].second;
        series[c].push_back({epoch, v});
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (hi <= lo) hi = lo + 1.0;
  int max_epoch = sums.rbegin()->first;
  static const char* kColors[] = {"#1b6fe6", "#e6761b", "#1bb24c", "#a41be6"};
  std::string svg = "<svg xmlns='http://www.w3.org/2000/svg' width='" +
                    std::to_string(w) + "' height='" + std::to_string(h) + "'>";
  svg += "<rect width='100%' height='100%' fill='#fafafa'/>";
  for (size_t c = 0; c < series.size(); ++c) {
    if (series[c].empty()) continue;
    std::string pts;
    for (const auto& [epoch, v] : series[c]) {
      double x = margin + static_cast<double>(epoch) / std::max(1, max_epoch) *
                              (w - 2 * margin);
      double y = h - margin - (v - lo) / (hi - lo) * (h - 2 * margin);
      pts += io::fmt_fixed(x, 1) + "," + io::fmt_fixed(y, 1) + " ";
    }
    svg += "<polyline fill='none' stroke='" + std::string(kColors[c % 4]) +
           "' stroke-width='1.5' points='" + pts + "'/>";
    svg += "<text x='" + std::to_string(margin + 8 + static_cast<int>(c) * 90) +
           "' y='16' fill='" + kColors[c % 4] + "' font-size='12'>" + header[c + 2] +
           "</text>";
  }
  svg += "<text x='" + std::to_string(w / 2) + "' y='" + std::to_string(h - 6) +
         "' font-size='11' text-anchor='middle'>epoch</text></svg>";
  return svg;
}

}  // namespace

void write_report(const fs::path& run_dir, const zoo::ZooManifest& manifest,
                  const std::string& config_hash) {
  std::string html =
      "<!doctype html><html><head><meta charset='utf-8'><title>arcgen report"
      "</title><style>body{font-family:sans-serif;margin:24px;}table{border-"
      "collapse:collapse;margin:12px 0;}td,th{border:1px solid #bbb;padding:4px "
      "10px;text-align:center;}th{background:#eee;}caption{font-weight:bold;"
      "padding:6px;}</style></head><body>\n<h1>arcgen run report</h1>\n";

  fs::path results = run_dir / "results.csv";
  if (io::file_exists(results)) {
    auto rows = read_results(results);
    std::set<std::string> attacks;
    std::set<std::string> variants_present;
    for (const auto& r : rows) {
      attacks.insert(r.attack);
      variants_present.insert(r.variant);
    }
    std::vector<std::string> variant_order;
    for (const auto& v : {"full", "no_sla", "no_dla", "no_sla_dla", "no_arch_rand",
                          "no_als", "baseline"})
      if (variants_present.count(v)) variant_order.push_back(v);
    for (const auto& v : variants_present)
      if (std::find(variant_order.begin(), variant_order.end(), v) ==
          variant_order.end())
        variant_order.push_back(v);

    for (const auto& attack : attacks) {
      html += "<table><caption>attack: " + attack + "</caption><tr><th></th>";
      for (const auto& a : manifest.seen_archs) html += "<th>" + a + " (seen)</th>";
      for (const auto& a : manifest.unseen_archs)
        html += "<th>" + a + " (unseen)</th>";
      html += "<th>All</th></tr>\n";
      for (const auto& v : variant_order) {
        html += "<tr><th>" + v + "</th>";
        for (const auto& a : manifest.seen_archs)
          html += "<td>" + mean_cell(rows, v, attack, a) + "</td>";
        for (const auto& a : manifest.unseen_archs)
          html += "<td>" + mean_cell(rows, v, attack, a) + "</td>";
        html += "<td>" + mean_cell(rows, v, attack, "All") + "</td></tr>\n";
      }
      html += "</table>\n";
    }
  }

  std::vector<fs::path> loss_logs;
  if (fs::exists(run_dir))
    for (const auto& entry : fs::directory_iterator(run_dir)) {
      std::string name = entry.path().filename().string();
      if (name.rfind("loss_log_", 0) == 0 && entry.path().extension() == ".csv")
        loss_logs.push_back(entry.path());
    }
  std::sort(loss_logs.begin(), loss_logs.end());
  for (const auto& log : loss_logs) {
    std::string svg = loss_curve_svg(log);
    if (svg.empty()) continue;
    html += "<h3>" + log.stem().string() + "</h3>\n" + svg + "\n";
  }

  fs::path embedding = run_dir / "embedding.svg";
  if (io::file_exists(embedding)) {
    html += "<h3>feature embedding</h3>\n" + io::read_file(embedding) + "\n";
  }

  html += "<footer><p>config " + config_hash + "</p></footer></body></html>\n";
  io::write_file_atomic(run_dir / "report.html", html);
}

}  // namespace arcgen::cli
