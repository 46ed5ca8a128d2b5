#pragma once

#include <filesystem>
#include <string>

#include "arcgen/zoo.hpp"

namespace arcgen::cli {

// Renders whatever artifacts exist in run_dir (results.csv, loss logs,
// embedding.svg) into a single static report.html: result tables laid out
// seen | unseen | All, loss curves, optional embedding figure, and the
// resolved config hash in the footer. Missing sections are skipped.
void write_report(const std::filesystem::path& run_dir, const zoo::ZooManifest& manifest,
                  const std::string& config_hash);

}  // namespace arcgen::cli
