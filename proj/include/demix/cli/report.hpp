#pragma once

#include "demix/inference/diagnostics.hpp"

#include <filesystem>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace demix {

/// Results of one evaluation-style command. Every table is keyed by domain
/// names and every report carries the config hash and checkpoint id it was
/// produced from.
struct EvalReport {
  std::string command;
  std::string mode;
  nlohmann::json config;
  std::string config_hash;
  std::string checkpoint_id;
  /// Prior provenance (strategy, lambda, cache_blocks, blocks used, weights).
  nlohmann::json prior;
  /// Named tables, e.g. "perplexity", "affinity", "posteriors".
  std::map<std::string, LabeledMatrix> tables;
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const EvalReport&) const = default;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

enum class ReportFormat { csv, json };

/// Shortest round-trip decimal; integral values keep a trailing ".0".
std::string format_number(double v);

/// Header row "dataset,<cols...>", then one row per matrix row.
std::string matrix_csv(const LabeledMatrix& m);

/// Writes <dir>/<stem>.json or <dir>/<stem>_<table>.csv per table; returns
/// the paths written.
std::vector<std::filesystem::path> emit_report(const EvalReport& report, ReportFormat format,
                                               const std::filesystem::path& dir, const std::string& stem);

}  // namespace demix
