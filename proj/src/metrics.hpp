#pragma once

// Confusion counts, accuracy/precision, ROC AUC and comparison tables.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace hoopseq {

inline constexpr double kDefaultThreshold = 0.5;

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

// Score >= threshold counts as a predicted home win.
ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels,
                          double threshold = kDefaultThreshold);

// Empty optional marks an undefined metric (no samples, no positive predictions, one class).
std::optional<double> accuracy(const ConfusionCounts& c);
std::optional<double> precision(const ConfusionCounts& c);
std::optional<double> auc_roc(std::span<const double> scores, std::span<const int> labels);
// All positive/negative pairs, ties worth one half.
std::optional<double> auc_oracle(std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
  std::string model;
  ConfusionCounts counts;
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> auc_roc;
  std::size_t n = 0;
  double threshold = kDefaultThreshold;
  std::string source = "measured";
  std::string fingerprint;
  std::optional<std::uint64_t> seed;
};

EvalReport make_report(std::string model, std::span<const double> scores, std::span<const int> labels,
                       double threshold = kDefaultThreshold);

nlohmann::ordered_json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// Published numbers, one row per model kind, flagged source=paper. Models whose
// scores were never stated numerically carry undefined metrics.
std::vector<EvalReport> paper_reference_rows();

struct ComparisonTable {
  std::vector<EvalReport> rows;

  std::string to_csv() const;
  nlohmann::ordered_json to_json() const;
};

ComparisonTable build_comparison(std::span<const EvalReport> reports, bool with_paper_rows = false);

}  // namespace hoopseq
