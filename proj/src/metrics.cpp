#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "dataset.hpp"
#include "error.hpp"

namespace hoopseq {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ValidationError("got " + std::to_string(scores.size()) + " predictions but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
  }
  for (double s : scores) {
    if (std::isnan(s)) throw NumericError("prediction is NaN");
  }
}

}  // namespace

ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must be in (0, 1)");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (predicted) {
      ++(labels[i] == 1 ? c.tp : c.fp);
    } else {
      ++(labels[i] == 1 ? c.fn : c.tn);
    }
  }
  return c;
}

std::optional<double> accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) return std::nullopt;
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

std::optional<double> precision(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

std::optional<double> auc_roc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum keeps tied averages integral.
  std::uint64_t twice_rank_sum = 0;
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t twice_avg = (i + 1) + j;  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        twice_rank_sum += twice_avg;
        ++positives;
      }
    }
    i = j;
  }
  const std::uint64_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  // U = R - P(P+1)/2, doubled.
  const std::uint64_t twice_u = twice_rank_sum - positives * (positives + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

std::optional<double> auc_oracle(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  std::uint64_t twice_wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) twice_wins += 2;
      else if (scores[i] == scores[j]) twice_wins += 1;
    }
  }
  if (pairs == 0) return std::nullopt;
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pairs));
}

EvalReport make_report(std::string model, std::span<const double> scores, std::span<const int> labels,
                       double threshold) {
  EvalReport r;
  r.model = std::move(model);
  r.counts = confusion(scores, labels, threshold);
  r.accuracy = accuracy(r.counts);
  r.precision = precision(r.counts);
  r.auc_roc = auc_roc(scores, labels);
  r.n = scores.size();
  r.threshold = threshold;
  return r;
}

namespace {

nlohmann::ordered_json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::optional<double> read_optional(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw SchemaError(std::string("report is missing '") + key + "'");
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) throw SchemaError(std::string("report field '") + key + "' must be a number or null");
  return v.get<double>();
}

std::string csv_cell(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["counts"] = {{"tp", r.counts.tp}, {"tn", r.counts.tn}, {"fp", r.counts.fp}, {"fn", r.counts.fn}};
  j["accuracy"] = optional_number(r.accuracy);
  j["precision"] = optional_number(r.precision);
  j["auc_roc"] = optional_number(r.auc_roc);
  j["n"] = r.n;
  j["threshold"] = r.threshold;
  j["source"] = r.source;
  j["fingerprint"] = r.fingerprint;
  j["seed"] = r.seed ? nlohmann::ordered_json(*r.seed) : nlohmann::ordered_json(nullptr);
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("report must be a JSON object");
  EvalReport r;
  try {
    r.model = j.at("model").get<std::string>();
    const auto& c = j.at("counts");
    r.counts = {c.at("tp").get<std::uint64_t>(), c.at("tn").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(),
                c.at("fn").get<std::uint64_t>()};
    r.n = j.at("n").get<std::size_t>();
    r.threshold = j.at("threshold").get<double>();
    r.source = j.value("source", std::string("measured"));
    r.fingerprint = j.value("fingerprint", std::string());
    if (j.contains("seed") && !j.at("seed").is_null()) r.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("report: ") + e.what());
  }
  r.accuracy = read_optional(j, "accuracy");
  r.precision = read_optional(j, "precision");
  r.auc_roc = read_optional(j, "auc_roc");
  if (r.model.empty()) throw SchemaError("report model name is empty");
  if (r.counts.total() != r.n) throw SchemaError("report counts do not add up to n");
  return r;
}

std::vector<EvalReport> paper_reference_rows() {
  auto row = [](std::string model, std::optional<double> acc, std::optional<double> prec,
                std::optional<double> auc) {
    EvalReport r;
    r.model = std::move(model);
    r.accuracy = acc;
    r.precision = prec;
    r.auc_roc = auc;
    r.source = "paper";
    return r;
  };
  // The forest, MLP and CNN scores are only shown in charts; no numbers to quote.
  return {row("lstm", 0.7235, 0.7315, 0.7613), row("logreg", 0.7012, 0.7066, 0.6985),
          row("forest", {}, {}, {}), row("mlp", {}, {}, {}), row("cnn", {}, {}, {})};
}

ComparisonTable build_comparison(std::span<const EvalReport> reports, bool with_paper_rows) {
  if (reports.empty()) throw ValidationError("comparison needs at least one report");
  std::set<std::string> seen;
  ComparisonTable t;
  for (const auto& r : reports) {
    if (!seen.insert(r.model).second) throw ValidationError("duplicate model name in comparison: " + r.model);
    t.rows.push_back(r);
  }
  if (with_paper_rows) {
    for (auto& r : paper_reference_rows()) t.rows.push_back(std::move(r));
  }
  return t;
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream out;
  out << "model,accuracy,precision,auc_roc,source\n";
  for (const auto& r : rows) {
    out << csv_text(r.model) << ',' << csv_cell(r.accuracy) << ',' << csv_cell(r.precision) << ','
        << csv_cell(r.auc_roc) << ',' << csv_text(r.source) << '\n';
  }
  return out.str();
}

nlohmann::ordered_json ComparisonTable::to_json() const {
  nlohmann::ordered_json rows_json = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"model", r.model},
                         {"accuracy", optional_number(r.accuracy)},
                         {"precision", optional_number(r.precision)},
                         {"auc_roc", optional_number(r.auc_roc)},
                         {"source", r.source}});
  }
  return {{"columns", {"model", "accuracy", "precision", "auc_roc", "source"}}, {"rows", rows_json}};
}

}  // namespace hoopseq
