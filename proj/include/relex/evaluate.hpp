#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relex/corpus.hpp"
#include "relex/ensemble.hpp"

namespace relex {

struct EvaluateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PrfTriple {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct LabelMetrics {
  PrfTriple prf;
  long long gold_count = 0;
  long long pred_count = 0;
  long long tp = 0, fp = 0, fn = 0;
  bool degenerate = false;  // no gold and no predictions
};

struct EvalReport {
  PrfTriple micro;
  long long tp = 0, fp = 0, fn = 0;
  std::map<std::string, LabelMetrics> per_label;
  std::optional<std::pair<double, double>> fit;  // (slope, intercept) of F1 vs train count
};

// Matching is exact on (instance key, label) pairs; keys missing on one
// side count as empty sets. P = TP/(TP+FP) with 0 when nothing was
// predicted; F1 is 0 when P = R = 0.
PrfTriple micro_prf(const PredictionSet& gold, const PredictionSet& pred);

// micro_prf restricted to each catalog label; labels with no gold and no
// predictions report zero metrics with the degenerate flag set.
std::map<std::string, LabelMetrics> per_label_prf(const PredictionSet& gold,
                                                  const PredictionSet& pred,
                                                  const LabelCatalog& catalog);

EvalReport evaluate_predictions(const PredictionSet& gold, const PredictionSet& pred,
                                const LabelCatalog& catalog);

// Ordinary least squares in closed form: slope = cov(x,y)/var(x).
// Throws on fewer than two points or when every x is equal.
std::pair<double, double> least_squares_fit(const std::vector<std::pair<double, double>>& points);

enum class ReportFormat { kText, kTsv };

// Deterministic rendering, metrics at 4 decimal places.
std::string render_report(const EvalReport& report, ReportFormat format);

// Gold relation rows as a PredictionSet (multi-label pairs fold into one
// key with several labels).
PredictionSet predictions_from_relations(const std::vector<RelationAnnotation>& relations);

// Train-counts TSV: label <TAB> count.
std::map<std::string, long long> read_train_counts(const std::string& path);
void write_train_counts(const std::string& path, const LabelCatalog& catalog);

}  // namespace relex
