#include "relex/evaluate.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "relex/text.hpp"

namespace relex {

namespace {

PrfTriple prf_from_counts(long long tp, long long fp, long long fn) {
  PrfTriple out;
  out.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  out.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  out.f1 = out.precision + out.recall > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

const std::set<std::string>& labels_for(const PredictionSet& set, const InstanceKey& key) {
  static const std::set<std::string> kEmpty;
  auto it = set.find(key);
  return it == set.end() ? kEmpty : it->second;
}

void count_matches(const PredictionSet& gold, const PredictionSet& pred, long long* tp,
                   long long* fp, long long* fn) {
  std::set<InstanceKey> keys;
  for (const auto& [key, labels] : gold) keys.insert(key);
  for (const auto& [key, labels] : pred) keys.insert(key);
  for (const InstanceKey& key : keys) {
    const auto& g = labels_for(gold, key);
    const auto& p = labels_for(pred, key);
    for (const std::string& label : p) {
      if (g.count(label) > 0) {
        ++*tp;
      } else {
        ++*fp;
      }
    }
    for (const std::string& label : g) {
      if (p.count(label) == 0) ++*fn;
    }
  }
}

PredictionSet restrict_to_label(const PredictionSet& set, const std::string& label) {
  PredictionSet out;
  for (const auto& [key, labels] : set) {
    if (labels.count(label) > 0) out[key] = {label};
  }
  return out;
}

std::string format4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string format6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

PrfTriple micro_prf(const PredictionSet& gold, const PredictionSet& pred) {
  long long tp = 0, fp = 0, fn = 0;
  count_matches(gold, pred, &tp, &fp, &fn);
  return prf_from_counts(tp, fp, fn);
}

std::map<std::string, LabelMetrics> per_label_prf(const PredictionSet& gold,
                                                  const PredictionSet& pred,
                                                  const LabelCatalog& catalog) {
  std::map<std::string, LabelMetrics> out;
  for (const std::string& label : catalog.labels) {
    const PredictionSet g = restrict_to_label(gold, label);
    const PredictionSet p = restrict_to_label(pred, label);
    LabelMetrics metrics;
    count_matches(g, p, &metrics.tp, &metrics.fp, &metrics.fn);
    metrics.prf = prf_from_counts(metrics.tp, metrics.fp, metrics.fn);
    metrics.gold_count = static_cast<long long>(g.size());
    metrics.pred_count = static_cast<long long>(p.size());
    metrics.degenerate = metrics.gold_count == 0 && metrics.pred_count == 0;
    out[label] = metrics;
  }
  return out;
}

EvalReport evaluate_predictions(const PredictionSet& gold, const PredictionSet& pred,
                                const LabelCatalog& catalog) {
  EvalReport report;
  count_matches(gold, pred, &report.tp, &report.fp, &report.fn);
  report.micro = prf_from_counts(report.tp, report.fp, report.fn);
  report.per_label = per_label_prf(gold, pred, catalog);
  return report;
}

std::pair<double, double> least_squares_fit(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw EvaluateError("least squares needs at least two points");
  double mean_x = 0.0, mean_y = 0.0;
  for (const auto& [x, y] : points) {
    mean_x += x;
    mean_y += y;
  }
  mean_x /= static_cast<double>(points.size());
  mean_y /= static_cast<double>(points.size());
  double cov = 0.0, var = 0.0;
  for (const auto& [x, y] : points) {
    cov += (x - mean_x) * (y - mean_y);
    var += (x - mean_x) * (x - mean_x);
  }
  if (var == 0.0) throw EvaluateError("least squares undefined: all x values are equal");
  const double slope = cov / var;
  return {slope, mean_y - slope * mean_x};
}

std::string render_report(const EvalReport& report, ReportFormat format) {
  std::string out;
  if (format == ReportFormat::kTsv) {
    out += "label\tprecision\trecall\tf1\tgold\tpred\n";
    out += "MICRO\t" + format4(report.micro.precision) + "\t" + format4(report.micro.recall) +
           "\t" + format4(report.micro.f1) + "\t" + std::to_string(report.tp + report.fn) + "\t" +
           std::to_string(report.tp + report.fp) + "\n";
    for (const auto& [label, m] : report.per_label) {
      out += label + "\t" + format4(m.prf.precision) + "\t" + format4(m.prf.recall) + "\t" +
             format4(m.prf.f1) + "\t" + std::to_string(m.gold_count) + "\t" +
             std::to_string(m.pred_count) + "\n";
    }
    if (report.fit.has_value()) {
      out += "FIT\tslope=" + format6(report.fit->first) +
             "\tintercept=" + format6(report.fit->second) + "\n";
    }
    return out;
  }
  out += "micro precision " + format4(report.micro.precision) + "  recall " +
         format4(report.micro.recall) + "  f1 " + format4(report.micro.f1) + "\n";
  for (const auto& [label, m] : report.per_label) {
    out += "  " + label + ": P=" + format4(m.prf.precision) + " R=" + format4(m.prf.recall) +
           " F1=" + format4(m.prf.f1) + " gold=" + std::to_string(m.gold_count) +
           " pred=" + std::to_string(m.pred_count) + (m.degenerate ? " (no gold, no pred)" : "") +
           "\n";
  }
  if (report.fit.has_value()) {
    out += "fit of F1 vs train count: slope=" + format6(report.fit->first) +
           " intercept=" + format6(report.fit->second) + "\n";
  }
  return out;
}

PredictionSet predictions_from_relations(const std::vector<RelationAnnotation>& relations) {
  PredictionSet out;
  for (const RelationAnnotation& rel : relations) {
    out[{rel.doc_id, rel.subject_id, rel.object_id}].insert(rel.label);
  }
  return out;
}

std::map<std::string, long long> read_train_counts(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EvaluateError("cannot open " + path);
  std::map<std::string, long long> counts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 2) {
      throw EvaluateError(path + ":" + std::to_string(line_no) +
                          ": train counts rows are label<TAB>count");
    }
    try {
      counts[cols[0]] = std::stoll(cols[1]);
    } catch (const std::exception&) {
      throw EvaluateError(path + ":" + std::to_string(line_no) + ": bad count \"" + cols[1] + "\"");
    }
  }
  return counts;
}

void write_train_counts(const std::string& path, const LabelCatalog& catalog) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EvaluateError("cannot write " + path);
  for (std::size_t i = 0; i < catalog.labels.size(); ++i) {
    out << catalog.labels[i] << '\t' << catalog.counts[i] << '\n';
  }
}

}  // namespace relex
