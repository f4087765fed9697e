#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace abfr {

// Positive class is label 1.
struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

Confusion confusion(std::span<const int> labels, std::span<const int> predictions);

struct MetricSet {
  double acc = 0, auc = 0, f1 = 0, precision = 0, recall = 0, specificity = 0;
  // Names of metrics whose ratio was undefined and reported as 0.
  std::vector<std::string> undefined;
};

// Throws DimensionError on length mismatch or empty input. A single-class
// label set reports auc = 0 and lists it as undefined.
MetricSet metrics_from(std::span<const int> labels, std::span<const int> predictions,
                       std::span<const double> scores);

// Mann-Whitney statistic with midranks. Throws DomainError unless both
// classes are present.
double auc(std::span<const int> labels, std::span<const double> scores);

// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
// P(T > t) for Student's t with `dof` degrees of freedom.
double student_t_sf(double t, double dof);

struct TTest {
  double t = 0;
  double p = 1;
  std::size_t dof = 0;
  double mean_diff = 0;
  bool degenerate = false;  // zero-variance differences
};

// One-tailed paired test of mean(a - b) > 0.
TTest paired_t_one_tailed(std::span<const double> a, std::span<const double> b);

struct Summary {
  double mean = 0;
  double std = 0;
};

// Population std by default (divide by n); `sample` divides by n - 1.
Summary summarize(std::span<const double> values, bool sample = false);

struct MetricSummary {
  MetricSet mean;
  MetricSet std;
};

MetricSummary summarize(std::span<const MetricSet> folds, bool sample = false);

// CSV helpers shared by the CLI.
std::string metrics_csv(std::span<const MetricSet> folds);
std::string summary_csv(const MetricSummary& summary);
std::vector<MetricSet> parse_metrics_csv(const std::string& text);

// Values of one metric column by name: acc, auc, f1, precision, recall, specificity.
double metric_value(const MetricSet& m, const std::string& name);
inline constexpr const char* kMetricNames[] = {"acc",    "auc",    "f1",
                                               "precision", "recall", "specificity"};

}  // namespace abfr
