#include "abfr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "abfr/error.hpp"

namespace abfr {

Confusion confusion(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size())
    throw DimensionError("confusion: labels and predictions differ in length");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool truth = labels[i] == 1, pred = predictions[i] == 1;
    if (truth && pred) ++c.tp;
    else if (truth) ++c.fn;
    else if (pred) ++c.fp;
    else ++c.tn;
  }
  return c;
}

double auc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size())
    throw DimensionError("auc: labels and scores differ in length");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Midranks (1-based) over tied runs.
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t q = i; q <= j; ++q) rank[order[q]] = mid;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] == 1) {
      pos += 1;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) throw DomainError("auc: undefined with a single class present");
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

MetricSet metrics_from(std::span<const int> labels, std::span<const int> predictions,
                       std::span<const double> scores) {
  if (labels.empty()) throw DimensionError("metrics: empty input");
  if (scores.size() != labels.size())
    throw DimensionError("metrics: labels and scores differ in length");
  const Confusion c = confusion(labels, predictions);
  MetricSet m;
  auto ratio = [&](std::size_t num, std::size_t den, const char* name) {
    if (den == 0) {
      m.undefined.emplace_back(name);
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.precision = ratio(c.tp, c.tp + c.fp, "precision");
  m.recall = ratio(c.tp, c.tp + c.fn, "recall");
  m.specificity = ratio(c.tn, c.tn + c.fp, "specificity");
  if (m.precision + m.recall > 0) {
    m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
  } else {
    m.undefined.emplace_back("f1");
  }
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0) {
    m.undefined.emplace_back("auc");
  } else {
    m.auc = auc(labels, scores);
  }
  return m;
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw DomainError("incomplete_beta: a and b must be positive");
  if (x < 0 || x > 1) throw DomainError("incomplete_beta: x outside [0, 1]");
  if (x == 0 || x == 1) return x;
  // Lentz's continued fraction, applied on the side where it converges fast.
  auto cf = [](double a, double b, double x) {
    constexpr double tiny = 1e-300;
    double c = 1, d = 1 - (a + b) * x / (a + 1);
    if (std::abs(d) < tiny) d = tiny;
    d = 1 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
      const double m2 = 2.0 * m;
      double aa = m * (b - m) * x / ((a - 1 + m2) * (a + m2));
      d = 1 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1 / d;
      h *= d * c;
      aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + 1 + m2));
      d = 1 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1 / d;
      const double del = d * c;
      h *= del;
      if (std::abs(del - 1) < 1e-15) break;
    }
    return h;
  };
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1) / (a + b + 2)) return front * cf(a, b, x) / a;
  return 1 - front * cf(b, a, 1 - x) / b;
}

double student_t_sf(double t, double dof) {
  if (!(dof > 0)) throw DomainError("student_t_sf: dof must be positive");
  const double tail = 0.5 * incomplete_beta(dof / 2, 0.5, dof / (dof + t * t));
  return t >= 0 ? tail : 1 - tail;
}

TTest paired_t_one_tailed(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("t-test: samples differ in length");
  const std::size_t k = a.size();
  if (k < 2) throw DomainError("t-test: need at least two pairs");
  std::vector<double> d(k);
  for (std::size_t i = 0; i < k; ++i) d[i] = a[i] - b[i];
  const Summary s = summarize(d, true);
  TTest r;
  r.dof = k - 1;
  r.mean_diff = s.mean;
  if (s.std == 0) {
    r.degenerate = true;
    r.t = s.mean > 0 ? std::numeric_limits<double>::infinity()
                     : (s.mean < 0 ? -std::numeric_limits<double>::infinity() : 0.0);
    r.p = s.mean > 0 ? 0.0 : 1.0;
    return r;
  }
  r.t = s.mean / (s.std / std::sqrt(static_cast<double>(k)));
  r.p = student_t_sf(r.t, static_cast<double>(r.dof));
  return r;
}

Summary summarize(std::span<const double> values, bool sample) {
  if (values.empty()) throw DimensionError("summarize: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double den = sample ? n - 1 : n;
  return {mean, den > 0 ? std::sqrt(ss / den) : 0.0};
}

double metric_value(const MetricSet& m, const std::string& name) {
  if (name == "acc") return m.acc;
  if (name == "auc") return m.auc;
  if (name == "f1") return m.f1;
  if (name == "precision") return m.precision;
  if (name == "recall") return m.recall;
  if (name == "specificity") return m.specificity;
  throw ConfigError("unknown metric '" + name + "'");
}

namespace {

double& metric_ref(MetricSet& m, const std::string& name) {
  if (name == "acc") return m.acc;
  if (name == "auc") return m.auc;
  if (name == "f1") return m.f1;
  if (name == "precision") return m.precision;
  if (name == "recall") return m.recall;
  if (name == "specificity") return m.specificity;
  throw ConfigError("unknown metric '" + name + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void append_row(std::string& out, const std::string& key, const MetricSet& m) {
  out += key;
  for (const char* name : kMetricNames) out += "," + fmt(metric_value(m, name));
  out += "\n";
}

}  // namespace

MetricSummary summarize(std::span<const MetricSet> folds, bool sample) {
  MetricSummary out;
  for (const char* name : kMetricNames) {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(metric_value(f, name));
    const Summary s = summarize(v, sample);
    metric_ref(out.mean, name) = s.mean;
    metric_ref(out.std, name) = s.std;
  }
  return out;
}

std::string metrics_csv(std::span<const MetricSet> folds) {
  std::string out = "fold,acc,auc,f1,precision,recall,specificity\n";
  for (std::size_t i = 0; i < folds.size(); ++i) append_row(out, std::to_string(i), folds[i]);
  return out;
}

std::string summary_csv(const MetricSummary& s) {
  std::string out = "stat,acc,auc,f1,precision,recall,specificity\n";
  append_row(out, "mean", s.mean);
  append_row(out, "std", s.std);
  return out;
}

std::vector<MetricSet> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("metrics csv: empty file");
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string cell;
    while (std::getline(h, cell, ',')) header.push_back(cell);
  }
  std::vector<MetricSet> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream r(line);
    std::string cell;
    MetricSet m;
    for (std::size_t col = 0; std::getline(r, cell, ','); ++col) {
      if (col >= header.size())
        throw FormatError("metrics csv: too many cells on line " + std::to_string(line_no));
      if (col == 0) continue;
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        metric_ref(m, header[col]) = v;
      } catch (const std::invalid_argument&) {
        throw FormatError("metrics csv: bad number '" + cell + "' on line " +
                          std::to_string(line_no));
      } catch (const std::out_of_range&) {
        throw FormatError("metrics csv: bad number '" + cell + "' on line " +
                          std::to_string(line_no));
      }
    }
    rows.push_back(std::move(m));
  }
  return rows;
}

}  // namespace abfr
