#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "onering/error.hpp"

namespace onering {

struct ClassCount {
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// Open-set evaluation summary. The unknown class is keyed by n_known.
struct MetricsReport {
  std::size_t n_known = 0;
  std::map<std::size_t, double> per_class_accuracy;
  std::map<std::size_t, ClassCount> counts;
  double os_star = 0.0;
  double unk = 0.0;
  double os = 0.0;
  double h = 0.0;
};

inline double harmonic_mean(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

/// OS = n/(n+1) * OS* + 1/(n+1) * UNK with n the number of source classes.
inline double open_set_accuracy(double os_star, double unk, std::size_t n_known) {
  const double n = static_cast<double>(n_known);
  return n / (n + 1.0) * os_star + 1.0 / (n + 1.0) * unk;
}

/// Per-class accuracies over `truth` (target-private already collapsed to
/// n_known). OS* averages the known classes present, UNK is the accuracy of
/// the unknown class. With `expected_known` given, each listed class must
/// appear and no other known class may.
inline MetricsReport compute_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> truth,
                                     std::size_t n_known, std::span<const std::size_t> expected_known = {}) {
  if (predictions.size() != truth.size()) {
    throw Error(ErrorKind::Metric, "prediction count " + std::to_string(predictions.size()) +
                                       " differs from truth count " + std::to_string(truth.size()));
  }
  MetricsReport report;
  report.n_known = n_known;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] > n_known) {
      throw Error(ErrorKind::Metric, "truth class " + std::to_string(truth[i]) + " exceeds unknown index " +
                                         std::to_string(n_known) + " (collapse target-private labels first)");
    }
    auto& c = report.counts[truth[i]];
    ++c.total;
    if (predictions[i] == truth[i]) ++c.correct;
  }
  if (!expected_known.empty()) {
    for (std::size_t cls : expected_known) {
      if (!report.counts.contains(cls)) {
        throw Error(ErrorKind::Metric, "known class " + std::to_string(cls) + " has no samples");
      }
    }
    for (const auto& [cls, _] : report.counts) {
      if (cls != n_known && std::find(expected_known.begin(), expected_known.end(), cls) == expected_known.end()) {
        throw Error(ErrorKind::Metric, "class " + std::to_string(cls) + " is not an expected known class");
      }
    }
  }
  if (!report.counts.contains(n_known)) throw Error(ErrorKind::Metric, "unknown class has no samples");
  if (report.counts.size() < 2) throw Error(ErrorKind::Metric, "no known class has samples");

  double known_sum = 0.0;
  std::size_t known_classes = 0;
  for (const auto& [cls, c] : report.counts) {
    const double acc = static_cast<double>(c.correct) / static_cast<double>(c.total);
    report.per_class_accuracy[cls] = acc;
    if (cls == n_known) {
      report.unk = acc;
    } else {
      known_sum += acc;
      ++known_classes;
    }
  }
  report.os_star = known_sum / static_cast<double>(known_classes);
  report.os = open_set_accuracy(report.os_star, report.unk, n_known);
  report.h = harmonic_mean(report.os_star, report.unk);
  return report;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["os_star"] = r.os_star;
  j["unk"] = r.unk;
  j["os"] = r.os;
  j["h"] = r.h;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (const auto& [cls, acc] : r.per_class_accuracy) {
    per_class[cls == r.n_known ? std::string("unknown") : std::to_string(cls)] = acc;
  }
  j["per_class"] = per_class;
  return j;
}

}  // namespace onering
