#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "onering/error.hpp"
#include "onering/metrics.hpp"
#include "onering/model.hpp"
#include "onering/random.hpp"
#include "onering/scenario.hpp"
#include "onering/trainer.hpp"

namespace onering {

inline std::vector<std::size_t> shared_classes(const LabelSpaceSplit& split) {
  return {split.shared.begin(), split.shared.end()};
}

/// Metrics of an open-head model on a labeled target set.
inline MetricsReport evaluate(const OneRingModel& model, const Dataset& target, const LabelSpaceSplit& split) {
  const auto preds = predict(infer(model, target.samples).logits);
  const auto truth = collapse_unknown(target.labels, split);
  const auto known = shared_classes(split);
  return compute_metrics(preds, truth, split.n_known(), known);
}

/// Fraction of labeled rows whose argmax matches the label.
inline double accuracy(const OneRingModel& model, const Dataset& data) {
  const auto preds = predict(infer(model, data.samples).logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += static_cast<int>(preds[i]) == data.labels[i];
  return data.size() ? static_cast<double>(hit) / static_cast<double>(data.size()) : 0.0;
}

/// Entropy of each softmax row divided by ln(c), in [0, 1].
inline std::vector<double> normalized_entropy(const Tensor& logits) {
  const Tensor p = softmax_values(logits);
  const double norm = std::log(static_cast<double>(logits.cols()));
  std::vector<double> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double h = 0.0;
    for (double v : p.row(r))
      if (v > 0.0) h -= v * std::log(v);
    out[r] = h / norm;
  }
  return out;
}

struct ThresholdResult {
  double threshold = 0.0;
  std::size_t rejected = 0;
  MetricsReport metrics;
};

/// Rejection by thresholding the normalized prediction entropy of a plain
/// n-way classifier: rows with entropy / ln(n) > t are unknown, others take
/// the argmax.
inline std::vector<ThresholdResult> entropy_baseline(const OneRingModel& plain, const Dataset& target,
                                                     const LabelSpaceSplit& split, std::span<const double> grid) {
  if (grid.empty()) throw Error(ErrorKind::InvalidConfig, "entropy baseline needs a non-empty threshold grid");
  if (plain.spec().open_head) throw Error(ErrorKind::InvalidConfig, "entropy baseline expects a plain n-way head");
  const Tensor logits = infer(plain, target.samples).logits;
  const auto argmax = predict(logits);
  const auto ent = normalized_entropy(logits);
  const auto truth = collapse_unknown(target.labels, split);
  const auto known = shared_classes(split);
  const std::size_t unknown = split.n_known();
  std::vector<ThresholdResult> out;
  for (double t : grid) {
    ThresholdResult r;
    r.threshold = t;
    std::vector<std::size_t> preds(argmax.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool reject = ent[i] > t;
      r.rejected += reject;
      preds[i] = reject ? unknown : argmax[i];
    }
    r.metrics = compute_metrics(preds, truth, unknown, known);
    out.push_back(std::move(r));
  }
  return out;
}

/// Everything produced by one source-train + adapt + evaluate run.
struct PipelineResult {
  OneRingModel source_model;
  OneRingModel adapted_model;
  MetricsReport source_metrics;   // OneRing-S
  MetricsReport adapted_metrics;  // after adaptation
  TrainingLog source_log;
  TrainingLog adapt_log;
};

inline ModelSpec default_model_spec(std::size_t input_dim, std::size_t n_known) {
  ModelSpec spec;
  spec.input_dim = input_dim;
  spec.n_known = n_known;
  return spec;
}

/// Source training then source-free adaptation on a generated scenario.
inline PipelineResult run_pipeline(const BlobScenario& data, const LabelSpaceSplit& split, const ModelSpec& spec,
                                   const TrainConfig& cfg) {
  PipelineResult r{OneRingModel(spec, cfg.seed), {}, {}, {}, {}, {}};
  r.source_log = train_source(r.source_model, data.source, cfg);
  r.source_metrics = evaluate(r.source_model, data.target, split);
  r.adapted_model = r.source_model;
  EvalHook hook = [&](const OneRingModel& m) -> std::optional<MetricsReport> { return evaluate(m, data.target, split); };
  r.adapt_log = adapt_target(r.adapted_model, data.target.samples, cfg, hook);
  r.adapted_metrics = evaluate(r.adapted_model, data.target, split);
  return r;
}

inline PipelineResult run_pipeline(const ScenarioConfig& scenario, const TrainConfig& cfg,
                                   std::optional<ModelSpec> spec = std::nullopt) {
  const auto split = scenario.split();
  const auto data = generate_blobs(scenario);
  return run_pipeline(data, split, spec.value_or(default_model_spec(scenario.dim, split.n_known())), cfg);
}

/// The 2D toy: three known blobs on a circle and one unknown blob at its
/// center, no domain shift.
inline ScenarioConfig toy_scenario(std::uint64_t seed = 0) {
  ScenarioConfig s;
  s.total_classes = 4;
  s.n_shared = 2;
  s.n_source_private = 1;
  s.per_class = 100;
  s.dim = 2;
  s.cluster_std = 0.5;
  s.rotation = 0.0;
  s.translation.clear();
  s.seed = seed;
  return s;
}

struct ToyResult {
  OneRingModel plain;    // n-way head, plain CE
  OneRingModel onering;  // (n+1)-way head, two-term objective
  Dataset eval_set;      // every known source sample plus the unknown blob
  MetricsReport plain_metrics;
  MetricsReport onering_metrics;
  double runner_up_rate = 0.0;  // source rows whose runner-up is the unknown class
  TrainingLog onering_log;
};

/// Trains a plain and an open-head model on the known blobs and evaluates
/// both on all four blobs.
inline ToyResult run_toy(const ScenarioConfig& scenario, const TrainConfig& cfg, ModelSpec arch) {
  const auto split = scenario.split();
  const auto data = generate_blobs(scenario);
  arch.input_dim = scenario.dim;
  arch.n_known = split.n_known();
  ModelSpec plain_spec = arch;
  plain_spec.open_head = false;
  arch.open_head = true;

  ToyResult r{OneRingModel(plain_spec, cfg.seed), OneRingModel(arch, cfg.seed), {}, {}, {}, 0.0, {}};
  train_source(r.plain, data.source, cfg);
  r.onering_log = train_source(r.onering, data.source, cfg);

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.target.size(); ++i)
    if (split.is_target_private(data.target.labels[i])) rows.push_back(i);
  const Tensor unknown_rows = data.target.samples.gather_rows(rows);
  r.eval_set.domain = Domain::Target;
  r.eval_set.samples = Tensor({data.source.size() + rows.size(), scenario.dim});
  std::copy(data.source.samples.values().begin(), data.source.samples.values().end(),
            r.eval_set.samples.values().begin());
  std::copy(unknown_rows.values().begin(), unknown_rows.values().end(),
            r.eval_set.samples.values().begin() + static_cast<std::ptrdiff_t>(data.source.samples.size()));
  r.eval_set.labels = data.source.labels;
  for (std::size_t i : rows) r.eval_set.labels.push_back(data.target.labels[i]);

  const auto truth = collapse_unknown(r.eval_set.labels, split);
  const auto known_ids = split.source_classes();
  const std::vector<std::size_t> known(known_ids.begin(), known_ids.end());
  r.plain_metrics = compute_metrics(predict(infer(r.plain, r.eval_set.samples).logits), truth, split.n_known(), known);
  r.onering_metrics =
      compute_metrics(predict(infer(r.onering, r.eval_set.samples).logits), truth, split.n_known(), known);

  const auto second = runner_up(infer(r.onering, data.source.samples).logits);
  const auto hits = std::count(second.begin(), second.end(), r.onering.unknown_index());
  r.runner_up_rate = static_cast<double>(hits) / static_cast<double>(second.size());
  return r;
}

struct SweepRow {
  std::size_t n_target_private = 0;
  double h = 0.0;
  double os_star = 0.0;
  double unk = 0.0;
};

using SweepResult = std::vector<SweepRow>;

/// Full pipeline per target-private class count; other scenario fields and
/// the seed are shared. Rows follow the order of `counts`.
inline SweepResult sweep_unknown(const ScenarioConfig& scenario, std::span<const std::size_t> counts,
                                 const TrainConfig& cfg) {
  SweepResult out;
  for (std::size_t count : counts) {
    if (count < 1) throw Error(ErrorKind::InvalidConfig, "sweep counts must be >= 1");
    ScenarioConfig s = scenario;
    s.total_classes = s.n_shared + s.n_source_private + count;
    const auto r = run_pipeline(s, cfg);
    out.push_back({count, r.adapted_metrics.h, r.adapted_metrics.os_star, r.adapted_metrics.unk});
  }
  return out;
}

inline std::string sweep_csv(const SweepResult& rows) {
  std::ostringstream os;
  os << "n_unknown,h,os_star,unk\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f\n", r.n_target_private, r.h, r.os_star, r.unk);
    os << buf;
  }
  return os.str();
}

struct Bounds2D {
  double x_min = -1.0, x_max = 1.0, y_min = -1.0, y_max = 1.0;
};

/// Bounding box of a 2D dataset, padded by `margin` on every side.
inline Bounds2D bounds_of(const Dataset& data, double margin = 1.0) {
  Bounds2D b{1e300, -1e300, 1e300, -1e300};
  for (std::size_t i = 0; i < data.size(); ++i) {
    b.x_min = std::min(b.x_min, data.samples.at(i, 0));
    b.x_max = std::max(b.x_max, data.samples.at(i, 0));
    b.y_min = std::min(b.y_min, data.samples.at(i, 1));
    b.y_max = std::max(b.y_max, data.samples.at(i, 1));
  }
  if (data.size() == 0) return {};
  return {b.x_min - margin, b.x_max + margin, b.y_min - margin, b.y_max + margin};
}

namespace detail {

inline std::string hex_color(double r, double g, double b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(r * 255)),
                static_cast<int>(std::lround(g * 255)), static_cast<int>(std::lround(b * 255)));
  return buf;
}

inline std::string hsv_color(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  return hex_color(r + m, g + m, b + m);
}

}  // namespace detail

inline constexpr const char* kUnknownRegionColor = "#3b1f4a";

/// Seeded light palette for known classes; hues are evenly spaced from a
/// random offset so colors stay distinct. The unknown class gets a fixed dark
/// color.
inline std::vector<std::string> region_palette(std::size_t n_known, bool with_unknown, std::uint64_t seed) {
  Rng rng(seed);
  const double offset = rng.uniform();
  std::vector<std::string> out;
  for (std::size_t k = 0; k < n_known; ++k) {
    out.push_back(detail::hsv_color(offset + static_cast<double>(k) / static_cast<double>(n_known), 0.35, 0.97));
  }
  if (with_unknown) out.push_back(kUnknownRegionColor);
  return out;
}

/// Rasterized prediction regions of a 2D model as an SVG 1.1 document using
/// only rect and circle elements. Overlay points are colored by label; labels
/// at or above n_known are drawn as unknown.
inline std::string decision_region_svg(const OneRingModel& model, const Bounds2D& bounds, std::size_t resolution,
                                       const Dataset* overlay = nullptr, std::uint64_t color_seed = 7) {
  if (model.spec().input_dim != 2) throw Error(ErrorKind::InvalidConfig, "decision regions need a 2D input model");
  if (resolution < 1) throw Error(ErrorKind::InvalidConfig, "resolution must be >= 1");
  const std::size_t n_known = model.n_known();
  const auto palette = region_palette(n_known, model.spec().open_head, color_seed);
  constexpr double size = 480.0;
  const double cell = size / static_cast<double>(resolution);
  const double dx = (bounds.x_max - bounds.x_min) / static_cast<double>(resolution);
  const double dy = (bounds.y_max - bounds.y_min) / static_cast<double>(resolution);

  Tensor grid({resolution * resolution, 2});
  for (std::size_t r = 0; r < resolution; ++r)
    for (std::size_t c = 0; c < resolution; ++c) {
      grid.at(r * resolution + c, 0) = bounds.x_min + (static_cast<double>(c) + 0.5) * dx;
      grid.at(r * resolution + c, 1) = bounds.y_max - (static_cast<double>(r) + 0.5) * dy;
    }
  const auto preds = predict(infer(model, grid).logits);

  std::ostringstream os;
  char buf[256];
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"%.0f\" height=\"%.0f\" "
                "viewBox=\"0 0 %.0f %.0f\">\n",
                size, size, size, size);
  os << buf;
  for (std::size_t r = 0; r < resolution; ++r)
    for (std::size_t c = 0; c < resolution; ++c) {
      std::snprintf(buf, sizeof buf,
                    "<rect class=\"region\" x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" fill=\"%s\"/>\n",
                    static_cast<double>(c) * cell, static_cast<double>(r) * cell, cell, cell,
                    palette[preds[r * resolution + c]].c_str());
      os << buf;
    }
  if (overlay) {
    const auto point_colors = region_palette(n_known, true, color_seed);
    for (std::size_t i = 0; i < overlay->size(); ++i) {
      const double px = (overlay->samples.at(i, 0) - bounds.x_min) / (bounds.x_max - bounds.x_min) * size;
      const double py = (bounds.y_max - overlay->samples.at(i, 1)) / (bounds.y_max - bounds.y_min) * size;
      const int label = overlay->labels[i];
      const std::size_t k = label < 0 || static_cast<std::size_t>(label) >= n_known ? n_known : label;
      std::snprintf(buf, sizeof buf,
                    "<circle class=\"point\" cx=\"%.3f\" cy=\"%.3f\" r=\"2.5\" fill=\"%s\" stroke=\"#000000\" "
                    "stroke-width=\"0.5\"/>\n",
                    px, py, k == n_known ? "#9b30ff" : point_colors[k].c_str());
      os << buf;
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace onering
