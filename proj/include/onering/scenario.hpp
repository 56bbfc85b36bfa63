#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "onering/error.hpp"
#include "onering/random.hpp"
#include "onering/tensor.hpp"

namespace onering {

/// Partition of class ids into shared, source-private and target-private sets.
struct LabelSpaceSplit {
  std::vector<int> shared;
  std::vector<int> source_private;
  std::vector<int> target_private;

  std::vector<int> source_classes() const {
    std::vector<int> out = shared;
    out.insert(out.end(), source_private.begin(), source_private.end());
    return out;
  }
  std::vector<int> target_classes() const {
    std::vector<int> out = shared;
    out.insert(out.end(), target_private.begin(), target_private.end());
    return out;
  }
  std::size_t n_known() const { return shared.size() + source_private.size(); }
  std::size_t total() const { return shared.size() + source_private.size() + target_private.size(); }
  bool is_target_private(int id) const {
    return std::find(target_private.begin(), target_private.end(), id) != target_private.end();
  }
};

/// Ordered benchmark protocol: the first `n_shared` ids are shared, the next
/// `n_source_private` are source-private, the rest target-private.
inline LabelSpaceSplit split_label_space(std::size_t total_classes, std::size_t n_shared,
                                         std::size_t n_source_private) {
  if (n_shared < 1) throw Error(ErrorKind::InvalidConfig, "open-partial split needs at least one shared class");
  if (n_source_private < 1) throw Error(ErrorKind::InvalidConfig, "open-partial split needs a source-private class");
  if (total_classes <= n_shared + n_source_private) {
    throw Error(ErrorKind::InvalidConfig, "open-partial split needs a target-private class (total " +
                                              std::to_string(total_classes) + " <= " +
                                              std::to_string(n_shared + n_source_private) + ")");
  }
  LabelSpaceSplit split;
  int id = 0;
  for (std::size_t i = 0; i < n_shared; ++i) split.shared.push_back(id++);
  for (std::size_t i = 0; i < n_source_private; ++i) split.source_private.push_back(id++);
  while (static_cast<std::size_t>(id) < total_classes) split.target_private.push_back(id++);
  return split;
}

/// Target-domain distortion: x_t = R(rotation) x + translation, drawn with
/// standard deviation cluster_std * noise_scale. For dim > 2 the rotation acts
/// in the plane of the first two coordinates.
struct DomainShiftSpec {
  double rotation = 0.0;
  std::vector<double> translation;
  double noise_scale = 1.0;
};

enum class Domain { Source, Target };

/// Samples with class ids. Label -1 marks an unlabeled row.
struct Dataset {
  Tensor samples;
  std::vector<int> labels;
  Domain domain = Domain::Source;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return samples.cols(); }
};

struct BlobScenario {
  Dataset source;
  Dataset target;
  Tensor centers;  // [total_classes x dim], source-domain positions
};

namespace detail {

inline constexpr int kPlacementRetries = 1000;

/// Radius keeping neighboring centers 8 standard deviations apart on a circle.
inline double circle_radius(std::size_t n_classes, double cluster_std) {
  return 4.0 * cluster_std / std::sin(std::numbers::pi / static_cast<double>(std::max<std::size_t>(n_classes, 2)));
}

/// dim=2: source classes evenly on an outer circle, target-private classes on
/// a concentric inner circle (at the origin when there is only one).
inline Tensor place_centers_2d(const LabelSpaceSplit& split, double cluster_std) {
  const auto src = split.source_classes();
  std::vector<int> inner;
  for (std::size_t k = 0; k < split.total(); ++k) {
    if (split.is_target_private(static_cast<int>(k))) inner.push_back(static_cast<int>(k));
  }
  const double inner_radius = inner.size() > 1 ? 0.75 * circle_radius(inner.size(), cluster_std) : 0.0;
  const double outer_radius = std::max(circle_radius(src.size(), cluster_std), 6.0 * (inner_radius + 3.0 * cluster_std));
  Tensor centers({split.total(), 2});
  auto ring = [&](const std::vector<int>& classes, double radius) {
    for (std::size_t i = 0; i < classes.size(); ++i) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(classes.size());
      centers.at(static_cast<std::size_t>(classes[i]), 0) = radius * std::cos(angle);
      centers.at(static_cast<std::size_t>(classes[i]), 1) = radius * std::sin(angle);
    }
  };
  ring(src, outer_radius);
  ring(inner, inner_radius);
  return centers;
}

inline Tensor place_centers(std::size_t n_classes, std::size_t dim, double cluster_std, Rng& rng) {
  Tensor centers({n_classes, dim});
  // Box large enough that rejection sampling at 6 sigma separation succeeds quickly.
  const double min_dist = 6.0 * cluster_std;
  const double half_width =
      min_dist * std::max(1.0, std::pow(static_cast<double>(n_classes), 1.0 / static_cast<double>(dim)));
  for (std::size_t k = 0; k < n_classes; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      for (std::size_t d = 0; d < dim; ++d) centers.at(k, d) = rng.uniform(-half_width, half_width);
      placed = true;
      for (std::size_t j = 0; j < k && placed; ++j) {
        double dist2 = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = centers.at(k, d) - centers.at(j, d);
          dist2 += diff * diff;
        }
        placed = dist2 >= min_dist * min_dist;
      }
    }
    if (!placed) {
      throw Error(ErrorKind::Generation, "could not place center " + std::to_string(k) + " after " +
                                             std::to_string(kPlacementRetries) + " attempts");
    }
  }
  return centers;
}

inline void apply_shift(std::span<double> x, const DomainShiftSpec& shift) {
  if (x.size() >= 2 && shift.rotation != 0.0) {
    const double c = std::cos(shift.rotation), s = std::sin(shift.rotation);
    const double x0 = x[0], x1 = x[1];
    x[0] = c * x0 - s * x1;
    x[1] = s * x0 + c * x1;
  }
  for (std::size_t d = 0; d < x.size() && d < shift.translation.size(); ++d) x[d] += shift.translation[d];
}

inline Dataset sample_domain(const Tensor& centers, const std::vector<int>& classes, std::size_t per_class,
                             double std_dev, const DomainShiftSpec* shift, Domain domain, Rng& rng) {
  const std::size_t dim = centers.cols();
  Dataset out;
  out.domain = domain;
  out.samples = Tensor({classes.size() * per_class, dim});
  out.labels.reserve(classes.size() * per_class);
  std::size_t row = 0;
  for (int cls : classes) {
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      auto x = out.samples.row(row);
      for (std::size_t d = 0; d < dim; ++d) x[d] = centers.at(static_cast<std::size_t>(cls), d) + std_dev * rng.normal();
      if (shift) apply_shift(x, *shift);
      out.labels.push_back(cls);
    }
  }
  return out;
}

}  // namespace detail

/// One isotropic Gaussian cluster per class. The source set holds the source
/// classes unshifted; the target set holds the target classes with the domain
/// shift applied. Deterministic per seed.
inline BlobScenario generate_blobs(const LabelSpaceSplit& split, std::size_t per_class, std::size_t dim,
                                   double cluster_std, const DomainShiftSpec& shift, std::uint64_t seed) {
  if (dim < 2) throw Error(ErrorKind::InvalidConfig, "blob dimension must be >= 2");
  if (!(cluster_std > 0.0)) throw Error(ErrorKind::InvalidConfig, "cluster_std must be > 0");
  if (!(shift.noise_scale > 0.0)) throw Error(ErrorKind::InvalidConfig, "noise_scale must be > 0");
  if (per_class < 1) throw Error(ErrorKind::InvalidConfig, "per_class must be >= 1");
  if (shift.translation.size() > dim) {
    throw Error(ErrorKind::InvalidConfig, "translation has " + std::to_string(shift.translation.size()) +
                                              " components for dimension " + std::to_string(dim));
  }
  Rng center_rng = Rng::derived(seed, 0);
  Rng source_rng = Rng::derived(seed, 1);
  Rng target_rng = Rng::derived(seed, 2);
  BlobScenario out;
  out.centers = dim == 2 ? detail::place_centers_2d(split, cluster_std)
                         : detail::place_centers(split.total(), dim, cluster_std, center_rng);
  out.source = detail::sample_domain(out.centers, split.source_classes(), per_class, cluster_std, nullptr,
                                     Domain::Source, source_rng);
  out.target = detail::sample_domain(out.centers, split.target_classes(), per_class, cluster_std * shift.noise_scale,
                                     &shift, Domain::Target, target_rng);
  return out;
}

/// Full description of a synthetic open-partial scenario. Defaults give the
/// standard shifted scenario: 4 shared, 2 source-private and 3 target-private
/// classes in 8 dimensions, rotated by pi/6 and translated by 2 * cluster_std.
struct ScenarioConfig {
  std::size_t total_classes = 9;
  std::size_t n_shared = 4;
  std::size_t n_source_private = 2;
  std::size_t per_class = 100;
  std::size_t dim = 8;
  double cluster_std = 0.5;
  double rotation = std::numbers::pi / 6.0;
  std::vector<double> translation{1.0};
  double noise_scale = 1.0;
  std::uint64_t seed = 0;

  LabelSpaceSplit split() const { return split_label_space(total_classes, n_shared, n_source_private); }
  DomainShiftSpec shift() const { return {rotation, translation, noise_scale}; }
};

inline BlobScenario generate_blobs(const ScenarioConfig& cfg) {
  return generate_blobs(cfg.split(), cfg.per_class, cfg.dim, cfg.cluster_std, cfg.shift(), cfg.seed);
}

/// Evaluation labels: known ids kept, target-private ids mapped to n_known.
inline std::vector<std::size_t> collapse_unknown(std::span<const int> labels, const LabelSpaceSplit& split) {
  const std::size_t unknown = split.n_known();
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = split.is_target_private(labels[i]) ? unknown : static_cast<std::size_t>(labels[i]);
  }
  return out;
}

/// Reads `f0,...,f{d-1},label` CSV. Labels are integers, -1 meaning unlabeled.
inline Dataset parse_feature_csv(std::istream& in, Domain domain = Domain::Target) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Parse, "line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.back() != "label") {
    throw Error(ErrorKind::Parse, "line 1: header must be f0,...,f{d-1},label");
  }
  const std::size_t dim = header.size() - 1;
  for (std::size_t i = 0; i < dim; ++i) {
    if (header[i] != "f" + std::to_string(i)) {
      throw Error(ErrorKind::Parse, "line 1: expected column f" + std::to_string(i) + ", got '" + header[i] + "'");
    }
  }

  std::vector<double> values;
  Dataset out;
  out.domain = domain;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      cells.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cells.size() != dim + 1) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 1) +
                                        " fields, got " + std::to_string(cells.size()));
    }
    for (std::size_t i = 0; i < dim; ++i) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cells[i].data(), cells[i].data() + cells[i].size(), v);
      if (ec != std::errc() || ptr != cells[i].data() + cells[i].size() || cells[i].empty()) {
        throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": non-numeric value '" +
                                          std::string(cells[i]) + "' in column f" + std::to_string(i));
      }
      values.push_back(v);
    }
    int label = 0;
    const auto& lc = cells[dim];
    const auto [ptr, ec] = std::from_chars(lc.data(), lc.data() + lc.size(), label);
    if (ec != std::errc() || ptr != lc.data() + lc.size() || lc.empty() || label < -1) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": invalid label '" + std::string(lc) + "'");
    }
    out.labels.push_back(label);
  }
  out.samples = Tensor({out.labels.size(), dim}, std::move(values));
  return out;
}

inline Dataset load_feature_csv(const std::string& path, Domain domain = Domain::Target) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return parse_feature_csv(in, domain);
}

inline void write_feature_csv(std::ostream& os, const Dataset& data) {
  for (std::size_t d = 0; d < data.dim(); ++d) os << 'f' << d << ',';
  os << "label\n";
  char buf[64];
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (double v : data.samples.row(r)) {
      const auto res = std::to_chars(buf, buf + sizeof buf, v);
      os.write(buf, res.ptr - buf);
      os << ',';
    }
    os << data.labels[r] << '\n';
  }
}

/// Seeded permutation of [0, n) for (seed, epoch), chunked into batches of
/// `bs`; the final short batch is kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t bs, std::uint64_t seed,
                                                     std::uint64_t epoch) {
  if (bs < 1) throw Error(ErrorKind::InvalidConfig, "batch size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derived(seed, 0x5eed0000ULL + epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += bs) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bs)));
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> batches(const Dataset& data, std::size_t bs, std::uint64_t seed,
                                                     std::uint64_t epoch) {
  return batches(data.size(), bs, seed, epoch);
}

}  // namespace onering
