#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "onering/autodiff.hpp"
#include "onering/error.hpp"
#include "onering/random.hpp"
#include "onering/tensor.hpp"

namespace onering {

/// Architecture of a classifier: input -> hidden (ReLU) ... -> feature -> head.
struct ModelSpec {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden{64};
  std::size_t feature_dim = 32;
  std::size_t n_known = 3;
  /// With an open head the output has n_known + 1 columns, the last being
  /// the unknown class. Without it the head is a plain n_known-way classifier.
  bool open_head = true;

  std::size_t head_width() const { return n_known + (open_head ? 1 : 0); }
};

struct Linear {
  Tensor weight;  // [fan_in x fan_out]
  Tensor bias;    // [fan_out]
};

/// Non-owning view of the trainable tensors, split by role. The extractor
/// and head partitions are disjoint and together cover every parameter.
struct ParamGroup {
  std::vector<Tensor*> extractor;
  std::vector<Tensor*> head;

  std::vector<Tensor*> all() const {
    std::vector<Tensor*> out = extractor;
    out.insert(out.end(), head.begin(), head.end());
    return out;
  }
};

/// Feature extractor plus linear classification head.
class OneRingModel {
 public:
  OneRingModel() = default;
  OneRingModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
    validate(spec_);
    Rng rng(seed);
    std::size_t fan_in = spec_.input_dim;
    for (std::size_t width : spec_.hidden) {
      extractor_.push_back(glorot(fan_in, width, rng));
      fan_in = width;
    }
    extractor_.push_back(glorot(fan_in, spec_.feature_dim, rng));
    head_ = glorot(spec_.feature_dim, spec_.head_width(), rng);
    input_mean_.assign(spec_.input_dim, 0.0);
    input_std_.assign(spec_.input_dim, 1.0);
  }

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t n_known() const { return spec_.n_known; }
  /// Column index of the unknown class (only meaningful with an open head).
  std::size_t unknown_index() const { return spec_.n_known; }

  std::vector<Linear>& extractor_layers() { return extractor_; }
  const std::vector<Linear>& extractor_layers() const { return extractor_; }
  Linear& head() { return head_; }
  const Linear& head() const { return head_; }

  /// Fixed per-column affine map applied to inputs before the first layer:
  /// x' = (x - mean) / std. Identity until set. Not trainable.
  std::span<const double> input_mean() const { return input_mean_; }
  std::span<const double> input_std() const { return input_std_; }

  void set_input_normalization(std::span<const double> mean, std::span<const double> std_dev) {
    if (mean.size() != spec_.input_dim || std_dev.size() != spec_.input_dim) {
      throw Error(ErrorKind::InvalidShape, "input normalization needs " + std::to_string(spec_.input_dim) + " columns");
    }
    for (double s : std_dev) {
      if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::InvalidConfig, "input std must be finite and > 0");
    }
    input_mean_.assign(mean.begin(), mean.end());
    input_std_.assign(std_dev.begin(), std_dev.end());
  }

  /// Column mean and population std of `x`; constant columns keep std 1.
  void fit_input_normalization(const Tensor& x) {
    if (x.rank() != 2 || x.cols() != spec_.input_dim || x.rows() == 0) {
      throw Error(ErrorKind::InvalidShape, "cannot fit input normalization to " + shape_string(x.shape()));
    }
    std::vector<double> mean(x.cols(), 0.0), var(x.cols(), 0.0);
    const double n = static_cast<double>(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) mean[c] += x.at(r, c) / n;
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) var[c] += (x.at(r, c) - mean[c]) * (x.at(r, c) - mean[c]) / n;
    for (double& v : var) v = v > 1e-24 ? std::sqrt(v) : 1.0;
    set_input_normalization(mean, var);
  }

  Tensor normalize_inputs(const Tensor& x) const {
    Tensor out = x;
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) = (out.at(r, c) - input_mean_[c]) / input_std_[c];
    return out;
  }

  ParamGroup params() {
    ParamGroup group;
    for (auto& layer : extractor_) {
      group.extractor.push_back(&layer.weight);
      group.extractor.push_back(&layer.bias);
    }
    group.head = {&head_.weight, &head_.bias};
    return group;
  }

  /// Every parameter in a fixed order (extractor layers, then head).
  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& layer : extractor_) {
      out.push_back(&layer.weight);
      out.push_back(&layer.bias);
    }
    out.push_back(&head_.weight);
    out.push_back(&head_.bias);
    return out;
  }

  bool operator==(const OneRingModel& other) const {
    if (spec_.input_dim != other.spec_.input_dim || spec_.hidden != other.spec_.hidden ||
        spec_.feature_dim != other.spec_.feature_dim || spec_.n_known != other.spec_.n_known ||
        spec_.open_head != other.spec_.open_head || seed_ != other.seed_) {
      return false;
    }
    auto same = [](std::span<const double> x, std::span<const double> y) {
      return x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
    };
    if (!same(input_mean_, other.input_mean_) || !same(input_std_, other.input_std_)) return false;
    const auto a = parameters();
    const auto b = other.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i]->size() != b[i]->size()) return false;
      if (std::memcmp(a[i]->values().data(), b[i]->values().data(), a[i]->size() * sizeof(double)) != 0) return false;
    }
    return true;
  }

  static void validate(const ModelSpec& spec) {
    if (spec.input_dim < 1 || spec.feature_dim < 1 || spec.n_known < 1) {
      throw Error(ErrorKind::InvalidConfig, "model widths and n_known must be >= 1");
    }
    for (std::size_t w : spec.hidden) {
      if (w < 1) throw Error(ErrorKind::InvalidConfig, "hidden widths must be >= 1");
    }
    if (spec.head_width() < 2) throw Error(ErrorKind::InvalidConfig, "classifier head needs at least 2 outputs");
  }

 private:
  /// Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero bias.
  static Linear glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Linear layer{Tensor({fan_in, fan_out}), Tensor({fan_out}, 0.0)};
    for (double& w : layer.weight.values()) w = rng.uniform(-a, a);
    return layer;
  }

  ModelSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<Linear> extractor_;
  Linear head_;
  std::vector<double> input_mean_;
  std::vector<double> input_std_;
};

inline OneRingModel init_model(const ModelSpec& spec, std::uint64_t seed) { return OneRingModel(spec, seed); }

struct ForwardResult {
  Var features;  // [m x feature_dim]
  Var logits;    // [m x head_width]
};

/// Builds the forward pass on `graph`. With `trainable` false the parameters
/// enter as constants and no gradient reaches them.
inline ForwardResult forward(Graph& graph, OneRingModel& model, const Tensor& x, bool train_extractor = true,
                             bool train_head = true) {
  if (x.rank() != 2 || x.cols() != model.spec().input_dim) {
    throw Error(ErrorKind::InvalidShape, "input " + shape_string(x.shape()) + " does not match input_dim " +
                                             std::to_string(model.spec().input_dim));
  }
  auto bind = [&graph](Tensor& t, bool trainable) { return trainable ? graph.parameter(t) : graph.constant(t); };
  Var h = graph.constant(model.normalize_inputs(x));
  auto& layers = model.extractor_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = add_bias(matmul(h, bind(layers[i].weight, train_extractor)), bind(layers[i].bias, train_extractor));
    if (i + 1 < layers.size()) h = relu(h);
  }
  Var logits = add_bias(matmul(h, bind(model.head().weight, train_head)), bind(model.head().bias, train_head));
  return {h, logits};
}

/// Head applied to given features.
inline Var head_logits(Graph& graph, OneRingModel& model, Var features, bool train_head = true) {
  auto bind = [&graph](Tensor& t, bool trainable) { return trainable ? graph.parameter(t) : graph.constant(t); };
  return add_bias(matmul(features, bind(model.head().weight, train_head)), bind(model.head().bias, train_head));
}

struct Inference {
  Tensor features;
  Tensor logits;
};

/// Gradient-free forward pass.
inline Inference infer(const OneRingModel& model, const Tensor& x) {
  Graph graph;
  auto& m = const_cast<OneRingModel&>(model);
  auto out = forward(graph, m, x, false, false);
  return {out.features.value(), out.logits.value()};
}

/// Row argmax; ties go to the lowest index. For an open head, index n_known means unknown.
inline std::vector<std::size_t> predict(const Tensor& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[best]) best = j;
    out[r] = best;
  }
  return out;
}

/// Index of the second-largest logit per row, with the same tie rule as predict().
inline std::vector<std::size_t> runner_up(const Tensor& logits) {
  if (logits.cols() < 2) throw Error(ErrorKind::InvalidShape, "runner_up needs at least 2 columns");
  const auto top = predict(logits);
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    std::size_t best = top[r] == 0 ? 1 : 0;
    for (std::size_t j = 0; j < row.size(); ++j)
      if (j != top[r] && row[j] > row[best]) best = j;
    out[r] = best;
  }
  return out;
}

// Checkpoint layout (little-endian):
//   "ONERING1" | u64 input_dim | u64 n_hidden | u64 hidden[n_hidden] | u64 feature_dim
//   | u64 n_known | u64 open_head | u64 seed | f64 input_mean[input_dim] | f64 input_std[input_dim]
//   | f64 params... (row-major, fixed order)
namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw Error(ErrorKind::Parse, "truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, sizeof d);
  return d;
}

constexpr char kCheckpointMagic[8] = {'O', 'N', 'E', 'R', 'I', 'N', 'G', '1'};

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const OneRingModel& model) {
  const auto& spec = model.spec();
  os.write(detail::kCheckpointMagic, 8);
  detail::write_u64(os, spec.input_dim);
  detail::write_u64(os, spec.hidden.size());
  for (std::size_t w : spec.hidden) detail::write_u64(os, w);
  detail::write_u64(os, spec.feature_dim);
  detail::write_u64(os, spec.n_known);
  detail::write_u64(os, spec.open_head ? 1 : 0);
  detail::write_u64(os, model.seed());
  for (double v : model.input_mean()) detail::write_f64(os, v);
  for (double v : model.input_std()) detail::write_f64(os, v);
  for (const Tensor* t : model.parameters())
    for (double v : t->values()) detail::write_f64(os, v);
}

inline OneRingModel read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0) {
    throw Error(ErrorKind::Parse, "not a checkpoint file (bad magic)");
  }
  ModelSpec spec;
  spec.input_dim = detail::read_u64(is);
  const std::uint64_t n_hidden = detail::read_u64(is);
  if (n_hidden > 1024) throw Error(ErrorKind::Parse, "implausible hidden layer count in checkpoint");
  spec.hidden.resize(n_hidden);
  for (auto& w : spec.hidden) w = detail::read_u64(is);
  spec.feature_dim = detail::read_u64(is);
  spec.n_known = detail::read_u64(is);
  spec.open_head = detail::read_u64(is) != 0;
  const std::uint64_t seed = detail::read_u64(is);
  if (spec.input_dim > (1u << 20)) throw Error(ErrorKind::Parse, "implausible input_dim in checkpoint");
  OneRingModel model(spec, seed);
  std::vector<double> mean(spec.input_dim), std_dev(spec.input_dim);
  for (double& v : mean) v = detail::read_f64(is);
  for (double& v : std_dev) v = detail::read_f64(is);
  model.set_input_normalization(mean, std_dev);
  for (Tensor* t : model.params().all())
    for (double& v : t->values()) v = detail::read_f64(is);
  if (is.peek() != std::char_traits<char>::eof()) throw Error(ErrorKind::Parse, "trailing bytes in checkpoint");
  return model;
}

inline void save_checkpoint(const std::string& path, const OneRingModel& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  write_checkpoint(os, model);
  if (!os) throw Error(ErrorKind::Io, "failed writing " + path);
}

inline OneRingModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace onering
