#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "onering/error.hpp"
#include "onering/model.hpp"
#include "onering/scenario.hpp"
#include "onering/trainer.hpp"

namespace onering {

enum class Mode { ToyDemo, TrainSource, Adapt, Evaluate, Sweep, Baseline };

inline const std::vector<std::pair<std::string, Mode>>& mode_names() {
  static const std::vector<std::pair<std::string, Mode>> names{
      {"toy-demo", Mode::ToyDemo}, {"train-source", Mode::TrainSource}, {"adapt", Mode::Adapt},
      {"evaluate", Mode::Evaluate}, {"sweep", Mode::Sweep},            {"baseline", Mode::Baseline}};
  return names;
}

inline std::string to_string(Mode mode) {
  for (const auto& [name, m] : mode_names())
    if (m == mode) return name;
  return "?";
}

inline std::string valid_modes() {
  std::string out;
  for (const auto& [name, _] : mode_names()) out += (out.empty() ? "" : ", ") + name;
  return out;
}

inline std::optional<Mode> parse_mode(std::string_view text) {
  for (const auto& [name, m] : mode_names())
    if (name == text) return m;
  return std::nullopt;
}

inline std::optional<Variant> parse_variant(std::string_view text) {
  if (text == "onering") return Variant::OneRing;
  if (text == "onering_plus") return Variant::OneRingPlus;
  return std::nullopt;
}

inline std::optional<RatioMode> parse_ratio_mode(std::string_view text) {
  if (text == "batch") return RatioMode::MiniBatch;
  if (text == "dataset") return RatioMode::WholeDataset;
  return std::nullopt;
}

struct EvalConfig {
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<std::size_t> sweep_counts{2, 4, 8};
  std::string out_dir = "out";
  std::size_t resolution = 120;
};

struct RunConfig {
  std::optional<Mode> mode;
  std::uint64_t seed = 0;
  ScenarioConfig scenario;
  std::string source_csv;  // replaces the generated source set when set
  std::string target_csv;  // replaces the generated target set when set
  std::vector<std::size_t> hidden{64};
  std::size_t feature_dim = 32;
  std::string checkpoint;  // model to start from (adapt, evaluate)
  TrainConfig train;
  EvalConfig eval;

  /// Architecture for the configured scenario.
  ModelSpec model_spec() const {
    ModelSpec spec;
    spec.input_dim = scenario.dim;
    spec.hidden = hidden;
    spec.feature_dim = feature_dim;
    spec.n_known = scenario.n_shared + scenario.n_source_private;
    return spec;
  }

  /// Copies the run seed into the scenario and the training config.
  void apply_seed(std::uint64_t s) {
    seed = s;
    scenario.seed = s;
    train.seed = s;
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out = train.problems();
    if (scenario.dim < 2) out.push_back("scenario.dim must be >= 2");
    if (scenario.per_class < 1) out.push_back("scenario.per_class must be >= 1");
    if (!(scenario.cluster_std > 0.0)) out.push_back("scenario.cluster_std must be > 0");
    if (!(scenario.noise_scale > 0.0)) out.push_back("scenario.noise_scale must be > 0");
    if (scenario.translation.size() > scenario.dim) out.push_back("scenario.translation is longer than scenario.dim");
    if (scenario.n_shared < 1) out.push_back("scenario.n_shared must be >= 1");
    if (scenario.n_source_private < 1) out.push_back("scenario.n_source_private must be >= 1");
    if (scenario.total_classes <= scenario.n_shared + scenario.n_source_private) {
      out.push_back("scenario.total_classes must exceed n_shared + n_source_private");
    }
    if (feature_dim < 1) out.push_back("model.feature_dim must be >= 1");
    for (std::size_t w : hidden)
      if (w < 1) out.push_back("model.hidden widths must be >= 1");
    if (eval.thresholds.empty()) out.push_back("eval.thresholds must not be empty");
    for (double t : eval.thresholds)
      if (t < 0.0 || t > 1.0) out.push_back("eval.thresholds must lie in [0, 1]");
    if (eval.sweep_counts.empty()) out.push_back("eval.sweep_counts must not be empty");
    for (std::size_t c : eval.sweep_counts)
      if (c < 1) out.push_back("eval.sweep_counts must be >= 1");
    if (eval.resolution < 1) out.push_back("eval.resolution must be >= 1");
    if (eval.out_dir.empty()) out.push_back("eval.out_dir must not be empty");
    return out;
  }
};

/// Config failure carrying every problem found, one message per entry.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> messages)
      : Error(ErrorKind::InvalidConfig, join(messages)), messages_(std::move(messages)) {}
  const std::vector<std::string>& messages() const { return messages_; }

 private:
  static std::string join(const std::vector<std::string>& m) {
    std::string out;
    for (const auto& s : m) out += (out.empty() ? "" : "\n") + s;
    return out;
  }
  std::vector<std::string> messages_;
};

namespace detail {

class ConfigReader {
 public:
  std::vector<std::string> errors;

  static std::string where(const YAML::Node& node) {
    const auto mark = node.Mark();
    return mark.is_null() ? std::string() : "line " + std::to_string(mark.line + 1) + ": ";
  }

  template <typename T>
  void scalar(const YAML::Node& node, const std::string& key, T& out) {
    if (!node.IsScalar()) {
      errors.push_back(where(node) + key + ": expected a scalar");
      return;
    }
    try {
      out = node.as<T>();
    } catch (const YAML::Exception&) {
      errors.push_back(where(node) + key + ": cannot read '" + node.Scalar() + "' as " + type_name<T>());
    }
  }

  void count(const YAML::Node& node, const std::string& key, std::size_t& out) {
    long long v = 0;
    const std::size_t before = errors.size();
    scalar(node, key, v);
    if (errors.size() != before) return;
    if (v < 0) {
      errors.push_back(where(node) + key + ": must be >= 0, got " + node.Scalar());
      return;
    }
    out = static_cast<std::size_t>(v);
  }

  template <typename T>
  void list(const YAML::Node& node, const std::string& key, std::vector<T>& out) {
    if (!node.IsSequence()) {
      errors.push_back(where(node) + key + ": expected a list");
      return;
    }
    std::vector<T> values;
    for (std::size_t i = 0; i < node.size(); ++i) {
      T v{};
      if constexpr (std::is_same_v<T, std::size_t>) {
        count(node[i], key + "[" + std::to_string(i) + "]", v);
      } else {
        scalar(node[i], key + "[" + std::to_string(i) + "]", v);
      }
      values.push_back(v);
    }
    out = std::move(values);
  }

  using Handler = std::function<void(const YAML::Node&, const std::string&)>;

  void block(const YAML::Node& node, const std::string& prefix, const std::map<std::string, Handler>& handlers) {
    if (!node.IsMap()) {
      errors.push_back(where(node) + (prefix.empty() ? "config" : prefix) + ": expected a mapping");
      return;
    }
    for (const auto& kv : node) {
      const std::string key = kv.first.as<std::string>();
      const std::string full = prefix.empty() ? key : prefix + "." + key;
      const auto it = handlers.find(key);
      if (it == handlers.end()) {
        errors.push_back(where(kv.first) + "unknown key '" + full + "'");
        continue;
      }
      it->second(kv.second, full);
    }
  }

 private:
  template <typename T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_same_v<T, double>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "an integer";
  }
};

}  // namespace detail

/// Strict YAML config parsing. Unknown keys, type errors and invariant
/// violations are collected and raised together as a ConfigError.
inline RunConfig parse_config(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    throw ConfigError({"line " + std::to_string(e.mark.line + 1) + ": " + e.msg});
  }
  RunConfig cfg;
  if (root.IsNull()) {
    cfg.apply_seed(cfg.seed);
    return cfg;
  }
  detail::ConfigReader r;
  using H = detail::ConfigReader::Handler;
  auto& sc = cfg.scenario;
  auto& tr = cfg.train;
  auto& ev = cfg.eval;

  std::map<std::string, H> scenario{
      {"total_classes", [&](auto& n, auto& k) { r.count(n, k, sc.total_classes); }},
      {"n_shared", [&](auto& n, auto& k) { r.count(n, k, sc.n_shared); }},
      {"n_source_private", [&](auto& n, auto& k) { r.count(n, k, sc.n_source_private); }},
      {"per_class", [&](auto& n, auto& k) { r.count(n, k, sc.per_class); }},
      {"dim", [&](auto& n, auto& k) { r.count(n, k, sc.dim); }},
      {"cluster_std", [&](auto& n, auto& k) { r.scalar(n, k, sc.cluster_std); }},
      {"rotation", [&](auto& n, auto& k) { r.scalar(n, k, sc.rotation); }},
      {"translation", [&](auto& n, auto& k) { r.list(n, k, sc.translation); }},
      {"noise_scale", [&](auto& n, auto& k) { r.scalar(n, k, sc.noise_scale); }},
      {"source_csv", [&](auto& n, auto& k) { r.scalar(n, k, cfg.source_csv); }},
      {"target_csv", [&](auto& n, auto& k) { r.scalar(n, k, cfg.target_csv); }},
  };
  std::map<std::string, H> model{
      {"hidden", [&](auto& n, auto& k) { r.list(n, k, cfg.hidden); }},
      {"feature_dim", [&](auto& n, auto& k) { r.count(n, k, cfg.feature_dim); }},
      {"checkpoint", [&](auto& n, auto& k) { r.scalar(n, k, cfg.checkpoint); }},
  };
  std::map<std::string, H> train{
      {"lr", [&](auto& n, auto& k) { r.scalar(n, k, tr.lr); }},
      {"momentum", [&](auto& n, auto& k) { r.scalar(n, k, tr.momentum); }},
      {"adapt_lr",
       [&](auto& n, auto& k) {
         double v = 0.0;
         const std::size_t before = r.errors.size();
         r.scalar(n, k, v);
         if (r.errors.size() == before) tr.adapt_lr = v;
       }},
      {"epochs_source", [&](auto& n, auto& k) { r.count(n, k, tr.epochs_source); }},
      {"epochs_adapt", [&](auto& n, auto& k) { r.count(n, k, tr.epochs_adapt); }},
      {"bs", [&](auto& n, auto& k) { r.count(n, k, tr.bs); }},
      {"lambda_second_ce", [&](auto& n, auto& k) { r.scalar(n, k, tr.lambda_second_ce); }},
      {"two_phase", [&](auto& n, auto& k) { r.scalar(n, k, tr.two_phase); }},
      {"phase1_epochs", [&](auto& n, auto& k) { r.count(n, k, tr.phase1_epochs); }},
      {"ratio_mode",
       [&](auto& n, auto& k) {
         std::string v;
         const std::size_t before = r.errors.size();
         r.scalar(n, k, v);
         if (r.errors.size() != before) return;
         if (auto m = parse_ratio_mode(v)) tr.ratio_mode = *m;
         else r.errors.push_back(r.where(n) + k + ": '" + v + "' is not one of batch, dataset");
       }},
      {"variant",
       [&](auto& n, auto& k) {
         std::string v;
         const std::size_t before = r.errors.size();
         r.scalar(n, k, v);
         if (r.errors.size() != before) return;
         if (auto m = parse_variant(v)) tr.variant = *m;
         else r.errors.push_back(r.where(n) + k + ": '" + v + "' is not one of onering, onering_plus");
       }},
      {"weighted_entropy", [&](auto& n, auto& k) { r.scalar(n, k, tr.weighted_entropy); }},
      {"standardize_inputs", [&](auto& n, auto& k) { r.scalar(n, k, tr.standardize_inputs); }},
      {"aad_k", [&](auto& n, auto& k) { r.count(n, k, tr.aad.k); }},
      {"aad_beta", [&](auto& n, auto& k) { r.scalar(n, k, tr.aad.beta); }},
  };
  std::map<std::string, H> eval{
      {"thresholds", [&](auto& n, auto& k) { r.list(n, k, ev.thresholds); }},
      {"sweep_counts", [&](auto& n, auto& k) { r.list(n, k, ev.sweep_counts); }},
      {"out_dir", [&](auto& n, auto& k) { r.scalar(n, k, ev.out_dir); }},
      {"resolution", [&](auto& n, auto& k) { r.count(n, k, ev.resolution); }},
  };
  std::uint64_t seed = 0;
  std::map<std::string, H> top{
      {"mode",
       [&](auto& n, auto& k) {
         std::string v;
         const std::size_t before = r.errors.size();
         r.scalar(n, k, v);
         if (r.errors.size() != before) return;
         if (auto m = parse_mode(v)) cfg.mode = *m;
         else r.errors.push_back(r.where(n) + "mode: '" + v + "' is not a valid mode (valid: " + valid_modes() + ")");
       }},
      {"seed", [&](auto& n, auto& k) { r.scalar(n, k, seed); }},
      {"scenario", [&](auto& n, auto& k) { r.block(n, k, scenario); }},
      {"model", [&](auto& n, auto& k) { r.block(n, k, model); }},
      {"train", [&](auto& n, auto& k) { r.block(n, k, train); }},
      {"eval", [&](auto& n, auto& k) { r.block(n, k, eval); }},
  };
  r.block(root, "", top);
  cfg.apply_seed(seed);
  for (auto& p : cfg.problems()) r.errors.push_back(std::move(p));
  if (!r.errors.empty()) throw ConfigError(std::move(r.errors));
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace onering
