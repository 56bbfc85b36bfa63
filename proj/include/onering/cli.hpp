#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "onering/config.hpp"
#include "onering/evaluation.hpp"

namespace onering {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Command-line overrides; each set field wins over the config file.
struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<Variant> variant;
  std::optional<RatioMode> ratio_mode;
};

inline void apply_overrides(RunConfig& cfg, const CliOverrides& o) {
  if (o.seed) cfg.apply_seed(*o.seed);
  if (o.out_dir) cfg.eval.out_dir = *o.out_dir;
  if (o.variant) cfg.train.variant = *o.variant;
  if (o.ratio_mode) cfg.train.ratio_mode = *o.ratio_mode;
}

namespace detail {

inline std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, /*force_flush=*/true);
  auto logger = std::make_shared<spdlog::logger>("onering", sink);
  logger->set_pattern("[%l] %v");
  const char* env = std::getenv("ONERING_LOG");
  const std::string level = env ? env : "info";
  if (level == "debug") {
    logger->set_level(spdlog::level::debug);
  } else {
    logger->set_level(spdlog::level::info);
    if (level != "info") logger->warn("ONERING_LOG='{}' not recognized, using info", level);
  }
  return logger;
}

inline std::string usage() {
  return "usage: onering <mode> [--config PATH] [--seed N] [--out DIR] [--variant {onering,onering_plus}] "
         "[--ratio-mode {batch,dataset}]\nmodes: " +
         valid_modes() + "\n";
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  os << text;
  if (!os) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

inline void append_log(std::string& jsonl, const TrainingLog& log) {
  for (const auto& rec : log) jsonl += to_json(rec).dump() + "\n";
}

inline void debug_log(spdlog::logger& logger, const TrainingLog& log) {
  for (const auto& rec : log) logger.debug("{}", to_json(rec).dump());
}

inline std::string h_line(double h) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "H=%.4f\n", h);
  return buf;
}

/// Generated scenario, with the configured CSV files replacing either domain.
inline BlobScenario load_data(const RunConfig& cfg) {
  BlobScenario data = generate_blobs(cfg.scenario);
  if (!cfg.source_csv.empty()) data.source = load_feature_csv(cfg.source_csv, Domain::Source);
  if (!cfg.target_csv.empty()) data.target = load_feature_csv(cfg.target_csv, Domain::Target);
  if (data.source.samples.cols() != data.target.samples.cols()) {
    throw Error(ErrorKind::InvalidConfig, "source and target feature widths differ");
  }
  return data;
}

inline ModelSpec spec_for(const RunConfig& cfg, const BlobScenario& data, bool open_head) {
  ModelSpec spec = cfg.model_spec();
  spec.input_dim = data.source.samples.cols();
  spec.open_head = open_head;
  return spec;
}

inline OneRingModel load_compatible(const RunConfig& cfg, const ModelSpec& expected) {
  OneRingModel model = load_checkpoint(cfg.checkpoint);
  const auto& s = model.spec();
  if (s.input_dim != expected.input_dim || s.n_known != expected.n_known || !s.open_head) {
    throw Error(ErrorKind::InvalidConfig, "checkpoint " + cfg.checkpoint + " does not match the configured scenario");
  }
  return model;
}

/// Path invariants: referenced inputs exist and the output directory is usable.
inline std::vector<std::string> path_problems(const RunConfig& cfg, Mode mode) {
  namespace fs = std::filesystem;
  std::vector<std::string> out;
  if (mode == Mode::Evaluate && cfg.checkpoint.empty()) out.push_back("model.checkpoint is required for evaluate");
  if (!cfg.checkpoint.empty() && (mode == Mode::Adapt || mode == Mode::Evaluate) && !fs::exists(cfg.checkpoint)) {
    out.push_back("model.checkpoint '" + cfg.checkpoint + "' does not exist");
  }
  if (!cfg.source_csv.empty() && !fs::exists(cfg.source_csv)) {
    out.push_back("scenario.source_csv '" + cfg.source_csv + "' does not exist");
  }
  if (!cfg.target_csv.empty() && !fs::exists(cfg.target_csv)) {
    out.push_back("scenario.target_csv '" + cfg.target_csv + "' does not exist");
  }
  std::error_code ec;
  fs::create_directories(cfg.eval.out_dir, ec);
  if (ec || !fs::is_directory(cfg.eval.out_dir)) {
    out.push_back("eval.out_dir '" + cfg.eval.out_dir + "' is not a writable directory");
  }
  return out;
}

inline int cmd_toy_demo(const RunConfig& cfg, std::ostream& out, spdlog::logger& logger) {
  namespace fs = std::filesystem;
  const fs::path dir = cfg.eval.out_dir;
  const auto scenario = toy_scenario(cfg.seed);
  ModelSpec arch = cfg.model_spec();
  logger.info("toy-demo: training plain and open-head models (seed {})", cfg.seed);
  const auto r = run_toy(scenario, cfg.train, arch);
  debug_log(logger, r.onering_log);
  const auto bounds = bounds_of(r.eval_set);
  write_text(dir / "toy_regions_plain.svg", decision_region_svg(r.plain, bounds, cfg.eval.resolution, &r.eval_set));
  write_text(dir / "toy_regions_onering.svg",
             decision_region_svg(r.onering, bounds, cfg.eval.resolution, &r.eval_set));
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["plain"] = to_json(r.plain_metrics);
  j["onering"] = to_json(r.onering_metrics);
  j["runner_up_unknown_rate"] = r.runner_up_rate;
  write_text(dir / "toy_metrics.json", j.dump(2) + "\n");
  logger.info("plain UNK {:.4f}, onering UNK {:.4f}, OS* {:.4f}", r.plain_metrics.unk, r.onering_metrics.unk,
              r.onering_metrics.os_star);
  out << h_line(r.onering_metrics.h);
  return kExitOk;
}

inline int cmd_pipeline(const RunConfig& cfg, Mode mode, std::ostream& out, spdlog::logger& logger) {
  namespace fs = std::filesystem;
  const fs::path dir = cfg.eval.out_dir;
  const auto split = cfg.scenario.split();
  const auto data = load_data(cfg);
  std::string jsonl;
  nlohmann::ordered_json metrics_json;
  double h = 0.0;

  switch (mode) {
    case Mode::TrainSource:
    case Mode::Adapt: {
      const ModelSpec spec = spec_for(cfg, data, true);
      std::optional<OneRingModel> model;
      if (mode == Mode::Adapt && !cfg.checkpoint.empty()) {
        model.emplace(load_compatible(cfg, spec));
        logger.info("adapt: starting from {}", cfg.checkpoint);
      } else {
        model.emplace(spec, cfg.seed);
        logger.info("source training: {} epochs", cfg.train.epochs_source);
        const auto log = train_source(*model, data.source, cfg.train);
        debug_log(logger, log);
        append_log(jsonl, log);
      }
      if (mode == Mode::Adapt) {
        logger.info("adapting ({}, ratio mode {}): {} epochs", to_string(cfg.train.variant),
                    to_string(cfg.train.ratio_mode), cfg.train.epochs_adapt);
        EvalHook hook = [&](const OneRingModel& m) -> std::optional<MetricsReport> {
          return evaluate(m, data.target, split);
        };
        const auto log = adapt_target(*model, data.target.samples, cfg.train, hook);
        debug_log(logger, log);
        append_log(jsonl, log);
      }
      const auto report = evaluate(*model, data.target, split);
      metrics_json = to_json(report);
      h = report.h;
      save_checkpoint((dir / "model.ckpt").string(), *model);
      break;
    }
    case Mode::Evaluate: {
      const OneRingModel model = load_compatible(cfg, spec_for(cfg, data, true));
      const auto report = evaluate(model, data.target, split);
      metrics_json = to_json(report);
      h = report.h;
      EpochRecord rec;
      rec.phase = "evaluate";
      rec.metrics = report;
      append_log(jsonl, {rec});
      break;
    }
    case Mode::Sweep: {
      logger.info("sweep over {} target-private counts", cfg.eval.sweep_counts.size());
      const auto rows = sweep_unknown(cfg.scenario, cfg.eval.sweep_counts, cfg.train);
      write_text(dir / "sweep.csv", sweep_csv(rows));
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      double lo = 1.0, hi = 0.0, sum = 0.0;
      for (const auto& row : rows) {
        nlohmann::ordered_json j;
        j["n_unknown"] = row.n_target_private;
        j["h"] = row.h;
        j["os_star"] = row.os_star;
        j["unk"] = row.unk;
        jsonl += j.dump() + "\n";
        arr.push_back(j);
        lo = std::min(lo, row.h);
        hi = std::max(hi, row.h);
        sum += row.h;
      }
      metrics_json["rows"] = arr;
      metrics_json["h_spread"] = hi - lo;
      h = sum / static_cast<double>(rows.size());
      metrics_json["h_mean"] = h;
      break;
    }
    case Mode::Baseline: {
      OneRingModel plain(spec_for(cfg, data, false), cfg.seed);
      logger.info("baseline: training plain {}-way model", plain.n_known());
      const auto log = train_source(plain, data.source, cfg.train);
      debug_log(logger, log);
      append_log(jsonl, log);
      const auto grid = entropy_baseline(plain, data.target, split, cfg.eval.thresholds);
      const auto best = std::max_element(grid.begin(), grid.end(), [](const auto& a, const auto& b) {
        return a.metrics.h < b.metrics.h;
      });
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const auto& g : grid) {
        nlohmann::ordered_json j;
        j["threshold"] = g.threshold;
        j["rejected"] = g.rejected;
        j["h"] = g.metrics.h;
        j["os_star"] = g.metrics.os_star;
        j["unk"] = g.metrics.unk;
        arr.push_back(j);
      }
      metrics_json = to_json(best->metrics);
      metrics_json["best_threshold"] = best->threshold;
      metrics_json["grid"] = arr;
      h = best->metrics.h;
      save_checkpoint((dir / "model.ckpt").string(), plain);
      break;
    }
    case Mode::ToyDemo:
      break;
  }
  write_text(dir / "log.jsonl", jsonl);
  write_text(dir / "metrics.json", metrics_json.dump(2) + "\n");
  out << h_line(h);
  return kExitOk;
}

}  // namespace detail

/// Entry point: `onering <mode> [flags]`. A leading flag instead of a mode
/// takes the mode from the config file.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  auto logger = detail::make_logger(err);
  std::optional<Mode> mode;
  int first = 1;
  if (argc > 1 && argv[1][0] != '-') {
    mode = parse_mode(argv[1]);
    if (!mode) {
      err << "error: unknown mode '" << argv[1] << "' (valid modes: " << valid_modes() << ")\n";
      return kExitUsage;
    }
    first = 2;
  }

  CLI::App app{"OneRing open-set classifier and source-free adaptation", "onering"};
  std::string config_path;
  CliOverrides o;
  std::string variant, ratio_mode;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "YAML run config");
  auto* seed_opt = app.add_option("--seed", seed, "run seed");
  auto* out_opt = app.add_option("--out", o.out_dir, "output directory");
  auto* variant_opt = app.add_option("--variant", variant, "onering or onering_plus")
                          ->check(CLI::IsMember({"onering", "onering_plus"}));
  auto* ratio_opt =
      app.add_option("--ratio-mode", ratio_mode, "batch or dataset")->check(CLI::IsMember({"batch", "dataset"}));
  (void)out_opt;

  std::vector<const char*> rest{argc > 0 ? argv[0] : "onering"};
  for (int i = first; i < argc; ++i) rest.push_back(argv[i]);
  try {
    app.parse(static_cast<int>(rest.size()), rest.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help() << detail::usage();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << detail::usage();
    return kExitUsage;
  }
  if (*seed_opt) o.seed = seed;
  if (*variant_opt) o.variant = parse_variant(variant);
  if (*ratio_opt) o.ratio_mode = parse_ratio_mode(ratio_mode);

  RunConfig cfg;
  try {
    if (config_path.empty()) {
      if (mode != Mode::ToyDemo) {
        err << "error: --config is required" << (mode ? " for " + to_string(*mode) : std::string()) << "\n"
            << detail::usage();
        return kExitUsage;
      }
    } else {
      if (!std::filesystem::exists(config_path)) {
        err << "error: config file '" << config_path << "' does not exist\n" << detail::usage();
        return kExitUsage;
      }
      cfg = load_config(config_path);
    }
    apply_overrides(cfg, o);
    if (!mode) mode = cfg.mode;
    if (!mode) {
      err << "error: no mode given on the command line or in the config\n" << detail::usage();
      return kExitUsage;
    }
    auto problems = cfg.problems();
    const auto path = detail::path_problems(cfg, *mode);
    problems.insert(problems.end(), path.begin(), path.end());
    if (!problems.empty()) throw ConfigError(problems);
  } catch (const ConfigError& e) {
    for (const auto& m : e.messages()) err << "config error: " << m << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Io ? kExitUsage : kExitRuntime;
  }

  try {
    return *mode == Mode::ToyDemo ? detail::cmd_toy_demo(cfg, out, *logger)
                                  : detail::cmd_pipeline(cfg, *mode, out, *logger);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::InvalidConfig ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace onering
