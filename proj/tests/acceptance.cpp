// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "onering/cli.hpp"
#include "onering/evaluation.hpp"
#include "support/fd.hpp"

using namespace onering;
using onering::testing::bind;
using onering::testing::max_gradient_error;
using onering::testing::random_matrix;
using onering::testing::random_vector;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt_num(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// --- 1 --------------------------------------------------------------------

/// Scalar projection sum(out * R) with R fixed per call site.
Var project(Graph& g, Var out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor r(out.value().shape());
  for (double& v : r.values()) v = rng.normal();
  return sum(mul(out, g.constant(std::move(r))));
}

Outcome gradient_correctness() {
  constexpr int kSeeds = 10;
  constexpr double kTol = 1e-4;
  double worst = 0.0;
  std::string worst_name;
  auto check = [&](const std::string& name, const std::vector<Tensor*>& ps, const testing::LossBuilder& f) {
    const double e = max_gradient_error(ps, f);
    if (e > worst || worst_name.empty()) worst = e, worst_name = name;
  };

  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(1000 + s);
    const std::uint64_t ps = 77 + s;
    Tensor a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng), c = random_matrix(3, 4, rng);
    Tensor bias = random_vector(4, rng);
    Tensor kinked = testing::away_from_zero(3, 4, rng);
    Tensor logits = random_matrix(5, 4, rng, 2.0);
    Tensor v = random_vector(6, rng);
    const std::vector<std::size_t> labels{0, 3, 1, 2, 1};
    const std::vector<std::size_t> known_labels{0, 2, 1, 2, 0};
    std::vector<double> w(6);
    for (double& x : w) x = rng.normal();

    check("matmul", {&a, &b}, [&](Graph& g, bool t) { return project(g, matmul(bind(g, a, t), bind(g, b, t)), ps); });
    check("add_bias", {&a, &bias},
          [&](Graph& g, bool t) { return project(g, add_bias(bind(g, a, t), bind(g, bias, t)), ps); });
    check("relu", {&kinked}, [&](Graph& g, bool t) { return project(g, relu(bind(g, kinked, t)), ps); });
    check("log_softmax", {&logits},
          [&](Graph& g, bool t) { return project(g, log_softmax(bind(g, logits, t)), ps); });
    check("softmax", {&logits}, [&](Graph& g, bool t) { return project(g, softmax(bind(g, logits, t)), ps); });
    check("cross_entropy", {&logits},
          [&](Graph& g, bool t) { return cross_entropy(bind(g, logits, t), labels); });
    check("row_entropy", {&logits}, [&](Graph& g, bool t) { return project(g, row_entropy(bind(g, logits, t)), ps); });
    check("entropy", {&logits}, [&](Graph& g, bool t) { return entropy(bind(g, logits, t)); });
    check("drop_column_per_row", {&logits},
          [&](Graph& g, bool t) { return project(g, drop_column_per_row(bind(g, logits, t), known_labels), ps); });
    check("add", {&a, &c}, [&](Graph& g, bool t) { return project(g, add(bind(g, a, t), bind(g, c, t)), ps); });
    check("scale", {&a}, [&](Graph& g, bool t) { return project(g, scale(bind(g, a, t), -1.7), ps); });
    check("mul", {&a, &c}, [&](Graph& g, bool t) { return project(g, mul(bind(g, a, t), bind(g, c, t)), ps); });
    check("sum", {&a}, [&](Graph& g, bool t) { return sum(mul(bind(g, a, t), bind(g, a, t))); });
    check("mean", {&a}, [&](Graph& g, bool t) { return mean(mul(bind(g, a, t), bind(g, c, t))); });
    check("row_sum", {&a}, [&](Graph& g, bool t) { return project(g, row_sum(bind(g, a, t)), ps); });
    check("row_dot", {&a, &c}, [&](Graph& g, bool t) { return project(g, row_dot(bind(g, a, t), bind(g, c, t)), ps); });
    check("transpose", {&a}, [&](Graph& g, bool t) { return project(g, transpose(bind(g, a, t)), ps); });
    check("weighted_sum", {&v}, [&](Graph& g, bool t) { return weighted_sum(mul(bind(g, v, t), bind(g, v, t)), w); });

    // composites through a small MLP
    ModelSpec spec;
    spec.input_dim = 3;
    spec.hidden = {6};
    spec.feature_dim = 5;
    spec.n_known = 3;
    OneRingModel model(spec, 500 + s);
    const auto params = model.params().all();
    // zero biases put all-dead rows exactly on the relu kink
    for (Tensor* p : params)
      if (p->rank() == 1)
        for (double& b : p->values()) b = 0.1 * rng.normal();
    // argmax partitions are piecewise constant: keep rows off decision boundaries
    Tensor x = random_matrix(8, 3, rng, 1.5);
    while (testing::min_top2_margin(infer(model, x).logits) < 0.01) x = random_matrix(8, 3, rng, 1.5);
    const std::vector<std::size_t> y{0, 1, 2, 0, 1, 2, 0, 1};
    check("source objective", params, [&](Graph& g, bool t) {
      return source_loss(forward(g, model, x, t, t).logits, y, 1.0);
    });
    check("weighted entropy", params, [&](Graph& g, bool t) {
      Var z = forward(g, model, x, t, t).logits;
      const auto ratio = estimate_ratio(predict(z.value()), model.unknown_index(), RatioMode::MiniBatch);
      return weighted_entropy_loss(z, ratio, true);
    });

    // same for the neighbor sets: keep k-th and (k+1)-th similarities apart
    const std::vector<std::size_t> idx{1, 4, 5, 9, 11};
    Tensor pool, xb;
    MemoryBank bank(12, spec.feature_dim, spec.head_width());
    for (bool stable = false; !stable;) {
      pool = random_matrix(12, 3, rng, 1.5);
      const auto inf = infer(model, pool);
      std::vector<std::size_t> all(12);
      for (std::size_t i = 0; i < 12; ++i) all[i] = i;
      bank.update(all, inf.features, softmax_values(inf.logits));
      xb = pool.gather_rows(idx);
      stable = testing::min_top2_margin(inf.logits) >= 0.01 &&
               testing::min_knn_gap(bank, infer(model, xb).features, idx, AadConfig{}.k) >= 1e-3;
    }
    check("neighborhood objective", model.params().extractor, [&](Graph& g, bool t) {
      auto out = forward(g, model, xb, t, false);
      const auto ratio = estimate_ratio(predict(out.logits.value()), model.unknown_index(), RatioMode::MiniBatch);
      return aad_loss(out.features.value(), out.logits, idx, bank, AadConfig{}, ratio, true);
    });
  }
  return {worst <= kTol, "max relative error " + fmt_num("%.2e", worst) + " (" + worst_name + "), tolerance 1e-4, " +
                             std::to_string(kSeeds) + " seeds"};
}

// --- 2, 3 -----------------------------------------------------------------

Outcome toy_reproduction(const ToyResult& r) {
  double worst_known = 1.0;
  for (const auto& [cls, acc] : r.onering_metrics.per_class_accuracy)
    if (cls != r.onering_metrics.n_known) worst_known = std::min(worst_known, acc);
  const std::string svg = decision_region_svg(r.onering, bounds_of(r.eval_set), 80);
  std::set<std::string> fills;
  for (std::size_t pos = svg.find("class=\"region\""); pos != std::string::npos;
       pos = svg.find("class=\"region\"", pos + 1)) {
    const auto f = svg.find("fill=\"", pos) + 6;
    fills.insert(svg.substr(f, svg.find('"', f) - f));
  }
  const bool pass = r.plain_metrics.unk == 0.0 && r.onering_metrics.unk >= 0.90 && worst_known >= 0.95;
  return {pass, "plain UNK " + fmt_num("%.3f", r.plain_metrics.unk) + ", OneRing UNK " + fmt_num("%.3f", r.onering_metrics.unk) +
                    ", worst known class " + fmt_num("%.3f", worst_known) + ", " + std::to_string(fills.size()) +
                    " region colors"};
}

Outcome runner_up_invariant(const ToyResult& r) {
  return {r.runner_up_rate >= 0.95, "runner-up = unknown on " + fmt_num("%.1f%%", 100.0 * r.runner_up_rate) +
                                        " of source training samples (need >= 95%)"};
}

// --- 4, 5, 7 ----------------------------------------------------------------

struct Standard {
  ScenarioConfig scenario;
  TrainConfig cfg;
  PipelineResult onering;
  PipelineResult onering_plus;
  PipelineResult dataset_mode;
};

Outcome adaptation_gain(const Standard& s) {
  const double before = s.onering.source_metrics.h, after = s.onering.adapted_metrics.h;
  const double plus = s.onering_plus.adapted_metrics.h;
  const bool pass = after - before >= 0.05 && plus >= after - 0.01;
  return {pass, "H source " + fmt_num("%.4f", before) + " -> OneRing " + fmt_num("%.4f", after) + " (gain " +
                    fmt_num("%+.4f", after - before) + "), OneRing+ " + fmt_num("%.4f", plus)};
}

Outcome baseline_dominance(const Standard& s, const std::vector<double>& grid) {
  const auto split = s.scenario.split();
  const auto data = generate_blobs(s.scenario);
  ModelSpec spec = default_model_spec(s.scenario.dim, split.n_known());
  spec.open_head = false;
  OneRingModel plain(spec, s.cfg.seed);
  train_source(plain, data.source, s.cfg);
  const auto rows = entropy_baseline(plain, data.target, split, grid);
  double best = 0.0, best_t = 0.0;
  for (const auto& r : rows)
    if (r.metrics.h > best) best = r.metrics.h, best_t = r.threshold;
  const double ours = s.onering.source_metrics.h;
  return {ours >= best, "source-model H " + fmt_num("%.4f", ours) + " vs best entropy threshold H " + fmt_num("%.4f", best) +
                            " at t=" + fmt_num("%.1f", best_t)};
}

Outcome ratio_equivalence(const Standard& s) {
  const double a = s.onering.adapted_metrics.h, b = s.dataset_mode.adapted_metrics.h;
  return {std::abs(a - b) <= 0.02, "H batch " + fmt_num("%.4f", a) + " vs dataset " + fmt_num("%.4f", b) + " (|diff| " +
                                       fmt_num("%.4f", std::abs(a - b)) + ", need <= 0.02)"};
}

// --- 6 --------------------------------------------------------------------

Outcome weight_ablation() {
  ScenarioConfig sc;
  sc.total_classes = 15;
  sc.n_shared = 2;
  sc.n_source_private = 1;
  sc.dim = 2;
  sc.rotation = std::numbers::pi / 6.0;
  sc.translation = {1.0};
  TrainConfig cfg;
  const auto weighted = run_pipeline(sc, cfg);
  cfg.weighted_entropy = false;
  const auto plain = run_pipeline(sc, cfg);

  const auto data = generate_blobs(sc);
  const auto preds = predict(infer(weighted.source_model, data.target.samples).logits);
  const double frac = static_cast<double>(std::count(preds.begin(), preds.end(), weighted.source_model.unknown_index())) /
                      static_cast<double>(preds.size());
  const double hw = weighted.adapted_metrics.h, hu = plain.adapted_metrics.h;
  return {frac >= 0.70 && hw > hu, "unknown-predicted fraction " + fmt_num("%.3f", frac) + ", H weighted " +
                                       fmt_num("%.4f", hw) + " vs unweighted " + fmt_num("%.4f", hu) +
                                       " (need strictly higher)"};
}

// --- 8 --------------------------------------------------------------------

Outcome metric_oracle() {
  Rng rng(8);
  std::size_t exact = 0, identities = 0;
  constexpr int kInstances = 100;
  for (int t = 0; t < kInstances; ++t) {
    const std::size_t n = 1 + rng.index(6);
    const std::size_t m = 20 + rng.index(80);
    std::vector<std::size_t> truth(m), pred(m);
    for (std::size_t i = 0; i < m; ++i) {
      truth[i] = i <= n ? i : rng.index(n + 1);  // every class present
      pred[i] = rng.uniform() < 0.6 ? truth[i] : rng.index(n + 1);
    }
    // brute force: full confusion matrix, then per-class recall
    std::vector<std::vector<std::size_t>> confusion(n + 1, std::vector<std::size_t>(n + 1, 0));
    for (std::size_t i = 0; i < m; ++i) ++confusion[truth[i]][pred[i]];
    std::vector<double> recall(n + 1);
    for (std::size_t c = 0; c <= n; ++c) {
      std::size_t row = 0;
      for (std::size_t k = 0; k <= n; ++k) row += confusion[c][k];
      recall[c] = static_cast<double>(confusion[c][c]) / static_cast<double>(row);
    }
    double os_star = 0.0;
    for (std::size_t c = 0; c < n; ++c) os_star += recall[c];
    os_star /= static_cast<double>(n);
    const auto r = compute_metrics(pred, truth, n);
    bool same = r.os_star == os_star && r.unk == recall[n];
    for (std::size_t c = 0; c <= n; ++c) same = same && r.per_class_accuracy.at(c) == recall[c];
    exact += same;
    const double nn = static_cast<double>(n);
    const double os = nn / (nn + 1.0) * r.os_star + r.unk / (nn + 1.0);
    const double h = r.os_star + r.unk > 0.0 ? 2.0 * r.os_star * r.unk / (r.os_star + r.unk) : 0.0;
    identities += std::abs(r.os - os) <= 1e-12 && std::abs(r.h - h) <= 1e-12;
  }
  return {exact == kInstances && identities == kInstances,
          std::to_string(exact) + "/100 exact matches, " + std::to_string(identities) + "/100 identity checks"};
}

// --- 9 --------------------------------------------------------------------

Outcome unknown_count_robustness(const Standard& s) {
  const std::vector<std::size_t> counts{2, 4, 8};
  const auto rows = sweep_unknown(s.scenario, counts, s.cfg);
  double lo = 1.0, hi = 0.0;
  std::string hs;
  for (const auto& r : rows) {
    lo = std::min(lo, r.h);
    hi = std::max(hi, r.h);
    hs += (hs.empty() ? "" : " / ") + fmt_num("%.4f", r.h);
  }
  return {hi - lo <= 0.10, "H at {2,4,8} target-private classes: " + hs + ", spread " + fmt_num("%.4f", hi - lo) +
                               " (need <= 0.10)"};
}

// --- 10 -------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "onering-acceptance-determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path config = root / "run.yaml";
  std::ofstream(config) << "seed: 3\ntrain:\n  variant: onering_plus\n  epochs_source: 40\n  epochs_adapt: 10\n";
  std::ostringstream out, err;
  auto run = [&](const std::string& mode, const std::string& dir) {
    const std::string cfg = config.string(), o = (root / dir).string();
    const char* argv[] = {"onering", mode.c_str(), "--config", cfg.c_str(), "--out", o.c_str()};
    return run_cli(6, argv, out, err);
  };
  const int rc = run("adapt", "a") | run("adapt", "b") | run("toy-demo", "ta") | run("toy-demo", "tb");
  std::size_t same = 0;
  for (const char* f : {"metrics.json", "model.ckpt", "log.jsonl"})
    same += !slurp(root / "a" / f).empty() && slurp(root / "a" / f) == slurp(root / "b" / f);
  for (const char* f : {"toy_metrics.json", "toy_regions_onering.svg"})
    same += !slurp(root / "ta" / f).empty() && slurp(root / "ta" / f) == slurp(root / "tb" / f);
  fs::remove_all(root);
  return {rc == 0 && same == 5, std::to_string(same) + "/5 output files byte-identical across repeated runs"};
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn, double budget_s = 0.0) {
    const auto t0 = clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    if (budget_s > 0.0 && secs > budget_s) {
      o.pass = false;
      o.detail += ", over the " + fmt_num("%.0f", budget_s) + " s budget";
    }
    failures += !o.pass;
    std::printf("[%s] %2d %-28s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, "gradient correctness", gradient_correctness, 5.0);

  ToyResult toy;
  const auto t0 = clock::now();
  toy = run_toy(toy_scenario(0), TrainConfig{}, ModelSpec{});
  const double toy_secs = std::chrono::duration<double>(clock::now() - t0).count();
  report(2, "toy reproduction", [&] { return toy_reproduction(toy); }, 30.0 - toy_secs);
  report(3, "runner-up invariant", [&] { return runner_up_invariant(toy); });

  Standard s;
  const auto t1 = clock::now();
  s.onering = run_pipeline(s.scenario, s.cfg);
  TrainConfig plus = s.cfg;
  plus.variant = Variant::OneRingPlus;
  s.onering_plus = run_pipeline(s.scenario, plus);
  const double gain_secs = std::chrono::duration<double>(clock::now() - t1).count();
  TrainConfig dataset = s.cfg;
  dataset.ratio_mode = RatioMode::WholeDataset;
  s.dataset_mode = run_pipeline(s.scenario, dataset);

  report(4, "adaptation gain", [&] { return adaptation_gain(s); }, 120.0 - gain_secs);
  report(5, "baseline dominance", [&] { return baseline_dominance(s, EvalConfig{}.thresholds); });
  report(6, "weight ablation", weight_ablation);
  report(7, "ratio-mode equivalence", [&] { return ratio_equivalence(s); });
  report(8, "metric oracle", metric_oracle);
  report(9, "unknown-count robustness", [&] { return unknown_count_robustness(s); });
  report(10, "determinism", determinism);

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
