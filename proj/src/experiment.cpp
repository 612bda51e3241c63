#include "nail/experiment.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace nail {

namespace {

constexpr std::uint64_t kStreamRepeatSplit = 0xA1;
constexpr std::uint64_t kStreamRepeatFeature = 0xA2;
constexpr std::uint64_t kStreamRepeatLabel = 0xA3;
constexpr std::uint64_t kStreamRepeatSolver = 0xA4;

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

/// The per-repeat transductive problem: masked training rows stacked over the
/// validation rows, whose features are visible but whose labels are entirely
/// hidden from the solver.
struct RepeatData {
  MultiViewDataset combined;
  EvalMask train_eval;  // training rows' hidden entries (completion metric)
  EvalMask val_eval;    // validation rows' labels (selection metric)
  std::uint64_t solver_seed = 0;
};

RepeatData prepare_repeat(const MultiViewDataset& ds, const ExperimentConfig& cfg, int repeat) {
  const std::uint64_t run_seed = cfg.base_seed ^ mix64(static_cast<std::uint64_t>(repeat));
  auto [train, val] = split_rows(ds, cfg.train_fraction, derive_seed(run_seed, kStreamRepeatSplit));
  MultiViewDataset masked = apply_feature_mask(
      train, {cfg.mask_r, 0.0, derive_seed(run_seed, kStreamRepeatFeature)});
  masked = apply_label_mask(masked, {0.0, cfg.mask_s, derive_seed(run_seed, kStreamRepeatLabel)});

  RepeatData out;
  out.solver_seed = derive_seed(run_seed, kStreamRepeatSolver);
  auto& combined = out.combined;
  combined.n = masked.n + val.n;
  combined.m = ds.m;
  combined.l = ds.l;
  for (Index v = 0; v < ds.m; ++v) {
    combined.views.push_back(
        vstack(masked.views[static_cast<std::size_t>(v)], val.views[static_cast<std::size_t>(v)]));
    combined.feature_masks.push_back(vstack(masked.feature_masks[static_cast<std::size_t>(v)],
                                            val.feature_masks[static_cast<std::size_t>(v)]));
  }
  const Matrix val_zero = Matrix::Zero(val.n, ds.l);
  combined.labels = vstack(masked.labels, val_zero);
  combined.label_mask = vstack(masked.label_mask, val_zero);
  combined.eval_truth = vstack(masked.eval_truth, val_zero);
  combined.eval_mask = vstack(masked.eval_mask, val_zero);
  combined.validate();

  const Matrix train_zero = Matrix::Zero(masked.n, ds.l);
  out.train_eval = {combined.eval_mask, combined.eval_truth};
  out.val_eval = {vstack(train_zero, val.label_mask), vstack(train_zero, val.labels)};
  return out;
}

struct Cell {
  Variant variant;
  double lambda, mu, rk;
};

double sample_std(const std::vector<double>& values, double mean) {
  if (values.size() < 2) return 0.0;
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::string csv_bool(bool b) { return b ? "1" : "0"; }

json kernel_to_json(const KernelSpec& spec) {
  json out;
  out["kind"] = spec.kind == KernelKind::Linear ? "linear" : "gaussian";
  if (spec.bandwidth > 0.0) {
    out["bandwidth"] = spec.bandwidth;
  } else {
    out["bandwidth"] = "auto";
  }
  return out;
}

KernelSpec kernel_from_json(const json& j) {
  KernelSpec spec;
  const std::string kind = j.value("kind", "gaussian");
  if (kind == "linear") {
    spec.kind = KernelKind::Linear;
  } else if (kind == "gaussian") {
    spec.kind = KernelKind::Gaussian;
  } else {
    throw ConfigError("unknown kernel kind: " + kind);
  }
  if (j.contains("bandwidth") && j.at("bandwidth").is_number()) {
    spec.bandwidth = j.at("bandwidth").get<double>();
    if (spec.bandwidth <= 0.0) throw ConfigError("bandwidth must be positive");
  }
  return spec;
}

SyntheticSpec synthetic_from_json(const json& j) {
  SyntheticSpec spec;
  spec.n = j.value("n", spec.n);
  spec.m = j.value("m", spec.m);
  spec.l = j.value("l", spec.l);
  spec.k_true = j.value("k_true", spec.k_true);
  if (j.contains("view_dims")) {
    spec.view_dims = j.at("view_dims").get<std::vector<Index>>();
  }
  if (j.contains("noise_std")) {
    if (j.at("noise_std").is_number()) {
      spec.noise_std = {j.at("noise_std").get<double>()};
    } else {
      spec.noise_std = j.at("noise_std").get<std::vector<double>>();
    }
  }
  spec.noisy_view_count = j.value("noisy_view_count", spec.noisy_view_count);
  spec.positive_rate = j.value("positive_rate", spec.positive_rate);
  spec.seed = j.value("seed", spec.seed);
  return spec;
}

json synthetic_to_json(const SyntheticSpec& spec) {
  json out;
  out["n"] = spec.n;
  out["m"] = spec.m;
  out["l"] = spec.l;
  out["k_true"] = spec.k_true;
  out["view_dims"] = spec.view_dims;
  out["noise_std"] = spec.noise_std;
  out["noisy_view_count"] = spec.noisy_view_count;
  out["positive_rate"] = spec.positive_rate;
  out["seed"] = spec.seed;
  return out;
}

json config_to_json(const ExperimentConfig& cfg) {
  json out;
  if (cfg.manifest) out["manifest"] = cfg.manifest->string();
  if (cfg.synthetic) out["synthetic"] = synthetic_to_json(*cfg.synthetic);
  out["mask"] = {{"r", cfg.mask_r}, {"s", cfg.mask_s}};
  json names = json::array();
  for (const Variant v : cfg.variants) names.push_back(variant_name(v));
  out["variants"] = names;
  out["lambda_grid"] = cfg.lambda_grid;
  out["mu_grid"] = cfg.mu_grid;
  out["rk_grid"] = cfg.rk_grid;
  out["repeats"] = cfg.repeats;
  out["train_fraction"] = cfg.train_fraction;
  out["seed"] = cfg.base_seed;
  out["out"] = cfg.out_dir.string();
  out["workers"] = cfg.workers;
  out["max_outer"] = cfg.max_outer;
  out["tol"] = cfg.tol;
  out["strict_paper"] = cfg.strict_paper;
  if (cfg.subsample) out["subsample"] = *cfg.subsample;
  out["kernel"] = kernel_to_json(cfg.kernel);
  out["loss"] = {{"gamma", cfg.loss.gamma}, {"a", cfg.loss.a}, {"s", cfg.loss.s}};
  return out;
}

}  // namespace

void ExperimentConfig::apply_grid_defaults() {
  if (lambda_grid.empty() || mu_grid.empty()) {
    std::vector<double> powers;
    for (int i = -3; i <= 3; ++i) powers.push_back(std::pow(10.0, i));
    if (lambda_grid.empty()) lambda_grid = powers;
    if (mu_grid.empty()) mu_grid = powers;
  }
  if (rk_grid.empty()) rk_grid = {0.2, 0.5, 0.8};
}

void ExperimentConfig::validate() const {
  if (!manifest && !synthetic) throw ConfigError("either a manifest or a synthetic spec is required");
  if (manifest && synthetic) throw ConfigError("manifest and synthetic spec are exclusive");
  if (variants.empty()) throw ConfigError("variant list is empty");
  if (lambda_grid.empty() || mu_grid.empty() || rk_grid.empty()) {
    throw ConfigError("hyperparameter grids must be nonempty");
  }
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw ConfigError("train fraction must be in (0,1)");
  }
  if (workers < 1) throw ConfigError("workers must be >= 1");
  for (const double v : lambda_grid) {
    if (v < 0.0) throw ConfigError("lambda must be nonnegative");
  }
  for (const double v : mu_grid) {
    if (v < 0.0) throw ConfigError("mu must be nonnegative");
  }
  for (const double v : rk_grid) {
    if (v <= 0.0 || v > 1.0) throw ConfigError("rk must be in (0,1]");
  }
}

EvalReport run_experiment(const ExperimentConfig& user_cfg) {
  ExperimentConfig cfg = user_cfg;
  cfg.apply_grid_defaults();
  cfg.validate();

  MultiViewDataset base = cfg.manifest ? load_dataset(*cfg.manifest) : synthesize(*cfg.synthetic).first;
  if (cfg.subsample && *cfg.subsample < base.n) {
    base = subsample_rows(base, *cfg.subsample, cfg.base_seed);
  }

  std::vector<RepeatData> repeats;
  repeats.reserve(static_cast<std::size_t>(cfg.repeats));
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    repeats.push_back(prepare_repeat(base, cfg, rep));
  }

  std::vector<Cell> cells;
  for (const Variant variant : cfg.variants) {
    for (const double lambda : cfg.lambda_grid) {
      for (const double mu : cfg.mu_grid) {
        for (const double rk : cfg.rk_grid) {
          cells.push_back({variant, lambda, mu, rk});
        }
      }
    }
  }

  EvalReport report;
  report.config = cfg;
  report.runs.resize(cells.size() * static_cast<std::size_t>(cfg.repeats));

  auto run_job = [&](std::size_t job) {
    const std::size_t cell_idx = job / static_cast<std::size_t>(cfg.repeats);
    const int rep = static_cast<int>(job % static_cast<std::size_t>(cfg.repeats));
    const Cell& cell = cells[cell_idx];
    const RepeatData& data = repeats[static_cast<std::size_t>(rep)];

    SolverConfig scfg;
    scfg.lambda = cell.lambda;
    scfg.mu = cell.mu;
    scfg.rk = cell.rk;
    scfg.kernel = cfg.kernel;
    scfg.variant = cell.variant;
    scfg.label_weights_signed = !cfg.strict_paper;
    scfg.max_outer = cfg.max_outer;
    scfg.tol = cfg.tol;
    scfg.seed = data.solver_seed;
    scfg.loss = cfg.loss;

    RunResult& out = report.runs[job];
    out.variant = cell.variant;
    out.lambda = cell.lambda;
    out.mu = cell.mu;
    out.rk = cell.rk;
    out.repeat = rep;
    out.seed = data.solver_seed;

    const auto start = std::chrono::steady_clock::now();
    const FitResult fitted = fit(data.combined, scfg);
    out.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.iterations = fitted.trace.iterations_used;
    out.converged = fitted.trace.converged;
    out.status = fitted.trace.status;
    out.objective_curve.push_back(fitted.trace.initial);
    for (const auto& it : fitted.trace.iterations) out.objective_curve.push_back(it.objective);

    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (fitted.trace.status == FitStatus::Diverged) {
      out.hs = nan;
      out.ap = nan;
      out.val_ap = nan;
      return;
    }
    const Prediction pred = predict(fitted.state);
    try {
      out.hs = hamming_score(pred.labels, data.train_eval);
      out.ap = average_precision(pred.scores, data.train_eval);
    } catch (const DataError&) {
      out.hs = nan;
      out.ap = nan;
    }
    try {
      out.val_ap = average_precision(pred.scores, data.val_eval);
    } catch (const DataError&) {
      out.val_ap = nan;
    }
  };

  const std::size_t total_jobs = report.runs.size();
  if (cfg.workers <= 1) {
    for (std::size_t job = 0; job < total_jobs; ++job) run_job(job);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int thread_count = std::min<int>(cfg.workers, static_cast<int>(total_jobs));
    pool.reserve(static_cast<std::size_t>(thread_count));
    for (int t = 0; t < thread_count; ++t) {
      pool.emplace_back([&]() {
        while (true) {
          const std::size_t job = next.fetch_add(1);
          if (job >= total_jobs) break;
          run_job(job);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  for (std::size_t cell_idx = 0; cell_idx < cells.size(); ++cell_idx) {
    const Cell& cell = cells[cell_idx];
    CellSummary summary;
    summary.variant = cell.variant;
    summary.lambda = cell.lambda;
    summary.mu = cell.mu;
    summary.rk = cell.rk;
    summary.repeats = cfg.repeats;
    std::vector<double> hs, ap, val_ap;
    for (int rep = 0; rep < cfg.repeats; ++rep) {
      const RunResult& run = report.runs[cell_idx * static_cast<std::size_t>(cfg.repeats) +
                                         static_cast<std::size_t>(rep)];
      hs.push_back(run.hs);
      ap.push_back(run.ap);
      val_ap.push_back(run.val_ap);
    }
    auto mean = [](const std::vector<double>& v) {
      double sum = 0.0;
      for (const double x : v) sum += x;
      return sum / static_cast<double>(v.size());
    };
    summary.hs_mean = mean(hs);
    summary.hs_std = sample_std(hs, summary.hs_mean);
    summary.ap_mean = mean(ap);
    summary.ap_std = sample_std(ap, summary.ap_mean);
    summary.val_ap_mean = mean(val_ap);
    summary.val_ap_std = sample_std(val_ap, summary.val_ap_mean);
    report.cells.push_back(summary);
  }

  for (const Variant variant : cfg.variants) {
    const CellSummary* best = nullptr;
    for (const auto& cell : report.cells) {
      if (cell.variant != variant) continue;
      if (!best || (std::isfinite(cell.val_ap_mean) &&
                    (!std::isfinite(best->val_ap_mean) || cell.val_ap_mean > best->val_ap_mean))) {
        best = &cell;
      }
    }
    if (best) report.best.push_back(*best);
  }

  if (!cfg.out_dir.empty()) emit_report(report, cfg.out_dir);
  return report;
}

void emit_report(const EvalReport& report, const fs::path& dir) {
  if (report.runs.empty()) throw ConfigError("cannot emit an empty report");
  fs::create_directories(dir);

  {
    std::ofstream out(dir / "results.csv");
    if (!out) throw DataError("cannot write results.csv in " + dir.string());
    out << "variant,lambda,mu,rk,repeat,seed,iterations,converged,hs,ap,val_ap\n";
    for (const auto& run : report.runs) {
      out << variant_name(run.variant) << ',' << format_double(run.lambda) << ','
          << format_double(run.mu) << ',' << format_double(run.rk) << ',' << run.repeat << ','
          << run.seed << ',' << run.iterations << ',' << csv_bool(run.converged) << ','
          << format_double(run.hs) << ',' << format_double(run.ap) << ','
          << format_double(run.val_ap) << '\n';
    }
  }

  {
    std::ofstream out(dir / "summary.csv");
    if (!out) throw DataError("cannot write summary.csv in " + dir.string());
    out << "variant,lambda,mu,rk,repeats,hs_mean,hs_std,ap_mean,ap_std,val_ap_mean,val_ap_std\n";
    for (const auto& cell : report.cells) {
      out << variant_name(cell.variant) << ',' << format_double(cell.lambda) << ','
          << format_double(cell.mu) << ',' << format_double(cell.rk) << ',' << cell.repeats << ','
          << format_double(cell.hs_mean) << ',' << format_double(cell.hs_std) << ','
          << format_double(cell.ap_mean) << ',' << format_double(cell.ap_std) << ','
          << format_double(cell.val_ap_mean) << ',' << format_double(cell.val_ap_std) << '\n';
    }
  }

  {
    json j;
    j["config"] = config_to_json(report.config);
    j["cells"] = json::array();
    for (const auto& cell : report.cells) {
      j["cells"].push_back({{"variant", variant_name(cell.variant)},
                            {"lambda", cell.lambda},
                            {"mu", cell.mu},
                            {"rk", cell.rk},
                            {"repeats", cell.repeats},
                            {"hs_mean", cell.hs_mean},
                            {"hs_std", cell.hs_std},
                            {"ap_mean", cell.ap_mean},
                            {"ap_std", cell.ap_std},
                            {"val_ap_mean", cell.val_ap_mean},
                            {"val_ap_std", cell.val_ap_std}});
    }
    j["best"] = json::object();
    for (const auto& cell : report.best) {
      j["best"][variant_name(cell.variant)] = {{"lambda", cell.lambda},
                                               {"mu", cell.mu},
                                               {"rk", cell.rk},
                                               {"val_ap_mean", cell.val_ap_mean},
                                               {"hs_mean", cell.hs_mean},
                                               {"ap_mean", cell.ap_mean}};
    }
    double total_runtime = 0.0;
    for (const auto& run : report.runs) total_runtime += run.runtime_seconds;
    j["runtime_seconds_total"] = total_runtime;  // informational, not deterministic
    std::ofstream out(dir / "summary.json");
    if (!out) throw DataError("cannot write summary.json in " + dir.string());
    out << j.dump(2) << '\n';
  }

  {
    std::ofstream out(dir / "curves.csv");
    if (!out) throw DataError("cannot write curves.csv in " + dir.string());
    out << "variant,lambda,mu,rk,repeat,iteration,reconstruction,label,hsic,total\n";
    for (const auto& best : report.best) {
      for (const auto& run : report.runs) {
        if (run.variant != best.variant || run.lambda != best.lambda || run.mu != best.mu ||
            run.rk != best.rk) {
          continue;
        }
        for (std::size_t it = 0; it < run.objective_curve.size(); ++it) {
          const auto& b = run.objective_curve[it];
          out << variant_name(run.variant) << ',' << format_double(run.lambda) << ','
              << format_double(run.mu) << ',' << format_double(run.rk) << ',' << run.repeat << ','
              << it << ',' << format_double(b.reconstruction) << ',' << format_double(b.label)
              << ',' << format_double(b.hsic) << ',' << format_double(b.total()) << '\n';
        }
      }
    }
  }
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config JSON: " + std::string(e.what()));
  }

  static const std::vector<std::string> known = {
      "manifest",   "synthetic", "mask",    "variants",  "lambda_grid",    "mu_grid",
      "rk_grid",    "repeats",   "train_fraction",       "seed",           "out",
      "workers",    "max_outer", "tol",     "strict_paper", "subsample",   "kernel",
      "loss"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown config key: " + key);
    }
  }

  ExperimentConfig cfg;
  if (j.contains("manifest")) cfg.manifest = fs::path(j.at("manifest").get<std::string>());
  if (j.contains("synthetic")) cfg.synthetic = synthetic_from_json(j.at("synthetic"));
  if (j.contains("mask")) {
    cfg.mask_r = j.at("mask").value("r", cfg.mask_r);
    cfg.mask_s = j.at("mask").value("s", cfg.mask_s);
  }
  if (j.contains("variants")) {
    cfg.variants.clear();
    for (const auto& name : j.at("variants")) cfg.variants.push_back(parse_variant(name));
  }
  if (j.contains("lambda_grid")) cfg.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
  if (j.contains("mu_grid")) cfg.mu_grid = j.at("mu_grid").get<std::vector<double>>();
  if (j.contains("rk_grid")) cfg.rk_grid = j.at("rk_grid").get<std::vector<double>>();
  cfg.repeats = j.value("repeats", cfg.repeats);
  cfg.train_fraction = j.value("train_fraction", cfg.train_fraction);
  cfg.base_seed = j.value("seed", cfg.base_seed);
  if (j.contains("out")) cfg.out_dir = fs::path(j.at("out").get<std::string>());
  cfg.workers = j.value("workers", cfg.workers);
  cfg.max_outer = j.value("max_outer", cfg.max_outer);
  cfg.tol = j.value("tol", cfg.tol);
  cfg.strict_paper = j.value("strict_paper", cfg.strict_paper);
  if (j.contains("subsample")) cfg.subsample = j.at("subsample").get<Index>();
  if (j.contains("kernel")) cfg.kernel = kernel_from_json(j.at("kernel"));
  if (j.contains("loss")) {
    const auto& loss = j.at("loss");
    cfg.loss.gamma = loss.value("gamma", cfg.loss.gamma);
    cfg.loss.a = loss.value("a", cfg.loss.a);
    cfg.loss.s = loss.value("s", cfg.loss.s);
  }
  return cfg;
}

SyntheticSpec load_synthetic_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open synthetic spec: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed synthetic spec JSON: " + std::string(e.what()));
  }
  return synthetic_from_json(j);
}

}  // namespace nail
