#pragma once
// Experiment drivers behind the command-line tool: generative pretraining with
// quality gates, policy comparisons over seeds, and the two toy studies.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "gauda/data.hpp"
#include "gauda/generative.hpp"
#include "gauda/log.hpp"
#include "gauda/metrics.hpp"
#include "gauda/trainer.hpp"

namespace gauda {

namespace fs = std::filesystem;

inline constexpr const char* kCodeVersion = "gauda-0.1.0";

inline constexpr double kReferenceUeGain = 0.061;        // study 1 test-accuracy gain
inline constexpr double kReferenceCohensD = 0.714;       // GAUDA effect size
inline constexpr double kReferenceIouGainLow = 0.015;    // absolute IoU gain, second dataset
inline constexpr double kReferenceIouGainHigh = 0.016;   // absolute IoU gain, first dataset

struct QualityConfig {
  std::size_t mmd_samples = 400;
  std::size_t fidelity_samples = 100;
  std::size_t ro_so_samples = 400;
  std::vector<double> omega_sweep = {0.0, 1.0, 2.0, 3.0, 5.0};
};

inline void to_json(nlohmann::json& j, const QualityConfig& c) {
  j = nlohmann::json{{"mmd_samples", c.mmd_samples},
                     {"fidelity_samples", c.fidelity_samples},
                     {"ro_so_samples", c.ro_so_samples},
                     {"omega_sweep", c.omega_sweep}};
}
inline void from_json(const nlohmann::json& j, QualityConfig& c) {
  c.mmd_samples = j.value("mmd_samples", c.mmd_samples);
  c.fidelity_samples = j.value("fidelity_samples", c.fidelity_samples);
  c.ro_so_samples = j.value("ro_so_samples", c.ro_so_samples);
  c.omega_sweep = j.value("omega_sweep", c.omega_sweep);
}

struct StudyConfig {
  Toy2DSpec toy;
  EnsembleConfig model;
  GaudaConfig gauda;
  std::size_t rounds = 10;  // study 2: augmentation rounds
};

inline StudyConfig default_study_config() {
  StudyConfig s;
  s.model.members = 20;
  s.model.hidden = {10};
  s.model.dropout_p = 0.5;
  s.model.adam = AdamConfig::adam(1e-3);
  s.gauda.val_interval = 50;
  s.gauda.total_steps = 1000;
  s.gauda.batch = 32;
  s.gauda.n_c = 1;
  return s;
}

inline void to_json(nlohmann::json& j, const StudyConfig& c) {
  j = nlohmann::json{{"toy2d", c.toy}, {"model", c.model}, {"gauda", c.gauda}, {"rounds", c.rounds}};
}
inline void from_json(const nlohmann::json& j, StudyConfig& c) {
  if (j.contains("toy2d")) j.at("toy2d").get_to(c.toy);
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("gauda")) j.at("gauda").get_to(c.gauda);
  c.rounds = j.value("rounds", c.rounds);
}

struct ExperimentConfig {
  std::string name = "shapes";
  std::uint64_t data_seed = 0;
  ShapesSegSpec shapes;
  EnsembleConfig model;
  GaudaConfig gauda;
  std::vector<std::string> policies = {"none", "aug", "AS", "AS+aug", "GAUDA", "GAUDA+aug"};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  GenerativeConfig generative;
  std::uint64_t generative_seed = 0;
  QualityConfig quality;
  StudyConfig study = default_study_config();

  ExperimentConfig() {
    model.members = 5;
    model.hidden = {128};
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"name", c.name},         {"data_seed", c.data_seed},   {"shapes", c.shapes},
                     {"model", c.model},       {"gauda", c.gauda},           {"policies", c.policies},
                     {"seeds", c.seeds},       {"generative", c.generative}, {"generative_seed", c.generative_seed},
                     {"quality", c.quality},   {"study", c.study}};
}
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c.name = j.value("name", c.name);
  c.data_seed = j.value("data_seed", c.data_seed);
  if (j.contains("shapes")) j.at("shapes").get_to(c.shapes);
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("gauda")) j.at("gauda").get_to(c.gauda);
  c.policies = j.value("policies", c.policies);
  c.seeds = j.value("seeds", c.seeds);
  if (j.contains("generative")) j.at("generative").get_to(c.generative);
  c.generative_seed = j.value("generative_seed", c.generative_seed);
  if (j.contains("quality")) j.at("quality").get_to(c.quality);
  if (j.contains("study")) j.at("study").get_to(c.study);
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(is).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(2) << '\n';
}

/// Runs fn(0..n-1) on up to `threads` workers; the first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

inline std::size_t thread_budget() {
  if (const char* v = std::getenv("GAUDA_THREADS")) {
    const long n = std::strtol(v, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline SegDataset make_dataset(const ExperimentConfig& cfg) {
  RngStream rng(cfg.data_seed);
  return gen_shapes_seg(cfg.shapes, rng);
}

/// Fresh real pairs drawn outside the dataset, for the oracle generator.
inline std::vector<PairedSample> held_back_pairs(const ShapesSegSpec& spec, std::size_t n, RngStream rng) {
  std::vector<PairedSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(shapes_sample(spec, rng));
  return out;
}

// ---------------------------------------------------------------------------
// Generative pretraining.

struct QualityReport {
  MmdEstimate image_mmd;      // real test images vs. synthetic images
  MmdEstimate latent_mmd;     // encoded real vs. sampled latents
  MmdEstimate same_dist_mmd;  // two disjoint halves of the real data
  std::map<double, std::vector<double>> fidelity;  // ω → per-class fidelity
  double ro = 0.0;
  double so = 0.0;
  double real_test = 0.0;

  double mean_fidelity(double omega) const {
    const auto& f = fidelity.at(omega);
    return mean_of(f);
  }
};

inline nlohmann::json to_json(const MmdEstimate& e) { return {{"value", e.value}, {"std", e.std}, {"subsets", e.subsets}}; }

inline nlohmann::json quality_json(const QualityReport& q) {
  nlohmann::json fid = nlohmann::json::array();
  for (const auto& [w, f] : q.fidelity) fid.push_back({{"omega", w}, {"per_class", f}, {"mean", mean_of(f)}});
  return {{"image_mmd", to_json(q.image_mmd)},
          {"latent_mmd", to_json(q.latent_mmd)},
          {"same_distribution_mmd", to_json(q.same_dist_mmd)},
          {"fidelity", fid},
          {"ro_label_mean_iou", q.ro},
          {"so_label_mean_iou", q.so},
          {"real_test_label_mean_iou", q.real_test},
          {"so_over_ro", q.ro > 0 ? q.so / q.ro : 0.0}};
}

/// n samples spread evenly over the classes, each conditioned on its class and gated.
inline std::vector<PairedSample> synthetic_set(const PairGenerator& gen, std::size_t classes, std::size_t n, double omega,
                                               RngStream& rng) {
  std::vector<PairedSample> out;
  for (std::size_t c = 0; c < classes; ++c) {
    RngStream r = rng.split(c);
    auto res = gen.generate(static_cast<int>(c), n / classes, omega, r);
    out.insert(out.end(), res.samples.begin(), res.samples.end());
  }
  return out;
}

struct RoSo {
  double ro = 0.0;
  double so = 0.0;
  double real = 0.0;  // trained and tested on real data
};

/// RO: train on real, test on synthetic pairs. SO: train on synthetic pairs,
/// test on the real test split. Both report label-mean IoU.
inline RoSo ro_so_protocol(const TaskData& real, const PairGenerator& gen, TrainConfig cfg, std::size_t n_synth,
                           double omega, RngStream& rng) {
  std::vector<Example> synth;
  for (const auto& s : synthetic_set(gen, real.classes, n_synth, omega, rng)) synth.push_back(to_example(s));
  if (synth.empty()) throw NumericError("ro_so_protocol: generator produced no samples");
  cfg.policy = Policy::none;
  RoSo out;
  const auto real_run = run_training(real, cfg, nullptr);
  out.real = *real_run.metrics.find("test", "iou", key(Aggregate::label_mean));
  TaskData on_synth = real;
  on_synth.test = synth;
  out.ro = aggregate(detail::evaluate(real_run.model, on_synth, synth).iou, Aggregate::label_mean);
  TaskData so_data = real;
  so_data.train = synth;
  out.so = *run_training(so_data, cfg, nullptr).metrics.find("test", "iou", key(Aggregate::label_mean));
  return out;
}

inline QualityReport evaluate_generative(const std::shared_ptr<const GenerativeStack>& stack, const SegDataset& ds,
                                         const ExperimentConfig& cfg, RngStream rng) {
  QualityReport q;
  LatentDiffusionGenerator gen(stack);
  const auto& qc = cfg.quality;
  const std::size_t K = stack->classes();
  const auto train = ds.subset(ds.split.train);
  // Same-distribution reference: two disjoint random halves of the training images.
  {
    std::vector<std::size_t> ids(train.size());
    std::iota(ids.begin(), ids.end(), 0);
    RngStream r = rng.split(1);
    r.shuffle(ids);
    const std::size_t n = std::min(qc.mmd_samples, train.size() / 2);
    std::vector<PairedSample> a, b;
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(train[ids[i]]);
      b.push_back(train[ids[n + i]]);
    }
    q.same_dist_mmd = kernel_mmd(flatten_images(a), flatten_images(b), rng.split(2));
  }
  {
    RngStream r = rng.split(3);
    const auto synth = gen.raw(kUnconditional, qc.mmd_samples, 0.0, r);
    std::vector<PairedSample> real(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(std::min(qc.mmd_samples, train.size())));
    q.image_mmd = kernel_mmd(flatten_images(real), flatten_images(synth), rng.split(4));
    RngStream r2 = rng.split(5);
    const auto lat = sample_latents(stack->denoiser, stack->schedule, kUnconditional, 0.0, r2, qc.mmd_samples).latents;
    q.latent_mmd = kernel_mmd(stack->autoencoder.encode_batch(real), stack->stats.restore(lat), rng.split(6));
  }
  for (double w : qc.omega_sweep) {
    RngStream r = rng.split(7);
    q.fidelity[w] = conditioning_fidelity(gen, K, qc.fidelity_samples, w, r);
  }
  TrainConfig tc;
  tc.model = cfg.model;
  tc.gauda = cfg.gauda;
  tc.seed = cfg.generative_seed;
  RngStream r = rng.split(8);
  const auto rs = ro_so_protocol(TaskData::from_shapes(ds), gen, tc, qc.ro_so_samples, cfg.gauda.omega, r);
  q.ro = rs.ro;
  q.so = rs.so;
  q.real_test = rs.real;
  return q;
}

/// Trains (or with `resume`, reloads) each stage under out/generative and writes quality.json.
inline std::pair<std::shared_ptr<GenerativeStack>, QualityReport> cmd_pretrain_generative(const ExperimentConfig& cfg,
                                                                                           const fs::path& out,
                                                                                           bool resume) {
  const auto ds = make_dataset(cfg);
  const auto train = ds.subset(ds.split.train);
  const fs::path dir = out / "generative";
  fs::create_directories(dir);
  write_json(dir / "config.json", cfg);
  auto stack = std::make_shared<GenerativeStack>();
  stack->config = cfg.generative;
  RngStream rng(cfg.generative_seed);
  const PairGeometry geo{1, ds.num_classes(), cfg.shapes.height, cfg.shapes.width};
  std::ofstream events(dir / "events.log", std::ios::app);
  if (resume && fs::exists(dir / "autoencoder" / "autoencoder.json")) {
    stack->autoencoder = PairedAutoencoder::load(dir / "autoencoder");
    events << "autoencoder: resumed from checkpoint\n";
  } else {
    const auto rep = pretrain_autoencoders(*stack, train, geo, rng);
    stack->autoencoder.save(dir / "autoencoder");
    write_json(dir / "autoencoder_report.json", rep.autoencoder);
    events << "autoencoder: trained " << cfg.generative.autoencoder.steps << " steps\n";
  }
  if (resume && fs::exists(dir / "generative.json")) {
    *stack = GenerativeStack::load(dir);
    events << "diffusion: resumed from checkpoint\n";
  } else {
    RngStream drng = rng.split(10);
    const auto curve = pretrain_diffusion(*stack, train, drng);
    stack->save(dir);
    std::ofstream lc(dir / "diffusion_loss.csv");
    lc << "step,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) lc << i + 1 << ',' << format_value(curve[i]) << '\n';
    events << "diffusion: trained " << curve.size() << " steps\n";
  }
  std::shared_ptr<const GenerativeStack> cstack = stack;
  QualityReport q;
  if (resume && fs::exists(dir / "quality.json")) {
    events << "quality: report already present\n";
    const auto j = nlohmann::json::parse(std::ifstream(dir / "quality.json"));
    q.ro = j.at("ro_label_mean_iou");
    q.so = j.at("so_label_mean_iou");
    q.real_test = j.at("real_test_label_mean_iou");
    for (const auto& f : j.at("fidelity")) q.fidelity[f.at("omega").get<double>()] = f.at("per_class").get<std::vector<double>>();
  } else {
    q = evaluate_generative(cstack, ds, cfg, RngStream(cfg.generative_seed).split(20));
    write_json(dir / "quality.json", quality_json(q));
    std::ofstream fc(dir / "fidelity.csv");
    fc << "omega,class,fidelity\n";
    for (const auto& [w, f] : q.fidelity)
      for (std::size_t c = 0; c < f.size(); ++c) fc << format_value(w) << ',' << c << ',' << format_value(f[c]) << '\n';
  }
  return {stack, q};
}

// ---------------------------------------------------------------------------
// Policy comparison.

struct PolicyRun {
  std::string policy;
  std::uint64_t seed = 0;
  RunMetrics metrics;
  std::vector<std::vector<double>> per_sample;  // [metric][sample]: mean over defined labels
  bool ok = true;
  std::string error;
};

inline const std::vector<std::string>& sample_metric_names() {
  static const std::vector<std::string> names{"iou", "dice", "ap"};
  return names;
}

inline std::vector<double> sample_level(const std::vector<LabelScores>& t) {
  std::vector<double> out;
  for (const auto& row : t) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& v : row)
      if (v) {
        s += *v;
        ++n;
      }
    out.push_back(n ? s / static_cast<double>(n) : 0.0);
  }
  return out;
}

/// One policy × seed run in its own directory. With `resume`, a finished
/// directory with a matching config.json is read back instead of retrained;
/// `read_only` turns a missing or stale run into MissingArtifactError.
inline PolicyRun run_policy(const TaskData& data, const ExperimentConfig& cfg, const std::string& policy,
                            std::uint64_t seed, const PairGenerator* gen, const fs::path& dir, bool resume,
                            bool read_only = false) {
  PolicyRun pr{policy, seed, {}, {}, true, {}};
  TrainConfig tc;
  tc.model = cfg.model;
  tc.gauda = cfg.gauda;
  tc.policy = policy_from(policy);
  tc.seed = seed;
  const nlohmann::json cj{{"code_version", kCodeVersion},
                          {"experiment", cfg},
                          {"run", tc},
                          {"generator", gen ? gen->name() : "none"}};
  if (resume && fs::exists(dir / "metrics.csv") && fs::exists(dir / "per_sample.csv") && fs::exists(dir / "config.json")) {
    const auto stored = nlohmann::json::parse(std::ifstream(dir / "config.json"));
    if (stored == cj) {
      pr.metrics = RunMetrics::read_csv(dir / "metrics.csv");
      std::ifstream ps(dir / "per_sample.csv");
      std::string line;
      std::getline(ps, line);
      pr.per_sample.assign(sample_metric_names().size(), {});
      while (std::getline(ps, line)) {
        std::stringstream ss(line);
        std::string f[5];
        for (auto& x : f) std::getline(ss, x, ',');
        const auto it = std::find(sample_metric_names().begin(), sample_metric_names().end(), f[3]);
        pr.per_sample[static_cast<std::size_t>(it - sample_metric_names().begin())].push_back(std::stod(f[4]));
      }
      return pr;
    }
  }
  if (read_only) throw MissingArtifactError("no finished run matching the config in " + dir.string());
  fs::create_directories(dir);
  write_json(dir / "config.json", cj);
  std::ofstream events(dir / "events.log");
  const auto res = run_training(data, tc, gen);
  res.metrics.write_csv(dir / "metrics.csv");
  res.model.save(dir / "weights", seed);
  write_json(dir / "pool_manifest.json", res.pool_manifest);
  for (std::size_t r = 0; r < res.selections.size(); ++r) {
    events << "round " << r + 1 << " selected";
    for (int c : res.selections[r]) events << ' ' << c;
    events << '\n';
  }
  events << "synthesized " << res.synthesized << " dropped " << res.dropped << '\n';
  pr.metrics = res.metrics;
  pr.per_sample = {sample_level(res.test_iou), sample_level(res.test_dice), sample_level(res.test_ap)};
  std::ofstream ps(dir / "per_sample.csv");
  ps << "policy,seed,sample_id,metric,value\n";
  for (std::size_t m = 0; m < pr.per_sample.size(); ++m)
    for (std::size_t i = 0; i < pr.per_sample[m].size(); ++i)
      ps << policy << ',' << seed << ',' << i << ',' << sample_metric_names()[m] << ',' << format_value(pr.per_sample[m][i]) << '\n';
  return pr;
}

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

struct ComparisonReport {
  std::vector<PolicyRun> runs;
  std::string markdown;
  std::optional<double> cohens_d;
  std::string best_baseline;
};

/// Per-seed values of a test metric row for one policy.
inline std::vector<double> seed_values(const std::vector<PolicyRun>& runs, const std::string& policy,
                                       const std::string& metric, const std::string& label) {
  std::vector<double> out;
  for (const auto& r : runs)
    if (r.ok && r.policy == policy)
      if (auto v = r.metrics.find("test", metric, label)) out.push_back(*v);
  return out;
}

inline ComparisonReport summarize(const std::vector<PolicyRun>& runs, const std::vector<std::string>& policies,
                                  std::size_t classes) {
  ComparisonReport rep;
  rep.runs = runs;
  std::ostringstream md;
  for (const std::string metric : {"iou", "dice", "ap"}) {
    md << "### Test " << metric << " per label (mean over seeds)\n\n| Label |";
    for (const auto& p : policies) md << ' ' << p << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < policies.size(); ++i) md << "---|";
    md << '\n';
    std::vector<std::string> labels;
    for (std::size_t c = 0; c < classes; ++c) labels.push_back(std::to_string(c));
    for (auto a : {Aggregate::label_mean, Aggregate::sample_mean, Aggregate::sample_median}) labels.push_back(key(a));
    for (const auto& l : labels) {
      md << "| " << l << " |";
      for (const auto& p : policies) {
        const auto v = seed_values(runs, p, metric, l);
        md << ' ' << (v.empty() ? std::string("-") : fixed(mean_of(v))) << " |";
      }
      md << '\n';
    }
    md << '\n';
  }
  // Effect size of GAUDA against the strongest non-generative policy.
  const std::string lm = key(Aggregate::label_mean);
  double best = -1.0;
  for (const auto& p : policies) {
    if (uses_generation(policy_from(p))) continue;
    const auto v = seed_values(runs, p, "iou", lm);
    if (!v.empty() && mean_of(v) > best) {
      best = mean_of(v);
      rep.best_baseline = p;
    }
  }
  const bool has_gauda = std::find(policies.begin(), policies.end(), "GAUDA") != policies.end();
  if (has_gauda && !rep.best_baseline.empty()) {
    const auto a = seed_values(runs, "GAUDA", "iou", lm), b = seed_values(runs, rep.best_baseline, "iou", lm);
    if (a.size() >= 2 && b.size() >= 2) {
      rep.cohens_d = cohens_d(a, b);
      md << "Cohen's d (GAUDA vs " << rep.best_baseline << ", label-mean IoU over seeds): "
         << (rep.cohens_d ? fixed(*rep.cohens_d, 3) : std::string("undefined")) << " (reference "
         << fixed(kReferenceCohensD, 3) << ")\n";
    }
  }
  for (const auto& r : runs)
    if (!r.ok) md << "\nRun " << r.policy << " seed " << r.seed << " failed and is excluded: " << r.error << '\n';
  rep.markdown = md.str();
  return rep;
}

/// With `read_only` (the report command) nothing is trained.
inline ComparisonReport cmd_compare_policies(const ExperimentConfig& cfg, const fs::path& out, bool resume,
                                             const PairGenerator* gen, bool read_only = false) {
  for (const auto& p : cfg.policies) policy_from(p);
  const auto ds = make_dataset(cfg);
  const auto data = TaskData::from_shapes(ds);
  std::vector<std::pair<std::string, std::uint64_t>> jobs;
  for (const auto& p : cfg.policies)
    for (auto s : cfg.seeds) jobs.emplace_back(p, s);
  std::vector<PolicyRun> runs(jobs.size());
  parallel_for(jobs.size(), thread_budget(), [&](std::size_t i) {
    const auto& [p, s] = jobs[i];
    const fs::path dir = out / "runs" / p / ("seed_" + std::to_string(s));
    try {
      runs[i] = run_policy(data, cfg, p, s, gen, dir, resume || read_only, read_only);
    } catch (const NumericError& e) {
      runs[i] = PolicyRun{p, s, {}, {}, false, e.what()};
      log_warning("run " + p + " seed " + std::to_string(s) + " failed: " + e.what());
    }
  });
  auto rep = summarize(runs, cfg.policies, ds.num_classes());
  std::ofstream(out / "report.md") << "# Policy comparison: " << cfg.name << "\n\n" << rep.markdown;
  std::ofstream violin(out / "violin.csv");
  violin << "policy,seed,sample_id,metric,value\n";
  for (const auto& r : runs)
    for (std::size_t m = 0; m < r.per_sample.size(); ++m)
      for (std::size_t i = 0; i < r.per_sample[m].size(); ++i)
        violin << r.policy << ',' << r.seed << ',' << i << ',' << sample_metric_names()[m] << ','
               << format_value(r.per_sample[m][i]) << '\n';
  RunMetrics all;
  for (const auto& r : runs) all.append(r.metrics);
  all.write_csv(out / "metrics.csv");
  return rep;
}

// ---------------------------------------------------------------------------
// Toy studies.

inline TaskData toy_task(const StudyConfig& sc, std::uint64_t seed) {
  RngStream rng = RngStream(seed).split(1);
  return TaskData::from_toy2d(gen_toy2d(sc.toy, rng));
}

struct Study1Seed {
  std::uint64_t seed = 0;
  double score_acc = 0.0;
  double ue_acc = 0.0;
  RunMetrics metrics;
  double delta() const { return ue_acc - score_acc; }
};

/// Score-based (AS) against uncertainty-based (UAS) class weighting on the 2-D toy task.
inline std::vector<Study1Seed> supp_study_1(const StudyConfig& sc, const std::vector<std::uint64_t>& seeds,
                                            std::size_t threads = 1) {
  std::vector<Study1Seed> out(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t i) {
    const auto data = toy_task(sc, seeds[i]);
    TrainConfig tc;
    tc.model = sc.model;
    tc.gauda = sc.gauda;
    tc.seed = seeds[i];
    tc.policy = Policy::as;
    const auto a = run_training(data, tc, nullptr);
    tc.policy = Policy::uas;
    const auto b = run_training(data, tc, nullptr);
    out[i] = Study1Seed{seeds[i], a.test_accuracy, b.test_accuracy, a.metrics, };
    out[i].metrics.append(b.metrics);
  });
  return out;
}

struct Study2Seed {
  std::uint64_t seed = 0;
  double pretrain_fraction = 0.0;  // minority share among pre-train additions
  double online_fraction = 0.0;    // minority share among online additions
  std::size_t added = 0;           // per arm
  double pretrain_acc = 0.0;
  double online_acc = 0.0;
  double ratio() const { return pretrain_fraction > 0 ? online_fraction / pretrain_fraction : INFINITY; }
};

namespace detail {

inline double train_uniform(EnsembleModel& ens, const std::vector<Example>& train, std::size_t steps, std::size_t batch,
                            std::vector<RngStream>& batch_rng, std::vector<RngStream>& drop_rng) {
  double loss = 0.0;
  for (std::size_t s = 0; s < steps; ++s)
    for (std::size_t i = 0; i < ens.size(); ++i) {
      std::vector<const Example*> b(batch);
      for (auto& p : b) p = &train[batch_rng[i].uniform_index(train.size())];
      loss = ens.train_step(i, gather_inputs(b), example_labels(b), drop_rng[i]);
    }
  return loss;
}

}  // namespace detail

/// Pre-train augmentation (|train| extra draws from the data distribution)
/// against online augmentation (|train| extra draws spread over rounds,
/// each conditioned on the most uncertain class).
inline std::vector<Study2Seed> supp_study_2(const StudyConfig& sc, const std::vector<std::uint64_t>& seeds,
                                            std::size_t threads = 1) {
  std::vector<Study2Seed> out(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t si) {
    const std::uint64_t seed = seeds[si];
    const auto data = toy_task(sc, seed);
    const RngStream root(seed);
    const std::size_t n_add = data.train.size(), rounds = std::max<std::size_t>(1, sc.rounds);
    const std::size_t steps_per_round = std::max<std::size_t>(1, sc.gauda.total_steps / rounds);
    const double minor_p = static_cast<double>(sc.toy.n_minor()) / static_cast<double>(sc.toy.n_major + sc.toy.n_minor());
    EnsembleConfig mc = sc.model;
    mc.input_dim = 2;
    mc.pixels = 1;
    mc.classes = 2;
    Study2Seed res{seed, 0, 0, n_add, 0, 0};
    auto make_streams = [&](std::uint64_t base) {
      std::vector<RngStream> v;
      for (std::size_t i = 0; i < mc.members; ++i) v.push_back(root.split(base + i));
      return v;
    };
    auto accuracy = [&](const EnsembleModel& e) { return detail::evaluate(e, data, data.test).accuracy; };
    {  // pre-train arm
      RngStream gen = root.split(700);
      auto train = data.train;
      std::size_t minority = 0;
      for (std::size_t i = 0; i < n_add; ++i) {
        const int label = gen.uniform() < minor_p ? 1 : 0;
        minority += label == 1;
        train.push_back(point_example(toy2d_point(sc.toy, label, gen), label));
      }
      res.pretrain_fraction = static_cast<double>(minority) / static_cast<double>(n_add);
      EnsembleModel ens(mc, root.split(100));
      auto b = make_streams(200), d = make_streams(600);
      detail::train_uniform(ens, train, rounds * steps_per_round, sc.gauda.batch, b, d);
      res.pretrain_acc = accuracy(ens);
    }
    {  // online arm
      RngStream gen = root.split(800);
      auto train = data.train;
      std::size_t minority = 0, added = 0;
      EnsembleModel ens(mc, root.split(100));
      auto b = make_streams(200), d = make_streams(600);
      for (std::size_t r = 0; r < rounds; ++r) {
        detail::train_uniform(ens, train, steps_per_round, sc.gauda.batch, b, d);
        const auto ev = detail::evaluate(ens, data, data.val);
        const auto sel = select_uncertain_classes(ev.ue, sc.gauda.n_c);
        const std::size_t quota = n_add * (r + 1) / rounds - added;
        for (std::size_t i = 0; i < quota; ++i) {
          const int label = sel[i % sel.size()];
          minority += label == 1;
          train.push_back(point_example(toy2d_point(sc.toy, label, gen), label));
        }
        added += quota;
      }
      res.online_fraction = static_cast<double>(minority) / static_cast<double>(n_add);
      res.online_acc = accuracy(ens);
    }
    out[si] = res;
  });
  return out;
}

inline void write_study_csv(const fs::path& out, const std::vector<Study1Seed>& s1, const std::vector<Study2Seed>& s2) {
  fs::create_directories(out);
  std::ofstream a(out / "study1.csv");
  a << "seed,score_accuracy,ue_accuracy,delta\n";
  for (const auto& s : s1)
    a << s.seed << ',' << format_value(s.score_acc) << ',' << format_value(s.ue_acc) << ',' << format_value(s.delta()) << '\n';
  std::ofstream c(out / "study1_curves.csv");
  c << "seed,policy,step,val_accuracy\n";
  for (const auto& s : s1)
    for (const auto& r : s.metrics.rows())
      if (r.split == "val" && r.metric == "accuracy")
        c << s.seed << ',' << r.policy << ',' << r.step << ',' << format_value(r.value) << '\n';
  std::ofstream b(out / "study2.csv");
  b << "seed,added,pretrain_minority_fraction,online_minority_fraction,ratio,pretrain_accuracy,online_accuracy\n";
  for (const auto& s : s2)
    b << s.seed << ',' << s.added << ',' << format_value(s.pretrain_fraction) << ',' << format_value(s.online_fraction) << ','
      << format_value(s.ratio()) << ',' << format_value(s.pretrain_acc) << ',' << format_value(s.online_acc) << '\n';
}

inline std::string study_report(const std::vector<Study1Seed>& s1, const std::vector<Study2Seed>& s2) {
  std::ostringstream md;
  md << "## Study 1: score-based vs uncertainty-based adaptive weighting\n\n"
     << "| seed | score acc | UE acc | delta |\n|---|---|---|---|\n";
  std::vector<double> d;
  for (const auto& s : s1) {
    md << "| " << s.seed << " | " << fixed(s.score_acc) << " | " << fixed(s.ue_acc) << " | " << fixed(s.delta()) << " |\n";
    d.push_back(s.delta());
  }
  if (!d.empty())
    md << "\nMedian delta " << fixed(median(d)) << ", mean " << fixed(mean_of(d)) << " (reference "
       << fixed(kReferenceUeGain, 3) << ").\n\n";
  md << "## Study 2: pre-train vs online augmentation\n\n"
     << "| seed | added | pre-train minority | online minority | ratio | pre-train acc | online acc |\n"
     << "|---|---|---|---|---|---|---|\n";
  std::vector<double> ratios;
  for (const auto& s : s2) {
    md << "| " << s.seed << " | " << s.added << " | " << fixed(s.pretrain_fraction) << " | " << fixed(s.online_fraction)
       << " | " << fixed(s.ratio(), 2) << " | " << fixed(s.pretrain_acc) << " | " << fixed(s.online_acc) << " |\n";
    ratios.push_back(s.ratio());
  }
  if (!ratios.empty()) md << "\nMedian ratio " << fixed(median(ratios), 2) << ".\n";
  return md.str();
}

}  // namespace gauda
