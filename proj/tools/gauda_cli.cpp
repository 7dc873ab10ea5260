// gauda_cli: pretraining, policy comparison, toy studies and reports.
// Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 missing artifact.

#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "gauda/gauda.hpp"

using namespace gauda;

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    try {
      if (dash != std::string::npos && dash > 0) {
        const auto a = std::stoull(item.substr(0, dash)), b = std::stoull(item.substr(dash + 1));
        if (b < a) throw ConfigError("bad seed range " + item);
        for (auto v = a; v <= b; ++v) out.push_back(v);
      } else {
        out.push_back(std::stoull(item));
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad seed list entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

std::vector<std::string> parse_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct Options {
  std::string config;
  std::string seeds;
  std::string out = "runs";
  std::string policies;
  std::string generative;
  std::string generator = "ldm";
  bool resume = false;
  std::optional<double> omega;
  std::optional<double> replace_fraction;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
  if (!o.seeds.empty()) cfg.seeds = parse_seed_list(o.seeds);
  if (!o.policies.empty()) cfg.policies = parse_list(o.policies);
  for (const auto& p : cfg.policies) policy_from(p);
  if (o.omega) cfg.gauda.omega = *o.omega;
  if (o.replace_fraction) cfg.gauda.replace_fraction = *o.replace_fraction;
  validate(cfg.gauda, cfg.shapes.num_classes());
  return cfg;
}

std::shared_ptr<const GenerativeStack> load_stack(const fs::path& dir) {
  if (!fs::exists(dir / "generative.json"))
    throw MissingArtifactError("no pretrained generative stack in " + dir.string() + " (run pretrain-generative first)");
  return std::make_shared<const GenerativeStack>(GenerativeStack::load(dir));
}

void print_quality(const QualityReport& q) {
  std::printf("image MMD %.4g (std %.3g), latent MMD %.4g (std %.3g), same-distribution MMD %.4g (std %.3g)\n",
              q.image_mmd.value, q.image_mmd.std, q.latent_mmd.value, q.latent_mmd.std, q.same_dist_mmd.value,
              q.same_dist_mmd.std);
  for (const auto& [w, f] : q.fidelity) {
    std::printf("omega %.1f fidelity", w);
    for (double v : f) std::printf(" %.3f", v);
    std::printf("  mean %.3f\n", mean_of(f));
  }
  std::printf("RO %.4f  SO %.4f  real %.4f\n", q.ro, q.so, q.real_test);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative, uncertainty-driven adaptive data augmentation experiments"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment JSON config");
    sub->add_option("--seed-list", o.seeds, "comma separated seeds or ranges, e.g. 0-9");
    sub->add_option("--out", o.out, "output directory");
    sub->add_flag("--resume", o.resume, "reuse completed stages and runs");
    sub->add_option("--policies", o.policies, "comma separated policy names");
    sub->add_option("--omega", o.omega, "guidance strength");
    sub->add_option("--replace-fraction", o.replace_fraction, "synthetic share of each batch");
  };
  auto* pre = app.add_subcommand("pretrain-generative", "train autoencoders and diffusion, write a quality report");
  auto* cmp = app.add_subcommand("compare-policies", "train every policy over every seed");
  auto* sup = app.add_subcommand("supp-studies", "run the two toy 2-D studies");
  auto* rep = app.add_subcommand("report", "rebuild report.md and violin.csv from finished runs");
  auto* dump = app.add_subcommand("dump-config", "print the resolved config as JSON");
  for (auto* s : {pre, cmp, sup, rep, dump}) common(s);
  for (auto* s : {cmp, rep}) {
    s->add_option("--generative", o.generative, "pretrained stack directory (default OUT/generative)");
    s->add_option("--generator", o.generator, "ldm (pretrained stack) or oracle (held-back real pairs)")
        ->check(CLI::IsMember({"ldm", "oracle"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const ExperimentConfig cfg = resolve(o);
    const fs::path out = o.out;
    if (!*dump) fs::create_directories(out);
    if (*dump) {
      std::cout << nlohmann::json(cfg).dump(2) << '\n';
    } else if (*pre) {
      const auto [stack, q] = cmd_pretrain_generative(cfg, out, o.resume);
      print_quality(q);
    } else if (*cmp || *rep) {
      std::unique_ptr<PairGenerator> gen;
      const bool needs_gen = std::any_of(cfg.policies.begin(), cfg.policies.end(),
                                         [](const std::string& p) { return uses_generation(policy_from(p)); });
      if (needs_gen && o.generator == "oracle")
        gen = std::make_unique<RealPairGenerator>(
            held_back_pairs(cfg.shapes, 2000, RngStream(cfg.data_seed).split(77)), "oracle");
      else if (needs_gen)
        gen = std::make_unique<LatentDiffusionGenerator>(
            load_stack(o.generative.empty() ? out / "generative" : fs::path(o.generative)));
      const auto r = cmd_compare_policies(cfg, out, o.resume, gen.get(), rep->parsed());
      std::cout << r.markdown;
    } else if (*sup) {
      const auto threads = thread_budget();
      const auto s1 = supp_study_1(cfg.study, cfg.seeds, threads);
      const auto s2 = supp_study_2(cfg.study, cfg.seeds, threads);
      const auto md = study_report(s1, s2);
      std::ofstream(out / "supp_studies.md") << md;
      write_study_csv(out, s1, s2);
      std::cout << md;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
