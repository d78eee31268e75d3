#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dgail/checkpoint.hpp"
#include "dgail/config.hpp"
#include "dgail/harness.hpp"

namespace fs = std::filesystem;
using namespace dgail;

namespace {

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string data;
};

void add_common(CLI::App* cmd, CommonArgs* a, bool config_required) {
  auto* c = cmd->add_option("--config", a->config_path, "JSON configuration file");
  if (config_required) c->required();
  cmd->add_option("--seed", a->seed, "master random seed");
  cmd->add_option("--out", a->out, "output directory");
  cmd->add_option("--data", a->data, "dataset directory (defaults to --out)");
}

Config resolve_config(const CommonArgs& a) {
  if (a.config_path.empty()) return Config{};
  return load_config(a.config_path);
}

std::string data_dir(const CommonArgs& a) { return a.data.empty() ? a.out : a.data; }

struct LoadedData {
  std::vector<Scenario> scenarios;
  TokenVocab vocab;
  DemoSet demos;
};

LoadedData load_data(const std::string& dir) {
  LoadedData d;
  std::istringstream scn_in(read_file(dir + "/scenarios.jsonl"));
  std::string line;
  while (std::getline(scn_in, line))
    if (!line.empty()) d.scenarios.push_back(scenario_from_json(line));
  d.vocab = vocab_from_json(read_file(dir + "/vocab.json"));
  d.demos = demoset_from_jsonl(read_file(dir + "/demos.jsonl"));
  return d;
}

void write_out(const std::string& dir, const std::string& name, const std::string& bytes) {
  fs::create_directories(dir);
  write_file(dir + "/" + name, bytes);
}

std::string bc_log_csv(const std::vector<BcLogRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "step,nll\n";
  for (const auto& r : rows) out << r.step << ',' << r.nll << '\n';
  return out.str();
}

int run_gail_cmd(const CommonArgs& args, const Config& cfg, const GailVariant& variant,
                 const std::string& ckpt_in, int iterations, const std::string& ckpt_name) {
  LoadedData data = load_data(data_dir(args));
  Split split = split_holdout(data.scenarios, data.demos, cfg.eval.holdout_modulus);
  ag::ParamStore store = load_checkpoint(ckpt_in);
  ensure_discriminator(store, cfg.nets, variant, derive_seed(args.seed, 0xD15C));
  GailResult res = train_gail(store, cfg.nets, cfg.train, variant, split.train_scn,
                              data.vocab, split.train_demos, args.seed, iterations);
  write_out(args.out, "train_log.csv", train_log_to_csv(res.log));
  if (res.diverged) {
    std::cerr << "training diverged: " << res.divergence_message << "\n";
    return 3;
  }
  fs::create_directories(args.out);
  save_checkpoint(store, args.out + "/" + ckpt_name);
  std::cout << "wrote " << args.out << "/" << ckpt_name << " after " << res.log.size()
            << " iterations\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decomposed multi-agent adversarial imitation for tokenized traffic"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string ckpt, policy_kind = "learned", split_kind = "holdout";
  int steps = -1, iterations = -1, neighbor_cap = -1, rollouts = -1;

  auto* gen = app.add_subcommand("gen-data", "generate scenarios, vocabulary, demos");
  add_common(gen, &args, false);

  auto* bc = app.add_subcommand("pretrain-bc", "behavior-cloning pretraining");
  add_common(bc, &args, true);
  bc->add_option("--steps", steps, "override train.bc_steps");

  auto* tdg = app.add_subcommand("train-decompgail", "adversarial fine-tuning (decomposed)");
  add_common(tdg, &args, true);
  tdg->add_option("--ckpt", ckpt, "input checkpoint (default <data>/bc.ckpt)");
  tdg->add_option("--iterations", iterations, "override train.iterations");

  auto* tps = app.add_subcommand("train-psgail", "adversarial fine-tuning (monolithic)");
  add_common(tps, &args, true);
  tps->add_option("--ckpt", ckpt, "input checkpoint (default <data>/bc.ckpt)");
  tps->add_option("--iterations", iterations, "override train.iterations");
  tps->add_option("--neighbor-cap", neighbor_cap, "neighbor cap M (-1 = unlimited)");

  auto* ev = app.add_subcommand("eval", "metrics on held-out scenarios");
  add_common(ev, &args, true);
  ev->add_option("--ckpt", ckpt, "checkpoint to evaluate (default <data>/bc.ckpt)");
  ev->add_option("--policy", policy_kind, "learned | expert")
      ->check(CLI::IsMember({"learned", "expert"}));
  ev->add_option("--split", split_kind, "holdout | train | all")
      ->check(CLI::IsMember({"holdout", "train", "all"}));
  ev->add_option("--rollouts", rollouts, "override eval.rollouts");

  auto* st = app.add_subcommand("stability", "discriminator score stability harness");
  add_common(st, &args, true);
  st->add_option("--ckpt", ckpt, "pretrained checkpoint (default <data>/bc.ckpt)");
  st->add_option("--iterations", iterations, "override train.iterations");

  auto* ab = app.add_subcommand("ablation", "reward/discriminator ablation harness");
  add_common(ab, &args, true);
  ab->add_option("--ckpt", ckpt, "pretrained checkpoint (default <data>/bc.ckpt)");
  ab->add_option("--iterations", iterations, "override train.iterations");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
  add_common(gc, &args, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    Config cfg = resolve_config(args);
    if (steps >= 0) cfg.train.bc_steps = steps;
    if (iterations >= 0) cfg.train.iterations = iterations;
    if (rollouts >= 1) cfg.eval.rollouts = rollouts;
    const std::string ddir = data_dir(args);
    if (ckpt.empty()) ckpt = ddir + "/bc.ckpt";

    if (*gen) {
      Dataset d = build_dataset(cfg, args.seed);
      std::string scn;
      for (const auto& s : d.scenarios) scn += scenario_to_json(s) + "\n";
      write_out(args.out, "scenarios.jsonl", scn);
      write_out(args.out, "vocab.json", vocab_to_json(d.vocab));
      write_out(args.out, "demos.jsonl", demoset_to_jsonl(d.demos));
      std::cout << "wrote " << d.scenarios.size() << " scenarios, " << d.vocab.k()
                << "-token vocabulary, " << d.demos.episodes.size() << " demo episodes to "
                << args.out << "\n";
      return 0;
    }

    if (*bc) {
      LoadedData data = load_data(ddir);
      Split split = split_holdout(data.scenarios, data.demos, cfg.eval.holdout_modulus);
      ag::ParamStore store;
      init_model_params(store, cfg.nets, derive_seed(args.seed, 1));
      auto log = train_bc(store, cfg.nets, cfg.train, split.train_scn, data.vocab,
                          split.train_demos, args.seed, cfg.train.bc_steps);
      write_out(args.out, "bc_log.csv", bc_log_csv(log));
      fs::create_directories(args.out);
      save_checkpoint(store, args.out + "/bc.ckpt");
      std::cout << "wrote " << args.out << "/bc.ckpt; final NLL "
                << (log.empty() ? 0.0 : log.back().nll) << "\n";
      return 0;
    }

    if (*tdg)
      return run_gail_cmd(args, cfg, GailVariant{}, ckpt, cfg.train.iterations,
                          "decompgail.ckpt");

    if (*tps) {
      GailVariant v;
      v.kind = DiscKind::kPsgail;
      v.neighbor_cap = neighbor_cap;
      return run_gail_cmd(args, cfg, v, ckpt, cfg.train.iterations, "psgail.ckpt");
    }

    if (*ev) {
      LoadedData data = load_data(ddir);
      Split split = split_holdout(data.scenarios, data.demos, cfg.eval.holdout_modulus);
      const std::vector<Scenario>* scn = &split.hold_scn;
      const DemoSet* demos = &split.hold_demos;
      if (split_kind == "train") {
        scn = &split.train_scn;
        demos = &split.train_demos;
      } else if (split_kind == "all") {
        scn = &data.scenarios;
        demos = &data.demos;
      }
      if (scn->empty()) throw ConfigError("eval: selected split is empty");
      MetricsReport m;
      if (policy_kind == "expert") {
        m = evaluate(expert_policy_factory(cfg.expert, data.vocab), *scn, data.vocab,
                     *demos, cfg.eval.rollouts, args.seed);
      } else {
        ag::ParamStore store = load_checkpoint(ckpt);
        m = evaluate(learned_policy_factory(store, cfg.nets), *scn, data.vocab, *demos,
                     cfg.eval.rollouts, args.seed);
      }
      const std::string csv = metrics_to_csv(m);
      write_out(args.out, "metrics.csv", csv);
      std::cout << csv;
      return 0;
    }

    if (*st) {
      LoadedData data = load_data(ddir);
      Split split = split_holdout(data.scenarios, data.demos, cfg.eval.holdout_modulus);
      ag::ParamStore store = load_checkpoint(ckpt);
      StabilityReport rep =
          stability_harness(store, cfg, split.train_scn, data.vocab, split.train_demos,
                            args.seed, cfg.train.iterations);
      write_out(args.out, "stability.csv", stability_to_csv(rep));
      std::cout << rep.verdict << "\n";
      return 0;
    }

    if (*ab) {
      LoadedData data = load_data(ddir);
      Split split = split_holdout(data.scenarios, data.demos, cfg.eval.holdout_modulus);
      ag::ParamStore store = load_checkpoint(ckpt);
      AblationReport rep =
          ablation_harness(store, cfg, split, data.vocab, args.seed, cfg.train.iterations);
      const std::string csv = ablation_to_csv(rep);
      write_out(args.out, "ablation.csv", csv);
      std::cout << csv;
      return 0;
    }

    if (*gc) {
      GradCheckReport rep = grad_check_all(args.seed);
      std::cout.precision(3);
      std::cout << "bc              max rel err " << rep.bc << "\n"
                << "decomp disc     max rel err " << rep.decomp_disc << "\n"
                << "psgail disc     max rel err " << rep.psgail_disc << "\n"
                << "ppo             max rel err " << rep.ppo << "\n";
      if (rep.worst() < 1e-4) {
        std::cout << "gradients OK\n";
        return 0;
      }
      std::cerr << "gradient check FAILED\n";
      return 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
