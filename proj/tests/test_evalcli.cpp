#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>

#include "dgail/checkpoint.hpp"
#include "dgail/harness.hpp"

using namespace dgail;
namespace fs = std::filesystem;

namespace {

Config small_config() {
  Config c;
  c.world.scenarios_per_template = 2;
  c.world.agents_min = 3;
  c.world.agents_max = 3;
  c.world.vocab_k = 32;  // fine enough that tokenized expert driving stays on-road
  c.nets.vocab_size = 32;
  c.nets.hidden = 16;
  c.nets.mlp_width = 32;
  c.nets.layers = 1;
  c.nets.history = 4;
  c.train.batch_scenarios = 2;
  c.eval.rollouts = 2;
  c.eval.holdout_modulus = 2;
  return c;
}

struct StationaryPolicy : TokenPolicy {
  std::vector<AgentAction> act(const Scenario& s, const EpisodeHistory&, const WorldState&,
                               std::mt19937_64&) override {
    return std::vector<AgentAction>(s.agents.size());
  }
};

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(DGAIL_CLI_PATH) + " " + args).c_str());
  return (rc >> 8) & 0xff;
}

}  // namespace

TEST_CASE("speed histogram: normalization, bin placement, empty input") {
  auto h = speed_histogram({0.1, 7.6, 14.9, 20.0});
  REQUIRE(h.size() == 20);
  double sum = 0.0;
  for (double b : h) sum += b;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(h[0] == doctest::Approx(0.25));
  CHECK(h[10] == doctest::Approx(0.25));  // 7.6 m/s in [7.5, 8.25)
  CHECK(h[19] == doctest::Approx(0.5));   // 14.9 and the overflow 20.0

  auto u = speed_histogram({});
  for (double b : u) CHECK(b == doctest::Approx(1.0 / 20.0).epsilon(1e-12));
}

TEST_CASE("Jensen-Shannon divergence: zero, symmetric, capped at ln 2") {
  std::vector<double> p = {0.2, 0.5, 0.3}, q = {0.6, 0.1, 0.3};
  CHECK(jensen_shannon(p, p) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(jensen_shannon(p, q) == doctest::Approx(jensen_shannon(q, p)).epsilon(1e-12));
  std::vector<double> a = {1.0, 0.0}, b = {0.0, 1.0};
  CHECK(jensen_shannon(a, b) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(jensen_shannon(p, q) > 0.0);
  CHECK(jensen_shannon(p, q) < std::log(2.0));
}

TEST_CASE("dataset build and holdout split are consistent and deterministic") {
  Config cfg = small_config();
  Dataset a = build_dataset(cfg, 0);
  Dataset b = build_dataset(cfg, 0);
  REQUIRE(a.scenarios.size() == 6);
  REQUIRE(a.demos.episodes.size() == 6);
  CHECK(vocab_to_json(a.vocab) == vocab_to_json(b.vocab));
  CHECK(demoset_to_jsonl(a.demos) == demoset_to_jsonl(b.demos));

  Split sp = split_holdout(a.scenarios, a.demos, cfg.eval.holdout_modulus);
  CHECK(sp.train_scn.size() + sp.hold_scn.size() == a.scenarios.size());
  CHECK(sp.train_demos.episodes.size() == sp.train_scn.size());
  CHECK(sp.hold_demos.episodes.size() == sp.hold_scn.size());
  for (const auto& s : sp.hold_scn) CHECK(scenario_hash(s) % cfg.eval.holdout_modulus == 0);
  for (const auto& s : sp.train_scn) CHECK(scenario_hash(s) % cfg.eval.holdout_modulus != 0);
  // Remapped demo indices still point at the matching scenario.
  for (const auto& d : sp.train_demos.episodes)
    CHECK(scenario_hash(sp.train_scn[d.scenario_index]) == d.scenario_hash);
  for (const auto& d : sp.hold_demos.episodes)
    CHECK(scenario_hash(sp.hold_scn[d.scenario_index]) == d.scenario_hash);
}

TEST_CASE("expert self-evaluation: no collisions, no offroad, near-zero error") {
  Config cfg = small_config();
  Dataset d = build_dataset(cfg, 1);
  MetricsReport m = evaluate(expert_policy_factory(cfg.expert, d.vocab), d.scenarios,
                             d.vocab, d.demos, 2, 0);
  CHECK(m.collision_likelihood == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.offroad_rate == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(m.speed_jsd < 1e-9);
  CHECK(m.min_ade_m < 0.3);
}

TEST_CASE("stationary policy: collision-free but far from the expert speeds") {
  Config cfg = small_config();
  Dataset d = build_dataset(cfg, 2);
  auto factory = [](const Scenario&, std::size_t) -> std::unique_ptr<TokenPolicy> {
    return std::make_unique<StationaryPolicy>();
  };
  MetricsReport m = evaluate(factory, d.scenarios, d.vocab, d.demos, 2, 0);
  CHECK(m.collision_likelihood == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.speed_jsd > 0.5);
  CHECK(m.min_ade_m > 1.0);
}

TEST_CASE("evaluation is a pure function of its inputs") {
  Config cfg = small_config();
  Dataset d = build_dataset(cfg, 3);
  ag::ParamStore store;
  init_model_params(store, cfg.nets, 4);
  auto factory = learned_policy_factory(store, cfg.nets);
  const std::string a = metrics_to_csv(evaluate(factory, d.scenarios, d.vocab, d.demos, 2, 9));
  const std::string b = metrics_to_csv(evaluate(factory, d.scenarios, d.vocab, d.demos, 2, 9));
  CHECK(a == b);
  MetricsReport round = metrics_from_csv(a);
  CHECK(metrics_to_csv(round) == a);
}

TEST_CASE("config parsing: round trip, unknown keys, invalid values") {
  Config c = small_config();
  Config back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK_THROWS_AS(config_from_json("{\"world\": {\"bogus\": 1}}"), ConfigError);
  CHECK_THROWS_AS(config_from_json("not json"), ConfigError);
  CHECK_THROWS_AS(config_from_json("{\"world\": {\"vocab_k\": 1}}"), ConfigError);
  // Vocabulary sizes must agree between world and nets.
  CHECK_THROWS_AS(
      config_from_json("{\"world\": {\"vocab_k\": 16}, \"nets\": {\"vocab_size\": 8}}"),
      ConfigError);
}

TEST_CASE("zero-iteration stability probes all four configurations at 0.5") {
  Config cfg = small_config();
  Dataset d = build_dataset(cfg, 5);
  Split sp = split_holdout(d.scenarios, d.demos, cfg.eval.holdout_modulus);
  ag::ParamStore store;
  init_model_params(store, cfg.nets, 6);
  StabilityReport rep = stability_harness(store, cfg, sp.train_scn, d.vocab,
                                          sp.train_demos, 0, /*iterations=*/0);
  REQUIRE(rep.summary.size() == 4);
  for (const auto& s : rep.summary) {
    CHECK(!s.diverged);
    CHECK(s.final_mean == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(s.final_std == doctest::Approx(0.0).epsilon(1e-9));
  }
  CHECK(!rep.verdict.empty());
}

TEST_CASE("stability harness: row counts and CSV round trip") {
  Config cfg = small_config();
  Dataset d = build_dataset(cfg, 7);
  Split sp = split_holdout(d.scenarios, d.demos, cfg.eval.holdout_modulus);
  ag::ParamStore store;
  init_model_params(store, cfg.nets, 8);
  const int iters = 2;
  StabilityReport rep =
      stability_harness(store, cfg, sp.train_scn, d.vocab, sp.train_demos, 1, iters);
  CHECK(rep.rows.size() == 4 * static_cast<std::size_t>(iters));
  std::vector<StabilityRow> rows = stability_rows_from_csv(stability_to_csv(rep));
  REQUIRE(rows.size() == rep.rows.size());
  StabilityReport again = summarize_stability(rows, rep.window);
  REQUIRE(again.summary.size() == rep.summary.size());
  for (std::size_t i = 0; i < rep.summary.size(); ++i) {
    CHECK(again.summary[i].config == rep.summary[i].config);
    CHECK(again.summary[i].final_mean ==
          doctest::Approx(rep.summary[i].final_mean).epsilon(1e-12));
    CHECK(again.summary[i].final_std ==
          doctest::Approx(rep.summary[i].final_std).epsilon(1e-12));
  }
}

TEST_CASE("ablation variants: names, flags, and parameter-group layout") {
  CHECK_THROWS(ablation_variant("nope"));
  GailVariant full = ablation_variant("full");
  CHECK(full.use_scene);
  CHECK(full.use_inter);
  CHECK(full.social == GailVariant::Social::kDecay);
  GailVariant ws = ablation_variant("wo_scene");
  CHECK(!ws.use_scene);
  CHECK(ws.use_inter);
  GailVariant wi = ablation_variant("wo_interact");
  CHECK(wi.use_scene);
  CHECK(!wi.use_inter);
  CHECK(ablation_variant("mean_interact").mean_inter_weight);
  CHECK(ablation_variant("wo_social").social == GailVariant::Social::kZero);
  CHECK(ablation_variant("mean_social").social == GailVariant::Social::kMean);

  // Dropping the scene branch must leave its parameters out of the store.
  ModelConfig mcfg = small_config().nets;
  ag::ParamStore store;
  init_model_params(store, mcfg, 9);
  ensure_discriminator(store, mcfg, ws, 10);
  CHECK(!store.has("disc.scene.emb"));
  CHECK(store.has("disc.inter.emb"));
}

TEST_CASE("ablation harness: seven rows with finite metrics, CSV round trip") {
  Config cfg = small_config();
  Dataset d = build_dataset(cfg, 11);
  Split sp = split_holdout(d.scenarios, d.demos, cfg.eval.holdout_modulus);
  REQUIRE(!sp.hold_scn.empty());
  ag::ParamStore store;
  init_model_params(store, cfg.nets, 12);
  AblationReport rep = ablation_harness(store, cfg, sp, d.vocab, 0, /*iterations=*/1);
  REQUIRE(rep.rows.size() == 7);
  CHECK(rep.rows.front().variant == "bc_only");
  for (const auto& row : rep.rows) {
    CHECK(std::isfinite(row.metrics.collision_likelihood));
    CHECK(std::isfinite(row.metrics.offroad_rate));
    CHECK(std::isfinite(row.metrics.speed_jsd));
    CHECK(std::isfinite(row.metrics.min_ade_m));
  }
  AblationReport back = ablation_from_csv(ablation_to_csv(rep));
  CHECK(ablation_to_csv(back) == ablation_to_csv(rep));
}

TEST_CASE("cli: missing required --config exits with code 2") {
  CHECK(run_cli("eval > /dev/null 2>&1") == 2);
  CHECK(run_cli("stability > /dev/null 2>&1") == 2);
}

TEST_CASE("cli: gen-data twice produces byte-identical artifacts") {
  const fs::path base = fs::temp_directory_path() / "dgail_test_gendata";
  fs::remove_all(base);
  const std::string cfg_path = (base / "cfg.json").string();
  fs::create_directories(base);
  write_file(cfg_path, config_to_json(small_config()));
  const std::string d1 = (base / "a").string(), d2 = (base / "b").string();
  REQUIRE(run_cli("gen-data --config " + cfg_path + " --seed 3 --out " + d1 +
                  " > /dev/null") == 0);
  REQUIRE(run_cli("gen-data --config " + cfg_path + " --seed 3 --out " + d2 +
                  " > /dev/null") == 0);
  for (const char* name : {"scenarios.jsonl", "vocab.json", "demos.jsonl"})
    CHECK(read_file(d1 + "/" + name) == read_file(d2 + "/" + name));
  fs::remove_all(base);
}

TEST_CASE("cli: malformed config exits with code 2") {
  const fs::path base = fs::temp_directory_path() / "dgail_test_badcfg";
  fs::remove_all(base);
  fs::create_directories(base);
  const std::string cfg_path = (base / "bad.json").string();
  write_file(cfg_path, "{\"world\": {\"bogus\": true}}");
  CHECK(run_cli("gen-data --config " + cfg_path + " --out " + (base / "out").string() +
                " > /dev/null 2>&1") == 2);
  fs::remove_all(base);
}
