#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgail/config.hpp"
#include "dgail/metrics.hpp"

namespace dgail {

/// Everything gen-data produces.
struct Dataset {
  std::vector<Scenario> scenarios;
  TokenVocab vocab;
  DemoSet demos;  // one episode per scenario, same order
};

/// Deterministic synthetic dataset: scenarios across the configured templates,
/// k-means vocabulary from expert deltas, and tokenized demonstrations.
Dataset build_dataset(const Config& cfg, std::uint64_t seed);

/// Train / held-out partition by scenario content hash
/// (hash % modulus == 0 -> held out). Demo scenario indices are remapped to
/// the respective subset.
struct Split {
  std::vector<Scenario> train_scn, hold_scn;
  DemoSet train_demos, hold_demos;
};
Split split_holdout(const std::vector<Scenario>& scenarios, const DemoSet& demos,
                    int modulus);

// -- stability ----------------------------------------------------------------

struct StabilityRow {
  std::string config;  // psgail_m5 | psgail_m10 | psgail_minf | decomp
  int iter = 0;
  double mean = 0.0;  // discriminator score on policy samples
  double stddev = 0.0;
};

struct StabilitySummary {
  std::string config;
  bool diverged = false;
  int iterations_run = 0;
  double final_mean = 0.0;  // window average of per-iteration means
  double final_std = 0.0;   // window average of per-iteration stds
};

struct StabilityReport {
  std::vector<StabilityRow> rows;
  std::vector<StabilitySummary> summary;
  std::string verdict;
  int window = 20;
};

/// Runs PS-GAIL (M = 5, 10, uncapped) and the decomposed configuration from
/// the same pretrained checkpoint with shared seeds/scenarios; the verdict
/// compares final-window score stds.
StabilityReport stability_harness(const ag::ParamStore& pretrained, const Config& cfg,
                                  const std::vector<Scenario>& scenarios,
                                  const TokenVocab& vocab, const DemoSet& demos,
                                  std::uint64_t seed, int iterations, int window = 20);

std::string stability_to_csv(const StabilityReport& r);
std::vector<StabilityRow> stability_rows_from_csv(const std::string& text);
/// Recomputes window aggregates and the verdict from the row series.
StabilityReport summarize_stability(const std::vector<StabilityRow>& rows, int window);

// -- ablation -----------------------------------------------------------------

struct AblationRow {
  std::string variant;
  bool diverged = false;
  MetricsReport metrics;
};

struct AblationReport {
  std::vector<AblationRow> rows;
};

/// The seven ablation variants, trained from the same pretrained checkpoint
/// with shared seeds and evaluated on the held-out scenarios: bc_only,
/// wo_scene, wo_interact, mean_interact, wo_social, mean_social, full.
AblationReport ablation_harness(const ag::ParamStore& pretrained, const Config& cfg,
                                const Split& split, const TokenVocab& vocab,
                                std::uint64_t seed, int iterations);

/// Variant name -> discriminator/reward settings used by the harness.
GailVariant ablation_variant(const std::string& name);

std::string ablation_to_csv(const AblationReport& r);
AblationReport ablation_from_csv(const std::string& text);

// -- gradient verification ----------------------------------------------------

struct GradCheckReport {
  double bc = 0.0;
  double decomp_disc = 0.0;
  double psgail_disc = 0.0;
  double ppo = 0.0;
  double worst() const;
};

/// Central-difference checks of every loss on a small 3-agent scene.
GradCheckReport grad_check_all(std::uint64_t seed, double sample_fraction = 0.002);

}  // namespace dgail
