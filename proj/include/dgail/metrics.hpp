#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dgail/expert.hpp"
#include "dgail/gail.hpp"

namespace dgail {

struct MetricsReport {
  double collision_likelihood = 1.0;  // 1 - colliding agent-rollout fraction
  double offroad_rate = 0.0;          // offroad agent-step fraction
  double speed_jsd = 0.0;             // Jensen-Shannon divergence, natural log
  double min_ade_m = 0.0;             // min-over-rollouts mean displacement, m
  int rollouts = 32;
};

/// 20-bin speed histogram over [0, 15) m/s (last bin catches >= 15),
/// normalized to sum 1; all-empty input yields the uniform distribution.
std::vector<double> speed_histogram(const std::vector<double>& speeds, int bins = 20,
                                    double lo = 0.0, double hi = 15.0);

/// Jensen-Shannon divergence between two distributions, natural log (<= ln 2).
double jensen_shannon(const std::vector<double>& p, const std::vector<double>& q);

/// Creates a fresh policy for one scenario (index into the evaluation list).
using PolicyFactory =
    std::function<std::unique_ptr<TokenPolicy>(const Scenario&, std::size_t)>;

/// R seeded rollouts per scenario; collision / offroad / speed-JSD / minADE
/// aggregated over all scenarios. Demo episodes (indexed by position in
/// `scenarios`) provide the reference trajectories and speed distribution.
/// Pure function of its inputs.
MetricsReport evaluate(const PolicyFactory& make_policy,
                       const std::vector<Scenario>& scenarios, const TokenVocab& vocab,
                       const DemoSet& demos, int R, std::uint64_t seed);

/// Factory for the learned policy; caches frozen map features per scenario.
PolicyFactory learned_policy_factory(ag::ParamStore& store, const ModelConfig& cfg);
/// Factory for the rule-based expert.
PolicyFactory expert_policy_factory(const IdmParams& idm, const TokenVocab& vocab);

std::string metrics_to_csv(const MetricsReport& m);
MetricsReport metrics_from_csv(const std::string& text);

}  // namespace dgail
