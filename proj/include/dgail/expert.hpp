#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dgail/env.hpp"
#include "dgail/world.hpp"

namespace dgail {

struct IdmParams {
  double v0 = 10.0;     // desired speed m/s
  double T = 1.5;       // headway s
  double a_max = 2.0;   // m/s^2
  double b_comf = 2.0;  // comfortable braking m/s^2
  double s0 = 2.0;      // minimum gap m
  double delta = 4.0;   // velocity exponent
  double lookahead = 5.0;  // pure-pursuit lookahead m
};

/// IDM acceleration; gap may be +inf for a free road. gap <= 0 returns the
/// emergency value -2*b_comf. Result clamped to [-2*b_comf, a_max].
double idm_accel(double gap, double v, double v_lead, const IdmParams& p);

/// One pure-pursuit step: heading change toward the route point at
/// (projection + lookahead), clamped to +-0.3 rad, with v*dt of forward travel
/// along the mean heading. Returns a body-frame delta. When the route is
/// exhausted the agent continues straight.
MotionDelta pure_pursuit(const Pose& pose, const Polyline& route, double lookahead,
                         double v, double dt);

struct DemoEpisode {
  std::uint64_t scenario_hash = 0;
  std::size_t scenario_index = 0;
  std::vector<std::vector<int>> tokens;  // [step][agent]
};

struct DemoSet {
  std::uint64_t vocab_hash = 0;
  std::vector<DemoEpisode> episodes;
};

/// Rule-based driver: IDM longitudinal control against the nearest same-route
/// leader (plus intersection yielding on crossing maps) and pure-pursuit
/// lateral control. Individual agents may be overridden with a scripted
/// collider that chases a target agent at maximum vocabulary speed.
class ExpertPolicy : public TokenPolicy {
 public:
  ExpertPolicy(IdmParams idm, const TokenVocab* vocab) : idm_(idm), vocab_(vocab) {}

  /// Makes `agent` ignore the rules and steer into `target`.
  void add_collider(int agent, int target) { colliders_[agent] = target; }

  void begin_episode(const Scenario& scenario) override;
  std::vector<AgentAction> act(const Scenario& scenario, const EpisodeHistory& history,
                               const WorldState& state, std::mt19937_64& rng) override;

  /// Raw (untokenized) control deltas for the current state; used both for
  /// vocabulary building and inside act().
  std::vector<MotionDelta> raw_deltas(const Scenario& scenario, const WorldState& state) const;

  /// Advances the internal continuous speed targets; called once per step.
  void advance_speeds(const Scenario& scenario, const WorldState& state);

 private:
  IdmParams idm_;
  const TokenVocab* vocab_;  // may be null in raw-delta mode
  std::map<int, int> colliders_;
  std::vector<double> speed_;  // internal continuous speed per agent
  std::vector<double> next_speed_;
  // Route-pair conflict points: (route a, route b) -> (arc on a, arc on b).
  std::map<std::pair<int, int>, std::pair<double, double>> conflicts_;
};

/// Untokenized expert rollouts over all scenarios; returns every per-step
/// body-frame delta observed. Input for build_vocab.
std::vector<MotionDelta> collect_expert_deltas(const std::vector<Scenario>& scenarios,
                                               const IdmParams& idm);

/// Tokenized expert demonstrations for every scenario. Deterministic.
DemoSet gen_demos(const std::vector<Scenario>& scenarios, const IdmParams& idm,
                  const TokenVocab& vocab);

std::string demoset_to_jsonl(const DemoSet& d);
DemoSet demoset_from_jsonl(const std::string& text);

}  // namespace dgail
