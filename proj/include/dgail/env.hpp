#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "dgail/world.hpp"

namespace dgail {

struct WorldState {
  int t = 0;
  std::vector<Pose> poses;
  std::vector<double> speeds;  // ||dxy|| / dt of the last step
  std::vector<bool> alive;
};

WorldState initial_state(const Scenario& s);

/// Advances every alive agent by its token's body-frame delta. Throws
/// std::out_of_range for an unknown token id (message names agent and step).
WorldState step(const WorldState& state, const std::vector<int>& joint_tokens,
                const TokenVocab& vocab, double dt);

/// Per-ego neighbor lists: all j != i within `radius` (center distance),
/// sorted ascending by distance, ties by id. cap < 0 means uncapped;
/// otherwise only the cap nearest are kept.
struct NeighborSet {
  struct Entry {
    int id;
    double dist;
  };
  std::vector<std::vector<Entry>> per_agent;
};

NeighborSet neighbors(const WorldState& state, double radius, int cap = -1);

struct Footprint {
  double length = 4.5;
  double width = 2.0;
};

/// Oriented-rectangle overlap via the separating-axis test; touching counts.
bool rects_overlap(const Pose& a, const Footprint& fa, const Pose& b, const Footprint& fb);

std::set<std::pair<int, int>> detect_collisions(const WorldState& state,
                                                const std::vector<Footprint>& footprints);

/// True iff the center is farther than lane_half_width + 0.5 m from every
/// centerline (boundary inclusive on-road).
bool offroad(const Pose& pose, const MapGraph& map);

/// Per-agent decision for one step of a rollout.
struct AgentAction {
  int token = 0;
  double logp = 0.0;
  double value = 0.0;
};

/// Token histories and pose trail maintained during an episode. poses has one
/// more entry than tokens (pose before each step plus the final pose).
struct EpisodeHistory {
  std::vector<std::vector<int>> tokens;   // [agent][step]
  std::vector<std::vector<Pose>> poses;   // [agent][step]
};

/// Anything that can drive agents token-by-token through an episode.
class TokenPolicy {
 public:
  virtual ~TokenPolicy() = default;
  virtual void begin_episode(const Scenario& scenario) { (void)scenario; }
  virtual std::vector<AgentAction> act(const Scenario& scenario,
                                       const EpisodeHistory& history,
                                       const WorldState& state,
                                       std::mt19937_64& rng) = 0;
};

struct RewardBreakdownStep;  // defined in gail.hpp

struct Rollout {
  std::uint64_t scenario_hash = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<int>> tokens;       // [step][agent]
  std::vector<std::vector<double>> logp;      // [step][agent]
  std::vector<std::vector<double>> values;    // [step][agent]
  std::vector<WorldState> states;             // [horizon + 1], states[t] precedes tokens[t]
};

Rollout rollout(TokenPolicy& policy, const Scenario& scenario, const TokenVocab& vocab,
                std::uint64_t seed);

/// JSON-lines log: header record with scenario hash and seed, then one record
/// per step with keys t, tokens, logp, values, poses.
std::string rollout_to_jsonl(const Rollout& r);

}  // namespace dgail
