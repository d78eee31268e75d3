#include "dgail/env.hpp"

#include <algorithm>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dgail {

WorldState initial_state(const Scenario& s) {
  WorldState st;
  st.t = 0;
  for (const auto& a : s.agents) {
    st.poses.push_back(a.pose);
    st.speeds.push_back(a.speed);
    st.alive.push_back(true);
  }
  return st;
}

WorldState step(const WorldState& state, const std::vector<int>& joint_tokens,
                const TokenVocab& vocab, double dt) {
  if (joint_tokens.size() != state.poses.size())
    throw std::invalid_argument("step: one token per agent required");
  WorldState out = state;
  out.t = state.t + 1;
  for (std::size_t i = 0; i < state.poses.size(); ++i) {
    if (!state.alive[i]) continue;
    const int tok = joint_tokens[i];
    if (tok < 0 || tok >= vocab.k())
      throw std::out_of_range("step: unknown token id " + std::to_string(tok) +
                              " for agent " + std::to_string(i) + " at step " +
                              std::to_string(state.t));
    const MotionDelta& d = vocab.deltas[tok];
    out.poses[i] = apply_delta(state.poses[i], d);
    out.speeds[i] = std::hypot(d.dx, d.dy) / dt;
  }
  return out;
}

NeighborSet neighbors(const WorldState& state, double radius, int cap) {
  if (radius <= 0.0) throw std::invalid_argument("neighbors: radius must be > 0");
  const int n = static_cast<int>(state.poses.size());
  NeighborSet ns;
  ns.per_agent.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = std::hypot(state.poses[i].x - state.poses[j].x,
                                  state.poses[i].y - state.poses[j].y);
      if (d <= radius) ns.per_agent[i].push_back({j, d});
    }
    std::sort(ns.per_agent[i].begin(), ns.per_agent[i].end(),
              [](const NeighborSet::Entry& a, const NeighborSet::Entry& b) {
                return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
              });
    if (cap >= 0 && static_cast<int>(ns.per_agent[i].size()) > cap)
      ns.per_agent[i].resize(cap);
  }
  return ns;
}

static void rect_corners(const Pose& p, const Footprint& f, Vec2 out[4]) {
  const double c = std::cos(p.theta), s = std::sin(p.theta);
  const double hl = f.length / 2.0, hw = f.width / 2.0;
  const Vec2 fx(c * hl, s * hl), fy(-s * hw, c * hw), ctr(p.x, p.y);
  out[0] = ctr + fx + fy;
  out[1] = ctr + fx - fy;
  out[2] = ctr - fx - fy;
  out[3] = ctr - fx + fy;
}

bool rects_overlap(const Pose& a, const Footprint& fa, const Pose& b, const Footprint& fb) {
  Vec2 ca[4], cb[4];
  rect_corners(a, fa, ca);
  rect_corners(b, fb, cb);
  const Vec2 axes[4] = {Vec2(std::cos(a.theta), std::sin(a.theta)),
                        Vec2(-std::sin(a.theta), std::cos(a.theta)),
                        Vec2(std::cos(b.theta), std::sin(b.theta)),
                        Vec2(-std::sin(b.theta), std::cos(b.theta))};
  for (const Vec2& ax : axes) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (int i = 0; i < 4; ++i) {
      amin = std::min(amin, ax.dot(ca[i]));
      amax = std::max(amax, ax.dot(ca[i]));
      bmin = std::min(bmin, ax.dot(cb[i]));
      bmax = std::max(bmax, ax.dot(cb[i]));
    }
    if (amax < bmin || bmax < amin) return false;  // strict: touching overlaps
  }
  return true;
}

std::set<std::pair<int, int>> detect_collisions(const WorldState& state,
                                                const std::vector<Footprint>& footprints) {
  std::set<std::pair<int, int>> out;
  const int n = static_cast<int>(state.poses.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rects_overlap(state.poses[i], footprints[i], state.poses[j], footprints[j]))
        out.insert({i, j});
  return out;
}

bool offroad(const Pose& pose, const MapGraph& map) {
  const Vec2 q(pose.x, pose.y);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : map.centerlines) best = std::min(best, polyline_distance(c, q));
  return best > map.lane_half_width + 0.5;
}

Rollout rollout(TokenPolicy& policy, const Scenario& scenario, const TokenVocab& vocab,
                std::uint64_t seed) {
  Rollout r;
  r.scenario_hash = scenario_hash(scenario);
  r.seed = seed;
  std::mt19937_64 rng(derive_seed(seed, 0x5011011));

  policy.begin_episode(scenario);
  WorldState st = initial_state(scenario);
  r.states.push_back(st);

  const int n = static_cast<int>(scenario.agents.size());
  EpisodeHistory hist;
  hist.tokens.resize(n);
  hist.poses.resize(n);
  for (int i = 0; i < n; ++i) hist.poses[i].push_back(st.poses[i]);

  for (int t = 0; t < scenario.horizon; ++t) {
    const std::vector<AgentAction> acts = policy.act(scenario, hist, st, rng);
    if (static_cast<int>(acts.size()) != n)
      throw std::runtime_error("rollout: policy returned wrong action count at step " +
                               std::to_string(t));
    std::vector<int> toks(n);
    std::vector<double> lps(n), vals(n);
    for (int i = 0; i < n; ++i) {
      toks[i] = acts[i].token;
      lps[i] = acts[i].logp;
      vals[i] = acts[i].value;
      if (!std::isfinite(lps[i]))
        throw std::runtime_error("rollout: non-finite log-prob for agent " +
                                 std::to_string(i) + " at step " + std::to_string(t));
    }
    st = step(st, toks, vocab, scenario.dt);
    r.tokens.push_back(toks);
    r.logp.push_back(lps);
    r.values.push_back(vals);
    r.states.push_back(st);
    for (int i = 0; i < n; ++i) {
      hist.tokens[i].push_back(toks[i]);
      hist.poses[i].push_back(st.poses[i]);
    }
  }
  return r;
}

std::string rollout_to_jsonl(const Rollout& r) {
  using nlohmann::json;
  std::string out;
  json head;
  head["scenario"] = r.scenario_hash;
  head["seed"] = r.seed;
  out += head.dump();
  out += "\n";
  for (std::size_t t = 0; t < r.tokens.size(); ++t) {
    json rec;
    rec["t"] = t;
    rec["tokens"] = r.tokens[t];
    rec["logp"] = r.logp[t];
    rec["values"] = r.values[t];
    json poses = json::array();
    for (const auto& p : r.states[t + 1].poses) poses.push_back({p.x, p.y, p.theta});
    rec["poses"] = poses;
    out += rec.dump();
    out += "\n";
  }
  return out;
}

}  // namespace dgail
