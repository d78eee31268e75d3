#include "dgail/expert.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dgail {

double idm_accel(double gap, double v, double v_lead, const IdmParams& p) {
  if (gap <= 0.0) return -2.0 * p.b_comf;
  const double dv = v - v_lead;
  double interaction = 0.0;
  if (std::isfinite(gap)) {
    const double s_star =
        p.s0 + v * p.T + v * dv / (2.0 * std::sqrt(p.a_max * p.b_comf));
    interaction = (s_star / gap) * (s_star / gap);
  }
  const double a = p.a_max * (1.0 - std::pow(v / p.v0, p.delta) - interaction);
  return std::clamp(a, -2.0 * p.b_comf, p.a_max);
}

MotionDelta pure_pursuit(const Pose& pose, const Polyline& route, double lookahead,
                         double v, double dt) {
  if (lookahead <= 0.0) throw std::invalid_argument("pure_pursuit: lookahead must be > 0");
  double dtheta = 0.0;
  const double L = polyline_length(route);
  const double proj = polyline_project(route, Vec2(pose.x, pose.y));
  if (proj + lookahead < L) {
    const Vec2 target = polyline_point(route, proj + lookahead);
    const Vec2 local = to_body_frame(pose, target);
    const double dist = local.norm();
    if (dist > 1e-9) {
      const double alpha = std::atan2(local.y(), local.x());
      const double curvature = 2.0 * std::sin(alpha) / dist;
      dtheta = std::clamp(curvature * v * dt, -0.3, 0.3);
    }
  }
  const double travel = v * dt;
  return MotionDelta{travel * std::cos(dtheta / 2.0), travel * std::sin(dtheta / 2.0),
                     dtheta};
}

// -- expert policy ------------------------------------------------------------

static bool segment_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d,
                              Vec2* out) {
  const Vec2 r = b - a, s = d - c;
  const double denom = r.x() * s.y() - r.y() * s.x();
  if (std::abs(denom) < 1e-12) return false;
  const Vec2 qp = c - a;
  const double t = (qp.x() * s.y() - qp.y() * s.x()) / denom;
  const double u = (qp.x() * r.y() - qp.y() * r.x()) / denom;
  if (t < 0.0 || t > 1.0 || u < 0.0 || u > 1.0) return false;
  *out = a + t * r;
  return true;
}

void ExpertPolicy::begin_episode(const Scenario& scenario) {
  speed_.clear();
  for (const auto& a : scenario.agents) speed_.push_back(a.speed);
  conflicts_.clear();
  const auto& lines = scenario.map.centerlines;
  for (std::size_t a = 0; a < lines.size(); ++a) {
    for (std::size_t b = a + 1; b < lines.size(); ++b) {
      for (std::size_t i = 1; i < lines[a].size() && conflicts_.count({(int)a, (int)b}) == 0; ++i) {
        for (std::size_t j = 1; j < lines[b].size(); ++j) {
          Vec2 x;
          if (segment_intersect(lines[a][i - 1], lines[a][i], lines[b][j - 1], lines[b][j], &x)) {
            conflicts_[{(int)a, (int)b}] = {polyline_project(lines[a], x),
                                            polyline_project(lines[b], x)};
            break;
          }
        }
      }
    }
  }
}

std::vector<MotionDelta> ExpertPolicy::raw_deltas(const Scenario& scenario,
                                                  const WorldState& state) const {
  const int n = static_cast<int>(scenario.agents.size());
  std::vector<double> arc(n);
  for (int i = 0; i < n; ++i)
    arc[i] = polyline_project(scenario.map.centerlines[scenario.agents[i].route],
                              Vec2(state.poses[i].x, state.poses[i].y));

  std::vector<MotionDelta> out(n);
  for (int i = 0; i < n; ++i) {
    const int route_i = scenario.agents[i].route;
    const double v = speed_[i];
    double accel = idm_accel(std::numeric_limits<double>::infinity(), v, 0.0, idm_);

    // Same-route leader.
    int leader = -1;
    double lead_arc = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == i || scenario.agents[j].route != route_i) continue;
      if (arc[j] > arc[i] && arc[j] < lead_arc) {
        lead_arc = arc[j];
        leader = j;
      }
    }
    if (leader >= 0) {
      const double gap = lead_arc - arc[i] -
                         (scenario.agents[i].length + scenario.agents[leader].length) / 2.0;
      accel = std::min(accel, idm_accel(gap, v, speed_[leader], idm_));
    }

    // Intersection yielding: the later arrival sees a stopped virtual leader
    // just before the conflict point.
    for (const auto& [routes, arcs] : conflicts_) {
      double c_i, c_j;
      int other_route;
      if (routes.first == route_i) {
        c_i = arcs.first;
        c_j = arcs.second;
        other_route = routes.second;
      } else if (routes.second == route_i) {
        c_i = arcs.second;
        c_j = arcs.first;
        other_route = routes.first;
      } else {
        continue;
      }
      if (arc[i] >= c_i - 1.0) continue;  // already at or past the conflict
      const double t_i = (c_i - arc[i]) / std::max(v, 0.5);
      for (int j = 0; j < n; ++j) {
        if (j == i || scenario.agents[j].route != other_route) continue;
        if (arc[j] > c_j + 4.0) continue;  // cleared the conflict
        const double t_j = (c_j - arc[j]) / std::max(speed_[j], 0.5);
        if (t_i > 12.0 && t_j > 12.0) continue;
        const bool yield = t_j < t_i || (t_j == t_i && j < i);
        if (yield) {
          const double gap = c_i - arc[i] - 6.0;
          accel = std::min(accel, idm_accel(gap, v, 0.0, idm_));
        }
      }
    }

    const double v_next = std::max(0.0, v + accel * scenario.dt);
    out[i] = pure_pursuit(state.poses[i], scenario.map.centerlines[route_i], idm_.lookahead,
                          (v + v_next) / 2.0, scenario.dt);
  }
  return out;
}

void ExpertPolicy::advance_speeds(const Scenario& scenario, const WorldState& state) {
  // Recompute the IDM accelerations used by raw_deltas and commit the speeds.
  const int n = static_cast<int>(scenario.agents.size());
  next_speed_ = speed_;
  const std::vector<MotionDelta> deltas = raw_deltas(scenario, state);
  for (int i = 0; i < n; ++i) {
    // Mean speed over the step was (v + v_next)/2 = |dxy|/dt of the delta.
    const double mean_v = std::hypot(deltas[i].dx, deltas[i].dy) / scenario.dt;
    next_speed_[i] = std::max(0.0, 2.0 * mean_v - speed_[i]);
  }
  speed_ = next_speed_;
}

std::vector<AgentAction> ExpertPolicy::act(const Scenario& scenario,
                                           const EpisodeHistory& /*history*/,
                                           const WorldState& state, std::mt19937_64&) {
  if (!vocab_) throw std::runtime_error("ExpertPolicy: vocabulary required for act()");
  const int n = static_cast<int>(scenario.agents.size());
  const std::vector<MotionDelta> deltas = raw_deltas(scenario, state);
  std::vector<AgentAction> acts(n);
  for (int i = 0; i < n; ++i) {
    auto it = colliders_.find(i);
    if (it != colliders_.end()) {
      const int target = it->second;
      if (target == i) {
        acts[i].token = 0;
      } else {
        // Greedy chase: the token that lands closest to the target's position.
        const Vec2 goal(state.poses[target].x, state.poses[target].y);
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < vocab_->k(); ++k) {
          const Pose next = apply_delta(state.poses[i], vocab_->deltas[k]);
          const double d = (Vec2(next.x, next.y) - goal).norm();
          if (d < best_d) {
            best_d = d;
            best = k;
          }
        }
        acts[i].token = best;
      }
    } else {
      acts[i].token = tokenize(deltas[i], *vocab_);
    }
  }
  advance_speeds(scenario, state);
  return acts;
}

// -- demo generation ----------------------------------------------------------

std::vector<MotionDelta> collect_expert_deltas(const std::vector<Scenario>& scenarios,
                                               const IdmParams& idm) {
  std::vector<MotionDelta> all;
  // Corrective sweep: pure-pursuit deltas from on-route poses perturbed in
  // lateral offset and heading, over a speed range. Closed-loop tokenized
  // driving needs these recovery motions in the vocabulary; rollouts of the
  // continuous expert alone never visit them.
  static constexpr double kSpeeds[] = {1.0, 2.5, 4.0, 5.5, 7.0, 8.5, 10.0};
  static constexpr double kLateral[] = {-1.2, 0.0, 1.2};
  static constexpr double kHeading[] = {-0.12, 0.0, 0.12};
  for (const auto& scn : scenarios) {
    for (const auto& route : scn.map.centerlines) {
      const double L = polyline_length(route);
      if (L < 2.0 * idm.lookahead) continue;
      const int n_arcs = 8;
      for (int a = 0; a < n_arcs; ++a) {
        const double arc = L * a / n_arcs;
        const Vec2 p0 = polyline_point(route, arc);
        const Vec2 p1 = polyline_point(route, std::min(arc + 0.5, L));
        const Vec2 tan = (p1 - p0).normalized();
        const double psi = std::atan2(tan.y(), tan.x());
        for (double v : kSpeeds) {
          for (double lat : kLateral) {
            for (double dpsi : kHeading) {
              Pose pose;
              pose.x = p0.x() - lat * tan.y();
              pose.y = p0.y() + lat * tan.x();
              pose.theta = wrap_angle(psi + dpsi);
              all.push_back(pure_pursuit(pose, route, idm.lookahead, v, scn.dt));
            }
          }
        }
      }
    }
  }
  for (const auto& scn : scenarios) {
    ExpertPolicy expert(idm, nullptr);
    expert.begin_episode(scn);
    WorldState st = initial_state(scn);
    for (int t = 0; t < scn.horizon; ++t) {
      const std::vector<MotionDelta> deltas = expert.raw_deltas(scn, st);
      expert.advance_speeds(scn, st);
      WorldState next = st;
      next.t = st.t + 1;
      for (std::size_t i = 0; i < deltas.size(); ++i) {
        next.poses[i] = apply_delta(st.poses[i], deltas[i]);
        next.speeds[i] = std::hypot(deltas[i].dx, deltas[i].dy) / scn.dt;
      }
      all.insert(all.end(), deltas.begin(), deltas.end());
      st = next;
    }
  }
  return all;
}

DemoSet gen_demos(const std::vector<Scenario>& scenarios, const IdmParams& idm,
                  const TokenVocab& vocab) {
  DemoSet out;
  out.vocab_hash = fnv1a(vocab_to_json(vocab));
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    ExpertPolicy expert(idm, &vocab);
    const Rollout r = rollout(expert, scenarios[s], vocab, /*seed=*/0);
    DemoEpisode ep;
    ep.scenario_hash = r.scenario_hash;
    ep.scenario_index = s;
    ep.tokens = r.tokens;
    out.episodes.push_back(std::move(ep));
  }
  return out;
}

std::string demoset_to_jsonl(const DemoSet& d) {
  using nlohmann::json;
  std::string out;
  json head;
  head["schema"] = 1;
  head["vocab"] = d.vocab_hash;
  out += head.dump();
  out += "\n";
  for (const auto& ep : d.episodes) {
    json rec;
    rec["scenario"] = ep.scenario_hash;
    rec["index"] = ep.scenario_index;
    rec["tokens"] = ep.tokens;
    out += rec.dump();
    out += "\n";
  }
  return out;
}

DemoSet demoset_from_jsonl(const std::string& text) {
  using nlohmann::json;
  DemoSet d;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (first) {
      if (j.at("schema").get<int>() != 1)
        throw std::runtime_error("demo file: unsupported schema version");
      d.vocab_hash = j.at("vocab").get<std::uint64_t>();
      first = false;
      continue;
    }
    DemoEpisode ep;
    ep.scenario_hash = j.at("scenario").get<std::uint64_t>();
    ep.scenario_index = j.at("index").get<std::size_t>();
    ep.tokens = j.at("tokens").get<std::vector<std::vector<int>>>();
    d.episodes.push_back(std::move(ep));
  }
  return d;
}

}  // namespace dgail
