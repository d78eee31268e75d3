#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgail/types.hpp"

namespace dgail {

using Polyline = std::vector<Vec2>;

/// One 2 m road segment used as an attention key by the map encoder.
struct MapToken {
  Vec2 midpoint;
  Vec2 direction;  // unit norm
  double length = 0.0;
  int lane_flag = 0;  // 1 = centerline, 0 = road edge
};

struct MapGraph {
  std::vector<Polyline> centerlines;
  std::vector<Polyline> road_edges;
  double lane_half_width = 2.0;
  std::vector<MapToken> map_tokens;
};

struct AgentInit {
  int id = 0;
  Pose pose;
  double speed = 0.0;   // m/s
  double length = 4.5;  // footprint, m
  double width = 2.0;
  int route = 0;  // centerline index
};

struct Scenario {
  MapGraph map;
  std::vector<AgentInit> agents;
  int horizon = 16;
  double dt = 0.5;
};

/// Shared vocabulary of body-frame SE(2) motion deltas; entry 0 is the exact
/// zero delta reserved for the stationary token.
struct TokenVocab {
  std::vector<MotionDelta> deltas;
  int seed = 0;
  int k() const { return static_cast<int>(deltas.size()); }
};

enum class Template { kStraight, kCurve, kCrossing };

Template template_from_string(const std::string& name);
std::string template_to_string(Template t);

/// Builds map tokens (2 m segments) from the centerlines and road edges.
std::vector<MapToken> build_map_tokens(const MapGraph& map);

/// Generates a deterministic synthetic scenario. Agents are placed along their
/// routes with >= 8 m longitudinal gaps. Throws std::runtime_error if the
/// template cannot fit n_agents.
Scenario gen_scenario(Template tmpl, int n_agents, std::uint64_t seed);

/// K-means (50 Lloyd iterations, seeded init) over observed expert deltas.
/// The centroid nearest the zero delta is snapped to exact zero and moved to
/// slot 0. Throws std::invalid_argument for K < 2 or too few samples.
TokenVocab build_vocab(const std::vector<MotionDelta>& expert_deltas, int k,
                       std::uint64_t seed);

/// Squared vocabulary distance: positional terms in m^2 plus the wrapped
/// angular difference scaled by 4 m^2/rad^2.
double token_distance_sq(const MotionDelta& a, const MotionDelta& b);

/// Nearest vocabulary entry; ties broken by lowest id.
int tokenize(const MotionDelta& delta, const TokenVocab& vocab);

// -- serialization (schema version 1) ----------------------------------------

std::string scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const std::string& text);
std::string vocab_to_json(const TokenVocab& v);
TokenVocab vocab_from_json(const std::string& text);

/// Content hash of the canonical serialization.
std::uint64_t scenario_hash(const Scenario& s);

// -- polyline helpers (shared with env/expert) --------------------------------

double polyline_length(const Polyline& p);
/// Point at the given arc length, clamped to the ends.
Vec2 polyline_point(const Polyline& p, double arc);
/// Tangent direction at the given arc length.
Vec2 polyline_dir(const Polyline& p, double arc);
/// Arc length of the closest point on the polyline to q.
double polyline_project(const Polyline& p, const Vec2& q);
/// Distance from q to the nearest point on the polyline.
double polyline_distance(const Polyline& p, const Vec2& q);

}  // namespace dgail
