#include "dgail/world.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dgail {

using nlohmann::json;

Template template_from_string(const std::string& name) {
  if (name == "straight") return Template::kStraight;
  if (name == "curve") return Template::kCurve;
  if (name == "crossing") return Template::kCrossing;
  throw std::invalid_argument("unknown scenario template: " + name);
}

std::string template_to_string(Template t) {
  switch (t) {
    case Template::kStraight: return "straight";
    case Template::kCurve: return "curve";
    case Template::kCrossing: return "crossing";
  }
  return "?";
}

// -- polyline helpers ---------------------------------------------------------

double polyline_length(const Polyline& p) {
  double L = 0.0;
  for (std::size_t i = 1; i < p.size(); ++i) L += (p[i] - p[i - 1]).norm();
  return L;
}

Vec2 polyline_point(const Polyline& p, double arc) {
  if (p.empty()) return Vec2::Zero();
  if (arc <= 0.0) return p.front();
  for (std::size_t i = 1; i < p.size(); ++i) {
    const double seg = (p[i] - p[i - 1]).norm();
    if (arc <= seg) {
      const double u = seg > 0.0 ? arc / seg : 0.0;
      return p[i - 1] + u * (p[i] - p[i - 1]);
    }
    arc -= seg;
  }
  return p.back();
}

Vec2 polyline_dir(const Polyline& p, double arc) {
  if (p.size() < 2) return Vec2(1.0, 0.0);
  double a = std::max(arc, 0.0);
  for (std::size_t i = 1; i < p.size(); ++i) {
    const double seg = (p[i] - p[i - 1]).norm();
    if (a <= seg || i + 1 == p.size()) {
      Vec2 d = p[i] - p[i - 1];
      const double n = d.norm();
      return n > 0.0 ? Vec2(d / n) : Vec2(1.0, 0.0);
    }
    a -= seg;
  }
  return Vec2(1.0, 0.0);
}

static double point_segment_distance(const Vec2& q, const Vec2& a, const Vec2& b,
                                     double* t_out = nullptr) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp((q - a).dot(ab) / len2, 0.0, 1.0);
  if (t_out) *t_out = t;
  return (q - (a + t * ab)).norm();
}

double polyline_project(const Polyline& p, const Vec2& q) {
  double best = std::numeric_limits<double>::infinity();
  double best_arc = 0.0, arc = 0.0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    double t = 0.0;
    const double d = point_segment_distance(q, p[i - 1], p[i], &t);
    const double seg = (p[i] - p[i - 1]).norm();
    if (d < best) {
      best = d;
      best_arc = arc + t * seg;
    }
    arc += seg;
  }
  return best_arc;
}

double polyline_distance(const Polyline& p, const Vec2& q) {
  if (p.size() == 1) return (q - p[0]).norm();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < p.size(); ++i)
    best = std::min(best, point_segment_distance(q, p[i - 1], p[i]));
  return best;
}

// -- map construction ---------------------------------------------------------

static Polyline sample_arc(const Vec2& center, double radius, double phi0,
                           double sweep, double spacing) {
  Polyline out;
  const double len = std::abs(sweep) * radius;
  const int n = std::max(2, static_cast<int>(std::ceil(len / spacing)) + 1);
  for (int i = 0; i < n; ++i) {
    const double phi = phi0 + sweep * static_cast<double>(i) / (n - 1);
    out.push_back(center + radius * Vec2(std::sin(phi), -std::cos(phi)));
  }
  return out;
}

static Polyline sample_line(const Vec2& a, const Vec2& b, double spacing) {
  Polyline out;
  const double len = (b - a).norm();
  const int n = std::max(2, static_cast<int>(std::ceil(len / spacing)) + 1);
  for (int i = 0; i < n; ++i)
    out.push_back(a + (b - a) * static_cast<double>(i) / (n - 1));
  return out;
}

std::vector<MapToken> build_map_tokens(const MapGraph& map) {
  std::vector<MapToken> tokens;
  auto emit = [&tokens](const Polyline& p, int lane_flag) {
    const double L = polyline_length(p);
    for (double arc = 0.0; arc < L - 1e-9; arc += 2.0) {
      const double end = std::min(arc + 2.0, L);
      const Vec2 a = polyline_point(p, arc), b = polyline_point(p, end);
      const double len = (b - a).norm();
      if (len < 1e-6) continue;
      tokens.push_back(MapToken{(a + b) / 2.0, (b - a) / len, len, lane_flag});
    }
  };
  for (const auto& c : map.centerlines) emit(c, 1);
  for (const auto& e : map.road_edges) emit(e, 0);
  return tokens;
}

static MapGraph make_map(Template tmpl) {
  MapGraph map;
  map.lane_half_width = 2.0;
  const double w = map.lane_half_width;
  switch (tmpl) {
    case Template::kStraight:
      map.centerlines.push_back(sample_line({0, 0}, {160, 0}, 2.0));
      map.road_edges.push_back(sample_line({0, w}, {160, w}, 2.0));
      map.road_edges.push_back(sample_line({0, -w}, {160, -w}, 2.0));
      break;
    case Template::kCurve: {
      // Left turn of radius 30 m spanning 110 m of arc length.
      const Vec2 c(0, 30);
      const double sweep = 110.0 / 30.0;
      map.centerlines.push_back(sample_arc(c, 30.0, 0.0, sweep, 2.0));
      map.road_edges.push_back(sample_arc(c, 30.0 - w, 0.0, sweep, 2.0));
      map.road_edges.push_back(sample_arc(c, 30.0 + w, 0.0, sweep, 2.0));
      break;
    }
    case Template::kCrossing:
      map.centerlines.push_back(sample_line({-80, 0}, {80, 0}, 2.0));
      map.centerlines.push_back(sample_line({0, -80}, {0, 80}, 2.0));
      for (int r = 0; r < 2; ++r) {
        const Vec2 n = r == 0 ? Vec2(0, 1) : Vec2(-1, 0);
        const Vec2 a = r == 0 ? Vec2(-80, 0) : Vec2(0, -80);
        const Vec2 b = r == 0 ? Vec2(80, 0) : Vec2(0, 80);
        map.road_edges.push_back(sample_line(a + w * n, b + w * n, 2.0));
        map.road_edges.push_back(sample_line(a - w * n, b - w * n, 2.0));
      }
      break;
  }
  map.map_tokens = build_map_tokens(map);
  return map;
}

Scenario gen_scenario(Template tmpl, int n_agents, std::uint64_t seed) {
  if (n_agents < 1) throw std::invalid_argument("gen_scenario: n_agents must be >= 1");
  Scenario s;
  s.map = make_map(tmpl);
  s.horizon = 16;
  s.dt = 0.5;

  const int n_routes = static_cast<int>(s.map.centerlines.size());
  // Keep placements clear of the route end (straight/curve) and of the
  // crossing conflict point at arc 80.
  std::vector<double> usable;
  for (int r = 0; r < n_routes; ++r) {
    const double L = polyline_length(s.map.centerlines[r]);
    usable.push_back(tmpl == Template::kCrossing ? 64.0 : L - 40.0);
  }

  std::mt19937_64 rng(derive_seed(seed, 0xA11CE5));
  std::uniform_real_distribution<double> jitter(0.0, 4.0);
  std::uniform_real_distribution<double> speed_dist(5.0, 9.0);

  std::vector<double> cursor(n_routes, 4.0);
  for (int i = 0; i < n_agents; ++i) {
    const int r = i % n_routes;
    const double arc = cursor[r] + jitter(rng);
    if (arc > usable[r])
      throw std::runtime_error("gen_scenario: template '" + template_to_string(tmpl) +
                               "' cannot fit " + std::to_string(n_agents) +
                               " agents at 8 m gaps");
    AgentInit a;
    a.id = i;
    const Vec2 p = polyline_point(s.map.centerlines[r], arc);
    const Vec2 d = polyline_dir(s.map.centerlines[r], arc);
    a.pose = Pose{p.x(), p.y(), std::atan2(d.y(), d.x())};
    a.speed = speed_dist(rng);
    a.route = r;
    s.agents.push_back(a);
    cursor[r] = arc + 8.0;
  }
  return s;
}

// -- vocabulary ---------------------------------------------------------------

double token_distance_sq(const MotionDelta& a, const MotionDelta& b) {
  const double dx = a.dx - b.dx, dy = a.dy - b.dy;
  const double dth = wrap_angle(a.dtheta - b.dtheta);
  return dx * dx + dy * dy + 4.0 * dth * dth;
}

TokenVocab build_vocab(const std::vector<MotionDelta>& expert_deltas, int k,
                       std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("build_vocab: K must be >= 2");
  if (static_cast<int>(expert_deltas.size()) < k)
    throw std::invalid_argument("build_vocab: need at least K samples");

  // Seeded init from distinct samples.
  std::mt19937_64 rng(derive_seed(seed, 0xB0CAB));
  std::vector<std::size_t> idx(expert_deltas.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<MotionDelta> centroids;
  for (std::size_t i = 0; i < idx.size() && static_cast<int>(centroids.size()) < k; ++i) {
    const MotionDelta& cand = expert_deltas[idx[i]];
    bool dup = false;
    for (const auto& c : centroids)
      if (token_distance_sq(c, cand) < 1e-18) { dup = true; break; }
    if (!dup) centroids.push_back(cand);
  }
  if (static_cast<int>(centroids.size()) < k)
    throw std::invalid_argument("build_vocab: fewer than K distinct samples");

  std::vector<int> assign(expert_deltas.size(), 0);
  for (int it = 0; it < 50; ++it) {
    for (std::size_t i = 0; i < expert_deltas.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = token_distance_sq(expert_deltas[i], centroids[c]);
        if (d < best) { best = d; assign[i] = c; }
      }
    }
    std::vector<Eigen::Vector3d> sum(k, Eigen::Vector3d::Zero());
    std::vector<int> count(k, 0);
    for (std::size_t i = 0; i < expert_deltas.size(); ++i) {
      sum[assign[i]] += Eigen::Vector3d(expert_deltas[i].dx, expert_deltas[i].dy,
                                        expert_deltas[i].dtheta);
      count[assign[i]] += 1;
    }
    for (int c = 0; c < k; ++c)
      if (count[c] > 0)
        centroids[c] = MotionDelta{sum[c].x() / count[c], sum[c].y() / count[c],
                                   sum[c].z() / count[c]};
  }

  // Snap the zero-nearest centroid to exact zero and reserve slot 0 for it.
  const MotionDelta zero{};
  int z = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int c = 0; c < k; ++c) {
    const double d = token_distance_sq(centroids[c], zero);
    if (d < best) { best = d; z = c; }
  }
  centroids[z] = zero;
  std::swap(centroids[0], centroids[z]);

  // Pairwise distinctness guard (degenerate clusterings only).
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j)
      if (token_distance_sq(centroids[i], centroids[j]) < 1e-18)
        centroids[j].dx += 1e-9 * (j + 1);

  TokenVocab v;
  v.deltas = std::move(centroids);
  v.seed = static_cast<int>(seed);
  return v;
}

int tokenize(const MotionDelta& delta, const TokenVocab& vocab) {
  int best_id = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int c = 0; c < vocab.k(); ++c) {
    const double d = token_distance_sq(delta, vocab.deltas[c]);
    if (d < best) { best = d; best_id = c; }
  }
  return best_id;
}

// -- serialization ------------------------------------------------------------

static json polyline_to_json(const Polyline& p) {
  json out = json::array();
  for (const auto& q : p) out.push_back({q.x(), q.y()});
  return out;
}

static Polyline polyline_from_json(const json& j) {
  Polyline p;
  for (const auto& q : j) p.push_back(Vec2(q.at(0).get<double>(), q.at(1).get<double>()));
  return p;
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["schema"] = 1;
  json m;
  m["centerlines"] = json::array();
  for (const auto& c : s.map.centerlines) m["centerlines"].push_back(polyline_to_json(c));
  m["road_edges"] = json::array();
  for (const auto& e : s.map.road_edges) m["road_edges"].push_back(polyline_to_json(e));
  m["lane_half_width"] = s.map.lane_half_width;
  j["map"] = m;
  j["agents"] = json::array();
  for (const auto& a : s.agents) {
    j["agents"].push_back({{"id", a.id},
                           {"pose", {a.pose.x, a.pose.y, a.pose.theta}},
                           {"speed", a.speed},
                           {"length", a.length},
                           {"width", a.width},
                           {"route", a.route}});
  }
  j["horizon"] = s.horizon;
  j["dt"] = s.dt;
  return j.dump();
}

Scenario scenario_from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.at("schema").get<int>() != 1)
    throw std::runtime_error("scenario file: unsupported schema version");
  Scenario s;
  for (const auto& c : j.at("map").at("centerlines")) s.map.centerlines.push_back(polyline_from_json(c));
  for (const auto& e : j.at("map").at("road_edges")) s.map.road_edges.push_back(polyline_from_json(e));
  s.map.lane_half_width = j.at("map").at("lane_half_width").get<double>();
  s.map.map_tokens = build_map_tokens(s.map);
  for (const auto& a : j.at("agents")) {
    AgentInit ai;
    ai.id = a.at("id").get<int>();
    ai.pose = Pose{a.at("pose").at(0).get<double>(), a.at("pose").at(1).get<double>(),
                   a.at("pose").at(2).get<double>()};
    ai.speed = a.at("speed").get<double>();
    ai.length = a.at("length").get<double>();
    ai.width = a.at("width").get<double>();
    ai.route = a.at("route").get<int>();
    s.agents.push_back(ai);
  }
  s.horizon = j.at("horizon").get<int>();
  s.dt = j.at("dt").get<double>();
  return s;
}

std::string vocab_to_json(const TokenVocab& v) {
  json j;
  j["schema"] = 1;
  j["k"] = v.k();
  j["seed"] = v.seed;
  j["deltas"] = json::array();
  for (const auto& d : v.deltas) j["deltas"].push_back({d.dx, d.dy, d.dtheta});
  return j.dump();
}

TokenVocab vocab_from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.at("schema").get<int>() != 1)
    throw std::runtime_error("vocab file: unsupported schema version");
  TokenVocab v;
  v.seed = j.at("seed").get<int>();
  for (const auto& d : j.at("deltas"))
    v.deltas.push_back(MotionDelta{d.at(0).get<double>(), d.at(1).get<double>(),
                                   d.at(2).get<double>()});
  if (v.k() != j.at("k").get<int>())
    throw std::runtime_error("vocab file: k does not match delta count");
  return v;
}

std::uint64_t scenario_hash(const Scenario& s) { return fnv1a(scenario_to_json(s)); }

}  // namespace dgail
