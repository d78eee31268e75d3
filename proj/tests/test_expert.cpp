#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "dgail/expert.hpp"

using namespace dgail;

namespace {

std::vector<Scenario> bundled_scenarios() {
  return {gen_scenario(Template::kStraight, 3, 0), gen_scenario(Template::kCurve, 3, 1),
          gen_scenario(Template::kCrossing, 4, 2)};
}

TokenVocab bundled_vocab(const std::vector<Scenario>& scn) {
  IdmParams idm;
  return build_vocab(collect_expert_deltas(scn, idm), 64, 0);
}

}  // namespace

TEST_CASE("IDM: zero acceleration at desired speed on a free road") {
  IdmParams p;
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(idm_accel(inf, p.v0, 0.0, p) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("IDM: full acceleration from standstill on a free road") {
  IdmParams p;
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(idm_accel(inf, 0.0, 0.0, p) == doctest::Approx(p.a_max).epsilon(1e-12));
}

TEST_CASE("IDM: car-following case matches a direct formula evaluation") {
  IdmParams p;
  p.v0 = 12.0;
  // v = 10, leader at the same speed, 30 m gap.
  const double v = 10.0, v_lead = 10.0, gap = 30.0;
  const double s_star =
      p.s0 + v * p.T + v * (v - v_lead) / (2.0 * std::sqrt(p.a_max * p.b_comf));
  const double want =
      p.a_max * (1.0 - std::pow(v / p.v0, p.delta) - (s_star / gap) * (s_star / gap));
  CHECK(idm_accel(gap, v, v_lead, p) == doctest::Approx(want).epsilon(1e-9));
  CHECK(idm_accel(gap, v, v_lead, p) == doctest::Approx(0.39327160493827).epsilon(1e-9));
}

TEST_CASE("IDM: non-positive gap returns the emergency braking value, clamped") {
  IdmParams p;
  CHECK(idm_accel(0.0, 5.0, 5.0, p) == doctest::Approx(-2.0 * p.b_comf));
  CHECK(idm_accel(-1.0, 5.0, 5.0, p) == doctest::Approx(-2.0 * p.b_comf));
  // Tiny gap: formula would demand enormous braking; clamp applies.
  CHECK(idm_accel(0.01, 10.0, 0.0, p) >= -2.0 * p.b_comf - 1e-12);
}

TEST_CASE("pure pursuit: aligned on a straight route gives zero heading change") {
  Polyline route = {{0, 0}, {100, 0}};
  MotionDelta d = pure_pursuit(Pose{10, 0, 0}, route, 5.0, 8.0, 0.5);
  CHECK(d.dtheta == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d.dx == doctest::Approx(8.0 * 0.5).epsilon(1e-9));
  CHECK(d.dy == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("pure pursuit: offset 1 m left of the route steers right") {
  Polyline route = {{0, 0}, {100, 0}};
  MotionDelta d = pure_pursuit(Pose{10, 1.0, 0}, route, 5.0, 8.0, 0.5);
  CHECK(d.dtheta < 0.0);
}

TEST_CASE("pure pursuit: steady state on a radius-30 circle matches v*dt/R curvature") {
  const double R = 30.0;
  Polyline route;
  for (int i = 0; i <= 200; ++i) {
    const double a = i * (1.5 * kPi) / 200.0;
    route.push_back(Vec2(R * std::sin(a), R * (1.0 - std::cos(a))));
  }
  const double v = 6.0, dt = 0.5;
  Pose pose{0, 0, 0};
  MotionDelta d{};
  for (int step = 0; step < 20; ++step) {
    d = pure_pursuit(pose, route, 5.0, v, dt);
    pose = apply_delta(pose, d);
  }
  const double want = v * dt / R;
  CHECK(std::abs(d.dtheta - want) < 0.1 * want);
}

TEST_CASE("expert demos reach the desired speed within 5% by step 12") {
  std::vector<Scenario> scn = bundled_scenarios();
  TokenVocab v = bundled_vocab(scn);
  IdmParams idm;
  // Single free agent on the straight template.
  Scenario solo = gen_scenario(Template::kStraight, 1, 5);
  ExpertPolicy pol(idm, &v);
  Rollout r = rollout(pol, solo, v, 0);
  REQUIRE(r.states.size() >= 13);
  const double speed = r.states[12].speeds[0];
  CHECK(std::abs(speed - idm.v0) <= 0.05 * idm.v0);
}

TEST_CASE("expert demos on every template have zero collisions and zero offroad") {
  std::vector<Scenario> scn = bundled_scenarios();
  TokenVocab v = bundled_vocab(scn);
  IdmParams idm;
  for (const auto& s : scn) {
    ExpertPolicy pol(idm, &v);
    Rollout r = rollout(pol, s, v, 0);
    std::vector<Footprint> fps;
    for (const auto& a : s.agents) fps.push_back({a.length, a.width});
    for (const auto& st : r.states) {
      CHECK(detect_collisions(st, fps).empty());
      for (const auto& p : st.poses) CHECK(!offroad(p, s.map));
    }
  }
}

TEST_CASE("demo generation is deterministic (byte-identical serialization)") {
  std::vector<Scenario> scn = bundled_scenarios();
  TokenVocab v = bundled_vocab(scn);
  IdmParams idm;
  const std::string a = demoset_to_jsonl(gen_demos(scn, idm, v));
  const std::string b = demoset_to_jsonl(gen_demos(scn, idm, v));
  CHECK(a == b);
  DemoSet back = demoset_from_jsonl(a);
  CHECK(demoset_to_jsonl(back) == a);
  CHECK(back.vocab_hash == fnv1a(vocab_to_json(v)));
}

TEST_CASE("mean tokenization error of expert deltas stays under 0.3 m") {
  std::vector<Scenario> scn = bundled_scenarios();
  TokenVocab v = bundled_vocab(scn);
  IdmParams idm;
  std::vector<MotionDelta> deltas = collect_expert_deltas(scn, idm);
  double err = 0.0;
  for (const auto& d : deltas) {
    const MotionDelta& q = v.deltas[tokenize(d, v)];
    err += std::hypot(d.dx - q.dx, d.dy - q.dy);
  }
  err /= static_cast<double>(deltas.size());
  CHECK(err < 0.3);
}

TEST_CASE("collider closes in on a stationary target; self-target is stationary") {
  std::vector<Scenario> scn = bundled_scenarios();
  TokenVocab v = bundled_vocab(scn);
  IdmParams idm;
  Scenario two = gen_scenario(Template::kStraight, 2, 9);
  ExpertPolicy pol(idm, &v);
  pol.add_collider(0, 0);  // agent 0 freezes (self-target emits the zero token)
  pol.add_collider(1, 0);  // agent 1 chases agent 0
  Rollout r = rollout(pol, two, v, 0);
  for (const auto& row : r.tokens) CHECK(row[0] == 0);
  std::vector<Footprint> fps = {{4.5, 2.0}, {4.5, 2.0}};
  auto dist_at = [&](int t) {
    return std::hypot(r.states[t].poses[1].x - r.states[t].poses[0].x,
                      r.states[t].poses[1].y - r.states[t].poses[0].y);
  };
  bool collided = false;
  for (int t = 0; t + 1 < static_cast<int>(r.states.size()) && !collided; ++t) {
    collided = !detect_collisions(r.states[t], fps).empty();
    if (!collided) CHECK(dist_at(t + 1) < dist_at(t) + 1e-9);
  }
}

TEST_CASE("one collider among experts causes collisions in most scenes") {
  IdmParams idm;
  int hits = 0;
  for (int seed = 0; seed < 10; ++seed) {
    std::vector<Scenario> scn = {gen_scenario(Template::kStraight, 4, 100 + seed)};
    TokenVocab v = build_vocab(collect_expert_deltas(bundled_scenarios(), idm), 64, 0);
    ExpertPolicy pol(idm, &v);
    pol.add_collider(0, 1);
    Rollout r = rollout(pol, scn[0], v, 0);
    std::vector<Footprint> fps;
    for (const auto& a : scn[0].agents) fps.push_back({a.length, a.width});
    for (const auto& st : r.states)
      if (!detect_collisions(st, fps).empty()) {
        ++hits;
        break;
      }
  }
  CHECK(hits >= 6);
}
