#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace dgail {

using Vec2 = Eigen::Vector2d;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kPi = 3.14159265358979323846;

/// Normalizes an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

/// SE(2) motion delta expressed in the body frame.
struct MotionDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;
};

/// Applies a body-frame delta to a world pose.
inline Pose apply_delta(const Pose& p, const MotionDelta& d) {
  const double c = std::cos(p.theta), s = std::sin(p.theta);
  Pose out;
  out.x = p.x + c * d.dx - s * d.dy;
  out.y = p.y + s * d.dx + c * d.dy;
  out.theta = wrap_angle(p.theta + d.dtheta);
  return out;
}

/// Expresses world point `q` in the frame of pose `p`.
inline Vec2 to_body_frame(const Pose& p, const Vec2& q) {
  const double c = std::cos(p.theta), s = std::sin(p.theta);
  const double dx = q.x() - p.x, dy = q.y() - p.y;
  return Vec2(c * dx + s * dy, -s * dx + c * dy);
}

/// Relative pose of `b` seen from `a` (position in a's frame, wrapped heading difference).
inline Pose relative_pose(const Pose& a, const Pose& b) {
  Vec2 r = to_body_frame(a, Vec2(b.x, b.y));
  return Pose{r.x(), r.y(), wrap_angle(b.theta - a.theta)};
}

// -- seeding helpers ---------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

/// FNV-1a over a byte string, used for content hashes of serialized artifacts.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace dgail
