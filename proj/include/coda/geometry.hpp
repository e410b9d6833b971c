#pragma once

// Oriented 3D boxes, exact 3D IoU and pinhole projection.
//
// Frame convention: everything lives in the camera frame, x to the right,
// y pointing down (gravity), z forward along the optical axis. Boxes rotate
// only about the vertical y axis, so the bird's-eye view (BEV) is the (x, z)
// plane and the vertical interval is along y.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "coda/errors.hpp"

namespace coda {

using Vec3 = std::array<double, 3>;
using Vec2 = std::array<double, 2>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kDepthEpsilon = 1e-6;

/// Wraps an angle into [-pi, pi).
inline double normalize_yaw(double yaw) {
  double w = std::fmod(yaw + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  w -= kPi;
  // fmod can land exactly on +pi after rounding
  if (w >= kPi) w -= 2.0 * kPi;
  return w;
}

/// Smallest absolute angular distance, in [0, pi].
inline double wrapped_angle_distance(double a, double b) {
  return std::abs(normalize_yaw(a - b));
}

/// Yaw-oriented cuboid. `size` is (width along local x, depth along local z,
/// height along y); yaw rotates local (x, z) counter-clockwise in the BEV plane.
struct Box3D {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 size{1.0, 1.0, 1.0};
  double yaw = 0.0;

  Box3D() = default;
  Box3D(Vec3 c, Vec3 s, double y) : center(c), size(s), yaw(normalize_yaw(y)) {}

  bool valid() const {
    for (int i = 0; i < 3; ++i) {
      if (!std::isfinite(center[i]) || !std::isfinite(size[i]) || !(size[i] > 0.0))
        return false;
    }
    return std::isfinite(yaw) && yaw >= -kPi && yaw < kPi;
  }

  double volume() const { return size[0] * size[1] * size[2]; }

  friend bool operator==(const Box3D&, const Box3D&) = default;
};

struct Box2D {
  Vec2 min{0.0, 0.0};
  Vec2 max{0.0, 0.0};

  double width() const { return std::max(0.0, max[0] - min[0]); }
  double height() const { return std::max(0.0, max[1] - min[1]); }
  double area() const { return width() * height(); }

  friend bool operator==(const Box2D&, const Box2D&) = default;
};

struct CameraIntrinsics {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx >= 0.0 &&
           cx <= width && cy >= 0.0 && cy <= height;
  }

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

/// Maps a point in the box frame (local x, y, z) to the camera frame.
inline Vec3 box_to_world(const Box3D& box, const Vec3& local) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  return {box.center[0] + c * local[0] - s * local[2], box.center[1] + local[1],
          box.center[2] + s * local[0] + c * local[2]};
}

/// Inverse of box_to_world.
inline Vec3 world_to_box(const Box3D& box, const Vec3& p) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double dx = p[0] - box.center[0];
  const double dz = p[2] - box.center[2];
  return {c * dx + s * dz, p[1] - box.center[1], -s * dx + c * dz};
}

/// Corners in canonical order: corner i has local offsets
/// (bit0 ? +w/2 : -w/2, bit2 ? +h/2 : -h/2, bit1 ? +d/2 : -d/2),
/// i.e. bit0 selects local x, bit1 local z, bit2 the vertical side.
inline std::array<Vec3, 8> corners(const Box3D& box) {
  std::array<Vec3, 8> out{};
  const double hw = 0.5 * box.size[0];
  const double hd = 0.5 * box.size[1];
  const double hh = 0.5 * box.size[2];
  for (int i = 0; i < 8; ++i) {
    const Vec3 local{(i & 1) ? hw : -hw, (i & 4) ? hh : -hh, (i & 2) ? hd : -hd};
    out[i] = box_to_world(box, local);
  }
  return out;
}

/// BEV footprint as a counter-clockwise quad in (x, z).
inline std::array<Vec2, 4> bev_footprint(const Box3D& box) {
  const double hw = 0.5 * box.size[0];
  const double hd = 0.5 * box.size[1];
  const std::array<Vec2, 4> local{{{-hw, -hd}, {hw, -hd}, {hw, hd}, {-hw, hd}}};
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  std::array<Vec2, 4> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {box.center[0] + c * local[i][0] - s * local[i][1],
              box.center[2] + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

namespace detail {

inline double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

inline double polygon_area(std::span<const Vec2> poly) {
  double acc = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    acc += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * acc;
}

/// Sutherland-Hodgman: clips `subject` by the convex CCW polygon `clip`.
inline std::vector<Vec2> clip_convex(std::vector<Vec2> subject, std::span<const Vec2> clip) {
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !subject.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % m];
    std::vector<Vec2> next;
    next.reserve(subject.size() + 2);
    const std::size_t n = subject.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& p = subject[i];
      const Vec2& q = subject[(i + 1) % n];
      const double sp = cross2(a, b, p);
      const double sq = cross2(a, b, q);
      const bool p_in = sp >= 0.0;
      const bool q_in = sq >= 0.0;
      if (p_in) next.push_back(p);
      if (p_in != q_in) {
        const double t = sp / (sp - sq);
        next.push_back({p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])});
      }
    }
    subject = std::move(next);
  }
  return subject;
}

}  // namespace detail

/// Exact BEV intersection area of two oriented footprints.
inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto pa = bev_footprint(a);
  const auto pb = bev_footprint(b);
  const auto inter = detail::clip_convex(std::vector<Vec2>(pa.begin(), pa.end()), pb);
  if (inter.size() < 3) return 0.0;
  return std::max(0.0, detail::polygon_area(inter));
}

enum class IouMode {
  kOriented,
  /// Ignores yaw on both boxes.
  kAxisAligned,
};

/// 3D IoU of two yaw-oriented cuboids: BEV polygon clipping times vertical
/// overlap. Symmetric and in [0, 1].
inline double iou3d(const Box3D& a, const Box3D& b, IouMode mode = IouMode::kOriented) {
  const double y_lo = std::max(a.center[1] - 0.5 * a.size[2], b.center[1] - 0.5 * b.size[2]);
  const double y_hi = std::min(a.center[1] + 0.5 * a.size[2], b.center[1] + 0.5 * b.size[2]);
  const double dy = y_hi - y_lo;
  if (dy <= 0.0) return 0.0;

  double area = 0.0;
  if (mode == IouMode::kAxisAligned) {
    const double x0 = std::max(a.center[0] - 0.5 * a.size[0], b.center[0] - 0.5 * b.size[0]);
    const double x1 = std::min(a.center[0] + 0.5 * a.size[0], b.center[0] + 0.5 * b.size[0]);
    const double z0 = std::max(a.center[2] - 0.5 * a.size[1], b.center[2] - 0.5 * b.size[1]);
    const double z1 = std::min(a.center[2] + 0.5 * a.size[1], b.center[2] + 0.5 * b.size[1]);
    area = std::max(0.0, x1 - x0) * std::max(0.0, z1 - z0);
  } else {
    // symmetric evaluation order keeps iou3d(a, b) == iou3d(b, a) bitwise
    const double ab = bev_intersection_area(a, b);
    const double ba = bev_intersection_area(b, a);
    area = 0.5 * (ab + ba);
  }
  const double inter = area * dy;
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double iou2d(const Box2D& a, const Box2D& b) {
  const double w = std::min(a.max[0], b.max[0]) - std::max(a.min[0], b.min[0]);
  const double h = std::min(a.max[1], b.max[1]) - std::max(a.min[1], b.min[1]);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  const double inter = w * h;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Pinhole projection of a camera-frame point; requires depth > kDepthEpsilon.
inline Vec2 project_point(const Vec3& p, const CameraIntrinsics& cam) {
  if (!(p[2] > kDepthEpsilon)) throw BehindCamera("point depth <= epsilon");
  return {cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy};
}

/// Axis-aligned hull of the 8 projected corners, clipped to the image.
/// Throws BehindCamera if any corner has depth <= kDepthEpsilon.
inline Box2D project_box(const Box3D& box, const CameraIntrinsics& cam) {
  Box2D out{{INFINITY, INFINITY}, {-INFINITY, -INFINITY}};
  for (const Vec3& c : corners(box)) {
    if (!(c[2] > kDepthEpsilon)) throw BehindCamera("box corner behind camera");
    const Vec2 uv = project_point(c, cam);
    out.min[0] = std::min(out.min[0], uv[0]);
    out.min[1] = std::min(out.min[1], uv[1]);
    out.max[0] = std::max(out.max[0], uv[0]);
    out.max[1] = std::max(out.max[1], uv[1]);
  }
  const double w = cam.width;
  const double h = cam.height;
  out.min[0] = std::clamp(out.min[0], 0.0, w);
  out.max[0] = std::clamp(out.max[0], 0.0, w);
  out.min[1] = std::clamp(out.min[1], 0.0, h);
  out.max[1] = std::clamp(out.max[1], 0.0, h);
  return out;
}

}  // namespace coda
