#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <utility>

#include "boxalign/dual.hpp"
#include "boxalign/errors.hpp"

namespace boxalign {

/// Minimum camera-frame depth for projection, in meters. Anything at or
/// below this is treated as behind the camera and raised as an error rather
/// than produce unusable pixel values.
inline constexpr double kBehindCameraZEps = 1e-6;

namespace detail {

inline double scalar_value(double v) { return v; }

template <std::size_t N>
double scalar_value(const Dual<N>& v) {
  return v.value;
}

template <class T>
bool scalar_finite(const T& v) {
  return std::isfinite(scalar_value(v));
}

}  // namespace detail

template <class T>
struct Vec3 {
  T x{}, y{}, z{};
};

using Vec3d = Vec3<double>;

template <class T, class U>
auto dot(const Vec3<T>& a, const Vec3<U>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class T>
Vec3<T> operator+(const Vec3<T>& a, const Vec3<T>& b) {
  return {a.x + b.x, a.y + b.y, a.z + b.z};
}

template <class T>
Vec3<T> operator-(const Vec3<T>& a, const Vec3<T>& b) {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}

template <class T>
Vec3<T> operator*(double s, const Vec3<T>& v) {
  return {s * v.x, s * v.y, s * v.z};
}

inline double norm(const Vec3d& v) { return std::sqrt(dot(v, v)); }

/// Row-major 3x3 matrix.
template <class T>
struct Mat3 {
  std::array<T, 9> m{};

  static Mat3 identity() {
    Mat3 r;
    r.m = {T(1), T(0), T(0), T(0), T(1), T(0), T(0), T(0), T(1)};
    return r;
  }

  Vec3<T> operator*(const Vec3<T>& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        r.m[3 * i + j] = m[3 * i + 0] * o.m[0 + j] + m[3 * i + 1] * o.m[3 + j] +
                         m[3 * i + 2] * o.m[6 + j];
      }
    }
    return r;
  }

  Vec3<T> col(int j) const { return {m[j], m[3 + j], m[6 + j]}; }
};

using Mat3d = Mat3<double>;

/// 7-DoF cuboid in camera coordinates: geometric center (cx, cy, cz) in
/// meters, dimensions l/h/w along the local x/y/z axes, yaw about the camera
/// Y axis. The frame is x-right, y-down, z-forward (KITTI camera frame).
/// Yaw may drift outside (-pi, pi] while a caller is optimizing; normalize
/// with normalize_yaw() at I/O boundaries.
template <class T>
struct Box {
  T cx{}, cy{}, cz{};
  T l{}, h{}, w{};
  T ry{};
};

using Box3D = Box<double>;

inline constexpr std::size_t kBoxParamCount = 7;

/// Parameter order used by every gradient in this library.
enum class BoxParam : std::size_t { kCx = 0, kCy, kCz, kL, kH, kW, kRy };

template <class T>
T& box_param(Box<T>& b, std::size_t index) {
  switch (index) {
    case 0: return b.cx;
    case 1: return b.cy;
    case 2: return b.cz;
    case 3: return b.l;
    case 4: return b.h;
    case 5: return b.w;
    case 6: return b.ry;
    default: throw std::invalid_argument("box_param: index out of range");
  }
}

template <class T>
const T& box_param(const Box<T>& b, std::size_t index) {
  return box_param(const_cast<Box<T>&>(b), index);
}

struct CameraIntrinsics {
  double fu = 0.0, fv = 0.0;  // focal lengths, pixels
  double cu = 0.0, cv = 0.0;  // principal point, pixels
};

template <class T>
struct Pixel2 {
  T u{}, v{};
};

using Pixel = Pixel2<double>;

template <class T>
using Corners = std::array<Vec3<T>, 8>;

using Corners3D = Corners<double>;

/// Maps an angle to (-pi, pi].
inline double normalize_yaw(double ry) {
  constexpr double pi = std::numbers::pi;
  double r = std::fmod(ry + pi, 2.0 * pi);
  if (r <= 0.0) r += 2.0 * pi;
  return r - pi;
}

template <class T>
void validate_box(const Box<T>& b) {
  using detail::scalar_finite;
  using detail::scalar_value;
  const bool finite = scalar_finite(b.cx) && scalar_finite(b.cy) &&
                      scalar_finite(b.cz) && scalar_finite(b.l) &&
                      scalar_finite(b.h) && scalar_finite(b.w) &&
                      scalar_finite(b.ry);
  if (!finite) throw std::invalid_argument("box: non-finite parameter");
  if (!(scalar_value(b.l) > 0.0 && scalar_value(b.h) > 0.0 &&
        scalar_value(b.w) > 0.0)) {
    throw std::invalid_argument("box: dimensions must be positive");
  }
}

inline void validate_intrinsics(const CameraIntrinsics& k) {
  if (!(std::isfinite(k.fu) && std::isfinite(k.fv) && std::isfinite(k.cu) &&
        std::isfinite(k.cv))) {
    throw std::invalid_argument("intrinsics: non-finite parameter");
  }
  if (!(k.fu > 0.0 && k.fv > 0.0)) {
    throw std::invalid_argument("intrinsics: focal lengths must be positive");
  }
}

/// Rotation about the camera Y axis.
template <class T>
Mat3<T> rotation_y(const T& ry) {
  if (!detail::scalar_finite(ry)) {
    throw std::invalid_argument("rotation_y: non-finite angle");
  }
  using std::cos;
  using std::sin;
  const T c = cos(ry);
  const T s = sin(ry);
  Mat3<T> r;
  r.m = {c, T(0), s, T(0), T(1), T(0), -s, T(0), c};
  return r;
}

/// Half-extent sign pattern of the eight corners, one column per corner,
/// rows ordered (local x, local y, local z). The column order is fixed;
/// no semantics ("front-left" etc.) are attached to individual corners.
inline constexpr std::array<std::array<double, 8>, 3> kCornerSigns = {{
    {+0.5, +0.5, -0.5, -0.5, +0.5, +0.5, -0.5, -0.5},
    {+0.5, +0.5, +0.5, +0.5, -0.5, -0.5, -0.5, -0.5},
    {+0.5, -0.5, -0.5, +0.5, +0.5, -0.5, -0.5, +0.5},
}};

/// Corner index pairs with opposite signs; each pair averages to the center.
inline constexpr std::array<std::pair<int, int>, 4> kOppositeCorners = {{
    {0, 6}, {1, 7}, {2, 4}, {3, 5}}};

/// The eight cuboid corners: center + R(ry) * (signed half-dimensions),
/// in the fixed kCornerSigns column order.
template <class T>
Corners<T> corners_from_box(const Box<T>& box) {
  validate_box(box);
  const Mat3<T> rot = rotation_y(box.ry);
  Corners<T> out;
  for (int i = 0; i < 8; ++i) {
    const Vec3<T> local{box.l * kCornerSigns[0][i], box.h * kCornerSigns[1][i],
                        box.w * kCornerSigns[2][i]};
    const Vec3<T> r = rot * local;
    out[i] = {box.cx + r.x, box.cy + r.y, box.cz + r.z};
  }
  return out;
}

/// The three unique face normals of the box: the columns of rotation_y(ry),
/// each unit length.
template <class T>
std::array<Vec3<T>, 3> face_normals(const Box<T>& box) {
  validate_box(box);
  using std::cos;
  using std::sin;
  const T c = cos(box.ry);
  const T s = sin(box.ry);
  return {{{c, T(0), -s}, {T(0), T(1), T(0)}, {s, T(0), c}}};
}

/// Pinhole projection u = fu*x/z + cu, v = fv*y/z + cv. The point must be
/// strictly in front of the camera (z > kBehindCameraZEps).
template <class T>
Pixel2<T> project_point(const Vec3<T>& p, const CameraIntrinsics& k) {
  validate_intrinsics(k);
  if (!(detail::scalar_finite(p.x) && detail::scalar_finite(p.y) &&
        detail::scalar_finite(p.z))) {
    throw std::invalid_argument("project_point: non-finite point");
  }
  const double z = detail::scalar_value(p.z);
  if (!(z > kBehindCameraZEps)) throw BehindCameraError(z);
  return {k.fu * (p.x / p.z) + k.cu, k.fv * (p.y / p.z) + k.cv};
}

}  // namespace boxalign
