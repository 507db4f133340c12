#pragma once

#include <cmath>

namespace trackteller {

struct Box3D {
  double x = 0, y = 0, z = 0;  // center, meters
  double w = 1, l = 1, h = 1;  // size, meters
  double yaw = 0;              // [-pi, pi)
};

inline double bev_distance(const Box3D& a, const Box3D& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

inline double center_distance_3d(const Box3D& a, const Box3D& b) {
  double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace trackteller
