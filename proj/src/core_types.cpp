#include "primfuse/core_types.hpp"

#include <cmath>

namespace primfuse {

Vec3 backproject(double u, double v, double depth, const Intrinsics& K, const Pose& pose) {
    if (depth <= 0.0) throw std::invalid_argument("backproject: depth must be > 0");
    if (!K.contains(u, v)) throw std::invalid_argument("backproject: pixel outside image bounds");
    Vec3 x_cam((u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth);
    return pose.camera_to_world(x_cam);
}

Projection project(const Vec3& x, const Intrinsics& K, const Pose& pose) {
    Vec3 x_cam = pose.world_to_camera(x);
    Projection p;
    p.z = x_cam.z();
    if (p.z <= 0.0) {
        p.behind = true;
        return p;
    }
    p.u = K.fx * x_cam.x() / p.z + K.cx;
    p.v = K.fy * x_cam.y() / p.z + K.cy;
    return p;
}

std::optional<RayPlaneHit> intersect_ray_plane(const Ray& ray, const Plane& plane) {
    double denom = ray.direction.dot(plane.normal);
    if (std::abs(denom) < 1e-9) return std::nullopt;
    double t = (plane.offset - ray.origin.dot(plane.normal)) / denom;
    if (t <= 0.0) return std::nullopt;
    return RayPlaneHit{ray.origin + t * ray.direction, t};
}

Ray pixel_ray(int row, int col, const Intrinsics& K, const Pose& pose) {
    double u = col + 0.5, v = row + 0.5;
    Vec3 dir_cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
    Vec3 dir_world = pose.rotation * dir_cam;
    return Ray{pose.translation, dir_world.normalized()};
}

double ray_depth_scale(const Ray& ray, const Pose& pose) {
    return ray.direction.dot(pose.rotation.col(2));
}

}  // namespace primfuse
