#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace primfuse {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Rigid world-from-camera transform. Rotation must stay orthonormal with
/// determinant +1 (checked to 1e-6 by is_valid()).
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 camera_to_world(const Vec3& x_cam) const { return rotation * x_cam + translation; }
    Vec3 world_to_camera(const Vec3& x_world) const {
        return rotation.transpose() * (x_world - translation);
    }
    Pose inverse() const { return {rotation.transpose(), -(rotation.transpose() * translation)}; }
    Pose compose(const Pose& rhs) const {
        // this ∘ rhs: first rhs, then this.
        return {rotation * rhs.rotation, rotation * rhs.translation + translation};
    }
    bool is_valid(double tol = 1e-6) const {
        return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
               std::abs(rotation.determinant() - 1.0) <= tol;
    }
    Mat4 matrix() const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = rotation;
        m.topRightCorner<3, 1>() = translation;
        return m;
    }
    static Pose from_matrix(const Mat4& m) {
        return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
    }
};

/// Pinhole intrinsics, no distortion. Pixel (row, col) has its center at the
/// continuous coordinate (col + 0.5, row + 0.5); this convention is used
/// everywhere in the project.
struct Intrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    bool is_valid() const {
        return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 && cx < width && cy >= 0 &&
               cy < height;
    }
    bool contains(double u, double v) const {
        return u >= 0.0 && u < static_cast<double>(width) && v >= 0.0 &&
               v < static_cast<double>(height);
    }
};

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();  // unit length
};

/// Infinite plane n·x = d with unit normal and d >= 0.
struct Plane {
    Vec3 normal = Vec3::UnitZ();
    double offset = 0.0;  // meters from origin, >= 0
    int id = 0;           // global ids are 1-based; 0 = unassigned
    std::int64_t support_count = 0;
    bool alive = true;

    double signed_distance(const Vec3& x) const { return normal.dot(x) - offset; }
    /// Flips the normal if needed so that offset >= 0.
    void canonicalize() {
        if (offset < 0) {
            normal = -normal;
            offset = -offset;
        }
    }
};

/// Simple dense H×W image container, row-major.
template <typename T>
struct Image {
    int width = 0, height = 0;
    std::vector<T> data;

    Image() = default;
    Image(int h, int w, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(h) * w, fill) {}
    T& at(int row, int col) { return data[static_cast<size_t>(row) * width + col]; }
    const T& at(int row, int col) const { return data[static_cast<size_t>(row) * width + col]; }
    bool empty() const { return data.empty(); }
    size_t size() const { return data.size(); }
};

struct Rgb {
    float r = 0, g = 0, b = 0;
};

/// One posed RGB-D observation. Depth is z-depth along the optical axis in
/// meters, 0 marks invalid pixels. The semantic image holds plane indices
/// (0 = non-primitive); after registry merge they are global ids.
struct Frame {
    Image<Rgb> color;
    Image<float> depth;
    Image<std::int32_t> semantic;
    Pose pose;
    Intrinsics intrinsics;
    int timestamp = 0;

    bool dims_consistent() const {
        return color.width == depth.width && color.height == depth.height &&
               color.width == semantic.width && color.height == semantic.height &&
               color.width == intrinsics.width && color.height == intrinsics.height;
    }
};

struct Projection {
    double u = 0, v = 0;  // continuous pixel coordinates
    double z = 0;         // camera z-depth, meters
    bool behind = false;  // true when z <= 0
};

/// Back-projects continuous pixel (u, v) at the given z-depth into world
/// space. Throws std::invalid_argument for depth <= 0 or out-of-bounds u.
Vec3 backproject(double u, double v, double depth, const Intrinsics& K, const Pose& pose);

/// Projects world point x into the camera; u/v may fall outside the image
/// (caller checks), z <= 0 sets the behind flag.
Projection project(const Vec3& x, const Intrinsics& K, const Pose& pose);

struct RayPlaneHit {
    Vec3 point;
    double t;
};

/// Analytic ray-plane intersection; empty when the ray is parallel to the
/// plane (|d·n| < 1e-9) or the hit lies at t <= 0.
std::optional<RayPlaneHit> intersect_ray_plane(const Ray& ray, const Plane& plane);

/// Ray through the center of pixel (row, col) in world space.
Ray pixel_ray(int row, int col, const Intrinsics& K, const Pose& pose);

/// z-depth of a point at parameter t along the ray, as seen by the camera
/// with the given pose (cosine between ray direction and optical axis).
double ray_depth_scale(const Ray& ray, const Pose& pose);

}  // namespace primfuse
