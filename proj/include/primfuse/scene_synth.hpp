#pragma once

#include "primfuse/core_types.hpp"

namespace primfuse {

/// Low-frequency sinusoid albedo over two surface coordinates.
struct AlbedoSpec {
    Vec3 base = Vec3(0.7, 0.7, 0.7);
    double amplitude = 0.0;  // 0 = flat color
    double freq_u = 2.0, freq_v = 2.0;
    double phase = 0.0;

    Vec3 eval(double u, double v) const {
        double f = 0.5 + 0.5 * std::sin(freq_u * u + phase) * std::cos(freq_v * v);
        return base * (1.0 - amplitude + amplitude * f);
    }
};

/// Finite textured rectangle lying on a plane.
struct RectWall {
    Plane plane;     // id = ground-truth semantic label (1-based)
    Vec3 center;     // on the plane
    Vec3 axis_u, axis_v;  // orthonormal, tangent to the plane
    double half_u = 1.0, half_v = 1.0;
    AlbedoSpec albedo;
};

struct SphereProp {
    Vec3 center;
    double radius = 0.1;
    AlbedoSpec albedo;
};

struct BoxProp {
    Vec3 center;
    Vec3 half_extents = Vec3(0.1, 0.1, 0.1);
    Mat3 rotation = Mat3::Identity();  // box-from-world is rotation^T
    AlbedoSpec albedo;
};

struct SceneSpec {
    std::vector<RectWall> walls;
    std::vector<SphereProp> spheres;
    std::vector<BoxProp> boxes;
    Vec3 bounds_min = Vec3(-1, -1, -1), bounds_max = Vec3(1, 1, 1);
    Vec3 light_dir = Vec3(0.4, 0.8, -0.45).normalized();
    double ambient = 0.45;

    Vec3 centroid() const { return 0.5 * (bounds_min + bounds_max); }
};

struct SceneHit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    Vec3 albedo = Vec3::Zero();
    int plane_id = 0;  // 0 for props and misses
    bool valid = false;
};

/// Closed-form nearest intersection of a ray with the scene geometry.
SceneHit trace_scene(const SceneSpec& spec, const Ray& ray);

/// Exact RGB-D render with ground-truth per-pixel plane labels.
Frame raytrace_frame(const SceneSpec& spec, const Pose& pose, const Intrinsics& K,
                     int timestamp = 0);

enum class TrajectoryKind { Interpolation, Extrapolation };

/// Held-out cameras: interpolation interleaves the training poses,
/// extrapolation pushes them outside the training hull by `margin` meters
/// while keeping the scene centroid in view.
std::vector<Pose> emit_trajectory(const SceneSpec& spec, TrajectoryKind kind, int n,
                                  const std::vector<Pose>& training_poses, double margin = 0.25);

/// Seeded additive Gaussian depth noise on valid pixels, clamped to
/// >= 0.01 m.
Frame add_depth_noise(const Frame& frame, double sigma, std::uint64_t seed);

/// World-from-camera pose looking from eye toward target (right-handed,
/// camera z forward, y aligned with world-down).
Pose look_at(const Vec3& eye, const Vec3& target);

/// The default test scene: five textured walls (open front), one sphere and
/// one box prop.
SceneSpec box_room();
std::vector<Pose> box_room_training_poses(int n);
Intrinsics box_room_intrinsics(int width = 64, int height = 64);

}  // namespace primfuse
