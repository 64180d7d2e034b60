#include "primfuse/scene_synth.hpp"

#include <cmath>
#include <random>

namespace primfuse {

namespace {

void consider_rect(const RectWall& wall, const Ray& ray, SceneHit& best) {
    auto hit = intersect_ray_plane(ray, wall.plane);
    if (!hit || hit->t >= best.t) return;
    Vec3 rel = hit->point - wall.center;
    double u = rel.dot(wall.axis_u);
    double v = rel.dot(wall.axis_v);
    if (std::abs(u) > wall.half_u || std::abs(v) > wall.half_v) return;
    best.t = hit->t;
    best.point = hit->point;
    best.normal = wall.plane.normal;
    best.albedo = wall.albedo.eval(u, v);
    best.plane_id = wall.plane.id;
    best.valid = true;
}

void consider_sphere(const SphereProp& s, const Ray& ray, SceneHit& best) {
    Vec3 oc = ray.origin - s.center;
    double b = oc.dot(ray.direction);
    double c = oc.squaredNorm() - s.radius * s.radius;
    double disc = b * b - c;
    if (disc < 0) return;
    double root = std::sqrt(disc);
    double t = -b - root;
    if (t <= 1e-9) t = -b + root;
    if (t <= 1e-9 || t >= best.t) return;
    best.t = t;
    best.point = ray.origin + t * ray.direction;
    best.normal = (best.point - s.center).normalized();
    double u = std::atan2(best.normal.y(), best.normal.x()) * s.radius;
    double v = std::acos(std::clamp(best.normal.z(), -1.0, 1.0)) * s.radius;
    best.albedo = s.albedo.eval(u, v);
    best.plane_id = 0;
    best.valid = true;
}

void consider_box(const BoxProp& box, const Ray& ray, SceneHit& best) {
    // Slab test in the box frame.
    Vec3 o = box.rotation.transpose() * (ray.origin - box.center);
    Vec3 d = box.rotation.transpose() * ray.direction;
    double t0 = 1e-9, t1 = best.t;
    int hit_axis = -1;
    double hit_sign = 1.0;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
            if (std::abs(o[a]) > box.half_extents[a]) return;
            continue;
        }
        double ta = (-box.half_extents[a] - o[a]) / d[a];
        double tb = (box.half_extents[a] - o[a]) / d[a];
        double sign = -1.0;
        if (ta > tb) {
            std::swap(ta, tb);
            sign = 1.0;
        }
        if (ta > t0) {
            t0 = ta;
            hit_axis = a;
            hit_sign = sign;
        }
        t1 = std::min(t1, tb);
        if (t0 > t1) return;
    }
    if (hit_axis < 0 || t0 >= best.t) return;  // origin inside the box: skip
    best.t = t0;
    best.point = ray.origin + t0 * ray.direction;
    Vec3 n_local = Vec3::Zero();
    n_local[hit_axis] = hit_sign;
    best.normal = box.rotation * n_local;
    Vec3 local = o + t0 * d;
    int ua = (hit_axis + 1) % 3, va = (hit_axis + 2) % 3;
    best.albedo = box.albedo.eval(local[ua], local[va]);
    best.plane_id = 0;
    best.valid = true;
}

}  // namespace

SceneHit trace_scene(const SceneSpec& spec, const Ray& ray) {
    SceneHit best;
    for (const auto& w : spec.walls) consider_rect(w, ray, best);
    for (const auto& s : spec.spheres) consider_sphere(s, ray, best);
    for (const auto& b : spec.boxes) consider_box(b, ray, best);
    return best;
}

Frame raytrace_frame(const SceneSpec& spec, const Pose& pose, const Intrinsics& K, int timestamp) {
    Frame f;
    f.color = Image<Rgb>(K.height, K.width);
    f.depth = Image<float>(K.height, K.width, 0.0f);
    f.semantic = Image<std::int32_t>(K.height, K.width, 0);
    f.pose = pose;
    f.intrinsics = K;
    f.timestamp = timestamp;

    for (int row = 0; row < K.height; ++row) {
        for (int col = 0; col < K.width; ++col) {
            Ray ray = pixel_ray(row, col, K, pose);
            SceneHit hit = trace_scene(spec, ray);
            if (!hit.valid) continue;
            double z = pose.world_to_camera(hit.point).z();
            f.depth.at(row, col) = static_cast<float>(z);
            f.semantic.at(row, col) = hit.plane_id;
            double lambert = std::abs(hit.normal.dot(spec.light_dir));
            Vec3 c = hit.albedo * (spec.ambient + (1.0 - spec.ambient) * lambert);
            f.color.at(row, col) = {static_cast<float>(std::clamp(c.x(), 0.0, 1.0)),
                                    static_cast<float>(std::clamp(c.y(), 0.0, 1.0)),
                                    static_cast<float>(std::clamp(c.z(), 0.0, 1.0))};
        }
    }
    return f;
}

Pose look_at(const Vec3& eye, const Vec3& target) {
    Vec3 z = (target - eye).normalized();
    Vec3 up_hint = std::abs(z.y()) > 0.99 ? Vec3(0, 0, 1) : Vec3(0, 1, 0);
    Vec3 x = z.cross(up_hint).normalized();
    Vec3 y = z.cross(x);
    Pose p;
    p.rotation.col(0) = x;
    p.rotation.col(1) = y;
    p.rotation.col(2) = z;
    p.translation = eye;
    return p;
}

namespace {

Pose interpolate_pose(const Pose& a, const Pose& b, double s) {
    Eigen::Quaterniond qa(a.rotation), qb(b.rotation);
    Pose p;
    p.rotation = qa.slerp(s, qb).toRotationMatrix();
    p.translation = (1.0 - s) * a.translation + s * b.translation;
    return p;
}

}  // namespace

std::vector<Pose> emit_trajectory(const SceneSpec& spec, TrajectoryKind kind, int n,
                                  const std::vector<Pose>& training_poses, double margin) {
    if (n < 1) throw std::invalid_argument("emit_trajectory: n must be >= 1");
    if (training_poses.empty()) throw std::invalid_argument("emit_trajectory: no training poses");
    std::vector<Pose> out;
    out.reserve(n);
    const int m = static_cast<int>(training_poses.size());
    if (kind == TrajectoryKind::Interpolation) {
        if (m == 1) {
            out.assign(n, training_poses[0]);
            return out;
        }
        // Interleave only orientation-compatible consecutive pairs: the
        // midpoint camera must keep the scene centroid well inside a
        // conservative view cone.
        Vec3 centroid = spec.centroid();
        auto sees_centroid = [&](const Pose& p) {
            Vec3 dir = centroid - p.translation;
            if (dir.norm() < 1e-9) return true;
            return p.rotation.col(2).dot(dir.normalized()) > std::cos(25.0 * M_PI / 180.0);
        };
        std::vector<int> pairs;
        for (int k = 0; k + 1 < m; ++k)
            if (sees_centroid(interpolate_pose(training_poses[k], training_poses[k + 1], 0.5)))
                pairs.push_back(k);
        if (pairs.empty())
            for (int k = 0; k + 1 < m; ++k) pairs.push_back(k);
        for (int i = 0; i < n; ++i) {
            double s = (i + 0.5) / n * pairs.size();
            int idx = std::min(static_cast<int>(s), static_cast<int>(pairs.size()) - 1);
            int k = pairs[idx];
            out.push_back(interpolate_pose(training_poses[k], training_poses[k + 1], s - idx));
        }
        return out;
    }
    // Extrapolation: push eyes outward from the centroid of training eyes
    // and re-aim at the scene centroid.
    Vec3 hub = Vec3::Zero();
    for (const auto& p : training_poses) hub += p.translation;
    hub /= static_cast<double>(m);
    Vec3 target = spec.centroid();
    for (int i = 0; i < n; ++i) {
        const Pose& base = training_poses[(static_cast<std::int64_t>(i) * m) / n];
        Vec3 outward = base.translation - hub;
        double len = outward.norm();
        outward = len > 1e-9 ? Vec3(outward / len) : Vec3(0, 0, -1);
        Vec3 eye = base.translation + margin * outward;
        // Alternate a small vertical offset so extrapolation also leaves the
        // hull in y.
        eye.y() += (i % 2 == 0 ? 1.0 : -1.0) * 0.4 * margin;
        out.push_back(look_at(eye, target));
    }
    return out;
}

Frame add_depth_noise(const Frame& frame, double sigma, std::uint64_t seed) {
    if (sigma < 0) throw std::invalid_argument("add_depth_noise: sigma must be >= 0");
    Frame noisy = frame;
    if (sigma == 0.0) return noisy;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& z : noisy.depth.data) {
        if (z <= 0.0f) continue;
        z = static_cast<float>(std::max(0.01, static_cast<double>(z) + dist(rng)));
    }
    return noisy;
}

SceneSpec box_room() {
    SceneSpec spec;
    spec.bounds_min = Vec3(-1.0, -0.8, -1.0);
    spec.bounds_max = Vec3(1.0, 0.8, 1.0);

    auto wall = [&](int id, const Vec3& n, double d, const Vec3& center, const Vec3& au,
                    const Vec3& av, double hu, double hv, const Vec3& base, double fu, double fv,
                    double phase) {
        RectWall w;
        w.plane.normal = n;
        w.plane.offset = d;
        w.plane.id = id;
        w.center = center;
        w.axis_u = au;
        w.axis_v = av;
        w.half_u = hu;
        w.half_v = hv;
        w.albedo = {base, 0.35, fu, fv, phase};
        spec.walls.push_back(w);
    };
    // floor, ceiling, back, left, right (front at z = -1 stays open)
    wall(1, Vec3(0, -1, 0), 0.8, Vec3(0, -0.8, 0), Vec3(1, 0, 0), Vec3(0, 0, 1), 1.0, 1.0,
         Vec3(0.75, 0.55, 0.35), 2.6, 3.1, 0.3);
    wall(2, Vec3(0, 1, 0), 0.8, Vec3(0, 0.8, 0), Vec3(1, 0, 0), Vec3(0, 0, 1), 1.0, 1.0,
         Vec3(0.82, 0.80, 0.72), 2.1, 2.7, 1.1);
    wall(3, Vec3(0, 0, 1), 1.0, Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 0), 1.0, 0.8,
         Vec3(0.45, 0.62, 0.78), 3.3, 2.2, 0.0);
    wall(4, Vec3(-1, 0, 0), 1.0, Vec3(-1, 0, 0), Vec3(0, 0, 1), Vec3(0, 1, 0), 1.0, 0.8,
         Vec3(0.72, 0.42, 0.45), 2.4, 3.0, 2.0);
    wall(5, Vec3(1, 0, 0), 1.0, Vec3(1, 0, 0), Vec3(0, 0, 1), Vec3(0, 1, 0), 1.0, 0.8,
         Vec3(0.46, 0.72, 0.47), 2.9, 2.3, 0.7);

    SphereProp s;
    s.center = Vec3(0.40, -0.30, 0.40);
    s.radius = 0.18;
    s.albedo = {Vec3(0.85, 0.35, 0.25), 0.3, 6.0, 5.0, 0.0};
    spec.spheres.push_back(s);

    BoxProp b;
    b.center = Vec3(-0.42, -0.67, 0.32);
    b.half_extents = Vec3(0.09, 0.13, 0.09);
    b.rotation = (Eigen::AngleAxisd(0.52, Vec3::UnitY()) * Eigen::AngleAxisd(0.35, Vec3::UnitX()))
                     .toRotationMatrix();
    b.albedo = {Vec3(0.35, 0.45, 0.85), 0.3, 7.0, 6.0, 0.5};
    spec.boxes.push_back(b);
    return spec;
}

std::vector<Pose> box_room_training_poses(int n) {
    std::vector<Pose> poses;
    poses.reserve(n);
    // A deliberate room scan: a front arc looking in, a deeper pass looking
    // back toward the open front, then dedicated ceiling and side-wall
    // sweeps so every wall is observed somewhere.
    int n_arc = std::max(1, static_cast<int>(std::lround(0.6 * n)));
    int n_back = std::max(0, static_cast<int>(std::lround(0.2 * n)));
    int n_ceil = n - n_arc - n_back >= 2 ? (n - n_arc - n_back) / 2 : 0;
    int n_side = n - n_arc - n_back - n_ceil;

    for (int i = 0; i < n_arc; ++i) {
        double a = n_arc > 1 ? -0.9 + 1.8 * i / (n_arc - 1) : 0.0;
        Vec3 eye(0.66 * std::sin(a), -0.04 + 0.26 * std::sin(2.3 * a + 0.4),
                 -0.42 - 0.36 * std::cos(a));
        Vec3 target(-0.5 * std::sin(a), 0.62 * std::sin(3.1 * a + 0.9), 0.55);
        poses.push_back(look_at(eye, target));
    }
    for (int i = 0; i < n_back; ++i) {
        double b = n_back > 1 ? -1.0 + 2.0 * i / (n_back - 1) : 0.0;
        Vec3 eye(0.34 * b, 0.08 * std::sin(3.0 * b), 0.28 + 0.14 * std::cos(2.0 * b));
        Vec3 target(-0.85 * b, 0.5 * std::sin(4.0 * b + 1.0), -1.3);
        poses.push_back(look_at(eye, target));
    }
    for (int i = 0; i < n_ceil; ++i) {
        double c = n_ceil > 1 ? -1.0 + 2.0 * i / (n_ceil - 1) : 0.0;
        Vec3 eye(0.12 * c, -0.38, -0.15 + 0.38 * c);
        Vec3 target(-0.25 * c, 0.8, 0.1 - 0.7 * c);
        poses.push_back(look_at(eye, target));
    }
    for (int i = 0; i < n_side; ++i) {
        double s = i % 2 == 0 ? 1.0 : -1.0;  // alternate right/left wall
        double z0 = 0.05 + 0.25 * (i / 2);
        Vec3 eye(-0.35 * s, 0.02 + 0.1 * (i % 3), z0);
        Vec3 target(1.2 * s, 0.15 - 0.2 * (i % 2), z0 - 0.35);
        poses.push_back(look_at(eye, target));
    }
    return poses;
}

Intrinsics box_room_intrinsics(int width, int height) {
    Intrinsics K;
    K.width = width;
    K.height = height;
    K.fx = K.fy = 0.75 * width;
    K.cx = width / 2.0;
    K.cy = height / 2.0;
    return K;
}

}  // namespace primfuse
