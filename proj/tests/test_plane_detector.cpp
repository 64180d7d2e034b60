#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracle_helpers.hpp"
#include "primfuse/plane_detector.hpp"
#include "primfuse/scene_synth.hpp"

#include <Eigen/SVD>
#include <random>

using namespace primfuse;

namespace {

Image<float> constant_depth(int h, int w, float z) { return Image<float>(h, w, z); }

DetectorConfig small_image_config() {
    DetectorConfig cfg;
    cfg.cell_size = 8;
    cfg.min_support = 256;
    cfg.offset_merge_dist = 0.01;
    return cfg;
}

}  // namespace

TEST_CASE("fit_plane_pca on exact plane") {
    std::vector<Vec3> pts;
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) pts.emplace_back(0.1 * i, 0.07 * j, 2.0);
    PlaneFit fit = fit_plane_pca(pts);
    CHECK((fit.plane.normal - Vec3(0, 0, 1)).norm() < 1e-9);
    CHECK(fit.plane.offset == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(fit.rms_error < 1e-9);
}

TEST_CASE("fit_plane_pca rejects collinear input") {
    std::vector<Vec3> pts = {{0, 0, 0}, {1, 1, 1}, {2, 2, 2}};
    CHECK_THROWS_AS(fit_plane_pca(pts), std::invalid_argument);
    CHECK_THROWS_AS(fit_plane_pca({{0, 0, 0}, {1, 0, 0}}), std::invalid_argument);
}

TEST_CASE("fit_plane_pca on noisy plane matches an SVD oracle") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> noise(0.0, 0.001);
    std::uniform_real_distribution<double> u(-1, 1);
    Vec3 n_gt = Vec3(0.3, -0.2, 0.93).normalized();
    double d_gt = 1.4;
    Vec3 e1 = n_gt.unitOrthogonal(), e2 = n_gt.cross(e1);
    std::vector<Vec3> pts;
    for (int i = 0; i < 500; ++i)
        pts.push_back(d_gt * n_gt + u(rng) * e1 + u(rng) * e2 + noise(rng) * n_gt);

    PlaneFit fit = fit_plane_pca(pts);
    CHECK(std::acos(std::min(1.0, std::abs(fit.plane.normal.dot(n_gt)))) < 0.5 * M_PI / 180.0);
    CHECK(fit.rms_error == doctest::Approx(0.001).epsilon(0.25));

    // SVD least-squares oracle: smallest right singular vector of centered points.
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : pts) centroid += p;
    centroid /= pts.size();
    Eigen::MatrixXd A(pts.size(), 3);
    for (size_t i = 0; i < pts.size(); ++i) A.row(i) = (pts[i] - centroid).transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
    Vec3 n_svd = svd.matrixV().col(2);
    if (n_svd.dot(fit.plane.normal) < 0) n_svd = -n_svd;
    CHECK((fit.plane.normal - n_svd).norm() < 1e-9);
    double rms_svd = svd.singularValues()(2) / std::sqrt(static_cast<double>(pts.size()));
    CHECK(fit.rms_error == doctest::Approx(rms_svd).epsilon(1e-9));
}

TEST_CASE("validate_flatness boundary semantics") {
    Plane p;
    p.normal = Vec3(0, 0, 1);
    p.offset = 1.0;
    std::vector<Vec3> on_plane = {{0, 0, 1}, {1, 0, 1}, {0, 1, 1}};
    CHECK(validate_flatness(p, on_plane, 0.005));

    std::vector<Vec3> offset;  // all points 2*eps along the normal
    for (const auto& q : on_plane) offset.push_back(q + Vec3(0, 0, 0.01));
    CHECK(!validate_flatness(p, offset, 0.005));

    std::vector<Vec3> mixed = {{0, 0, 1.005}, {1, 0, 0.995}, {0, 1, 1.005}, {1, 1, 0.995}};
    CHECK(validate_flatness(p, mixed, 0.005));  // mean exactly at eps is inclusive
}

TEST_CASE("detect_planes: fronto-parallel wall labels every pixel") {
    Intrinsics K = box_room_intrinsics();
    Pose identity;
    auto depth = constant_depth(64, 64, 2.0f);
    LocalDetection det = detect_planes(depth, K, identity, small_image_config());
    REQUIRE(det.planes.size() == 1);
    CHECK((det.planes[0].normal - Vec3(0, 0, 1)).norm() < 1e-3);
    CHECK(det.planes[0].offset == doctest::Approx(2.0).epsilon(1e-3));
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) REQUIRE(det.semantic.at(r, c) == 1);
}

TEST_CASE("detect_planes: uniform random depth yields no planes") {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> u(1.0, 3.0);
    Image<float> depth(64, 64, 0.0f);
    for (auto& z : depth.data) z = static_cast<float>(u(rng));
    LocalDetection det = detect_planes(depth, box_room_intrinsics(), Pose{},
                                       small_image_config());
    CHECK(det.planes.empty());
}

TEST_CASE("detect_planes: two-wall corner against synthesizer ground truth") {
    SceneSpec spec;
    spec.bounds_min = Vec3(-2, -2, 0);
    spec.bounds_max = Vec3(4, 2, 5);
    RectWall a;  // x = 0 wall
    a.plane.normal = Vec3(-1, 0, 0);
    a.plane.offset = 0;
    a.plane.id = 1;
    a.center = Vec3(0, 0, 2.5);
    a.axis_u = Vec3(0, 0, 1);
    a.axis_v = Vec3(0, 1, 0);
    a.half_u = 2.5;
    a.half_v = 2;
    RectWall b;  // z = 3 wall
    b.plane.normal = Vec3(0, 0, 1);
    b.plane.offset = 3;
    b.plane.id = 2;
    b.center = Vec3(1, 0, 3);
    b.axis_u = Vec3(1, 0, 0);
    b.axis_v = Vec3(0, 1, 0);
    b.half_u = 3;
    b.half_v = 2;
    spec.walls = {a, b};

    Pose cam = look_at(Vec3(1.6, 0.1, 0.4), Vec3(0.4, 0.0, 3.0));
    Intrinsics K = box_room_intrinsics();
    Frame frame = raytrace_frame(spec, cam, K);

    LocalDetection det = detect_planes(frame.depth, K, cam, small_image_config());
    REQUIRE(det.planes.size() == 2);
    // match detected planes to ground truth
    for (const auto& plane : det.planes) {
        bool match_a = plane.normal.dot(a.plane.normal) > std::cos(M_PI / 180.0) &&
                       std::abs(plane.offset - a.plane.offset) < 0.005;
        bool match_b = plane.normal.dot(b.plane.normal) > std::cos(M_PI / 180.0) &&
                       std::abs(plane.offset - b.plane.offset) < 0.005;
        CHECK((match_a || match_b));
    }

    // label accuracy away from the crease: the crease is the x=0, z=3 line.
    int checked = 0, agree = 0;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) {
            int gt = frame.semantic.at(r, c);
            if (gt == 0) continue;
            Vec3 p = backproject(c + 0.5, r + 0.5, frame.depth.at(r, c), K, cam);
            // cells are 8 px wide; stay a cell's footprint away from the crease
            double crease_dist = std::hypot(p.x() - 0.0, p.z() - 3.0);
            if (crease_dist < 0.45) continue;
            ++checked;
            int got = det.semantic.at(r, c);
            if (got == 0) continue;
            const Plane& dp = det.planes[got - 1];
            int mapped = dp.normal.x() < -0.5 ? 1 : 2;
            if (mapped == gt) ++agree;
        }
    REQUIRE(checked > 500);
    CHECK(static_cast<double>(agree) / checked >= 0.95);
}

TEST_CASE("detect_planes is pose-equivariant") {
    Intrinsics K = box_room_intrinsics();
    Image<float> depth(64, 64, 0.0f);
    Vec3 n_gt = Vec3(0.1, 0.3, 0.95).normalized();
    const double d_gt = 1.8;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) {
            Vec3 dir((c + 0.5 - K.cx) / K.fx, (r + 0.5 - K.cy) / K.fy, 1.0);
            depth.at(r, c) = static_cast<float>(d_gt / n_gt.dot(dir));  // exact oblique plane
        }
    LocalDetection base = detect_planes(depth, K, Pose{}, small_image_config());
    REQUIRE(base.planes.size() == 1);

    std::mt19937_64 rng(31);
    Pose rotated{oracle::random_rotation(rng), Vec3(0.3, -0.2, 0.5)};
    LocalDetection moved = detect_planes(depth, K, rotated, small_image_config());
    REQUIRE(moved.planes.size() == 1);
    Vec3 expected = rotated.rotation * base.planes[0].normal;
    double align = std::abs(expected.dot(moved.planes[0].normal));
    CHECK(align > 1.0 - 1e-3);
}

TEST_CASE("detection properties: flatness re-check and back-projection residuals") {
    SceneSpec spec = box_room();
    auto poses = box_room_training_poses(6);
    Intrinsics K = box_room_intrinsics();
    DetectorConfig cfg = small_image_config();
    for (const auto& pose : poses) {
        Frame frame = raytrace_frame(spec, pose, K);
        LocalDetection det = detect_planes(frame.depth, K, pose, cfg);
        std::vector<std::vector<Vec3>> supports(det.planes.size());
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c) {
                int l = det.semantic.at(r, c);
                if (l == 0) continue;
                supports[l - 1].push_back(
                    backproject(c + 0.5, r + 0.5, frame.depth.at(r, c), K, pose));
            }
        for (size_t i = 0; i < det.planes.size(); ++i) {
            REQUIRE(static_cast<int>(supports[i].size()) >= cfg.min_support);
            CHECK(validate_flatness(det.planes[i], supports[i], cfg.flatness_threshold));
            CHECK(validate_flatness(det.planes[i], supports[i], 3 * cfg.flatness_threshold));
        }
    }
}
