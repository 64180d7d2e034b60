#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracle_helpers.hpp"
#include "primfuse/renderer.hpp"
#include "primfuse/scene_synth.hpp"

#include <random>

using namespace primfuse;

namespace {

Registry single_plane_registry(const Vec3& n, double d) {
    Registry reg;
    LocalDetection det;
    Plane p;
    p.normal = n.normalized();
    p.offset = d;
    det.planes = {p};
    det.planes[0].id = 1;
    det.semantic = Image<std::int32_t>(1, 1, 0);
    Frame dummy;
    dummy.semantic = Image<std::int32_t>(1, 1, 0);
    reg.merge_detection(det, dummy);
    return reg;
}

std::vector<FieldOutputD> constant_outputs(size_t n, double sigma, const Vec3& color) {
    std::vector<FieldOutputD> outs(n);
    for (auto& o : outs) {
        o.sigma = sigma;
        o.color = color;
        o.semantic = Eigen::Vector4d(0.1, 0.2, 0.3, 0.4);
    }
    return outs;
}

}  // namespace

TEST_CASE("composite trivial cases") {
    std::vector<Sample> samples(3);
    for (int i = 0; i < 3; ++i) {
        samples[i].t = 1.0 + i;
        samples[i].delta = 0.5;
    }
    auto res = composite(samples, constant_outputs(3, 0.0, Vec3(1, 1, 1)));
    CHECK(res.color.norm() == 0.0);
    CHECK(res.depth == 0.0);
    CHECK(res.opacity == 0.0);

    std::vector<Sample> one(1);
    one[0].t = 2.0;
    one[0].delta = 1.0;
    auto r1 = composite(one, constant_outputs(1, 1.0, Vec3(0.25, 0.5, 0.75)));
    double alpha = 1.0 - std::exp(-1.0);
    CHECK(r1.opacity == doctest::Approx(alpha).epsilon(1e-12));
    CHECK(r1.color.x() == doctest::Approx(alpha * 0.25).epsilon(1e-12));
    CHECK(alpha == doctest::Approx(0.632121).epsilon(1e-6));
}

TEST_CASE("composite agrees with the scalar reference on a pinned 3-sample ray") {
    std::vector<Sample> samples(3);
    std::vector<FieldOutputD> outs(3);
    double sig[3] = {0.5, 1.0, 2.0};
    double col[3] = {1.0, 2.0, 3.0};
    for (int i = 0; i < 3; ++i) {
        samples[i].t = 0.1 * (i + 1);
        samples[i].delta = 0.1;
        outs[i].sigma = sig[i];
        outs[i].color = Vec3::Constant(col[i]);
        outs[i].semantic.setConstant(col[i]);
    }
    auto res = composite(samples, outs);
    auto ref = oracle::scalar_composite(
        {0.5, 1.0, 2.0}, {0.1, 0.1, 0.1}, {0.1, 0.2, 0.3},
        {{{1, 1, 1}}, {{2, 2, 2}}, {{3, 3, 3}}},
        {{{1, 1, 1, 1}}, {{2, 2, 2, 2}}, {{3, 3, 3, 3}}});
    CHECK(std::abs(res.color.x() - ref.color[0]) < 1e-12);
    CHECK(std::abs(res.depth - ref.depth) < 1e-12);
    CHECK(std::abs(res.opacity - ref.opacity) < 1e-12);
    CHECK(std::abs(res.semantic[2] - ref.semantic[2]) < 1e-12);
}

TEST_CASE("composite matches the scalar reference on random rays") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> us(0, 5), ud(0.01, 0.5), uc(0, 1);
    for (int trial = 0; trial < 500; ++trial) {
        int n = 1 + static_cast<int>(rng() % 8);
        std::vector<Sample> samples(n);
        std::vector<FieldOutputD> outs(n);
        std::vector<double> sigma(n), delta(n), t(n);
        std::vector<std::array<double, 3>> color(n);
        std::vector<std::array<double, 4>> sem(n);
        double tcur = 0.1;
        for (int i = 0; i < n; ++i) {
            tcur += ud(rng);
            samples[i].t = t[i] = tcur;
            samples[i].delta = delta[i] = ud(rng);
            outs[i].sigma = sigma[i] = us(rng);
            for (int k = 0; k < 3; ++k) color[i][k] = uc(rng);
            for (int k = 0; k < 4; ++k) sem[i][k] = uc(rng);
            outs[i].color = Vec3(color[i][0], color[i][1], color[i][2]);
            outs[i].semantic = Eigen::Vector4d(sem[i][0], sem[i][1], sem[i][2], sem[i][3]);
        }
        auto res = composite(samples, outs);
        auto ref = oracle::scalar_composite(sigma, delta, t, color, sem);
        for (int k = 0; k < 3; ++k) CHECK(std::abs(res.color[k] - ref.color[k]) < 1e-10);
        for (int k = 0; k < 4; ++k) CHECK(std::abs(res.semantic[k] - ref.semantic[k]) < 1e-10);
        CHECK(std::abs(res.depth - ref.depth) < 1e-10);
        CHECK(std::abs(res.opacity - ref.opacity) < 1e-10);

        // transmittance monotonicity and opacity bounds
        double trans = 1.0;
        for (int i = 0; i < n; ++i) {
            double next = trans * (1 - res.alphas[i]);
            CHECK(next <= trans + 1e-15);
            trans = next;
        }
        CHECK(res.opacity >= 0.0);
        CHECK(res.opacity <= 1.0 + 1e-12);
    }
}

TEST_CASE("opacity saturates once sigma*delta is large") {
    std::vector<Sample> samples(2);
    samples[0].t = 1;
    samples[0].delta = 1.0;
    samples[1].t = 2;
    samples[1].delta = 1.0;
    auto outs = constant_outputs(2, 30.0, Vec3(1, 0, 0));
    auto res = composite(samples, outs);
    CHECK(res.opacity >= 1.0 - 1e-12);
}

TEST_CASE("composite_backward closed form and finite differences") {
    // single sample: d c(r) / d sigma = delta * exp(-sigma delta) * c1
    std::vector<Sample> one(1);
    one[0].t = 1.5;
    one[0].delta = 0.7;
    std::vector<FieldOutputD> outs = constant_outputs(1, 1.3, Vec3(0.4, 0.6, 0.8));
    auto res = composite(one, outs);
    auto g = composite_backward(one, outs, res, Vec3(1, 0, 0), 0, Eigen::Vector4d::Zero(), 0);
    double expect = 0.7 * std::exp(-1.3 * 0.7) * 0.4;
    CHECK(g.d_sigma[0] == doctest::Approx(expect).epsilon(1e-12));

    // zero upstream -> zero grads
    auto gz = composite_backward(one, outs, res, Vec3::Zero(), 0, Eigen::Vector4d::Zero(), 0);
    CHECK(gz.d_sigma[0] == 0.0);
    CHECK(gz.d_color[0].norm() == 0.0);

    // random rays against finite differences
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> us(0.1, 3), ud(0.05, 0.4), uc(0, 1), ug(-1, 1);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 1 + static_cast<int>(rng() % 5);
        std::vector<Sample> samples(n);
        std::vector<FieldOutputD> o(n);
        double tcur = 0.2;
        for (int i = 0; i < n; ++i) {
            tcur += ud(rng);
            samples[i].t = tcur;
            samples[i].delta = ud(rng);
            o[i].sigma = us(rng);
            o[i].color = Vec3(uc(rng), uc(rng), uc(rng));
            o[i].semantic = Eigen::Vector4d(uc(rng), uc(rng), uc(rng), uc(rng));
        }
        Vec3 dc(ug(rng), ug(rng), ug(rng));
        double dd = ug(rng), dop = ug(rng);
        Eigen::Vector4d ds(ug(rng), ug(rng), ug(rng), ug(rng));
        auto scalar_loss = [&]() {
            auto r = composite(samples, o);
            return dc.dot(r.color) + dd * r.depth + ds.dot(r.semantic) + dop * r.opacity;
        };
        auto res2 = composite(samples, o);
        auto grads = composite_backward(samples, o, res2, dc, dd, ds, dop);
        const double h = 1e-6;
        for (int i = 0; i < n; ++i) {
            double saved = o[i].sigma;
            o[i].sigma = saved + h;
            double lp = scalar_loss();
            o[i].sigma = saved - h;
            double lm = scalar_loss();
            o[i].sigma = saved;
            double fd = (lp - lm) / (2 * h);
            CHECK(std::abs(fd - grads.d_sigma[i]) /
                      std::max({std::abs(fd), std::abs(grads.d_sigma[i]), 1e-4}) <
                  1e-4);
            // color gradient is w_i * dc
            for (int k = 0; k < 3; ++k) {
                double savedc = o[i].color[k];
                o[i].color[k] = savedc + h;
                double lpc = scalar_loss();
                o[i].color[k] = savedc - h;
                double lmc = scalar_loss();
                o[i].color[k] = savedc;
                double fdc = (lpc - lmc) / (2 * h);
                CHECK(std::abs(fdc - grads.d_color[i][k]) < 1e-6);
            }
        }
    }
}

TEST_CASE("march_ray on an all-empty volume returns nothing") {
    SemanticVolume vol(Vec3(-1, -1, -1), 0.125, Eigen::Vector3i(16, 16, 16));
    Registry reg;
    MarchConfig cfg;
    auto samples = march_ray(Ray{Vec3(0, 0, -2), Vec3(0, 0, 1)}, vol, reg, nullptr, cfg);
    CHECK(samples.empty());
}

TEST_CASE("march_ray emits exactly one P sample for a single slab") {
    SemanticVolume vol(Vec3(-1, -1, 0), 0.05, Eigen::Vector3i(40, 40, 60));
    Registry reg = single_plane_registry(Vec3(0, 0, 1), 2.0);
    // mark the slab of voxels containing z = 2
    for (int iz = 0; iz < 60; ++iz)
        for (int iy = 0; iy < 40; ++iy)
            for (int ix = 0; ix < 40; ++ix)
                if (std::abs(vol.voxel_center(ix, iy, iz).z() - 2.0) < 0.05)
                    vol.label(ix, iy, iz) = 1;

    MarchConfig cfg;
    auto samples = march_ray(Ray{Vec3(0.01, 0.02, 0.0), Vec3(0, 0, 1)}, vol, reg, nullptr, cfg);
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].kind == SampleKind::Primitive);
    CHECK(samples[0].plane_id == 1);
    CHECK(samples[0].delta == cfg.delta_p);
    CHECK(samples[0].position.z() == doctest::Approx(2.0).epsilon(1e-9));

    // oblique crossing still yields exactly one sample
    Vec3 dir = Vec3(0.3, 0.2, 1).normalized();
    auto oblique = march_ray(Ray{Vec3(-0.4, -0.5, 0.0), dir}, vol, reg, nullptr, cfg);
    REQUIRE(oblique.size() == 1);
    CHECK(oblique[0].kind == SampleKind::Primitive);
}

TEST_CASE("march_ray matches the fine-step reference marcher") {
    // volume with an E -> P(wall) -> D band layout along z, built by hand
    SemanticVolume vol(Vec3(-1, -1, 0), 0.04, Eigen::Vector3i(50, 50, 75));
    Registry reg = single_plane_registry(Vec3(0.1, 0.05, 1).normalized(), 2.0);
    const Plane& wall = reg.planes()[0];
    for (int iz = 0; iz < 75; ++iz)
        for (int iy = 0; iy < 50; ++iy)
            for (int ix = 0; ix < 50; ++ix) {
                Vec3 c = vol.voxel_center(ix, iy, iz);
                double sd = wall.signed_distance(c);
                if (std::abs(sd) < vol.psi())
                    vol.label(ix, iy, iz) = 1;
                else if (sd >= vol.psi() && sd < 6 * vol.psi())
                    vol.label(ix, iy, iz) = 0;
            }

    MarchConfig cfg;
    std::mt19937_64 rng(47);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int trial = 0; trial < 40; ++trial) {
        Vec3 dir = (Vec3(0.2 * u(rng), 0.2 * u(rng), 1.0)).normalized();
        Ray ray{Vec3(u(rng), u(rng), 0.01), dir};
        auto got = march_ray(ray, vol, reg, nullptr, cfg);
        auto ref = oracle::reference_march(ray, vol, reg, cfg.step_scale * vol.voxel_size(),
                                           cfg.delta_p, cfg.max_steps);
        REQUIRE(got.size() == ref.size());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(std::abs(got[i].t - ref[i].t) < 1e-6);
            CHECK(std::abs(got[i].delta - ref[i].delta) < 1e-6);
            CHECK((got[i].kind == SampleKind::Primitive) == ref[i].primitive);
            if (ref[i].primitive) CHECK(got[i].plane_id == ref[i].plane_id);
        }
    }
}

TEST_CASE("dense marching converges to a fine-step quadrature oracle") {
    SemanticVolume vol(Vec3(0, 0, 0), 0.05, Eigen::Vector3i(20, 20, 20));
    std::fill(vol.labels().begin(), vol.labels().end(), 0);  // all D
    Registry reg;

    auto sigma_field = [](const Vec3& x) {
        return 1.5 + std::sin(3 * x.x()) * std::cos(2 * x.y()) + 0.5 * std::sin(4 * x.z());
    };
    auto color_field = [](const Vec3& x) {
        return Vec3(0.5 + 0.4 * std::sin(2 * x.x()), 0.5 + 0.3 * std::cos(3 * x.y()),
                    0.5 + 0.2 * std::sin(5 * x.z()));
    };

    auto render_with = [&](double step_scale) {
        MarchConfig cfg;
        cfg.step_scale = step_scale;
        cfg.max_steps = 100000;
        Ray ray{Vec3(0.31, 0.42, -0.5), Vec3(0.12, 0.07, 1.0).normalized()};
        auto samples = march_ray(ray, vol, reg, nullptr, cfg);
        std::vector<FieldOutputD> outs(samples.size());
        for (size_t i = 0; i < samples.size(); ++i) {
            outs[i].sigma = sigma_field(samples[i].position);
            outs[i].color = color_field(samples[i].position);
        }
        return composite(samples, outs);
    };

    auto coarse = render_with(0.125);   // step = h/8
    auto fine = render_with(0.015625);  // step = h/64 quadrature reference
    CHECK(std::abs(coarse.opacity - fine.opacity) < 0.01);
    CHECK((coarse.color - fine.color).norm() / fine.color.norm() < 0.01);
    CHECK(std::abs(coarse.depth - fine.depth) / fine.depth < 0.01);
}

TEST_CASE("sampling economy: one sample per distinct plane crossing") {
    SemanticVolume vol(Vec3(-1, -1, 0), 0.05, Eigen::Vector3i(40, 40, 80));
    Registry reg = single_plane_registry(Vec3(0, 0, 1), 1.0);
    LocalDetection det;
    Plane second;
    second.normal = Vec3(0, 0, 1);
    second.offset = 3.0;
    det.planes = {second};
    det.planes[0].id = 1;
    det.semantic = Image<std::int32_t>(1, 1, 0);
    Frame dummy;
    dummy.semantic = Image<std::int32_t>(1, 1, 0);
    reg.merge_detection(det, dummy);

    for (int iz = 0; iz < 80; ++iz)
        for (int iy = 0; iy < 40; ++iy)
            for (int ix = 0; ix < 40; ++ix) {
                double z = vol.voxel_center(ix, iy, iz).z();
                if (std::abs(z - 1.0) < 2 * vol.voxel_size()) vol.label(ix, iy, iz) = 1;
                if (std::abs(z - 3.0) < 2 * vol.voxel_size()) vol.label(ix, iy, iz) = 2;
            }
    MarchConfig cfg;
    auto samples = march_ray(Ray{Vec3(0.0, 0.0, 0.01), Vec3(0, 0, 1)}, vol, reg, nullptr, cfg);
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].plane_id == 1);
    CHECK(samples[1].plane_id == 2);
    CHECK(samples[0].t < samples[1].t);
}

TEST_CASE("render_image: all-empty volume gives black, zero-opacity images") {
    SemanticVolume vol(Vec3(-1, -1, -1), 0.125, Eigen::Vector3i(16, 16, 16));
    Registry reg;
    Field field(EncodingConfig{}, vol.origin(), vol.max_corner(), 1);
    Intrinsics K = box_room_intrinsics(16, 16);
    auto img = render_image(Pose{}, K, vol, reg, field, nullptr, MarchConfig{}, 2);
    for (const auto& px : img.color.data) {
        CHECK(px.r == 0.0f);
        CHECK(px.g == 0.0f);
        CHECK(px.b == 0.0f);
    }
    for (float o : img.opacity.data) CHECK(o == 0.0f);
}

TEST_CASE("render_image: emissive plane appears at the analytic depth") {
    SemanticVolume vol(Vec3(-2, -2, 0), 0.05, Eigen::Vector3i(80, 80, 60));
    Registry reg = single_plane_registry(Vec3(0, 0, 1), 2.0);
    for (int iz = 0; iz < 60; ++iz)
        for (int iy = 0; iy < 80; ++iy)
            for (int ix = 0; ix < 80; ++ix)
                if (std::abs(vol.voxel_center(ix, iy, iz).z() - 2.0) < vol.psi())
                    vol.label(ix, iy, iz) = 1;

    // constant-output field: opaque warm gray
    Field field(EncodingConfig{}, vol.origin(), vol.max_corner(), 1);
    field.tensor("w_sigma").value.setZero();
    field.tensor("b_sigma").value.setConstant(std::log(50.0f));
    field.tensor("w4").value.setZero();
    field.tensor("b4").value.setZero();  // sigmoid(0) = 0.5

    Intrinsics K = box_room_intrinsics(32, 32);
    Pose cam;  // identity at origin looking +z
    auto img = render_image(cam, K, vol, reg, field, nullptr, MarchConfig{}, 2);
    double alpha = 1.0 - std::exp(-50.0 * 1.0);
    for (int r = 8; r < 24; ++r)
        for (int c = 8; c < 24; ++c) {
            CHECK(img.opacity.at(r, c) == doctest::Approx(alpha).epsilon(1e-5));
            CHECK(img.color.at(r, c).r == doctest::Approx(0.5 * alpha).epsilon(1e-4));
            CHECK(img.depth.at(r, c) == doctest::Approx(2.0).epsilon(0.05));
        }
}

TEST_CASE("render determinism and editing identity") {
    SemanticVolume vol(Vec3(-2, -2, 0), 0.1, Eigen::Vector3i(40, 40, 30));
    Registry reg = single_plane_registry(Vec3(0, 0, 1), 2.0);
    for (int iz = 0; iz < 30; ++iz)
        for (int iy = 0; iy < 40; ++iy)
            for (int ix = 0; ix < 40; ++ix) {
                double z = vol.voxel_center(ix, iy, iz).z();
                if (std::abs(z - 2.0) < vol.psi()) vol.label(ix, iy, iz) = 1;
                if (z > 2.0 + vol.psi() && z < 2.0 + 3 * vol.psi()) vol.label(ix, iy, iz) = 0;
            }
    Field field(EncodingConfig{}, vol.origin(), vol.max_corner(), 9);
    Intrinsics K = box_room_intrinsics(24, 24);

    auto a = render_image(Pose{}, K, vol, reg, field, nullptr, MarchConfig{}, 2);
    auto b = render_image(Pose{}, K, vol, reg, field, nullptr, MarchConfig{}, 2);
    CHECK(std::memcmp(a.color.data.data(), b.color.data.data(),
                      a.color.data.size() * sizeof(Rgb)) == 0);
    CHECK(std::memcmp(a.depth.data.data(), b.depth.data.data(),
                      a.depth.data.size() * sizeof(float)) == 0);

    EditState empty_edit(vol);
    auto c = render_image(Pose{}, K, vol, reg, field, &empty_edit, MarchConfig{}, 2);
    CHECK(std::memcmp(a.color.data.data(), c.color.data.data(),
                      a.color.data.size() * sizeof(Rgb)) == 0);
    CHECK(std::memcmp(a.opacity.data.data(), c.opacity.data.data(),
                      a.opacity.data.size() * sizeof(float)) == 0);
}
