#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracle_helpers.hpp"
#include "primfuse/field.hpp"

#include <cstdio>
#include <filesystem>
#include <random>

using namespace primfuse;

namespace {

EncodingConfig toy_config() {
    EncodingConfig cfg;
    cfg.levels = 2;
    cfg.base_resolution = 4;
    cfg.per_level_scale = 2.0;
    cfg.features_per_level = 2;
    cfg.sh_degree = 1;
    cfg.hidden_dim = 16;
    return cfg;
}

}  // namespace

TEST_CASE("encode_position returns vertex features verbatim") {
    EncodingConfig cfg = toy_config();
    cfg.levels = 1;
    FieldT<double> field(cfg, Vec3(0, 0, 0), Vec3(3, 3, 3), 42);
    // bbox [0,3]^3 with 4 vertices per axis: vertex (1,2,0) sits at x=(1,2,0)
    auto& grid = field.tensor("grid0");
    std::int64_t base = ((0 * 4 + 2) * 4 + 1) * 2;
    grid.value[base] = 0.625;
    grid.value[base + 1] = -0.25;
    auto feat = field.encode_position(Vec3(1, 2, 0));
    CHECK(feat[0] == 0.625);
    CHECK(feat[1] == -0.25);
}

TEST_CASE("encode_position at a cell center averages the 8 corners") {
    EncodingConfig cfg = toy_config();
    cfg.levels = 1;
    cfg.features_per_level = 1;
    FieldT<double> field(cfg, Vec3(0, 0, 0), Vec3(3, 3, 3), 42);
    auto& grid = field.tensor("grid0");
    double sum = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                std::int64_t idx = ((dz * 4 + dy) * 4 + dx);
                grid.value[idx] = 0.1 * (1 + dx + 2 * dy + 4 * dz);
                sum += grid.value[idx];
            }
    auto feat = field.encode_position(Vec3(0.5, 0.5, 0.5));
    CHECK(feat[0] == doctest::Approx(sum / 8).epsilon(1e-15));
}

TEST_CASE("encode_position matches the scalar trilinear oracle") {
    EncodingConfig cfg = toy_config();
    FieldT<double> field(cfg, Vec3(-1, -1, -1), Vec3(1, 1, 1), 7);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 200; ++trial) {
        Vec3 x(u(rng), u(rng), u(rng));
        auto feat = field.encode_position(x);
        for (int l = 0; l < cfg.levels; ++l) {
            auto& grid = field.tensor("grid" + std::to_string(l));
            std::vector<double> gv(grid.value.data(), grid.value.data() + grid.value.size());
            int n = cfg.level_resolution(l);
            Vec3 x01 = (x - field.bbox_min()).cwiseQuotient(field.bbox_max() - field.bbox_min());
            auto ref = oracle::scalar_trilinear(gv, n, cfg.features_per_level, x01.x(), x01.y(),
                                                x01.z());
            for (int f = 0; f < cfg.features_per_level; ++f)
                CHECK(std::abs(feat[l * cfg.features_per_level + f] - ref[f]) < 1e-12);
        }
    }
}

TEST_CASE("sh_basis pinned values and error handling") {
    double out[16];
    sh_basis(Vec3(0.3, -0.5, 0.8).normalized(), 2, out);
    CHECK(out[0] == doctest::Approx(0.28209479).epsilon(1e-7));
    sh_basis(Vec3(0, 0, 1), 1, out);
    CHECK(out[2] == doctest::Approx(0.48860251).epsilon(1e-7));
    CHECK_THROWS_AS(sh_basis(Vec3(0, 0, 2), 1, out), std::invalid_argument);
    CHECK_THROWS_AS(sh_basis(Vec3(0, 0, 1), 4, out), std::invalid_argument);
}

TEST_CASE("sh_basis Monte-Carlo orthonormality") {
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> uz(-1, 1), uphi(0, 2 * M_PI);
    constexpr int degree = 3, dim = 16;
    std::vector<double> gram(dim * dim, 0.0);
    const int n = 1000000;
    double out[16];
    for (int i = 0; i < n; ++i) {
        double z = uz(rng), phi = uphi(rng);
        double r = std::sqrt(std::max(0.0, 1 - z * z));
        sh_basis(Vec3(r * std::cos(phi), r * std::sin(phi), z), degree, out);
        for (int a = 0; a < dim; ++a)
            for (int b = a; b < dim; ++b) gram[a * dim + b] += out[a] * out[b];
    }
    // E[Y_a Y_b] over the sphere is delta_ab / (4 pi)
    for (int a = 0; a < dim; ++a)
        for (int b = a; b < dim; ++b) {
            double est = gram[a * dim + b] / n * 4 * M_PI;
            CHECK(std::abs(est - (a == b ? 1.0 : 0.0)) < 5e-3);
        }
}

TEST_CASE("query with zero output layers gives sigma=1, color=0.5") {
    FieldT<double> field(toy_config(), Vec3(-1, -1, -1), Vec3(1, 1, 1), 3);
    field.tensor("w_sigma").value.setZero();
    field.tensor("b_sigma").value.setZero();
    field.tensor("w4").value.setZero();
    field.tensor("b4").value.setZero();
    auto out = field.query(Vec3(0.2, -0.1, 0.4), Vec3(0, 0, 1));
    CHECK(out.sigma == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.color.x() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out.color.y() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out.color.z() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("semantic head is view-independent bitwise") {
    FieldT<double> field(toy_config(), Vec3(-1, -1, -1), Vec3(1, 1, 1), 5);
    Vec3 x(0.3, 0.2, -0.4);
    auto a = field.query(x, Vec3(0, 0, 1));
    auto b = field.query(x, Vec3(1, 0, 0).normalized());
    CHECK((a.semantic.array() == b.semantic.array()).all());
    CHECK(a.sigma == b.sigma);
}

TEST_CASE("sigma is nonnegative everywhere") {
    FieldT<double> field(toy_config(), Vec3(-1, -1, -1), Vec3(1, 1, 1), 17);
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1.5, 1.5);  // includes out-of-bounds clamps
    for (int i = 0; i < 200; ++i) {
        auto out = field.query(Vec3(u(rng), u(rng), u(rng)), oracle::random_unit(rng));
        CHECK(out.sigma >= 0.0);
        CHECK(out.sigma <= FieldT<double>::kSigmaCap);
        CHECK(out.color.minCoeff() >= 0.0);
        CHECK(out.color.maxCoeff() <= 1.0);
    }
}

TEST_CASE("backward gradients match central finite differences") {
    FieldT<double> field(toy_config(), Vec3(-1, -1, -1), Vec3(1, 1, 1), 11);
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(-0.9, 0.9);

    // Move pre-activations away from the ReLU kinks: the default 1e-4 grid
    // init would leave them within the finite-difference step.
    std::uniform_real_distribution<double> gf(-0.5, 0.5), bf(-0.1, 0.1);
    for (auto& t : field.tensors()) {
        if (t.name.rfind("grid", 0) == 0)
            for (std::int64_t i = 0; i < t.size(); ++i) t.value[i] = gf(rng);
        if (t.name == "b1" || t.name == "b2" || t.name == "b3")
            for (std::int64_t i = 0; i < t.size(); ++i) t.value[i] = bf(rng);
    }

    const int batch = 3;
    Eigen::Matrix<double, 3, Eigen::Dynamic> pos(3, batch), dirs(3, batch);
    for (int i = 0; i < batch; ++i) {
        pos.col(i) = Vec3(u(rng), u(rng), u(rng));
        dirs.col(i) = oracle::random_unit(rng);
    }

    // Scalar objective L = sum_i (2 sigma_i + c_i . (1,2,3) + s_i . (1,-1,2,0.5))
    Vec3 wc(1, 2, 3);
    Eigen::Vector4d ws(1, -1, 2, 0.5);
    auto objective = [&]() {
        FieldT<double>::Cache cache;
        field.forward(pos, dirs, cache);
        double L = 0;
        for (int i = 0; i < batch; ++i) {
            L += 2.0 * cache.sigma[i];
            L += wc.dot(cache.color.col(i));
            L += ws.dot(cache.sem.col(i));
        }
        return L;
    };

    FieldT<double>::Cache cache;
    field.forward(pos, dirs, cache);
    field.zero_grad();
    FieldT<double>::VecX d_sigma = FieldT<double>::VecX::Constant(batch, 2.0);
    FieldT<double>::MatX d_color(3, batch), d_sem(4, batch);
    for (int i = 0; i < batch; ++i) {
        d_color.col(i) = wc;
        d_sem.col(i) = ws;
    }
    field.backward(cache, d_sigma, d_color, d_sem);

    // probe 100 random parameters across all tensors
    std::uniform_int_distribution<int> tpick(0, static_cast<int>(field.tensors().size()) - 1);
    const double h = 1e-5;
    int checked = 0;
    while (checked < 100) {
        auto& tensor = field.tensors()[tpick(rng)];
        std::uniform_int_distribution<std::int64_t> ipick(0, tensor.size() - 1);
        std::int64_t i = ipick(rng);
        double saved = tensor.value[i];
        tensor.value[i] = saved + h;
        double lp = objective();
        tensor.value[i] = saved - h;
        double lm = objective();
        tensor.value[i] = saved;
        double fd = (lp - lm) / (2 * h);
        double an = tensor.grad[i];
        if (std::abs(fd) < 1e-9 && std::abs(an) < 1e-9) {
            ++checked;
            continue;
        }
        CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) < 1e-4);
        ++checked;
    }
}

TEST_CASE("backward linearity: batch gradient equals the sum of singles") {
    FieldT<double> field(toy_config(), Vec3(-1, -1, -1), Vec3(1, 1, 1), 19);
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    Eigen::Matrix<double, 3, Eigen::Dynamic> pos(3, 2), dirs(3, 2);
    for (int i = 0; i < 2; ++i) {
        pos.col(i) = Vec3(u(rng), u(rng), u(rng));
        dirs.col(i) = oracle::random_unit(rng);
    }

    FieldT<double>::Cache cache;
    field.forward(pos, dirs, cache);
    field.zero_grad();
    FieldT<double>::VecX ds = FieldT<double>::VecX::Ones(2);
    FieldT<double>::MatX dc = FieldT<double>::MatX::Ones(3, 2);
    FieldT<double>::MatX ds4 = FieldT<double>::MatX::Ones(4, 2);
    field.backward(cache, ds, dc, ds4);
    auto batch_grad = field.tensor("w1").grad;

    field.zero_grad();
    for (int i = 0; i < 2; ++i) {
        Eigen::Matrix<double, 3, Eigen::Dynamic> p1 = pos.col(i), d1 = dirs.col(i);
        FieldT<double>::Cache c1;
        field.forward(p1, d1, c1);
        field.backward(c1, FieldT<double>::VecX::Ones(1), FieldT<double>::MatX::Ones(3, 1),
                       FieldT<double>::MatX::Ones(4, 1));
    }
    CHECK((field.tensor("w1").grad - batch_grad).cwiseAbs().maxCoeff() < 1e-12);

    // zero upstream gradient leaves parameter gradients zero
    field.zero_grad();
    field.backward(cache, FieldT<double>::VecX::Zero(2), FieldT<double>::MatX::Zero(3, 2),
                   FieldT<double>::MatX::Zero(4, 2));
    for (const auto& t : field.tensors()) CHECK(t.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoint round-trip preserves outputs") {
    Field field(EncodingConfig{}, Vec3(-1, -1, -1), Vec3(1, 1, 1), 23);
    std::string path = (std::filesystem::temp_directory_path() / "pf_field_test.bin").string();
    field.save_file(path);
    Field loaded = Field::load_file(path);
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    for (int i = 0; i < 20; ++i) {
        Vec3 x(u(rng), u(rng), u(rng));
        Vec3 d = oracle::random_unit(rng);
        auto a = field.query(x, d);
        auto b = loaded.query(x, d);
        CHECK(a.sigma == b.sigma);
        CHECK((a.color - b.color).norm() == 0.0);
        CHECK((a.semantic - b.semantic).norm() == 0.0);
    }
    std::remove(path.c_str());
}

TEST_CASE("adam step moves parameters and keeps them finite") {
    Field field(toy_config(), Vec3(-1, -1, -1), Vec3(1, 1, 1), 29);
    Eigen::Matrix<double, 3, Eigen::Dynamic> pos(3, 4), dirs(3, 4);
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    for (int i = 0; i < 4; ++i) {
        pos.col(i) = Vec3(u(rng), u(rng), u(rng));
        dirs.col(i) = oracle::random_unit(rng);
    }
    Field::Cache cache;
    field.forward(pos, dirs, cache);
    field.zero_grad();
    field.backward(cache, Field::VecX::Ones(4), Field::MatX::Ones(3, 4), Field::MatX::Ones(4, 4));
    auto before = field.tensor("w1").value;
    field.adam_step(1e-2);
    CHECK((field.tensor("w1").value - before).cwiseAbs().maxCoeff() > 0.0);
    for (const auto& t : field.tensors())
        for (std::int64_t i = 0; i < t.size(); ++i) CHECK(std::isfinite(t.value[i]));
}
