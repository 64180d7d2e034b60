// Python bindings for the core reconstruction operations.

#include "primfuse/edit_script.hpp"
#include "primfuse/metrics.hpp"
#include "primfuse/scene_synth.hpp"
#include "primfuse/trainer.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace primfuse;

namespace {

Intrinsics intrinsics_from_tuple(const std::tuple<double, double, double, double, int, int>& t) {
    Intrinsics K;
    std::tie(K.fx, K.fy, K.cx, K.cy, K.width, K.height) = t;
    return K;
}

Pose pose_from_matrix(const Eigen::Matrix4d& m) {
    Pose p = Pose::from_matrix(m);
    if (!p.is_valid(1e-5)) throw std::invalid_argument("pose rotation is not orthonormal");
    return p;
}

Frame frame_from_arrays(py::array_t<float, py::array::c_style | py::array::forcecast> color,
                        py::array_t<float, py::array::c_style | py::array::forcecast> depth,
                        const Eigen::Matrix4d& pose,
                        const std::tuple<double, double, double, double, int, int>& intrinsics,
                        int timestamp) {
    auto cb = color.unchecked<3>();
    auto db = depth.unchecked<2>();
    if (cb.shape(2) != 3 || cb.shape(0) != db.shape(0) || cb.shape(1) != db.shape(1))
        throw std::invalid_argument("color must be HxWx3 and match depth HxW");
    Frame f;
    int h = static_cast<int>(db.shape(0)), w = static_cast<int>(db.shape(1));
    f.color = Image<Rgb>(h, w);
    f.depth = Image<float>(h, w, 0.0f);
    f.semantic = Image<std::int32_t>(h, w, 0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            f.color.at(r, c) = {cb(r, c, 0), cb(r, c, 1), cb(r, c, 2)};
            f.depth.at(r, c) = db(r, c);
        }
    f.pose = pose_from_matrix(pose);
    f.intrinsics = intrinsics_from_tuple(intrinsics);
    f.timestamp = timestamp;
    if (!f.dims_consistent())
        throw std::invalid_argument("intrinsics width/height must match the images");
    return f;
}

py::array_t<float> color_to_array(const Image<Rgb>& img) {
    py::array_t<float> out({img.height, img.width, 3});
    auto b = out.mutable_unchecked<3>();
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            b(r, c, 0) = img.at(r, c).r;
            b(r, c, 1) = img.at(r, c).g;
            b(r, c, 2) = img.at(r, c).b;
        }
    return out;
}

template <typename T>
py::array_t<T> plane_to_array(const Image<T>& img) {
    py::array_t<T> out({img.height, img.width});
    auto b = out.template mutable_unchecked<2>();
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) b(r, c) = img.at(r, c);
    return out;
}

template <typename T>
Image<T> array_to_plane(py::array_t<T, py::array::c_style | py::array::forcecast> arr) {
    auto b = arr.template unchecked<2>();
    Image<T> img(static_cast<int>(b.shape(0)), static_cast<int>(b.shape(1)));
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) img.at(r, c) = b(r, c);
    return img;
}

Image<Rgb> array_to_color(py::array_t<float, py::array::c_style | py::array::forcecast> arr) {
    auto b = arr.unchecked<3>();
    if (b.shape(2) != 3) throw std::invalid_argument("expected HxWx3 array");
    Image<Rgb> img(static_cast<int>(b.shape(0)), static_cast<int>(b.shape(1)));
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) img.at(r, c) = {b(r, c, 0), b(r, c, 1), b(r, c, 2)};
    return img;
}

/// End-to-end reconstruction handle: fuse posed RGB-D frames, train, render.
class Reconstruction {
public:
    Reconstruction(const Vec3& bbox_min, const Vec3& bbox_max, int dims, std::uint64_t seed)
        : vol_(bbox_min, (bbox_max - bbox_min).maxCoeff() / dims,
               Eigen::Vector3i::Constant(dims)),
          field_(EncodingConfig{}, vol_.origin(), vol_.max_corner(), seed) {
        train_cfg_.seed = seed;
        train_cfg_.rays_per_batch = 1024;
        trainer_ = std::make_unique<Trainer>(vol_, reg_, field_, train_cfg_, march_cfg_);
    }

    py::dict fuse(py::array_t<float, py::array::c_style | py::array::forcecast> color,
                  py::array_t<float, py::array::c_style | py::array::forcecast> depth,
                  const Eigen::Matrix4d& pose,
                  const std::tuple<double, double, double, double, int, int>& intrinsics) {
        Frame f = frame_from_arrays(color, depth, pose, intrinsics, frame_index_++);
        LocalDetection det = detect_planes(f.depth, f.intrinsics, f.pose, det_cfg_);
        reg_.merge_detection(det, f);
        FuseStats st = vol_.fuse_frame(f, reg_);
        trainer_->add_frame(f);
        py::dict out;
        out["planes_detected"] = det.planes.size();
        out["alive_planes"] = reg_.alive_count();
        out["to_p"] = st.to_p;
        out["to_d"] = st.to_d;
        out["to_e"] = st.to_e;
        return out;
    }

    double train(int steps) {
        double last = 0.0;
        for (int i = 0; i < steps; ++i) last = trainer_->train_step(step_++).l_total;
        return last;
    }

    py::dict render(const Eigen::Matrix4d& pose,
                    const std::tuple<double, double, double, double, int, int>& intrinsics) {
        RenderedImages img = render_image(pose_from_matrix(pose), intrinsics_from_tuple(intrinsics),
                                          vol_, reg_, field_, nullptr, march_cfg_, 0);
        py::dict out;
        out["color"] = color_to_array(img.color);
        out["depth"] = plane_to_array(img.depth);
        out["opacity"] = plane_to_array(img.opacity);
        return out;
    }

    std::vector<std::tuple<int, Eigen::Vector3d, double, bool>> planes() const {
        std::vector<std::tuple<int, Eigen::Vector3d, double, bool>> out;
        for (const auto& p : reg_.planes()) out.emplace_back(p.id, p.normal, p.offset, p.alive);
        return out;
    }

    std::int64_t delete_plane(int id) { return vol_.delete_primitive(id, reg_); }

    py::array_t<std::int32_t> labels_slice(int iz) {
        const auto& dims = vol_.dims();
        if (iz < 0 || iz >= dims.z()) throw std::out_of_range("slice index");
        py::array_t<std::int32_t> out({dims.y(), dims.x()});
        auto b = out.mutable_unchecked<2>();
        for (int iy = 0; iy < dims.y(); ++iy)
            for (int ix = 0; ix < dims.x(); ++ix) b(iy, ix) = vol_.label(ix, iy, iz);
        return out;
    }

private:
    SemanticVolume vol_;
    Registry reg_;
    Field field_;
    DetectorConfig det_cfg_;
    MarchConfig march_cfg_;
    TrainConfig train_cfg_;
    std::unique_ptr<Trainer> trainer_;
    int frame_index_ = 0;
    int step_ = 0;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "primitive-aware radiance fusion core";

    m.def("sh_basis", [](const Eigen::Vector3d& d, int degree) {
        std::vector<double> out((degree + 1) * (degree + 1));
        sh_basis(d, degree, out.data());
        return out;
    });

    m.def("backproject", [](double u, double v, double depth,
                            const std::tuple<double, double, double, double, int, int>& K,
                            const Eigen::Matrix4d& pose) {
        return backproject(u, v, depth, intrinsics_from_tuple(K), pose_from_matrix(pose));
    });

    m.def("project", [](const Eigen::Vector3d& x,
                        const std::tuple<double, double, double, double, int, int>& K,
                        const Eigen::Matrix4d& pose) {
        Projection p = project(x, intrinsics_from_tuple(K), pose_from_matrix(pose));
        return py::make_tuple(p.u, p.v, p.z, p.behind);
    });

    m.def("intersect_ray_plane",
          [](const Eigen::Vector3d& origin, const Eigen::Vector3d& direction,
             const Eigen::Vector3d& normal, double offset) -> py::object {
              Plane plane;
              plane.normal = normal.normalized();
              plane.offset = offset;
              auto hit = intersect_ray_plane(Ray{origin, direction.normalized()}, plane);
              if (!hit) return py::none();
              return py::make_tuple(hit->point, hit->t);
          });

    m.def("fit_plane_pca", [](py::array_t<double, py::array::c_style | py::array::forcecast> pts) {
        auto b = pts.unchecked<2>();
        if (b.shape(1) != 3) throw std::invalid_argument("points must be Nx3");
        std::vector<Vec3> points(b.shape(0));
        for (py::ssize_t i = 0; i < b.shape(0); ++i)
            points[i] = Vec3(b(i, 0), b(i, 1), b(i, 2));
        PlaneFit fit = fit_plane_pca(points);
        return py::make_tuple(fit.plane.normal, fit.plane.offset, fit.rms_error);
    });

    m.def("plane_distance", [](const Eigen::Vector3d& na, double da, const Eigen::Vector3d& nb,
                               double db) {
        Plane a, b;
        a.normal = na;
        a.offset = da;
        b.normal = nb;
        b.offset = db;
        return plane_distance(a, b);
    });

    m.def("detect_planes",
          [](py::array_t<float, py::array::c_style | py::array::forcecast> depth,
             const std::tuple<double, double, double, double, int, int>& K,
             const Eigen::Matrix4d& pose, int cell_size, int min_support, double flatness,
             double merge_angle_deg) {
              DetectorConfig cfg;
              cfg.cell_size = cell_size;
              cfg.min_support = min_support;
              cfg.flatness_threshold = flatness;
              cfg.offset_merge_dist = 2.0 * flatness;
              cfg.normal_merge_angle = merge_angle_deg * M_PI / 180.0;
              LocalDetection det = detect_planes(array_to_plane<float>(depth),
                                                 intrinsics_from_tuple(K), pose_from_matrix(pose),
                                                 cfg);
              std::vector<std::tuple<Eigen::Vector3d, double, std::int64_t>> planes;
              for (const auto& p : det.planes)
                  planes.emplace_back(p.normal, p.offset, p.support_count);
              return py::make_tuple(planes, plane_to_array(det.semantic));
          },
          py::arg("depth"), py::arg("intrinsics"), py::arg("pose"), py::arg("cell_size") = 16,
          py::arg("min_support") = 512, py::arg("flatness") = 0.005,
          py::arg("merge_angle_deg") = 5.0);

    m.def("psnr", [](py::array_t<float, py::array::c_style | py::array::forcecast> a,
                     py::array_t<float, py::array::c_style | py::array::forcecast> b) {
        return psnr(array_to_color(a), array_to_color(b));
    });
    m.def("ssim", [](py::array_t<float, py::array::c_style | py::array::forcecast> a,
                     py::array_t<float, py::array::c_style | py::array::forcecast> b) {
        return ssim(array_to_color(a), array_to_color(b));
    });

    m.def("box_room_frame",
          [](const Eigen::Matrix4d& pose, int width, int height) {
              SceneSpec spec = box_room();
              Frame f = raytrace_frame(spec, pose_from_matrix(pose),
                                       box_room_intrinsics(width, height));
              py::dict out;
              out["color"] = color_to_array(f.color);
              out["depth"] = plane_to_array(f.depth);
              out["semantic"] = plane_to_array(f.semantic);
              return out;
          },
          py::arg("pose"), py::arg("width") = 64, py::arg("height") = 64);

    m.def("box_room_training_poses", [](int n) {
        std::vector<Eigen::Matrix4d> out;
        for (const auto& p : box_room_training_poses(n)) out.push_back(p.matrix());
        return out;
    });

    m.def("box_room_intrinsics", [](int width, int height) {
        Intrinsics K = box_room_intrinsics(width, height);
        return py::make_tuple(K.fx, K.fy, K.cx, K.cy, K.width, K.height);
    }, py::arg("width") = 64, py::arg("height") = 64);

    py::class_<Reconstruction>(m, "Reconstruction")
        .def(py::init<const Vec3&, const Vec3&, int, std::uint64_t>(), py::arg("bbox_min"),
             py::arg("bbox_max"), py::arg("dims") = 128, py::arg("seed") = 1)
        .def("fuse", &Reconstruction::fuse, py::arg("color"), py::arg("depth"), py::arg("pose"),
             py::arg("intrinsics"))
        .def("train", &Reconstruction::train, py::arg("steps"))
        .def("render", &Reconstruction::render, py::arg("pose"), py::arg("intrinsics"))
        .def("planes", &Reconstruction::planes)
        .def("delete_plane", &Reconstruction::delete_plane, py::arg("plane_id"))
        .def("labels_slice", &Reconstruction::labels_slice, py::arg("iz"));
}
