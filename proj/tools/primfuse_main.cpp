// primfuse CLI: synthetic dataset generation, primitive-aware fusion,
// radiance field training, rendering, evaluation, and volume editing.

#include "primfuse/config_file.hpp"
#include "primfuse/dataset.hpp"
#include "primfuse/edit_script.hpp"
#include "primfuse/image_io.hpp"
#include "primfuse/metrics.hpp"
#include "primfuse/scene_synth.hpp"
#include "primfuse/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace primfuse;

namespace {

struct GlobalOpts {
    std::uint64_t seed = 1;
    std::string config_path;
    int threads = 0;
    ConfigFile cfg;

    void finalize() {
        if (!config_path.empty() && !loaded_) {
            cfg = ConfigFile::parse_file(config_path);
            loaded_ = true;
        }
    }

private:
    bool loaded_ = false;
};

DetectorConfig detector_config(const ConfigFile& cfg) {
    DetectorConfig d;
    d.cell_size = cfg.get_int("detector.cell_size", d.cell_size);
    d.flatness_threshold = cfg.get_double("detector.flatness", d.flatness_threshold);
    d.min_support = cfg.get_int("detector.min_support", d.min_support);
    d.normal_merge_angle =
        cfg.get_double("detector.normal_merge_deg", d.normal_merge_angle * 180.0 / M_PI) * M_PI /
        180.0;
    d.offset_merge_dist =
        cfg.get_double("detector.offset_merge", 2.0 * d.flatness_threshold);
    return d;
}

void registry_config(const ConfigFile& cfg, Registry& reg) {
    reg.merge_threshold = cfg.get_double("registry.merge_threshold", reg.merge_threshold);
    reg.normal_threshold = cfg.get_double("registry.normal_threshold", reg.normal_threshold);
    reg.history_window = cfg.get_int("registry.history_window", reg.history_window);
}

MarchConfig march_config(const ConfigFile& cfg) {
    MarchConfig m;
    m.step_scale = cfg.get_double("march.step_scale", m.step_scale);
    m.max_steps = cfg.get_int("march.max_steps", m.max_steps);
    m.delta_p = cfg.get_double("march.delta_p", m.delta_p);
    return m;
}

EncodingConfig encoding_config(const ConfigFile& cfg) {
    EncodingConfig e;
    e.levels = cfg.get_int("field.levels", e.levels);
    e.base_resolution = cfg.get_int("field.base_resolution", e.base_resolution);
    e.per_level_scale = cfg.get_double("field.per_level_scale", e.per_level_scale);
    e.features_per_level = cfg.get_int("field.features", e.features_per_level);
    e.sh_degree = cfg.get_int("field.sh_degree", e.sh_degree);
    e.hidden_dim = cfg.get_int("field.hidden", e.hidden_dim);
    return e;
}

TrainConfig train_config(const ConfigFile& cfg, const GlobalOpts& g) {
    TrainConfig t;
    t.lambda1 = cfg.get_double("train.lambda1", t.lambda1);
    t.lambda2 = cfg.get_double("train.lambda2", t.lambda2);
    t.lambda3 = cfg.get_double("train.lambda3", t.lambda3);
    t.lr_start = cfg.get_double("train.lr_start", t.lr_start);
    t.lr_end = cfg.get_double("train.lr_end", t.lr_end);
    t.rays_per_batch = cfg.get_int("train.rays_per_batch", t.rays_per_batch);
    t.iters_per_epoch = cfg.get_int("train.iters_per_epoch", t.iters_per_epoch);
    t.epochs = cfg.get_int("train.epochs", t.epochs);
    t.prune_every = cfg.get_int("train.prune_every", t.prune_every);
    t.density_threshold = cfg.get_double("train.density_threshold", t.density_threshold);
    t.eval_every = cfg.get_int("train.eval_every", t.eval_every);
    t.incremental_rate = cfg.get_double("train.incremental_rate", t.incremental_rate);
    t.seed = g.seed;
    t.threads = g.threads;
    return t;
}

/// Scene AABB from the depth maps of every stride-th frame, padded.
void auto_bbox(const std::vector<Frame>& frames, double pad, Vec3& bmin, Vec3& bmax) {
    bmin = Vec3::Constant(std::numeric_limits<double>::infinity());
    bmax = -bmin;
    int stride = std::max<size_t>(1, frames.size() / 10);
    for (size_t f = 0; f < frames.size(); f += stride) {
        const Frame& fr = frames[f];
        for (int r = 0; r < fr.depth.height; r += 2)
            for (int c = 0; c < fr.depth.width; c += 2) {
                float z = fr.depth.at(r, c);
                if (z <= 0) continue;
                Vec3 p = backproject(c + 0.5, r + 0.5, z, fr.intrinsics, fr.pose);
                bmin = bmin.cwiseMin(p);
                bmax = bmax.cwiseMax(p);
            }
        bmin = bmin.cwiseMin(fr.pose.translation);
        bmax = bmax.cwiseMax(fr.pose.translation);
    }
    if (!bmin.allFinite() || !bmax.allFinite())
        throw std::runtime_error("cannot estimate scene bounds (no valid depth)");
    bmin -= Vec3::Constant(pad);
    bmax += Vec3::Constant(pad);
}

SemanticVolume make_volume(const ConfigFile& cfg, const std::vector<Frame>& frames) {
    int dims = cfg.get_int("volume.dims", 256);
    Vec3 bmin, bmax;
    if (cfg.has("volume.bbox")) {
        std::istringstream ss(cfg.get_string("volume.bbox", ""));
        if (!(ss >> bmin.x() >> bmin.y() >> bmin.z() >> bmax.x() >> bmax.y() >> bmax.z()))
            throw std::runtime_error("volume.bbox needs 6 numbers");
    } else {
        auto_bbox(frames, cfg.get_double("volume.pad", 0.12), bmin, bmax);
    }
    // Cubical voxels over the largest extent.
    double h = (bmax - bmin).maxCoeff() / dims;
    Eigen::Vector3i d;
    for (int a = 0; a < 3; ++a)
        d[a] = std::max(1, static_cast<int>(std::ceil((bmax[a] - bmin[a]) / h - 1e-9)));
    return SemanticVolume(bmin, h, d);
}

struct FusionOutcome {
    std::vector<Frame> frames;  // semantic images globalized
    std::string report;
};

FusionOutcome run_fusion(std::vector<Frame> frames, SemanticVolume& vol, Registry& reg,
                         const DetectorConfig& det_cfg, const std::string& mode, int stride,
                         int threads) {
    FusionOutcome out;
    std::ostringstream report;
    report << "frame to_p to_d to_e relabeled demoted alive_planes\n";
    std::vector<Frame> kept;
    for (size_t i = 0; i < frames.size(); i += stride) kept.push_back(std::move(frames[i]));

    for (size_t i = 0; i < kept.size(); ++i) {
        Frame& frame = kept[i];
        if (mode == "primitive") {
            LocalDetection det =
                detect_planes(frame.depth, frame.intrinsics, frame.pose, det_cfg);
            reg.merge_detection(det, frame);
            if ((i + 1) % reg.history_window == 0) {
                std::vector<Frame*> window;
                size_t w0 = i + 1 - reg.history_window;
                for (size_t k = w0; k <= i; ++k) window.push_back(&kept[k]);
                reg.revalidate_normals(window);
            }
        } else {
            std::fill(frame.semantic.data.begin(), frame.semantic.data.end(), 0);
        }
        FuseStats st = vol.fuse_frame(frame, reg, threads);
        report << i << ' ' << st.to_p << ' ' << st.to_d << ' ' << st.to_e << ' ' << st.relabeled
               << ' ' << st.demoted_dead << ' ' << reg.alive_count() << '\n';
    }
    out.frames = std::move(kept);
    out.report = report.str();
    return out;
}

std::string indexed_name(const std::string& stem, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%06d", stem.c_str(), i);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"primitive-aware radiance fusion for indoor RGB-D scenes"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "random seed");
    app.add_option("--config", g.config_path, "key = value config file");
    app.add_option("--threads", g.threads, "worker threads (0 = all cores)");

    // --- synth ---------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_preset = "box-room", synth_out;
    int synth_train = 20, synth_eval = 10;
    double synth_noise = 0.0;
    bool synth_semantic = false;
    synth->add_option("--preset", synth_preset, "scene preset (box-room)");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--train", synth_train, "number of training frames");
    synth->add_option("--eval", synth_eval, "held-out frames (half interp, half extrap)");
    synth->add_option("--noise", synth_noise, "depth noise sigma in meters (train split only)");
    synth->add_flag("--semantic", synth_semantic, "also write ground-truth semantic images");
    synth->callback([&]() {
        g.finalize();
        if (synth_preset != "box-room") throw CLI::ValidationError("unknown preset");
        SceneSpec spec = box_room();
        Intrinsics K = box_room_intrinsics();
        auto poses = box_room_training_poses(synth_train);
        std::vector<Frame> train;
        for (int i = 0; i < synth_train; ++i) {
            Frame f = raytrace_frame(spec, poses[i], K, i);
            if (synth_noise > 0) f = add_depth_noise(f, synth_noise, g.seed + 1000 + i);
            train.push_back(std::move(f));
        }
        write_dataset((fs::path(synth_out) / "train").string(), train, synth_semantic);
        int n_interp = synth_eval / 2, n_extra = synth_eval - n_interp;
        if (n_interp > 0) {
            auto interp = emit_trajectory(spec, TrajectoryKind::Interpolation, n_interp, poses);
            std::vector<Frame> fr;
            for (int i = 0; i < n_interp; ++i) fr.push_back(raytrace_frame(spec, interp[i], K, i));
            write_dataset((fs::path(synth_out) / "eval_interp").string(), fr, synth_semantic);
        }
        if (n_extra > 0) {
            auto extra = emit_trajectory(spec, TrajectoryKind::Extrapolation, n_extra, poses);
            std::vector<Frame> fr;
            for (int i = 0; i < n_extra; ++i) fr.push_back(raytrace_frame(spec, extra[i], K, i));
            write_dataset((fs::path(synth_out) / "eval_extra").string(), fr, synth_semantic);
        }
        std::cout << "wrote " << synth_train << " train + " << synth_eval << " eval frames to "
                  << synth_out << "\n";
    });

    // --- fuse ----------------------------------------------------------
    auto* fuse = app.add_subcommand("fuse", "detect, merge, and fuse a dataset into a volume");
    std::string fuse_dataset, fuse_out_volume, fuse_out_registry, fuse_report, fuse_mode =
        "primitive";
    int fuse_stride = 1;
    bool fuse_write_semantic = true;
    fuse->add_option("--dataset", fuse_dataset, "dataset directory")->required();
    fuse->add_option("--out-volume", fuse_out_volume, "volume checkpoint path")->required();
    fuse->add_option("--out-registry", fuse_out_registry, "registry text path")->required();
    fuse->add_option("--report", fuse_report, "fusion report path");
    fuse->add_option("--mode", fuse_mode, "primitive | depth");
    fuse->add_option("--stride", fuse_stride, "use every n-th frame");
    fuse->add_flag("--write-semantic,!--no-write-semantic", fuse_write_semantic,
                   "write globalized semantic images back into the dataset");
    fuse->callback([&]() {
        g.finalize();
        if (fuse_mode != "primitive" && fuse_mode != "depth")
            throw CLI::ValidationError("--mode must be primitive or depth");
        DatasetDir ds(fuse_dataset);
        auto frames = ds.load_all();
        SemanticVolume vol = make_volume(g.cfg, frames);
        Registry reg;
        registry_config(g.cfg, reg);
        auto outcome = run_fusion(std::move(frames), vol, reg, detector_config(g.cfg), fuse_mode,
                                  fuse_stride, g.threads);
        vol.save_file(fuse_out_volume);
        reg.save_file(fuse_out_registry);
        if (fuse_write_semantic && fuse_mode == "primitive") {
            fs::create_directories(fs::path(fuse_dataset) / "semantic");
            for (size_t i = 0; i < outcome.frames.size(); ++i)
                write_frame_images(fuse_dataset, static_cast<int>(i * fuse_stride),
                                   outcome.frames[i], true);
        }
        if (!fuse_report.empty()) {
            std::ofstream os(fuse_report);
            os << outcome.report;
        }
        std::cout << "fused " << outcome.frames.size() << " frames; " << reg.alive_count()
                  << " alive planes\n";
    });

    // --- train ---------------------------------------------------------
    auto* train = app.add_subcommand("train", "optimize the radiance field");
    std::string train_dataset, train_volume, train_registry, train_mode = "batch";
    std::string train_out_field, train_out_csv, train_holdout, train_out_volume,
        train_out_registry;
    train->add_option("--dataset", train_dataset, "dataset directory")->required();
    train->add_option("--volume", train_volume, "fused volume checkpoint (batch mode)");
    train->add_option("--registry", train_registry, "registry file (batch mode)");
    train->add_option("--mode", train_mode, "batch | incremental");
    train->add_option("--out-field", train_out_field, "field checkpoint path")->required();
    train->add_option("--out-csv", train_out_csv, "metrics CSV path");
    train->add_option("--out-volume", train_out_volume, "volume output (incremental mode)");
    train->add_option("--out-registry", train_out_registry, "registry output (incremental mode)");
    train->add_option("--holdout", train_holdout, "dataset dir whose frame 0 is logged as PSNR");
    train->callback([&]() {
        g.finalize();
        DatasetDir ds(train_dataset);
        auto frames = ds.load_all();
        TrainConfig tcfg = train_config(g.cfg, g);
        MarchConfig mcfg = march_config(g.cfg);
        EncodingConfig ecfg = encoding_config(g.cfg);

        std::optional<Frame> holdout;
        if (!train_holdout.empty()) holdout = DatasetDir(train_holdout).load_frame(0);

        std::vector<MetricsRow> log;
        if (train_mode == "batch") {
            if (train_volume.empty() || train_registry.empty())
                throw CLI::ValidationError("batch mode needs --volume and --registry");
            SemanticVolume vol = SemanticVolume::load_file(train_volume);
            Registry reg = Registry::load_file(train_registry);
            Field field(ecfg, vol.origin(), vol.max_corner(), tcfg.seed);
            Trainer trainer(vol, reg, field, tcfg, mcfg);
            log = trainer.run_batch(frames, holdout ? &*holdout : nullptr);
            field.save_file(train_out_field);
        } else if (train_mode == "incremental") {
            SemanticVolume vol = make_volume(g.cfg, frames);
            Registry reg;
            registry_config(g.cfg, reg);
            Field field(ecfg, vol.origin(), vol.max_corner(), tcfg.seed);
            Trainer trainer(vol, reg, field, tcfg, mcfg);
            log = trainer.run_incremental(frames, detector_config(g.cfg),
                                          holdout ? &*holdout : nullptr);
            field.save_file(train_out_field);
            if (!train_out_volume.empty()) vol.save_file(train_out_volume);
            if (!train_out_registry.empty()) reg.save_file(train_out_registry);
        } else {
            throw CLI::ValidationError("--mode must be batch or incremental");
        }
        if (!train_out_csv.empty()) write_metrics_csv(train_out_csv, log);
        if (!log.empty())
            std::cout << "final: L_total proxy L_c=" << log.back().l_c
                      << " psnr_train=" << log.back().psnr_train
                      << " psnr_holdout=" << log.back().psnr_holdout << "\n";
    });

    // --- render --------------------------------------------------------
    auto* render = app.add_subcommand("render", "render novel views from checkpoints");
    std::string ren_volume, ren_registry, ren_field, ren_dataset, ren_poses, ren_intrinsics,
        ren_out, ren_edit;
    render->add_option("--volume", ren_volume)->required();
    render->add_option("--registry", ren_registry)->required();
    render->add_option("--field", ren_field)->required();
    render->add_option("--dataset", ren_dataset, "render this dataset's poses");
    render->add_option("--poses", ren_poses, "poses.txt to render");
    render->add_option("--intrinsics", ren_intrinsics, "intrinsics.txt (with --poses)");
    render->add_option("--out", ren_out, "output directory")->required();
    render->add_option("--edit", ren_edit, "edit script applied before rendering");
    render->callback([&]() {
        g.finalize();
        SemanticVolume vol = SemanticVolume::load_file(ren_volume);
        Registry reg = Registry::load_file(ren_registry);
        Field field = Field::load_file(ren_field);

        std::vector<Pose> poses;
        Intrinsics K;
        if (!ren_dataset.empty()) {
            DatasetDir ds(ren_dataset);
            poses = ds.poses();
            K = ds.intrinsics();
        } else if (!ren_poses.empty() && !ren_intrinsics.empty()) {
            std::ifstream is(ren_intrinsics);
            if (!(is >> K.fx >> K.fy >> K.cx >> K.cy >> K.width >> K.height))
                throw std::runtime_error("malformed intrinsics file " + ren_intrinsics);
            std::ifstream ps(ren_poses);
            std::string line;
            while (std::getline(ps, line)) {
                if (line.empty()) continue;
                std::istringstream ss(line);
                int idx;
                Mat4 m;
                ss >> idx;
                for (int r = 0; r < 4; ++r)
                    for (int c = 0; c < 4; ++c) ss >> m(r, c);
                poses.push_back(Pose::from_matrix(m));
            }
        } else {
            throw CLI::ValidationError("render needs --dataset or --poses + --intrinsics");
        }

        std::optional<EditState> edit;
        if (!ren_edit.empty()) {
            auto commands = parse_edit_script_file(ren_edit);
            auto applied = apply_edit_script(commands, vol, reg);
            edit = std::move(applied.state);
            std::cout << "edit: " << applied.deletions << " deletions ("
                      << applied.voxels_cleared << " voxels), " << applied.transforms
                      << " transforms\n";
        }

        fs::create_directories(ren_out);
        MarchConfig mcfg = march_config(g.cfg);
        for (size_t i = 0; i < poses.size(); ++i) {
            RenderedImages img =
                render_image(poses[i], K, vol, reg, field,
                             edit && !edit->empty() ? &*edit : nullptr, mcfg, g.threads);
            fs::path base(ren_out);
            write_png_rgb8((base / (indexed_name("color", i) + ".png")).string(), img.color);
            Image<std::uint16_t> depth_mm(K.height, K.width, 0);
            for (size_t k = 0; k < img.depth.data.size(); ++k)
                depth_mm.data[k] = static_cast<std::uint16_t>(
                    std::clamp(std::lround(img.depth.data[k] * 1000.0f), 0l, 65535l));
            write_png_gray16((base / (indexed_name("depth", i) + ".png")).string(), depth_mm);
            write_float_planar((base / (indexed_name("semantic", i) + ".bin")).string(),
                               {img.semantic[0], img.semantic[1], img.semantic[2],
                                img.semantic[3]});
            Image<Rgb> op(K.height, K.width);
            for (size_t k = 0; k < img.opacity.data.size(); ++k) {
                float v = img.opacity.data[k];
                op.data[k] = {v, v, v};
            }
            write_png_rgb8((base / (indexed_name("opacity", i) + ".png")).string(), op);
        }
        std::cout << "rendered " << poses.size() << " views to " << ren_out << "\n";
    });

    // --- eval ----------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM of rendered views against ground truth");
    std::string eval_rendered, eval_truth, eval_csv;
    eval->add_option("--rendered", eval_rendered)->required();
    eval->add_option("--truth", eval_truth)->required();
    eval->add_option("--out-csv", eval_csv);
    eval->callback([&]() {
        g.finalize();
        auto color_path = [](const std::string& root, int i) -> std::string {
            fs::path sub = fs::path(root) / "color" / (indexed_name("", i).substr(1) + ".png");
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%06d.png", i);
            fs::path as_dataset = fs::path(root) / "color" / buf;
            if (fs::exists(as_dataset)) return as_dataset.string();
            return (fs::path(root) / (indexed_name("color", i) + ".png")).string();
        };
        std::vector<double> psnrs, ssims;
        std::ostringstream table;
        table << "view psnr ssim\n";
        for (int i = 0;; ++i) {
            std::string pr = color_path(eval_rendered, i);
            std::string pt = color_path(eval_truth, i);
            if (!fs::exists(pr) || !fs::exists(pt)) break;
            Image<Rgb> a = read_png_rgb8(pr), b = read_png_rgb8(pt);
            double p = psnr(a, b), s = ssim(a, b);
            psnrs.push_back(p);
            ssims.push_back(s);
            table << i << ' ' << p << ' ' << s << '\n';
        }
        if (psnrs.empty()) throw std::runtime_error("eval: no matching view pairs found");
        double mp = 0, ms = 0;
        for (size_t i = 0; i < psnrs.size(); ++i) {
            mp += psnrs[i];
            ms += ssims[i];
        }
        mp /= psnrs.size();
        ms /= ssims.size();
        table << "mean " << mp << ' ' << ms << '\n';
        std::cout << table.str();
        if (!eval_csv.empty()) {
            std::ofstream os(eval_csv);
            os << table.str();
        }
    });

    // --- edit-apply ----------------------------------------------------
    auto* edit_apply = app.add_subcommand(
        "edit-apply", "apply an edit script's deletions to checkpoints");
    std::string ea_volume, ea_registry, ea_script, ea_out_volume, ea_out_registry, ea_out_script;
    edit_apply->add_option("--volume", ea_volume)->required();
    edit_apply->add_option("--registry", ea_registry)->required();
    edit_apply->add_option("--script", ea_script)->required();
    edit_apply->add_option("--out-volume", ea_out_volume)->required();
    edit_apply->add_option("--out-registry", ea_out_registry)->required();
    edit_apply->add_option("--out-script", ea_out_script,
                           "write remaining (render-time) transform commands here");
    edit_apply->callback([&]() {
        g.finalize();
        SemanticVolume vol = SemanticVolume::load_file(ea_volume);
        Registry reg = Registry::load_file(ea_registry);
        auto commands = parse_edit_script_file(ea_script);
        int deletions = 0;
        std::int64_t cleared = 0;
        std::ostringstream rest;
        for (const auto& cmd : commands) {
            if (cmd.type == EditCommand::Type::Delete) {
                cleared += vol.delete_primitive(cmd.plane_id, reg);
                ++deletions;
                continue;
            }
            // Transforms are view-time operations; they are validated and
            // forwarded for `render --edit`.
            Mat4 m = Mat4::Identity();
            m.topLeftCorner<3, 3>() = cmd.op.rotation;
            m.topRightCorner<3, 1>() = cmd.op.translation;
            if (cmd.type == EditCommand::Type::TransformPlane) {
                if (!reg.find(cmd.plane_id))
                    throw std::runtime_error("edit-apply: unknown plane " +
                                             std::to_string(cmd.plane_id));
                rest << "transform " << cmd.plane_id;
            } else {
                rest << "transform_region " << cmd.aabb_min.transpose() << ' '
                     << cmd.aabb_max.transpose();
            }
            rest.precision(17);
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) rest << ' ' << m(r, c);
            rest << '\n';
        }
        vol.save_file(ea_out_volume);
        reg.save_file(ea_out_registry);
        if (!ea_out_script.empty()) {
            std::ofstream os(ea_out_script);
            os << rest.str();
        }
        std::cout << "applied " << deletions << " deletions (" << cleared
                  << " voxels cleared); " << (commands.size() - deletions)
                  << " transform commands remain for render time\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
