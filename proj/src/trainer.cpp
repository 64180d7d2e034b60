#include "primfuse/trainer.hpp"

#include "primfuse/metrics.hpp"

#include <chrono>
#include <thread>
#include <cmath>
#include <fstream>

namespace primfuse {

namespace {

double entropy_term(double o) {
    double c = std::clamp(o, 1e-7, 1.0);
    return -c * std::log(c);
}

}  // namespace

LossReport compute_losses(const std::vector<RenderResult>& results, const RayTargets& targets,
                          const TrainConfig& cfg) {
    std::vector<Vec3> dc;
    std::vector<double> dd, dop;
    std::vector<Eigen::Vector4d> ds;
    return compute_losses_grad(results, targets, cfg, dc, dd, ds, dop);
}

LossReport compute_losses_grad(const std::vector<RenderResult>& results,
                               const RayTargets& targets, const TrainConfig& cfg,
                               std::vector<Vec3>& d_color, std::vector<double>& d_depth,
                               std::vector<Eigen::Vector4d>& d_semantic,
                               std::vector<double>& d_opacity) {
    const size_t n = results.size();
    if (n == 0) throw std::invalid_argument("compute_losses: empty batch");
    if (targets.color.size() != n || targets.depth.size() != n || targets.semantic.size() != n ||
        targets.semantic_valid.size() != n)
        throw std::invalid_argument("compute_losses: target size mismatch");

    d_color.assign(n, Vec3::Zero());
    d_depth.assign(n, 0.0);
    d_semantic.assign(n, Eigen::Vector4d::Zero());
    d_opacity.assign(n, 0.0);

    std::int64_t n_depth = 0, n_sem = 0;
    for (size_t i = 0; i < n; ++i) {
        if (targets.depth[i] > 0) ++n_depth;
        if (targets.semantic_valid[i]) ++n_sem;
    }

    LossReport rep;
    for (size_t i = 0; i < n; ++i) {
        const RenderResult& r = results[i];
        Vec3 ce = r.color - targets.color[i];
        rep.l_c += ce.squaredNorm();
        d_color[i] = 2.0 * ce / static_cast<double>(n);
        if (targets.depth[i] > 0) {
            double de = r.depth - targets.depth[i];
            rep.l_d += de * de;
            d_depth[i] = cfg.lambda1 * 2.0 * de / static_cast<double>(n_depth);
        }
        if (targets.semantic_valid[i]) {
            Eigen::Vector4d se = r.semantic - targets.semantic[i];
            rep.l_s += se.squaredNorm();
            d_semantic[i] = cfg.lambda2 * 2.0 * se / static_cast<double>(n_sem);
        }
        rep.l_reg += entropy_term(r.opacity);
        if (r.opacity > 1e-7)
            d_opacity[i] = cfg.lambda3 * (-(std::log(std::min(r.opacity, 1.0)) + 1.0)) /
                           static_cast<double>(n);
    }
    rep.l_c /= static_cast<double>(n);
    rep.l_d = n_depth > 0 ? rep.l_d / static_cast<double>(n_depth) : 0.0;
    rep.l_s = n_sem > 0 ? rep.l_s / static_cast<double>(n_sem) : 0.0;
    rep.l_reg /= static_cast<double>(n);
    rep.l_total = rep.l_c + cfg.lambda1 * rep.l_d + cfg.lambda2 * rep.l_s + cfg.lambda3 * rep.l_reg;
    return rep;
}

double cosine_lr(const TrainConfig& cfg, int step) {
    int total = cfg.total_steps();
    double s = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
    return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(M_PI * s));
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write metrics csv: " + path);
    os << "step,wall_time_s,L_c,L_d,L_s,L_reg,lr,psnr_train,psnr_holdout\n";
    os.precision(9);
    for (const auto& r : rows)
        os << r.step << ',' << r.wall_time_s << ',' << r.l_c << ',' << r.l_d << ',' << r.l_s << ','
           << r.l_reg << ',' << r.lr << ',' << r.psnr_train << ',' << r.psnr_holdout << '\n';
}

Trainer::Trainer(SemanticVolume& vol, Registry& reg, Field& field, const TrainConfig& cfg,
                 const MarchConfig& march)
    : vol_(vol), reg_(reg), field_(field), cfg_(cfg), march_(march), rng_(cfg.seed) {
    cfg_.validate();
}

void Trainer::add_frame(const Frame& frame) {
    frames_.push_back(frame);
    refill_pool();
}

void Trainer::refill_pool() {
    pool_.clear();
    for (size_t f = 0; f < frames_.size(); ++f) {
        const auto& fr = frames_[f];
        std::uint64_t px_count = static_cast<std::uint64_t>(fr.depth.width) * fr.depth.height;
        for (std::uint64_t p = 0; p < px_count; ++p)
            pool_.push_back((static_cast<std::uint64_t>(f) << 32) | p);
    }
    std::shuffle(pool_.begin(), pool_.end(), rng_);
    pool_pos_ = 0;
}

Trainer::BatchData Trainer::assemble_batch() {
    if (pool_.empty()) throw std::logic_error("Trainer: no frames registered");
    BatchData batch;
    const int n = cfg_.rays_per_batch;
    batch.rays.reserve(n);
    batch.targets.color.reserve(n);
    batch.targets.depth.reserve(n);
    batch.targets.semantic.reserve(n);
    batch.targets.semantic_valid.reserve(n);
    const double radius = field_.scene_radius();

    for (int i = 0; i < n; ++i) {
        if (pool_pos_ >= pool_.size()) {
            std::shuffle(pool_.begin(), pool_.end(), rng_);
            pool_pos_ = 0;
        }
        std::uint64_t code = pool_[pool_pos_++];
        const Frame& fr = frames_[code >> 32];
        int px = static_cast<int>(code & 0xffffffffu);
        int row = px / fr.depth.width;
        int col = px % fr.depth.width;

        Ray ray = pixel_ray(row, col, fr.intrinsics, fr.pose);
        batch.rays.push_back(ray);
        const Rgb& c = fr.color.at(row, col);
        batch.targets.color.emplace_back(c.r, c.g, c.b);
        double z = fr.depth.at(row, col);
        double cosine = ray_depth_scale(ray, fr.pose);
        batch.targets.depth.push_back(z > 0 && cosine > 1e-9 ? z / cosine : 0.0);

        std::int32_t sem = fr.semantic.at(row, col);
        const Plane* plane = sem > 0 ? reg_.find(sem) : nullptr;
        if (plane && plane->alive) {
            Eigen::Vector4d s;
            s << plane->normal, plane->offset / radius;
            batch.targets.semantic.push_back(s);
            batch.targets.semantic_valid.push_back(1);
        } else {
            batch.targets.semantic.push_back(Eigen::Vector4d::Zero());
            batch.targets.semantic_valid.push_back(0);
        }
    }
    return batch;
}

LossReport Trainer::train_step(int step_index) {
    BatchData batch = assemble_batch();
    const size_t n_rays = batch.rays.size();

    MarchedBatch marched = march_rays(batch.rays, vol_, reg_, nullptr, march_, cfg_.threads);
    const size_t n_samples = marched.samples.size();

    // Two-phase parallel execution over contiguous ray halves: forward +
    // composite, then (after the loss reduction) backward into per-thread
    // gradient tables summed in a fixed order.
    int workers = cfg_.threads > 0 ? cfg_.threads
                                   : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<int>(workers, 2);
    std::vector<size_t> ray_split;
    for (int w = 0; w <= workers; ++w) ray_split.push_back(n_rays * w / workers);

    std::vector<RenderResult> results(n_rays);
    std::vector<std::vector<FieldOutputD>> outputs(n_rays);
    std::vector<Field::Cache> caches(workers);

    auto forward_chunk = [&](int w) {
        size_t r0 = ray_split[w], r1 = ray_split[w + 1];
        int s0 = marched.ray_offset[r0], s1 = marched.ray_offset[r1];
        int count = s1 - s0;
        if (count > 0) {
            Eigen::Matrix<double, 3, Eigen::Dynamic> pos(3, count), dirs(3, count);
            for (int i = 0; i < count; ++i) {
                pos.col(i) = marched.samples[s0 + i].position;
                dirs.col(i) = marched.samples[s0 + i].query_dir;
            }
            field_.forward(pos, dirs, caches[w]);
        }
        const Field::Cache& cache = caches[w];
        for (size_t r = r0; r < r1; ++r) {
            int a = marched.ray_offset[r], b = marched.ray_offset[r + 1];
            std::vector<Sample> ray_samples(marched.samples.begin() + a,
                                            marched.samples.begin() + b);
            auto& outs = outputs[r];
            outs.resize(b - a);
            for (int k = a; k < b; ++k) {
                int local = k - s0;
                outs[k - a].sigma = cache.sigma[local];
                outs[k - a].color = cache.color.col(local).cast<double>();
                outs[k - a].semantic = cache.sem.col(local).cast<double>();
            }
            results[r] = composite(ray_samples, outs);
        }
    };
    if (workers == 1) {
        forward_chunk(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(forward_chunk, w);
        for (auto& t : pool) t.join();
    }

    std::vector<Vec3> d_color;
    std::vector<double> d_depth, d_opacity;
    std::vector<Eigen::Vector4d> d_semantic;
    LossReport rep =
        compute_losses_grad(results, batch.targets, cfg_, d_color, d_depth, d_semantic, d_opacity);
    if (!std::isfinite(rep.l_total)) {
        for (size_t r = 0; r < n_rays; ++r) {
            double probe = results[r].color.squaredNorm() + results[r].depth +
                           results[r].semantic.squaredNorm() + results[r].opacity;
            if (!std::isfinite(probe))
                throw std::runtime_error("non-finite loss at step " + std::to_string(step_index) +
                                         ", ray " + std::to_string(r));
        }
        throw std::runtime_error("non-finite loss at step " + std::to_string(step_index));
    }

    if (n_samples > 0) {
        while (static_cast<int>(grad_tables_.size()) < workers)
            grad_tables_.push_back(field_.make_grad_table());
        for (auto& t : grad_tables_)
            for (auto& g : t.grads) g.setZero();
        std::vector<Field::GradTable>& tables = grad_tables_;
        auto backward_chunk = [&](int w) {
            size_t r0 = ray_split[w], r1 = ray_split[w + 1];
            int s0 = marched.ray_offset[r0], s1 = marched.ray_offset[r1];
            int count = s1 - s0;
            if (count == 0) return;
            Field::VecX d_sigma = Field::VecX::Zero(count);
            Field::MatX dc_mat = Field::MatX::Zero(3, count);
            Field::MatX ds_mat = Field::MatX::Zero(4, count);
            for (size_t r = r0; r < r1; ++r) {
                int a = marched.ray_offset[r], b = marched.ray_offset[r + 1];
                if (a == b) continue;
                std::vector<Sample> ray_samples(marched.samples.begin() + a,
                                                marched.samples.begin() + b);
                SampleGrads g =
                    composite_backward(ray_samples, outputs[r], results[r], d_color[r],
                                       d_depth[r], d_semantic[r], d_opacity[r]);
                for (int k = a; k < b; ++k) {
                    int local = k - s0;
                    d_sigma[local] = static_cast<float>(g.d_sigma[k - a]);
                    dc_mat.col(local) = g.d_color[k - a].cast<float>();
                    ds_mat.col(local) = g.d_semantic[k - a].cast<float>();
                }
            }
            field_.backward_into(caches[w], d_sigma, dc_mat, ds_mat, tables[w]);
        };
        if (workers == 1) {
            backward_chunk(0);
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < workers; ++w) pool.emplace_back(backward_chunk, w);
            for (auto& t : pool) t.join();
        }
        field_.zero_grad();
        std::vector<const Field::GradTable*> ptrs;
        for (const auto& t : tables) ptrs.push_back(&t);
        field_.accumulate_grads(ptrs);
        field_.adam_step(cosine_lr(cfg_, step_index));
    }
    last_report_ = rep;
    return rep;
}

void Trainer::prune(std::int64_t* pruned_out) {
    const auto& labels = vol_.labels();
    std::vector<std::int64_t> dense_idx;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(labels.size()); ++i)
        if (labels[i] == kDense) dense_idx.push_back(i);

    std::vector<float> density(labels.size(), 1e9f);
    const auto& dims = vol_.dims();
    const std::int64_t chunk = 65536;
    for (size_t start = 0; start < dense_idx.size(); start += chunk) {
        size_t end = std::min(dense_idx.size(), start + chunk);
        Eigen::Matrix<double, 3, Eigen::Dynamic> pos(3, end - start);
        for (size_t k = start; k < end; ++k) {
            std::int64_t li = dense_idx[k];
            int ix = static_cast<int>(li % dims.x());
            int iy = static_cast<int>((li / dims.x()) % dims.y());
            int iz = static_cast<int>(li / (static_cast<std::int64_t>(dims.x()) * dims.y()));
            pos.col(k - start) = vol_.voxel_center(ix, iy, iz);
        }
        std::vector<float> sig;
        field_.density_only(pos, sig);
        for (size_t k = start; k < end; ++k) density[dense_idx[k]] = sig[k - start];
    }
    std::int64_t pruned = vol_.prune_voxels(density, cfg_.density_threshold);
    if (pruned_out) *pruned_out = pruned;
}

double Trainer::eval_psnr(const Frame& holdout) const {
    RenderedImages img = render_image(holdout.pose, holdout.intrinsics, vol_, reg_, field_,
                                      nullptr, march_, cfg_.threads);
    return psnr(img.color, holdout.color);
}

std::vector<MetricsRow> Trainer::run_batch(const std::vector<Frame>& fused_frames,
                                           const Frame* holdout) {
    for (const auto& f : fused_frames) frames_.push_back(f);
    refill_pool();
    std::vector<MetricsRow> log;
    auto t0 = std::chrono::steady_clock::now();
    const int total = cfg_.total_steps();
    for (int step = 0; step < total; ++step) {
        LossReport rep = train_step(step);
        if ((step + 1) % cfg_.prune_every == 0) prune();
        if ((step + 1) % cfg_.eval_every == 0 || step + 1 == total) {
            MetricsRow row;
            row.step = step + 1;
            row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                                  .count();
            row.l_c = rep.l_c;
            row.l_d = rep.l_d;
            row.l_s = rep.l_s;
            row.l_reg = rep.l_reg;
            row.lr = cosine_lr(cfg_, step);
            row.psnr_train = rep.l_c > 0 ? -10.0 * std::log10(rep.l_c / 3.0) : 99.0;
            row.psnr_holdout = holdout ? eval_psnr(*holdout) : 0.0;
            log.push_back(row);
        }
    }
    return log;
}

std::vector<MetricsRow> Trainer::run_incremental(std::vector<Frame> stream,
                                                 const DetectorConfig& det_cfg,
                                                 const Frame* holdout) {
    if (stream.empty()) throw std::invalid_argument("run_incremental: empty stream");
    std::vector<MetricsRow> log;
    auto t0 = std::chrono::steady_clock::now();
    const int total = cfg_.total_steps();
    const int n_frames = static_cast<int>(stream.size());
    int steps_done = 0;

    auto log_row = [&](int step, const LossReport& rep) {
        MetricsRow row;
        row.step = step;
        row.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        row.l_c = rep.l_c;
        row.l_d = rep.l_d;
        row.l_s = rep.l_s;
        row.l_reg = rep.l_reg;
        row.lr = cosine_lr(cfg_, step - 1);
        row.psnr_train = rep.l_c > 0 ? -10.0 * std::log10(rep.l_c / 3.0) : 99.0;
        row.psnr_holdout = holdout ? eval_psnr(*holdout) : 0.0;
        log.push_back(row);
    };

    for (int k = 0; k < n_frames; ++k) {
        Frame& frame = stream[k];
        LocalDetection det = detect_planes(frame.depth, frame.intrinsics, frame.pose, det_cfg);
        reg_.merge_detection(det, frame);
        if ((k + 1) % reg_.history_window == 0) {
            std::vector<Frame*> window;
            int w0 = std::max(0, k + 1 - reg_.history_window);
            for (int i = w0; i <= k; ++i) window.push_back(&stream[i]);
            reg_.revalidate_normals(window);
        }
        vol_.fuse_frame(frame, reg_, cfg_.threads);
        add_frame(frame);

        // Fixed per-arrival step budget stands in for the simulated
        // arrival clock, keeping runs deterministic and step counts equal
        // to batch mode.
        int target_steps = static_cast<int>((static_cast<std::int64_t>(total) * (k + 1)) /
                                            n_frames);
        while (steps_done < target_steps) {
            LossReport rep = train_step(steps_done);
            ++steps_done;
            if (steps_done % cfg_.prune_every == 0) prune();
            if (steps_done % cfg_.eval_every == 0 || steps_done == total) log_row(steps_done, rep);
        }
    }
    while (steps_done < total) {
        LossReport rep = train_step(steps_done);
        ++steps_done;
        if (steps_done % cfg_.prune_every == 0) prune();
        if (steps_done % cfg_.eval_every == 0 || steps_done == total) log_row(steps_done, rep);
    }
    return log;
}

}  // namespace primfuse
