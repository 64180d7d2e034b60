#include "primfuse/renderer.hpp"

#include "primfuse/parallel.hpp"

#include <cmath>

namespace primfuse {

namespace {

bool ray_aabb(const Ray& ray, const Vec3& bmin, const Vec3& bmax, double& t0, double& t1) {
    t0 = 0.0;
    t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        double d = ray.direction[a];
        if (std::abs(d) < 1e-15) {
            if (ray.origin[a] < bmin[a] || ray.origin[a] > bmax[a]) return false;
            continue;
        }
        double ta = (bmin[a] - ray.origin[a]) / d;
        double tb = (bmax[a] - ray.origin[a]) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t0 < t1;
}

// Voxel walker over [t_begin, t_exit); re-seedable after jumps.
struct Dda {
    const SemanticVolume& vol;
    const Ray& ray;
    Eigen::Vector3i idx;
    Vec3 t_next_boundary;  // per-axis t of the next crossing
    Vec3 t_delta;
    Eigen::Vector3i step;
    double t_cur = 0.0;
    bool valid = false;

    Dda(const SemanticVolume& v, const Ray& r) : vol(v), ray(r) {}

    void seed(double t) {
        t_cur = t;
        const double h = vol.voxel_size();
        Vec3 p = ray.origin + (t + 1e-9 * h) * ray.direction;
        Vec3 rel = (p - vol.origin()) / h;
        for (int a = 0; a < 3; ++a) {
            idx[a] = std::clamp(static_cast<int>(std::floor(rel[a])), 0, vol.dims()[a] - 1);
            double d = ray.direction[a];
            if (d > 1e-15) {
                step[a] = 1;
                t_delta[a] = h / d;
                double boundary = vol.origin()[a] + (idx[a] + 1) * h;
                t_next_boundary[a] = (boundary - ray.origin[a]) / d;
            } else if (d < -1e-15) {
                step[a] = -1;
                t_delta[a] = -h / d;
                double boundary = vol.origin()[a] + idx[a] * h;
                t_next_boundary[a] = (boundary - ray.origin[a]) / d;
            } else {
                step[a] = 0;
                t_delta[a] = std::numeric_limits<double>::infinity();
                t_next_boundary[a] = std::numeric_limits<double>::infinity();
            }
        }
        valid = true;
    }

    // Advances to the next voxel; returns the t where the current voxel ends.
    double exit_t() const { return t_next_boundary.minCoeff(); }
    bool advance() {
        int a = 0;
        if (t_next_boundary[1] < t_next_boundary[a]) a = 1;
        if (t_next_boundary[2] < t_next_boundary[a]) a = 2;
        t_cur = t_next_boundary[a];
        idx[a] += step[a];
        t_next_boundary[a] += t_delta[a];
        return idx[a] >= 0 && idx[a] < vol.dims()[a];
    }
};

struct EffectiveLabel {
    std::int32_t label;
    int edit_op;
};

EffectiveLabel effective_label(const SemanticVolume& vol, const Registry& reg,
                               const EditState* edit, const Eigen::Vector3i& idx) {
    Vec3 center = vol.voxel_center(idx.x(), idx.y(), idx.z());
    int op = 0;
    std::int32_t label;
    if (edit && !edit->empty()) {
        op = edit->op_at(center);
        if (op > 0) {
            const EditOp& t = edit->transforms()[op - 1];
            label = vol.label_at(t.apply_point(center));
        } else {
            label = vol.label(idx.x(), idx.y(), idx.z());
        }
    } else {
        label = vol.label(idx.x(), idx.y(), idx.z());
    }
    if (label >= 1) {
        const Plane* p = reg.find(label);
        if (!p || !p->alive) label = kDense;  // dead primitives behave as dense
    }
    return {label, op};
}

}  // namespace

std::vector<Sample> march_ray(const Ray& ray, const SemanticVolume& vol, const Registry& reg,
                              const EditState* edit, const MarchConfig& cfg) {
    std::vector<Sample> samples;
    double t_enter, t_exit;
    if (!ray_aabb(ray, vol.origin(), vol.max_corner(), t_enter, t_exit)) return samples;

    const double step = cfg.step_scale * vol.voxel_size();
    const double psi = vol.psi();
    const double t_eps = 1e-9 * vol.voxel_size();

    auto emit_dense_run = [&](double r0, double r1, int edit_op) {
        double len = r1 - r0;
        if (len <= t_eps) return;
        int n = std::max(1, static_cast<int>(std::lround(len / step)));
        double spacing = len / n;
        for (int j = 0; j < n; ++j) {
            if (static_cast<int>(samples.size()) >= cfg.max_steps) return;
            Sample s;
            s.t = r0 + (j + 0.5) * spacing;
            s.delta = spacing;
            s.kind = SampleKind::Dense;
            Vec3 p = ray.origin + s.t * ray.direction;
            if (edit_op > 0) {
                const EditOp& op = (*edit).transforms()[edit_op - 1];
                s.position = op.apply_point(p);
                s.query_dir = op.apply_dir(ray.direction);
            } else {
                s.position = p;
                s.query_dir = ray.direction;
            }
            samples.push_back(s);
        }
    };

    Dda dda(vol, ray);
    dda.seed(t_enter);
    double t = t_enter;
    while (t < t_exit - t_eps && static_cast<int>(samples.size()) < cfg.max_steps) {
        EffectiveLabel cur = effective_label(vol, reg, edit, dda.idx);
        // Extend the run while the (label, edit op) pair is unchanged.
        double run_t0 = t;
        double run_t1;
        bool inside = true;
        for (;;) {
            run_t1 = std::min(dda.exit_t(), t_exit);
            if (dda.exit_t() >= t_exit) {
                inside = false;
                break;
            }
            if (!dda.advance()) {
                inside = false;
                break;
            }
            EffectiveLabel nxt = effective_label(vol, reg, edit, dda.idx);
            if (nxt.label != cur.label || nxt.edit_op != cur.edit_op) break;
        }

        double resume = run_t1;
        if (cur.label == kDense) {
            emit_dense_run(run_t0, run_t1, cur.edit_op);
        } else if (cur.label >= 1) {
            const Plane& plane = *reg.find(cur.label);
            Ray probe = ray;
            Vec3 dir = ray.direction;
            if (cur.edit_op > 0) {
                const EditOp& op = edit->transforms()[cur.edit_op - 1];
                probe.origin = op.apply_point(ray.origin);
                probe.direction = op.apply_dir(ray.direction);
                dir = probe.direction;
            }
            auto hit = intersect_ray_plane(probe, plane);
            if (hit && hit->t >= run_t0 && hit->t < run_t1) {
                Sample s;
                s.t = hit->t;
                s.delta = cfg.delta_p;
                s.kind = SampleKind::Primitive;
                s.plane_id = plane.id;
                s.position = probe.origin + hit->t * probe.direction;
                s.query_dir = dir;
                samples.push_back(s);
                // Resume a fixed distance psi behind the plane.
                double cosine = std::abs(dir.dot(plane.normal));
                double advance_t = hit->t + psi / std::max(cosine, 1e-6);
                if (advance_t > resume) {
                    resume = advance_t;
                    if (resume < t_exit - t_eps) {
                        dda.seed(resume);
                        t = resume;
                        continue;
                    }
                }
            }
        }
        if (!inside) break;
        t = resume;
    }
    return samples;
}

RenderResult composite(const std::vector<Sample>& samples,
                       const std::vector<FieldOutputD>& outputs) {
    if (samples.size() != outputs.size())
        throw std::invalid_argument("composite: samples/outputs size mismatch");
    RenderResult res;
    res.weights.resize(samples.size());
    res.alphas.resize(samples.size());
    double transmittance = 1.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        double alpha = 1.0 - std::exp(-outputs[i].sigma * samples[i].delta);
        double w = transmittance * alpha;
        res.alphas[i] = alpha;
        res.weights[i] = w;
        res.color += w * outputs[i].color;
        res.depth += w * samples[i].t;
        res.semantic += w * outputs[i].semantic;
        res.opacity += w;
        transmittance *= 1.0 - alpha;
    }
    return res;
}

SampleGrads composite_backward(const std::vector<Sample>& samples,
                               const std::vector<FieldOutputD>& outputs,
                               const RenderResult& result, const Vec3& d_color, double d_depth,
                               const Eigen::Vector4d& d_semantic, double d_opacity) {
    const size_t n = samples.size();
    SampleGrads g;
    g.d_sigma.assign(n, 0.0);
    g.d_color.assign(n, Vec3::Zero());
    g.d_semantic.assign(n, Eigen::Vector4d::Zero());

    // Per-sample pixel-gradient contribution g_i and its weighted suffix sum.
    std::vector<double> contrib(n);
    for (size_t i = 0; i < n; ++i) {
        contrib[i] = d_color.dot(outputs[i].color) + d_depth * samples[i].t +
                     d_semantic.dot(outputs[i].semantic) + d_opacity;
    }
    std::vector<double> suffix(n + 1, 0.0);
    for (size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + result.weights[i] * contrib[i];

    double transmittance = 1.0;
    for (size_t i = 0; i < n; ++i) {
        double t_next = transmittance * (1.0 - result.alphas[i]);
        g.d_sigma[i] = samples[i].delta * (t_next * contrib[i] - suffix[i + 1]);
        g.d_color[i] = result.weights[i] * d_color;
        g.d_semantic[i] = result.weights[i] * d_semantic;
        transmittance = t_next;
    }
    return g;
}

MarchedBatch march_rays(const std::vector<Ray>& rays, const SemanticVolume& vol,
                        const Registry& reg, const EditState* edit, const MarchConfig& cfg,
                        int num_threads) {
    std::vector<std::vector<Sample>> per_ray(rays.size());
    parallel_for(rays.size(), num_threads, [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) per_ray[i] = march_ray(rays[i], vol, reg, edit, cfg);
    });
    MarchedBatch batch;
    batch.ray_offset.resize(rays.size() + 1, 0);
    size_t total = 0;
    for (size_t i = 0; i < rays.size(); ++i) {
        total += per_ray[i].size();
        batch.ray_offset[i + 1] = static_cast<int>(total);
    }
    batch.samples.reserve(total);
    for (auto& v : per_ray)
        batch.samples.insert(batch.samples.end(), v.begin(), v.end());
    return batch;
}

RenderedImages render_image(const Pose& pose, const Intrinsics& K, const SemanticVolume& vol,
                            const Registry& reg, const Field& field, const EditState* edit,
                            const MarchConfig& cfg, int num_threads) {
    RenderedImages out;
    out.color = Image<Rgb>(K.height, K.width);
    out.depth = Image<float>(K.height, K.width, 0.0f);
    for (auto& ch : out.semantic) ch = Image<float>(K.height, K.width, 0.0f);
    out.opacity = Image<float>(K.height, K.width, 0.0f);

    parallel_for(static_cast<size_t>(K.height), num_threads, [&](size_t lo, size_t hi) {
        for (size_t row = lo; row < hi; ++row) {
            // One batched field evaluation per row keeps the MLP in GEMM form.
            std::vector<std::vector<Sample>> row_samples(K.width);
            size_t total = 0;
            std::vector<double> cosines(K.width);
            for (int col = 0; col < K.width; ++col) {
                Ray ray = pixel_ray(static_cast<int>(row), col, K, pose);
                cosines[col] = ray_depth_scale(ray, pose);
                row_samples[col] = march_ray(ray, vol, reg, edit, cfg);
                total += row_samples[col].size();
            }
            if (total == 0) continue;
            Eigen::Matrix<double, 3, Eigen::Dynamic> pos(3, total), dirs(3, total);
            size_t k = 0;
            for (int col = 0; col < K.width; ++col)
                for (const auto& s : row_samples[col]) {
                    pos.col(k) = s.position;
                    dirs.col(k) = s.query_dir;
                    ++k;
                }
            Field::Cache cache;
            field.forward(pos, dirs, cache);

            k = 0;
            for (int col = 0; col < K.width; ++col) {
                const auto& samp = row_samples[col];
                std::vector<FieldOutputD> outs(samp.size());
                for (size_t j = 0; j < samp.size(); ++j, ++k) {
                    outs[j].sigma = cache.sigma[k];
                    outs[j].color = cache.color.col(k).cast<double>();
                    outs[j].semantic = cache.sem.col(k).cast<double>();
                }
                RenderResult res = composite(samp, outs);
                out.color.at(static_cast<int>(row), col) = {
                    static_cast<float>(res.color.x()), static_cast<float>(res.color.y()),
                    static_cast<float>(res.color.z())};
                out.depth.at(static_cast<int>(row), col) =
                    static_cast<float>(res.depth * cosines[col]);
                for (int ch = 0; ch < 4; ++ch)
                    out.semantic[ch].at(static_cast<int>(row), col) =
                        static_cast<float>(res.semantic[ch]);
                out.opacity.at(static_cast<int>(row), col) = static_cast<float>(res.opacity);
            }
        }
    });
    return out;
}

}  // namespace primfuse
