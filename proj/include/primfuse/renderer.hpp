#pragma once

#include "primfuse/core_types.hpp"
#include "primfuse/field.hpp"
#include "primfuse/semantic_volume.hpp"

namespace primfuse {

enum class SampleKind : std::uint8_t { Dense, Primitive };

/// One ray sample. position/query_dir are what the field sees (already
/// edit-transformed); t stays in the original ray's parameterization.
struct Sample {
    Vec3 position;
    Vec3 query_dir;
    double t = 0.0;
    double delta = 0.0;
    SampleKind kind = SampleKind::Dense;
    int plane_id = 0;
};

struct MarchConfig {
    double step_scale = 0.5;  // D-sample spacing = step_scale * voxel_size
    int max_steps = 1024;     // samples per ray
    double delta_p = 1.0;     // fixed compositing thickness for P samples
};

/// DDA traversal of the semantic volume: E-voxels are skipped, runs of
/// D-voxels are sampled evenly, and the first P-voxel run containing its
/// plane's ray intersection yields exactly one sample, after which the
/// march resumes one voxel diagonal behind the plane.
std::vector<Sample> march_ray(const Ray& ray, const SemanticVolume& vol, const Registry& reg,
                              const EditState* edit, const MarchConfig& cfg);

struct RenderResult {
    Vec3 color = Vec3::Zero();
    double depth = 0.0;  // expected ray parameter, sum w_i t_i
    Eigen::Vector4d semantic = Eigen::Vector4d::Zero();
    double opacity = 0.0;
    std::vector<double> weights;  // w_i = T_i alpha_i, retained for backward
    std::vector<double> alphas;
};

/// Front-to-back compositing of per-sample field outputs (Eqs. of the
/// emission-absorption model): alpha_i = 1 - exp(-sigma_i delta_i),
/// T_i = prod_{j<i} (1 - alpha_j).
RenderResult composite(const std::vector<Sample>& samples,
                       const std::vector<FieldOutputD>& outputs);

struct SampleGrads {
    std::vector<double> d_sigma;
    std::vector<Vec3> d_color;
    std::vector<Eigen::Vector4d> d_semantic;
};

/// Exact reverse-mode derivatives of composite() w.r.t. each sample's
/// sigma, color, and semantic logits.
SampleGrads composite_backward(const std::vector<Sample>& samples,
                               const std::vector<FieldOutputD>& outputs,
                               const RenderResult& result, const Vec3& d_color, double d_depth,
                               const Eigen::Vector4d& d_semantic, double d_opacity);

/// Flattened per-ray sample batch: samples of ray r live in
/// [ray_offset[r], ray_offset[r+1]).
struct MarchedBatch {
    std::vector<Sample> samples;
    std::vector<int> ray_offset;
};

MarchedBatch march_rays(const std::vector<Ray>& rays, const SemanticVolume& vol,
                        const Registry& reg, const EditState* edit, const MarchConfig& cfg,
                        int num_threads);

struct RenderedImages {
    Image<Rgb> color;
    Image<float> depth;       // z-depth, meters
    Image<float> semantic[4];  // raw semantic-head channels
    Image<float> opacity;
};

/// Renders a full view: per-pixel march + field query + composite.
/// Deterministic for fixed inputs.
RenderedImages render_image(const Pose& pose, const Intrinsics& K, const SemanticVolume& vol,
                            const Registry& reg, const Field& field, const EditState* edit,
                            const MarchConfig& cfg, int num_threads);

}  // namespace primfuse
