#pragma once

#include "primfuse/plane_detector.hpp"
#include "primfuse/renderer.hpp"

#include <random>

namespace primfuse {

struct TrainConfig {
    double lambda1 = 1.0;    // depth loss weight
    double lambda2 = 0.04;   // semantic loss weight
    double lambda3 = 0.001;  // opacity regularizer weight
    double lr_start = 1e-2;
    double lr_end = 3e-4;
    int rays_per_batch = 8192;
    int iters_per_epoch = 1000;
    int epochs = 5;
    int prune_every = 500;
    double density_threshold = 0.01;
    double incremental_rate = 10.0;  // simulated frame arrivals per second
    int eval_every = 100;
    std::uint64_t seed = 1;
    int threads = 0;

    int total_steps() const { return epochs * iters_per_epoch; }
    void validate() const {
        if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lr_start <= 0 || lr_end <= 0 ||
            rays_per_batch < 1 || iters_per_epoch < 1 || epochs < 1 || prune_every < 1)
            throw std::invalid_argument("TrainConfig: invalid values");
    }
};

struct LossReport {
    double l_c = 0, l_d = 0, l_s = 0, l_reg = 0, l_total = 0;
};

struct RayTargets {
    std::vector<Vec3> color;
    std::vector<double> depth;  // ray-parameter units; <= 0 marks invalid
    std::vector<Eigen::Vector4d> semantic;
    std::vector<char> semantic_valid;
};

/// Mean-reduced losses over contributing rays: color over all rays, depth
/// over valid-depth rays, semantics over primitive-pixel rays, opacity
/// entropy (-o log o, o clamped to [1e-7, 1]) over all rays.
LossReport compute_losses(const std::vector<RenderResult>& results, const RayTargets& targets,
                          const TrainConfig& cfg);

/// Same, also producing dL_total/d{color,depth,semantic,opacity} per ray.
LossReport compute_losses_grad(const std::vector<RenderResult>& results,
                               const RayTargets& targets, const TrainConfig& cfg,
                               std::vector<Vec3>& d_color, std::vector<double>& d_depth,
                               std::vector<Eigen::Vector4d>& d_semantic,
                               std::vector<double>& d_opacity);

double cosine_lr(const TrainConfig& cfg, int step);

struct MetricsRow {
    int step = 0;
    double wall_time_s = 0, l_c = 0, l_d = 0, l_s = 0, l_reg = 0, lr = 0;
    double psnr_train = 0, psnr_holdout = 0;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

/// Owns the optimization loop over a fused volume + registry + field.
/// Rays are sampled uniformly over the pixels of registered frames, without
/// replacement within a shuffled pool.
class Trainer {
public:
    Trainer(SemanticVolume& vol, Registry& reg, Field& field, const TrainConfig& cfg,
            const MarchConfig& march);

    /// Registers an already-fused frame with the ray sampler.
    void add_frame(const Frame& frame);
    int frame_count() const { return static_cast<int>(frames_.size()); }

    LossReport train_step(int step_index);
    void prune(std::int64_t* pruned_out = nullptr);
    double eval_psnr(const Frame& holdout) const;

    /// Batch mode: all frames available up front.
    std::vector<MetricsRow> run_batch(const std::vector<Frame>& fused_frames,
                                      const Frame* holdout);

    /// Incremental mode: per arriving frame runs detect -> merge ->
    /// (periodic revalidate) -> fuse, then the share of the step budget
    /// implied by the simulated arrival rate; remaining steps run after the
    /// stream ends so the total matches batch mode.
    std::vector<MetricsRow> run_incremental(std::vector<Frame> stream,
                                            const DetectorConfig& det_cfg, const Frame* holdout);

    const TrainConfig& config() const { return cfg_; }

private:
    struct BatchData {
        std::vector<Ray> rays;
        RayTargets targets;
    };
    BatchData assemble_batch();
    void refill_pool();

    SemanticVolume& vol_;
    Registry& reg_;
    Field& field_;
    TrainConfig cfg_;
    MarchConfig march_;
    std::vector<Frame> frames_;
    std::vector<std::uint64_t> pool_;
    size_t pool_pos_ = 0;
    std::mt19937_64 rng_;
    std::vector<Field::GradTable> grad_tables_;
    LossReport last_report_;
};

}  // namespace primfuse
