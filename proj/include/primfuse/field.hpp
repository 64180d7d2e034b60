#pragma once

#include "primfuse/core_types.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace primfuse {

struct EncodingConfig {
    int levels = 4;
    int base_resolution = 16;
    double per_level_scale = 2.0;
    int features_per_level = 2;
    int sh_degree = 2;
    int hidden_dim = 64;

    void validate() const {
        if (levels < 1 || base_resolution < 2 || per_level_scale <= 1.0 ||
            features_per_level < 1 || hidden_dim < 1)
            throw std::invalid_argument("EncodingConfig: invalid values");
        if (sh_degree < 0 || sh_degree > 3)
            throw std::invalid_argument("EncodingConfig: sh_degree must be in [0, 3]");
    }
    int feature_dim() const { return levels * features_per_level; }
    int sh_dim() const { return (sh_degree + 1) * (sh_degree + 1); }
    int level_resolution(int level) const {
        return static_cast<int>(std::lround(base_resolution * std::pow(per_level_scale, level)));
    }
};

/// Real spherical harmonics basis at a unit direction, degrees 0..3.
/// Throws when |d| deviates from 1 by more than 1e-3.
void sh_basis(const Vec3& d, int degree, double* out);

struct FieldOutputD {
    double sigma = 0.0;
    Vec3 color = Vec3::Zero();
    Eigen::Vector4d semantic = Eigen::Vector4d::Zero();
};

/// Trainable radiance field: multi-resolution dense feature grids gamma(x),
/// SH view encoding, and a small MLP with density, color, and semantic
/// heads. All gradients are hand-written; the scalar type is templated so
/// the same code path can be checked in double precision.
template <typename Scalar>
class FieldT {
public:
    using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    struct Tensor {
        std::string name;
        std::vector<int> dims;
        VecX value, grad, adam_m, adam_v;

        std::int64_t size() const { return value.size(); }
        void zero_grad() { grad.setZero(); }
    };

    /// Batched forward cache; one column per sample. ReLU masks are
    /// recovered from the post-activation values (h > 0 iff z > 0).
    struct Cache {
        std::vector<std::int64_t> corner_index;  // B * levels * 8
        std::vector<Scalar> corner_weight;       // B * levels * 8
        MatX feat;                               // feature_dim x B
        MatX h1, h2;                             // hidden x B
        MatX sh;                                 // sh_dim x B
        MatX h3;                                 // hidden x B
        MatX color;                              // 3 x B  (post-sigmoid)
        MatX sem;                                // 4 x B  (raw logits)
        VecX sigma;                              // B     (post-activation)
        VecX sigma_raw;                          // B
        int batch = 0;
    };

    /// Stand-alone gradient accumulators (one vector per tensor), used when
    /// several threads backpropagate disjoint sample ranges.
    struct GradTable {
        std::vector<VecX> grads;
    };

    static constexpr double kSigmaCap = 1e4;

    FieldT(const EncodingConfig& cfg, const Vec3& bbox_min, const Vec3& bbox_max,
           std::uint64_t seed);

    const EncodingConfig& config() const { return cfg_; }
    const Vec3& bbox_min() const { return bbox_min_; }
    const Vec3& bbox_max() const { return bbox_max_; }
    double scene_radius() const { return 0.5 * (bbox_max_ - bbox_min_).norm(); }
    std::int64_t clamp_count() const { return clamped_; }

    std::vector<Tensor>& tensors() { return tensors_; }
    const std::vector<Tensor>& tensors() const { return tensors_; }
    Tensor& tensor(const std::string& name);

    /// gamma(x): concatenated trilinear features of every level.
    VecX encode_position(const Vec3& x) const;

    /// Single-point query (convenience wrapper over the batched forward).
    FieldOutputD query(const Vec3& x, const Vec3& d) const;

    /// Batched forward. positions/dirs have one column per sample.
    void forward(const Eigen::Matrix<double, 3, Eigen::Dynamic>& positions,
                 const Eigen::Matrix<double, 3, Eigen::Dynamic>& dirs, Cache& cache) const;

    /// Density-only forward (no color branch); used by pruning.
    void density_only(const Eigen::Matrix<double, 3, Eigen::Dynamic>& positions,
                      std::vector<float>& out) const;

    /// Accumulates parameter gradients for the recorded forward pass.
    /// d_sigma is dL/d(activated sigma); d_color is dL/d(post-sigmoid color);
    /// d_sem is dL/d(semantic logits).
    void backward(const Cache& cache, const VecX& d_sigma, const MatX& d_color, const MatX& d_sem);

    GradTable make_grad_table() const;
    /// Thread-safe variant: accumulates into an external table instead of
    /// the tensors' own gradient buffers.
    void backward_into(const Cache& cache, const VecX& d_sigma, const MatX& d_color,
                       const MatX& d_sem, GradTable& table) const;
    void accumulate_grads(const std::vector<const GradTable*>& tables);

    void zero_grad();
    /// Adam update with beta1=0.9, beta2=0.99, eps=1e-15.
    void adam_step(double lr);

    /// Checkpoint: magic "PARFFP1\0" then named float32 tensors.
    void save_file(const std::string& path) const;
    static FieldT load_file(const std::string& path);

private:
    void init_params(std::uint64_t seed);
    void gather_features(const Eigen::Matrix<double, 3, Eigen::Dynamic>& positions, MatX& feat,
                         std::vector<std::int64_t>* corner_index,
                         std::vector<Scalar>* corner_weight) const;

    EncodingConfig cfg_;
    Vec3 bbox_min_ = Vec3::Zero(), bbox_max_ = Vec3::Ones();
    std::vector<Tensor> tensors_;
    std::vector<int> grid_tensor_;  // tensor index per level
    int w1_, b1_, w2_, b2_, wsig_, bsig_, wsem_, bsem_, w3_, b3_, w4_, b4_;
    std::int64_t adam_t_ = 0;
    mutable std::int64_t clamped_ = 0;
};

using Field = FieldT<float>;

}  // namespace primfuse

#include "primfuse/field_impl.hpp"
