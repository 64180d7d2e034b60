#pragma once

#include "primfuse/core_types.hpp"
#include "primfuse/registry.hpp"

#include <cstdint>
#include <string>

namespace primfuse {

constexpr std::int32_t kEmpty = -1;  // E-voxel
constexpr std::int32_t kDense = 0;   // D-voxel; labels >= 1 are P-voxels

struct FuseStats {
    std::int64_t to_p = 0;       // voxels that became P this frame
    std::int64_t to_d = 0;       // voxels that became D this frame
    std::int64_t to_e = 0;       // voxels carved to E this frame
    std::int64_t relabeled = 0;  // P voxels that changed plane id
    std::int64_t demoted_dead = 0;

    std::int64_t total() const { return to_p + to_d + to_e + relabeled + demoted_dead; }
};

/// Dense tri-state voxel grid over an axis-aligned box. Labels: -1 empty,
/// 0 dense, m >= 1 primitive m. psi() is the voxel diagonal, the unit for
/// the fusion bands B1 = 6 psi and B2 = psi.
class SemanticVolume {
public:
    SemanticVolume() = default;
    SemanticVolume(const Vec3& origin, double voxel_size, const Eigen::Vector3i& dims);

    const Vec3& origin() const { return origin_; }
    double voxel_size() const { return voxel_size_; }
    const Eigen::Vector3i& dims() const { return dims_; }
    double psi() const { return psi_; }
    Vec3 max_corner() const { return origin_ + voxel_size_ * dims_.cast<double>(); }
    std::uint64_t epoch() const { return epoch_; }

    std::int64_t voxel_count() const {
        return static_cast<std::int64_t>(dims_.x()) * dims_.y() * dims_.z();
    }
    /// x-fastest linear index.
    std::int64_t linear_index(int ix, int iy, int iz) const {
        return (static_cast<std::int64_t>(iz) * dims_.y() + iy) * dims_.x() + ix;
    }
    bool in_bounds(int ix, int iy, int iz) const {
        return ix >= 0 && ix < dims_.x() && iy >= 0 && iy < dims_.y() && iz >= 0 && iz < dims_.z();
    }
    std::int32_t label(int ix, int iy, int iz) const { return labels_[linear_index(ix, iy, iz)]; }
    std::int32_t& label(int ix, int iy, int iz) { return labels_[linear_index(ix, iy, iz)]; }
    const std::vector<std::int32_t>& labels() const { return labels_; }
    std::vector<std::int32_t>& labels() { return labels_; }

    Vec3 voxel_center(int ix, int iy, int iz) const {
        return origin_ + voxel_size_ * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
    }
    /// Voxel containing a point, or false when outside the grid.
    bool locate(const Vec3& p, Eigen::Vector3i& idx) const;
    std::int32_t label_at(const Vec3& p) const;

    /// Per-frame fusion of depth + globalized semantics into the labels.
    /// num_threads <= 0 uses all hardware threads.
    FuseStats fuse_frame(const Frame& frame, const Registry& reg, int num_threads = 0);

    /// Demotes every D-voxel whose center density (from `density`) is below
    /// the threshold back to E. P-voxels are never pruned. Returns the count.
    std::int64_t prune_voxels(const std::vector<float>& density, double density_threshold);

    /// Sets all voxels labeled plane_id to E and marks the registry entry
    /// dead. Throws when the id is unknown to both volume and registry.
    std::int64_t delete_primitive(int plane_id, Registry& reg);

    void bump_epoch() { ++epoch_; }

    /// Checkpoint, little-endian: magic "PARFVS1\0", dims (3 x int32),
    /// origin (3 x float64), voxel_size (float64), labels as raw int32
    /// x-fastest.
    void save_file(const std::string& path) const;
    static SemanticVolume load_file(const std::string& path);

private:
    Vec3 origin_ = Vec3::Zero();
    double voxel_size_ = 0.0;
    double psi_ = 0.0;
    Eigen::Vector3i dims_ = Eigen::Vector3i::Zero();
    std::vector<std::int32_t> labels_;
    std::uint64_t epoch_ = 0;
};

/// Frame-local classification of a single voxel center; nullopt = no-change.
/// Non-primitive pixels use the bilateral band B1 around the measured depth
/// (D only). Primitive pixels anchor the bands at the plane depth S along
/// the voxel's own viewing ray: P within +-B2 of S, D in [S+B2, S+B1),
/// E (free-space carve) anywhere in front of S-B2. Bands are half-open
/// [lower, upper).
std::optional<std::int32_t> classify_voxel(const Vec3& voxel_center, const Frame& frame,
                                           const Registry& reg, double b1, double b2);

/// Rigid transform applied to marked samples during rendering.
struct EditOp {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply_point(const Vec3& x) const { return rotation * x + translation; }
    Vec3 apply_dir(const Vec3& d) const { return rotation * d; }
    EditOp inverse() const {
        return {rotation.transpose(), -(rotation.transpose() * translation)};
    }
    bool is_rigid(double tol = 1e-6) const {
        return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
               std::abs(rotation.determinant() - 1.0) <= tol;
    }
};

/// Companion editing volume: edit_labels[i] = 0 means untouched, k >= 1
/// applies transforms[k-1] to sample points and directions.
class EditState {
public:
    EditState() = default;
    /// Grid geometry is shared with the semantic volume it edits.
    explicit EditState(const SemanticVolume& vol);

    bool empty() const { return transforms_.empty(); }
    const std::vector<EditOp>& transforms() const { return transforms_; }
    const std::vector<std::int32_t>& edit_labels() const { return edit_labels_; }

    int add_transform(const EditOp& op);  // returns 1-based op index
    void mark_voxel(std::int64_t linear, int op_index);
    /// Op index at a point (0 when unedited or outside the grid).
    int op_at(const Vec3& p) const;

    /// Transforms (x, d) by the op marked at x; identity when unmarked.
    std::pair<Vec3, Vec3> apply(const Vec3& x, const Vec3& d) const;

    /// Marks every voxel whose pull-back M^-1(center) lies inside the
    /// source AABB with the pull-back op, and every source voxel that maps
    /// away with the push-forward op; together these relocate the region's
    /// content rigidly.
    void add_region_move(const Vec3& src_min, const Vec3& src_max, const EditOp& forward);
    /// Same, with the source set given by the volume's voxels labeled
    /// plane_id instead of an AABB.
    void add_plane_move(const SemanticVolume& vol, int plane_id, const EditOp& forward);

private:
    const SemanticVolume* vol_ = nullptr;
    Vec3 origin_ = Vec3::Zero();
    double voxel_size_ = 0.0;
    Eigen::Vector3i dims_ = Eigen::Vector3i::Zero();
    std::vector<std::int32_t> edit_labels_;
    std::vector<EditOp> transforms_;
};

}  // namespace primfuse
