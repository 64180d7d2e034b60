#include "primfuse/semantic_volume.hpp"

#include "primfuse/parallel.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace primfuse {

SemanticVolume::SemanticVolume(const Vec3& origin, double voxel_size, const Eigen::Vector3i& dims)
    : origin_(origin), voxel_size_(voxel_size), dims_(dims) {
    if (voxel_size <= 0 || (dims.array() <= 0).any())
        throw std::invalid_argument("SemanticVolume: invalid geometry");
    psi_ = std::sqrt(3.0) * voxel_size_;
    labels_.assign(voxel_count(), kEmpty);
}

bool SemanticVolume::locate(const Vec3& p, Eigen::Vector3i& idx) const {
    Vec3 rel = (p - origin_) / voxel_size_;
    int ix = static_cast<int>(std::floor(rel.x()));
    int iy = static_cast<int>(std::floor(rel.y()));
    int iz = static_cast<int>(std::floor(rel.z()));
    if (!in_bounds(ix, iy, iz)) return false;
    idx = {ix, iy, iz};
    return true;
}

std::int32_t SemanticVolume::label_at(const Vec3& p) const {
    Eigen::Vector3i idx;
    if (!locate(p, idx)) return kEmpty;
    return labels_[linear_index(idx.x(), idx.y(), idx.z())];
}

namespace {

// observed = the frame actually constrains this voxel (in-image projection
// with a valid depth reading).
std::optional<std::int32_t> classify_impl(const Vec3& x, const Frame& frame, const Registry& reg,
                                          double b1, double b2, bool& observed) {
    observed = false;
    Projection proj = project(x, frame.intrinsics, frame.pose);
    if (proj.behind || !frame.intrinsics.contains(proj.u, proj.v)) return std::nullopt;
    int col = static_cast<int>(proj.u);
    int row = static_cast<int>(proj.v);
    double measured = frame.depth.at(row, col);
    if (measured <= 0.0) return std::nullopt;
    observed = true;

    std::int32_t sem = frame.semantic.at(row, col);
    const Plane* plane = sem > 0 ? reg.find(sem) : nullptr;
    if (plane && !plane->alive) plane = nullptr;

    double z = proj.z;
    if (!plane) {
        if (measured - b1 <= z && z < measured + b1) return kDense;
        return std::nullopt;
    }

    // Plane depth along this voxel's viewing ray anchors the bands; the
    // fitted plane stands in for the (possibly noisy) per-pixel depth.
    Vec3 cam = frame.pose.translation;
    Vec3 dir = x - cam;
    double len = dir.norm();
    if (len < 1e-12) return std::nullopt;
    auto hit = intersect_ray_plane(Ray{cam, dir / len}, *plane);
    if (!hit) return std::nullopt;
    double s = frame.pose.world_to_camera(hit->point).z();

    if (s - b2 <= z && z < s + b2) return sem;
    if (s + b2 <= z && z < s + b1) return kDense;
    if (z < s - b2) return kEmpty;
    return std::nullopt;
}

}  // namespace

std::optional<std::int32_t> classify_voxel(const Vec3& voxel_center, const Frame& frame,
                                           const Registry& reg, double b1, double b2) {
    bool observed = false;
    return classify_impl(voxel_center, frame, reg, b1, b2, observed);
}

FuseStats SemanticVolume::fuse_frame(const Frame& frame, const Registry& reg, int num_threads) {
    const double b1 = 6.0 * psi_;
    const double b2 = psi_;
    const int nx = dims_.x(), ny = dims_.y(), nz = dims_.z();

    std::vector<FuseStats> partials;
    const int slices = nz;
    partials.resize(slices);

    parallel_for(static_cast<size_t>(slices), num_threads, [&](size_t lo, size_t hi) {
        for (size_t iz = lo; iz < hi; ++iz) {
            FuseStats& st = partials[iz];
            for (int iy = 0; iy < ny; ++iy) {
                std::int64_t base = linear_index(0, static_cast<int>(iy), static_cast<int>(iz));
                for (int ix = 0; ix < nx; ++ix) {
                    std::int32_t& cur = labels_[base + ix];
                    Vec3 center = voxel_center(ix, iy, static_cast<int>(iz));
                    bool observed = false;
                    auto nl = classify_impl(center, frame, reg, b1, b2, observed);

                    bool was_dead_p = false;
                    if (cur >= 1) {
                        const Plane* p = reg.find(cur);
                        was_dead_p = (!p || !p->alive);
                    }
                    if (was_dead_p && observed) {
                        cur = kDense;  // dead primitive demotes on first re-observation
                        if (!nl || *nl == kDense) {
                            ++st.demoted_dead;
                            continue;
                        }
                    }
                    if (!nl) continue;
                    std::int32_t next = *nl;
                    if (next == cur) continue;

                    if (cur >= 1) {
                        // Alive P yields only to another P or the free-space carve.
                        if (next >= 1) {
                            cur = next;
                            ++st.relabeled;
                        } else if (next == kEmpty) {
                            cur = kEmpty;
                            ++st.to_e;
                        }
                        continue;
                    }
                    if (next >= 1) {
                        cur = next;
                        ++st.to_p;
                    } else if (next == kDense) {
                        cur = next;
                        ++st.to_d;
                    } else {
                        if (cur != kEmpty) ++st.to_e;
                        cur = next;
                    }
                }
            }
        }
    });

    FuseStats total;
    for (const auto& st : partials) {
        total.to_p += st.to_p;
        total.to_d += st.to_d;
        total.to_e += st.to_e;
        total.relabeled += st.relabeled;
        total.demoted_dead += st.demoted_dead;
    }
    ++epoch_;
    return total;
}

std::int64_t SemanticVolume::prune_voxels(const std::vector<float>& density,
                                          double density_threshold) {
    if (density.size() != labels_.size())
        throw std::invalid_argument("prune_voxels: density size mismatch");
    std::int64_t pruned = 0;
    for (size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] == kDense && density[i] < density_threshold) {
            labels_[i] = kEmpty;
            ++pruned;
        }
    }
    ++epoch_;
    return pruned;
}

std::int64_t SemanticVolume::delete_primitive(int plane_id, Registry& reg) {
    if (plane_id < 1) throw std::invalid_argument("delete_primitive: plane id must be >= 1");
    std::int64_t cleared = 0;
    for (auto& l : labels_) {
        if (l == plane_id) {
            l = kEmpty;
            ++cleared;
        }
    }
    Plane* p = reg.find(plane_id);
    if (!p && cleared == 0)
        throw std::invalid_argument("delete_primitive: unknown plane id");
    if (p) p->alive = false;
    ++epoch_;
    return cleared;
}

void SemanticVolume::save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write volume file: " + path);
    const char magic[8] = {'P', 'A', 'R', 'F', 'V', 'S', '1', '\0'};
    os.write(magic, 8);
    std::int32_t d[3] = {dims_.x(), dims_.y(), dims_.z()};
    os.write(reinterpret_cast<const char*>(d), sizeof(d));
    double geo[4] = {origin_.x(), origin_.y(), origin_.z(), voxel_size_};
    os.write(reinterpret_cast<const char*>(geo), sizeof(geo));
    os.write(reinterpret_cast<const char*>(labels_.data()),
             static_cast<std::streamsize>(labels_.size() * sizeof(std::int32_t)));
    if (!os) throw std::runtime_error("short write on volume file: " + path);
}

SemanticVolume SemanticVolume::load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read volume file: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "PARFVS1\0", 8) != 0)
        throw std::runtime_error("bad volume magic in " + path);
    std::int32_t d[3];
    is.read(reinterpret_cast<char*>(d), sizeof(d));
    double geo[4];
    is.read(reinterpret_cast<char*>(geo), sizeof(geo));
    if (!is) throw std::runtime_error("truncated volume header in " + path);
    SemanticVolume vol(Vec3(geo[0], geo[1], geo[2]), geo[3], Eigen::Vector3i(d[0], d[1], d[2]));
    is.read(reinterpret_cast<char*>(vol.labels_.data()),
            static_cast<std::streamsize>(vol.labels_.size() * sizeof(std::int32_t)));
    if (!is) throw std::runtime_error("truncated volume labels in " + path);
    return vol;
}

EditState::EditState(const SemanticVolume& vol)
    : vol_(&vol),
      origin_(vol.origin()),
      voxel_size_(vol.voxel_size()),
      dims_(vol.dims()),
      edit_labels_(vol.voxel_count(), 0) {}

int EditState::add_transform(const EditOp& op) {
    if (!op.is_rigid()) throw std::invalid_argument("EditState: transform is not rigid");
    transforms_.push_back(op);
    return static_cast<int>(transforms_.size());
}

void EditState::mark_voxel(std::int64_t linear, int op_index) {
    if (op_index < 0 || op_index > static_cast<int>(transforms_.size()))
        throw std::invalid_argument("EditState: edit label out of range");
    edit_labels_[linear] = op_index;
}

int EditState::op_at(const Vec3& p) const {
    if (edit_labels_.empty()) return 0;
    Vec3 rel = (p - origin_) / voxel_size_;
    int ix = static_cast<int>(std::floor(rel.x()));
    int iy = static_cast<int>(std::floor(rel.y()));
    int iz = static_cast<int>(std::floor(rel.z()));
    if (ix < 0 || ix >= dims_.x() || iy < 0 || iy >= dims_.y() || iz < 0 || iz >= dims_.z())
        return 0;
    return edit_labels_[(static_cast<std::int64_t>(iz) * dims_.y() + iy) * dims_.x() + ix];
}

std::pair<Vec3, Vec3> EditState::apply(const Vec3& x, const Vec3& d) const {
    int k = op_at(x);
    if (k == 0) return {x, d};
    const EditOp& op = transforms_[k - 1];
    return {op.apply_point(x), op.apply_dir(d)};
}

namespace {

void index_range_for_box(const Vec3& origin, double h, const Eigen::Vector3i& dims,
                         const Vec3& bmin, const Vec3& bmax, Eigen::Vector3i& lo,
                         Eigen::Vector3i& hi) {
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max(0, static_cast<int>(std::floor((bmin[a] - origin[a]) / h)));
        hi[a] = std::min(dims[a] - 1, static_cast<int>(std::floor((bmax[a] - origin[a]) / h)));
    }
}

}  // namespace

void EditState::add_region_move(const Vec3& src_min, const Vec3& src_max, const EditOp& forward) {
    if (!vol_) throw std::logic_error("EditState: not bound to a volume");
    const EditOp pull = forward.inverse();
    int push_idx = add_transform(forward);
    int pull_idx = add_transform(pull);

    auto inside_src = [&](const Vec3& p) {
        return (p.array() >= src_min.array()).all() && (p.array() <= src_max.array()).all();
    };

    // Source voxels first: redirect them to where their content went.
    Eigen::Vector3i lo, hi;
    index_range_for_box(origin_, voxel_size_, dims_, src_min, src_max, lo, hi);
    for (int iz = lo.z(); iz <= hi.z(); ++iz)
        for (int iy = lo.y(); iy <= hi.y(); ++iy)
            for (int ix = lo.x(); ix <= hi.x(); ++ix) {
                Vec3 c = vol_->voxel_center(ix, iy, iz);
                if (inside_src(c)) mark_voxel(vol_->linear_index(ix, iy, iz), push_idx);
            }

    // Destination voxels override: they pull the moved content back.
    Vec3 dmin = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 dmax = -dmin;
    for (int corner = 0; corner < 8; ++corner) {
        Vec3 c(corner & 1 ? src_max.x() : src_min.x(), corner & 2 ? src_max.y() : src_min.y(),
               corner & 4 ? src_max.z() : src_min.z());
        Vec3 tc = forward.apply_point(c);
        dmin = dmin.cwiseMin(tc);
        dmax = dmax.cwiseMax(tc);
    }
    index_range_for_box(origin_, voxel_size_, dims_, dmin, dmax, lo, hi);
    for (int iz = lo.z(); iz <= hi.z(); ++iz)
        for (int iy = lo.y(); iy <= hi.y(); ++iy)
            for (int ix = lo.x(); ix <= hi.x(); ++ix) {
                Vec3 c = vol_->voxel_center(ix, iy, iz);
                if (inside_src(pull.apply_point(c)))
                    mark_voxel(vol_->linear_index(ix, iy, iz), pull_idx);
            }
}

void EditState::add_plane_move(const SemanticVolume& vol, int plane_id, const EditOp& forward) {
    if (!vol_) throw std::logic_error("EditState: not bound to a volume");
    const EditOp pull = forward.inverse();
    int push_idx = add_transform(forward);
    int pull_idx = add_transform(pull);

    Vec3 smin = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 smax = -smin;
    bool any = false;
    const auto& dims = vol.dims();
    for (int iz = 0; iz < dims.z(); ++iz)
        for (int iy = 0; iy < dims.y(); ++iy)
            for (int ix = 0; ix < dims.x(); ++ix) {
                if (vol.label(ix, iy, iz) != plane_id) continue;
                any = true;
                Vec3 c = vol.voxel_center(ix, iy, iz);
                smin = smin.cwiseMin(c);
                smax = smax.cwiseMax(c);
                mark_voxel(vol.linear_index(ix, iy, iz), push_idx);
            }
    if (!any) throw std::invalid_argument("EditState: plane has no voxels to move");

    Vec3 dmin = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 dmax = -dmin;
    for (int corner = 0; corner < 8; ++corner) {
        Vec3 c(corner & 1 ? smax.x() : smin.x(), corner & 2 ? smax.y() : smin.y(),
               corner & 4 ? smax.z() : smin.z());
        Vec3 tc = forward.apply_point(c);
        dmin = dmin.cwiseMin(tc);
        dmax = dmax.cwiseMax(tc);
    }
    Eigen::Vector3i lo, hi;
    index_range_for_box(origin_, voxel_size_, dims_, dmin - Vec3::Constant(voxel_size_),
                        dmax + Vec3::Constant(voxel_size_), lo, hi);
    for (int iz = lo.z(); iz <= hi.z(); ++iz)
        for (int iy = lo.y(); iy <= hi.y(); ++iy)
            for (int ix = lo.x(); ix <= hi.x(); ++ix) {
                Vec3 c = vol.voxel_center(ix, iy, iz);
                if (vol.label_at(pull.apply_point(c)) == plane_id)
                    mark_voxel(vol.linear_index(ix, iy, iz), pull_idx);
            }
}

}  // namespace primfuse
