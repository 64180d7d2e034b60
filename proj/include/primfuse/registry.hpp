#pragma once

#include "primfuse/core_types.hpp"
#include "primfuse/plane_detector.hpp"

#include <iosfwd>
#include <random>
#include <string>

namespace primfuse {

/// Distance between two planes as the norm of the difference of their
/// closest-point vectors, |d_a n_a - d_b n_b|.
double plane_distance(const Plane& a, const Plane& b);

/// Global plane list. Ids are 1-based list positions, stable for the whole
/// run; removed planes are marked dead, never erased.
class Registry {
public:
    double merge_threshold = 0.01;   // meters
    double normal_threshold = 0.1;   // unit-vector difference
    int history_window = 10;         // frames sampled for re-validation
    int revalidate_sample_cap = 2048;
    int revalidate_min_samples = 3;

    const std::vector<Plane>& planes() const { return planes_; }
    std::vector<Plane>& planes() { return planes_; }
    const Plane* find(int id) const {
        if (id < 1 || id > static_cast<int>(planes_.size())) return nullptr;
        return &planes_[id - 1];
    }
    Plane* find(int id) {
        if (id < 1 || id > static_cast<int>(planes_.size())) return nullptr;
        return &planes_[id - 1];
    }
    int alive_count() const;

    /// Merges a local detection into the registry and rewrites the frame's
    /// semantic image to global ids: a local plane farther than
    /// merge_threshold from every alive global plane is appended as new,
    /// otherwise its pixels take the argmin-distance global id.
    void merge_detection(const LocalDetection& det, Frame& frame);

    /// Re-estimates each alive plane's normal by PCA over its supporting
    /// pixels in the given frames. Planes whose sign-aligned normal moved by
    /// more than normal_threshold are marked dead and their pixels in the
    /// window frames are zeroed. Planes with fewer than
    /// revalidate_min_samples supports are skipped. Returns removed ids.
    std::vector<int> revalidate_normals(std::vector<Frame*>& recent_frames);

    void mark_dead(int id);

    /// Plain-text serialization, one `id nx ny nz d alive` line per plane.
    void save(std::ostream& os) const;
    void save_file(const std::string& path) const;
    static Registry load(std::istream& is);
    static Registry load_file(const std::string& path);

private:
    std::vector<Plane> planes_;
    std::mt19937_64 rng_{12345};
};

}  // namespace primfuse
