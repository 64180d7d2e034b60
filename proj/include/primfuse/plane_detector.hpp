#pragma once

#include "primfuse/core_types.hpp"

namespace primfuse {

struct DetectorConfig {
    int cell_size = 16;              // grid-cell width in pixels
    double flatness_threshold = 0.005;  // mean point-to-plane error bound, meters
    int min_support = 512;           // minimum pixels per plane
    double normal_merge_angle = 5.0 * M_PI / 180.0;  // radians
    double offset_merge_dist = 0.01;                 // meters (2 * flatness by default)
    double min_valid_fraction = 0.8;  // cells below this valid-pixel fraction are not seeds

    void validate() const {
        if (flatness_threshold <= 0) throw std::invalid_argument("flatness_threshold must be > 0");
        if (cell_size < 4) throw std::invalid_argument("cell_size must be >= 4");
        if (min_support < cell_size * cell_size)
            throw std::invalid_argument("min_support must be >= cell_size^2");
    }
};

/// Per-frame detection result: planes are in world coordinates with local
/// 1-based ids; the semantic image indexes into the plane list (0 = none).
struct LocalDetection {
    std::vector<Plane> planes;
    Image<std::int32_t> semantic;
};

struct PlaneFit {
    Plane plane;
    double rms_error = 0.0;
};

/// Least-squares plane through the centroid of the points (normal = smallest
/// covariance eigenvector, oriented so offset >= 0). Throws on fewer than 3
/// points or collinear input.
PlaneFit fit_plane_pca(const std::vector<Vec3>& points);

/// True iff the mean absolute point-to-plane distance is <= epsilon
/// (inclusive).
bool validate_flatness(const Plane& plane, const std::vector<Vec3>& points, double epsilon);

/// Grid-cell PCA plane detection on a depth image. Cells of cell_size px are
/// seeded with a PCA fit, greedily grown over compatible neighbor cells, and
/// each grown region is refit and re-validated against flatness_threshold.
/// Returns world-space planes and a disjoint pixel labeling.
LocalDetection detect_planes(const Image<float>& depth, const Intrinsics& K, const Pose& pose,
                             const DetectorConfig& cfg);

}  // namespace primfuse
