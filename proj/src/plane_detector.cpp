#include "primfuse/plane_detector.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace primfuse {

PlaneFit fit_plane_pca(const std::vector<Vec3>& points) {
    if (points.size() < 3) throw std::invalid_argument("fit_plane_pca: need at least 3 points");
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : points) centroid += p;
    centroid /= static_cast<double>(points.size());

    Mat3 cov = Mat3::Zero();
    for (const auto& p : points) {
        Vec3 d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(points.size());

    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const auto& evals = eig.eigenvalues();  // ascending
    if (evals[0] < 1e-12 && evals[1] < 1e-12)
        throw std::invalid_argument("fit_plane_pca: degenerate (collinear) input");

    PlaneFit fit;
    fit.plane.normal = eig.eigenvectors().col(0).normalized();
    fit.plane.offset = fit.plane.normal.dot(centroid);
    fit.plane.canonicalize();

    double sq = 0.0;
    for (const auto& p : points) {
        double r = fit.plane.signed_distance(p);
        sq += r * r;
    }
    fit.rms_error = std::sqrt(sq / static_cast<double>(points.size()));
    fit.plane.support_count = static_cast<std::int64_t>(points.size());
    return fit;
}

bool validate_flatness(const Plane& plane, const std::vector<Vec3>& points, double epsilon) {
    if (points.empty()) throw std::invalid_argument("validate_flatness: no points");
    double sum = 0.0;
    for (const auto& p : points) sum += std::abs(plane.signed_distance(p));
    return sum / static_cast<double>(points.size()) <= epsilon;
}

namespace {

// Sign-aligned compatibility test between two plane fits.
bool planes_compatible(const Plane& a, const Plane& b, double max_angle, double max_offset) {
    double dot = a.normal.dot(b.normal);
    double offset_b = b.offset;
    if (dot < 0) {
        dot = -dot;
        offset_b = -offset_b;
    }
    dot = std::min(1.0, dot);
    if (std::acos(dot) > max_angle) return false;
    return std::abs(a.offset - offset_b) <= max_offset;
}

struct Cell {
    bool planar = false;
    Plane plane;
    double rms = 0.0;
    std::vector<std::pair<int, int>> pixels;  // (row, col) with valid depth
    std::vector<Vec3> points;                 // world points for those pixels
};

}  // namespace

LocalDetection detect_planes(const Image<float>& depth, const Intrinsics& K, const Pose& pose,
                             const DetectorConfig& cfg) {
    cfg.validate();
    const int h = depth.height, w = depth.width;
    LocalDetection det;
    det.semantic = Image<std::int32_t>(h, w, 0);

    const int cs = cfg.cell_size;
    const int cells_x = (w + cs - 1) / cs;
    const int cells_y = (h + cs - 1) / cs;
    std::vector<Cell> cells(static_cast<size_t>(cells_x) * cells_y);

    const int min_valid =
        static_cast<int>(std::ceil(cfg.min_valid_fraction * static_cast<double>(cs * cs)));

    for (int cy = 0; cy < cells_y; ++cy) {
        for (int cx = 0; cx < cells_x; ++cx) {
            Cell& cell = cells[static_cast<size_t>(cy) * cells_x + cx];
            for (int r = cy * cs; r < std::min(h, (cy + 1) * cs); ++r) {
                for (int c = cx * cs; c < std::min(w, (cx + 1) * cs); ++c) {
                    float z = depth.at(r, c);
                    if (z <= 0.0f) continue;
                    cell.pixels.emplace_back(r, c);
                    cell.points.push_back(backproject(c + 0.5, r + 0.5, z, K, pose));
                }
            }
            if (static_cast<int>(cell.pixels.size()) < min_valid) continue;
            try {
                PlaneFit fit = fit_plane_pca(cell.points);
                if (!validate_flatness(fit.plane, cell.points, cfg.flatness_threshold)) continue;
                cell.planar = true;
                cell.plane = fit.plane;
                cell.rms = fit.rms_error;
            } catch (const std::invalid_argument&) {
                // degenerate cell, not a seed
            }
        }
    }

    // Seeds in order of fit quality.
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(cells.size()); ++i)
        if (cells[i].planar) order.push_back(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return cells[a].rms < cells[b].rms; });

    std::vector<int> assignment(cells.size(), -1);
    int next_label = 0;
    for (int seed : order) {
        if (assignment[seed] >= 0) continue;
        const Plane& ref = cells[seed].plane;
        std::vector<int> members;
        std::deque<int> queue{seed};
        assignment[seed] = next_label;
        while (!queue.empty()) {
            int cur = queue.front();
            queue.pop_front();
            members.push_back(cur);
            int cx = cur % cells_x, cy = cur / cells_x;
            const int nbr[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
            for (const auto& d : nbr) {
                int nx = cx + d[0], ny = cy + d[1];
                if (nx < 0 || nx >= cells_x || ny < 0 || ny >= cells_y) continue;
                int ni = ny * cells_x + nx;
                if (assignment[ni] >= 0 || !cells[ni].planar) continue;
                if (!planes_compatible(ref, cells[ni].plane, cfg.normal_merge_angle,
                                       cfg.offset_merge_dist))
                    continue;
                assignment[ni] = next_label;
                queue.push_back(ni);
            }
        }

        std::vector<Vec3> region_points;
        size_t total = 0;
        for (int m : members) total += cells[m].points.size();
        region_points.reserve(total);
        for (int m : members)
            region_points.insert(region_points.end(), cells[m].points.begin(),
                                 cells[m].points.end());

        if (static_cast<int>(region_points.size()) < cfg.min_support) continue;

        PlaneFit refit;
        try {
            refit = fit_plane_pca(region_points);
        } catch (const std::invalid_argument&) {
            continue;
        }
        if (!validate_flatness(refit.plane, region_points, cfg.flatness_threshold)) continue;

        ++next_label;
        refit.plane.id = static_cast<int>(det.planes.size()) + 1;
        refit.plane.support_count = static_cast<std::int64_t>(region_points.size());
        det.planes.push_back(refit.plane);
        for (int m : members)
            for (const auto& [r, c] : cells[m].pixels) det.semantic.at(r, c) = refit.plane.id;
    }
    return det;
}

}  // namespace primfuse
