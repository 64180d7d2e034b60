#include "primfuse/registry.hpp"

#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace primfuse {

double plane_distance(const Plane& a, const Plane& b) {
    return (a.offset * a.normal - b.offset * b.normal).norm();
}

int Registry::alive_count() const {
    int n = 0;
    for (const auto& p : planes_)
        if (p.alive) ++n;
    return n;
}

void Registry::merge_detection(const LocalDetection& det, Frame& frame) {
    // local id -> global id (0 keeps the pixel unassigned)
    std::vector<int> remap(det.planes.size() + 1, 0);

    for (size_t j = 0; j < det.planes.size(); ++j) {
        const Plane& local = det.planes[j];
        double best = std::numeric_limits<double>::infinity();
        int best_id = 0;
        for (const auto& g : planes_) {
            if (!g.alive) continue;
            double d = plane_distance(local, g);
            if (d < best) {
                best = d;
                best_id = g.id;
            }
        }
        if (best_id != 0 && best <= merge_threshold) {
            remap[j + 1] = best_id;
            planes_[best_id - 1].support_count += local.support_count;
        } else {
            Plane added = local;
            added.id = static_cast<int>(planes_.size()) + 1;
            added.alive = true;
            planes_.push_back(added);
            remap[j + 1] = added.id;
        }
    }

    if (frame.semantic.width != det.semantic.width ||
        frame.semantic.height != det.semantic.height)
        throw std::invalid_argument("merge_detection: detection/frame size mismatch");
    for (size_t i = 0; i < det.semantic.data.size(); ++i) {
        std::int32_t s = det.semantic.data[i];
        frame.semantic.data[i] =
            (s > 0 && s <= static_cast<std::int32_t>(det.planes.size())) ? remap[s] : 0;
    }
}

std::vector<int> Registry::revalidate_normals(std::vector<Frame*>& recent_frames) {
    std::vector<int> removed;
    for (auto& plane : planes_) {
        if (!plane.alive) continue;

        // Collect supporting world points across the window.
        std::vector<Vec3> supports;
        for (const Frame* f : recent_frames) {
            for (int r = 0; r < f->semantic.height; ++r) {
                for (int c = 0; c < f->semantic.width; ++c) {
                    if (f->semantic.at(r, c) != plane.id) continue;
                    float z = f->depth.at(r, c);
                    if (z <= 0.0f) continue;
                    supports.push_back(backproject(c + 0.5, r + 0.5, z, f->intrinsics, f->pose));
                }
            }
        }
        if (static_cast<int>(supports.size()) < revalidate_min_samples) continue;

        if (static_cast<int>(supports.size()) > revalidate_sample_cap) {
            std::shuffle(supports.begin(), supports.end(), rng_);
            supports.resize(revalidate_sample_cap);
        }

        Vec3 estimated;
        try {
            estimated = fit_plane_pca(supports).plane.normal;
        } catch (const std::invalid_argument&) {
            continue;
        }
        if (estimated.dot(plane.normal) < 0) estimated = -estimated;  // PCA sign ambiguity
        if ((estimated - plane.normal).norm() > normal_threshold) {
            plane.alive = false;
            removed.push_back(plane.id);
            for (Frame* f : recent_frames)
                for (auto& s : f->semantic.data)
                    if (s == plane.id) s = 0;
        }
    }
    return removed;
}

void Registry::mark_dead(int id) {
    Plane* p = find(id);
    if (!p) throw std::invalid_argument("Registry::mark_dead: unknown plane id");
    p->alive = false;
}

void Registry::save(std::ostream& os) const {
    os.precision(9);
    for (const auto& p : planes_) {
        os << p.id << ' ' << p.normal.x() << ' ' << p.normal.y() << ' ' << p.normal.z() << ' '
           << p.offset << ' ' << (p.alive ? 1 : 0) << '\n';
    }
}

void Registry::save_file(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write registry file: " + path);
    save(os);
}

Registry Registry::load(std::istream& is) {
    Registry reg;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Plane p;
        int alive = 1;
        if (!(ss >> p.id >> p.normal.x() >> p.normal.y() >> p.normal.z() >> p.offset >> alive))
            throw std::runtime_error("malformed registry line: " + line);
        p.alive = alive != 0;
        if (p.id != static_cast<int>(reg.planes_.size()) + 1)
            throw std::runtime_error("registry ids must be consecutive from 1");
        reg.planes_.push_back(p);
    }
    return reg;
}

Registry Registry::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read registry file: " + path);
    return load(is);
}

}  // namespace primfuse
