#include "primfuse/dataset.hpp"

#include "primfuse/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace primfuse {

namespace {

std::string frame_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d.png", index);
    return buf;
}

}  // namespace

int DatasetDir::frame_count() const {
    int n = 0;
    while (fs::exists(fs::path(root) / "color" / frame_name(n))) ++n;
    return n;
}

Intrinsics DatasetDir::intrinsics() const {
    std::ifstream is(fs::path(root) / "intrinsics.txt");
    if (!is) throw std::runtime_error("missing intrinsics.txt in " + root);
    Intrinsics K;
    if (!(is >> K.fx >> K.fy >> K.cx >> K.cy >> K.width >> K.height))
        throw std::runtime_error("malformed intrinsics.txt in " + root);
    if (!K.is_valid()) throw std::runtime_error("invalid intrinsics in " + root);
    return K;
}

std::vector<Pose> DatasetDir::poses() const {
    std::ifstream is(fs::path(root) / "poses.txt");
    if (!is) throw std::runtime_error("missing poses.txt in " + root);
    std::vector<Pose> poses;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        int idx;
        Mat4 m;
        ss >> idx;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c)
                if (!(ss >> m(r, c))) throw std::runtime_error("malformed poses.txt line: " + line);
        if (idx != static_cast<int>(poses.size()))
            throw std::runtime_error("poses.txt indices must be consecutive from 0");
        poses.push_back(Pose::from_matrix(m));
    }
    return poses;
}

Frame DatasetDir::load_frame(int index) const {
    Frame f;
    f.color = read_png_rgb8((fs::path(root) / "color" / frame_name(index)).string());
    auto depth_mm = read_png_gray16((fs::path(root) / "depth" / frame_name(index)).string());
    f.depth = Image<float>(depth_mm.height, depth_mm.width, 0.0f);
    for (size_t i = 0; i < depth_mm.data.size(); ++i)
        f.depth.data[i] = depth_mm.data[i] / 1000.0f;
    f.semantic = Image<std::int32_t>(f.depth.height, f.depth.width, 0);
    fs::path sem = fs::path(root) / "semantic" / frame_name(index);
    if (fs::exists(sem)) {
        auto s = read_png_gray16(sem.string());
        for (size_t i = 0; i < s.data.size(); ++i)
            f.semantic.data[i] = static_cast<std::int32_t>(s.data[i]);
    }
    auto all_poses = poses();
    if (index < 0 || index >= static_cast<int>(all_poses.size()))
        throw std::runtime_error("frame index out of range in " + root);
    f.pose = all_poses[index];
    f.intrinsics = intrinsics();
    f.timestamp = index;
    if (!f.dims_consistent()) throw std::runtime_error("inconsistent frame dimensions in " + root);
    return f;
}

std::vector<Frame> DatasetDir::load_all() const {
    const int n = frame_count();
    if (n == 0) throw std::runtime_error("dataset has no frames: " + root);
    auto all_poses = poses();
    if (static_cast<int>(all_poses.size()) != n)
        throw std::runtime_error("color/pose count mismatch in " + root);
    Intrinsics K = intrinsics();
    std::vector<Frame> frames;
    frames.reserve(n);
    for (int i = 0; i < n; ++i) {
        Frame f;
        f.color = read_png_rgb8((fs::path(root) / "color" / frame_name(i)).string());
        auto depth_mm = read_png_gray16((fs::path(root) / "depth" / frame_name(i)).string());
        f.depth = Image<float>(depth_mm.height, depth_mm.width, 0.0f);
        for (size_t k = 0; k < depth_mm.data.size(); ++k)
            f.depth.data[k] = depth_mm.data[k] / 1000.0f;
        f.semantic = Image<std::int32_t>(f.depth.height, f.depth.width, 0);
        fs::path sem = fs::path(root) / "semantic" / frame_name(i);
        if (fs::exists(sem)) {
            auto s = read_png_gray16(sem.string());
            for (size_t k = 0; k < s.data.size(); ++k)
                f.semantic.data[k] = static_cast<std::int32_t>(s.data[k]);
        }
        f.pose = all_poses[i];
        f.intrinsics = K;
        f.timestamp = i;
        if (!f.dims_consistent())
            throw std::runtime_error("inconsistent frame dimensions in " + root);
        frames.push_back(std::move(f));
    }
    return frames;
}

void write_frame_images(const std::string& root, int index, const Frame& frame,
                        bool with_semantic) {
    write_png_rgb8((fs::path(root) / "color" / frame_name(index)).string(), frame.color);
    Image<std::uint16_t> depth_mm(frame.depth.height, frame.depth.width, 0);
    for (size_t i = 0; i < frame.depth.data.size(); ++i) {
        double mm = std::lround(frame.depth.data[i] * 1000.0);
        depth_mm.data[i] = static_cast<std::uint16_t>(std::clamp(mm, 0.0, 65535.0));
    }
    write_png_gray16((fs::path(root) / "depth" / frame_name(index)).string(), depth_mm);
    if (with_semantic) {
        Image<std::uint16_t> sem(frame.semantic.height, frame.semantic.width, 0);
        for (size_t i = 0; i < frame.semantic.data.size(); ++i)
            sem.data[i] = static_cast<std::uint16_t>(
                std::clamp(frame.semantic.data[i], 0, 65535));
        write_png_gray16((fs::path(root) / "semantic" / frame_name(index)).string(), sem);
    }
}

void write_dataset(const std::string& root, const std::vector<Frame>& frames,
                   bool with_semantic) {
    if (frames.empty()) throw std::invalid_argument("write_dataset: no frames");
    fs::create_directories(fs::path(root) / "color");
    fs::create_directories(fs::path(root) / "depth");
    if (with_semantic) fs::create_directories(fs::path(root) / "semantic");

    std::ofstream poses(fs::path(root) / "poses.txt");
    poses.precision(17);
    std::ofstream intr(fs::path(root) / "intrinsics.txt");
    intr.precision(17);
    if (!poses || !intr) throw std::runtime_error("cannot write dataset metadata in " + root);
    const Intrinsics& K = frames[0].intrinsics;
    intr << K.fx << ' ' << K.fy << ' ' << K.cx << ' ' << K.cy << ' ' << K.width << ' ' << K.height
         << '\n';

    for (size_t i = 0; i < frames.size(); ++i) {
        write_frame_images(root, static_cast<int>(i), frames[i], with_semantic);
        Mat4 m = frames[i].pose.matrix();
        poses << i;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) poses << ' ' << m(r, c);
        poses << '\n';
    }
}

}  // namespace primfuse
