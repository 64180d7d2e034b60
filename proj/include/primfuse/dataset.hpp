#pragma once

#include "primfuse/core_types.hpp"

#include <string>

namespace primfuse {

/// Posed RGB-D dataset directory:
///   color/%06d.png      8-bit RGB
///   depth/%06d.png      16-bit grayscale, millimeters, 0 = invalid
///   poses.txt           frame index + 16 row-major world-from-camera values
///   intrinsics.txt      fx fy cx cy width height
///   semantic/%06d.png   16-bit plane indices (written for outputs only)
struct DatasetDir {
    std::string root;

    explicit DatasetDir(std::string path) : root(std::move(path)) {}

    int frame_count() const;
    Intrinsics intrinsics() const;
    std::vector<Pose> poses() const;
    /// Loads one frame; semantics are zero unless a semantic image exists.
    Frame load_frame(int index) const;
    std::vector<Frame> load_all() const;
};

/// Creates the directory layout and writes every frame. Poses are written
/// with 17 significant digits so the round-trip is exact; depth quantizes
/// to millimeters. with_semantic also writes semantic/%06d.png.
void write_dataset(const std::string& root, const std::vector<Frame>& frames,
                   bool with_semantic = false);

void write_frame_images(const std::string& root, int index, const Frame& frame,
                        bool with_semantic);

}  // namespace primfuse
