"""Primitive-aware radiance fusion for indoor RGB-D scenes."""

from ._core import (
    Reconstruction,
    backproject,
    box_room_frame,
    box_room_intrinsics,
    box_room_training_poses,
    detect_planes,
    fit_plane_pca,
    intersect_ray_plane,
    plane_distance,
    project,
    psnr,
    sh_basis,
    ssim,
)

__all__ = [
    "Reconstruction",
    "backproject",
    "box_room_frame",
    "box_room_intrinsics",
    "box_room_training_poses",
    "detect_planes",
    "fit_plane_pca",
    "intersect_ray_plane",
    "plane_distance",
    "project",
    "psnr",
    "sh_basis",
    "ssim",
]
