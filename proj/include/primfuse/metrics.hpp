#pragma once

#include "primfuse/core_types.hpp"

namespace primfuse {

/// PSNR over all RGB channels in dB, capped at 99.0 for identical images.
double psnr(const Image<Rgb>& a, const Image<Rgb>& b);

/// Structural similarity on luma: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1. Computed over the valid interior
/// (5 px border cropped).
double ssim(const Image<Rgb>& a, const Image<Rgb>& b);

}  // namespace primfuse
