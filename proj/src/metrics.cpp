#include "primfuse/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace primfuse {

namespace {

void check_sizes(const Image<Rgb>& a, const Image<Rgb>& b) {
    if (a.width != b.width || a.height != b.height || a.empty())
        throw std::invalid_argument("metrics: image size mismatch");
}

Image<double> luma(const Image<Rgb>& img) {
    Image<double> out(img.height, img.width, 0.0);
    for (size_t i = 0; i < img.data.size(); ++i) {
        const Rgb& p = img.data[i];
        out.data[i] = 0.299 * p.r + 0.587 * p.g + 0.114 * p.b;
    }
    return out;
}

}  // namespace

double psnr(const Image<Rgb>& a, const Image<Rgb>& b) {
    check_sizes(a, b);
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double dr = a.data[i].r - b.data[i].r;
        double dg = a.data[i].g - b.data[i].g;
        double db = a.data[i].b - b.data[i].b;
        mse += dr * dr + dg * dg + db * db;
    }
    mse /= static_cast<double>(a.data.size() * 3);
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, -10.0 * std::log10(mse));
}

double ssim(const Image<Rgb>& a, const Image<Rgb>& b) {
    check_sizes(a, b);
    constexpr int radius = 5;  // 11x11 window
    constexpr double sigma = 1.5;
    constexpr double k1 = 0.01, k2 = 0.03, dynamic_range = 1.0;
    const double c1 = (k1 * dynamic_range) * (k1 * dynamic_range);
    const double c2 = (k2 * dynamic_range) * (k2 * dynamic_range);

    if (a.width < 2 * radius + 1 || a.height < 2 * radius + 1)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    double w[2 * radius + 1][2 * radius + 1];
    double wsum = 0.0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            w[dy + radius][dx + radius] = g;
            wsum += g;
        }
    for (auto& row : w)
        for (auto& v : row) v /= wsum;

    Image<double> la = luma(a), lb = luma(b);
    double total = 0.0;
    std::int64_t count = 0;
    for (int r = radius; r < a.height - radius; ++r) {
        for (int c = radius; c < a.width - radius; ++c) {
            double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    double wa = w[dy + radius][dx + radius];
                    double va = la.at(r + dy, c + dx);
                    double vb = lb.at(r + dy, c + dx);
                    mu_a += wa * va;
                    mu_b += wa * vb;
                    saa += wa * va * va;
                    sbb += wa * vb * vb;
                    sab += wa * va * vb;
                }
            double var_a = saa - mu_a * mu_a;
            double var_b = sbb - mu_b * mu_b;
            double cov = sab - mu_a * mu_b;
            double s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                       ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace primfuse
