#include "primfuse/field.hpp"

namespace primfuse {

void sh_basis(const Vec3& d, int degree, double* out) {
    if (degree < 0 || degree > 3) throw std::invalid_argument("sh_basis: degree must be in [0,3]");
    if (std::abs(d.norm() - 1.0) > 1e-3)
        throw std::invalid_argument("sh_basis: direction must be unit length");
    const double x = d.x(), y = d.y(), z = d.z();
    out[0] = 0.28209479177387814;  // 1 / (2 sqrt(pi))
    if (degree < 1) return;
    out[1] = 0.4886025119029199 * y;
    out[2] = 0.4886025119029199 * z;
    out[3] = 0.4886025119029199 * x;
    if (degree < 2) return;
    out[4] = 1.0925484305920792 * x * y;
    out[5] = 1.0925484305920792 * y * z;
    out[6] = 0.31539156525252005 * (3.0 * z * z - 1.0);
    out[7] = 1.0925484305920792 * x * z;
    out[8] = 0.5462742152960396 * (x * x - y * y);
    if (degree < 3) return;
    out[9] = 0.5900435899266435 * y * (3.0 * x * x - y * y);
    out[10] = 2.890611442640554 * x * y * z;
    out[11] = 0.4570457994644658 * y * (5.0 * z * z - 1.0);
    out[12] = 0.3731763325901154 * z * (5.0 * z * z - 3.0);
    out[13] = 0.4570457994644658 * x * (5.0 * z * z - 1.0);
    out[14] = 1.445305721320277 * z * (x * x - y * y);
    out[15] = 0.5900435899266435 * x * (x * x - 3.0 * y * y);
}

}  // namespace primfuse
