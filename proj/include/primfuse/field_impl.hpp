#pragma once

#include <fstream>
#include <cstring>

namespace primfuse {

template <typename Scalar>
FieldT<Scalar>::FieldT(const EncodingConfig& cfg, const Vec3& bbox_min, const Vec3& bbox_max,
                       std::uint64_t seed)
    : cfg_(cfg), bbox_min_(bbox_min), bbox_max_(bbox_max) {
    cfg_.validate();
    if (((bbox_max_ - bbox_min_).array() <= 0).any())
        throw std::invalid_argument("FieldT: empty bounding box");
    init_params(seed);
}

template <typename Scalar>
void FieldT<Scalar>::init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto add = [&](const std::string& name, std::vector<int> dims) {
        Tensor t;
        t.name = name;
        t.dims = std::move(dims);
        std::int64_t n = 1;
        for (int d : t.dims) n *= d;
        t.value = VecX::Zero(n);
        t.grad = VecX::Zero(n);
        t.adam_m = VecX::Zero(n);
        t.adam_v = VecX::Zero(n);
        tensors_.push_back(std::move(t));
        return static_cast<int>(tensors_.size()) - 1;
    };
    auto uniform_fill = [&](Tensor& t, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::int64_t i = 0; i < t.size(); ++i) t.value[i] = static_cast<Scalar>(dist(rng));
    };

    const int F = cfg_.features_per_level;
    for (int l = 0; l < cfg_.levels; ++l) {
        int n = cfg_.level_resolution(l);
        int idx = add("grid" + std::to_string(l), {n, n, n, F});
        uniform_fill(tensors_[idx], 1e-4);
        grid_tensor_.push_back(idx);
    }

    const int in = cfg_.feature_dim();
    const int hd = cfg_.hidden_dim;
    const int sh = cfg_.sh_dim();
    auto glorot = [&](int idx, int rows, int cols) {
        uniform_fill(tensors_[idx], std::sqrt(6.0 / (rows + cols)));
    };
    w1_ = add("w1", {hd, in});
    glorot(w1_, hd, in);
    b1_ = add("b1", {hd});
    w2_ = add("w2", {hd, hd});
    glorot(w2_, hd, hd);
    b2_ = add("b2", {hd});
    wsig_ = add("w_sigma", {1, hd});
    glorot(wsig_, 1, hd);
    bsig_ = add("b_sigma", {1});
    // Low initial density keeps unobserved space transparent.
    tensors_[bsig_].value[0] = static_cast<Scalar>(std::log(0.01));
    wsem_ = add("w_sem", {4, hd});
    glorot(wsem_, 4, hd);
    bsem_ = add("b_sem", {4});
    w3_ = add("w3", {hd, hd + sh});
    glorot(w3_, hd, hd + sh);
    b3_ = add("b3", {hd});
    w4_ = add("w4", {3, hd});
    glorot(w4_, 3, hd);
    b4_ = add("b4", {3});
}

template <typename Scalar>
typename FieldT<Scalar>::Tensor& FieldT<Scalar>::tensor(const std::string& name) {
    for (auto& t : tensors_)
        if (t.name == name) return t;
    throw std::invalid_argument("FieldT: unknown tensor " + name);
}

template <typename Scalar>
void FieldT<Scalar>::gather_features(const Eigen::Matrix<double, 3, Eigen::Dynamic>& positions,
                                     MatX& feat, std::vector<std::int64_t>* corner_index,
                                     std::vector<Scalar>* corner_weight) const {
    const int B = static_cast<int>(positions.cols());
    const int F = cfg_.features_per_level;
    feat.resize(cfg_.feature_dim(), B);
    if (corner_index) {
        corner_index->resize(static_cast<size_t>(B) * cfg_.levels * 8);
        corner_weight->resize(static_cast<size_t>(B) * cfg_.levels * 8);
    }
    const Vec3 extent = bbox_max_ - bbox_min_;
    for (int i = 0; i < B; ++i) {
        Vec3 x = positions.col(i);
        Vec3 x01 = (x - bbox_min_).cwiseQuotient(extent);
        if ((x01.array() < 0).any() || (x01.array() > 1).any()) {
            ++clamped_;
            x01 = x01.cwiseMax(0.0).cwiseMin(1.0);
        }
        for (int l = 0; l < cfg_.levels; ++l) {
            const Tensor& grid = tensors_[grid_tensor_[l]];
            const int n = cfg_.level_resolution(l);
            Vec3 pos = x01 * static_cast<double>(n - 1);
            int ix = std::min(static_cast<int>(pos.x()), n - 2);
            int iy = std::min(static_cast<int>(pos.y()), n - 2);
            int iz = std::min(static_cast<int>(pos.z()), n - 2);
            double fx = pos.x() - ix, fy = pos.y() - iy, fz = pos.z() - iz;
            for (int f = 0; f < F; ++f) feat(l * F + f, i) = Scalar(0);
            for (int c = 0; c < 8; ++c) {
                int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
                double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
                std::int64_t base =
                    ((static_cast<std::int64_t>(iz + dz) * n + (iy + dy)) * n + (ix + dx)) * F;
                for (int f = 0; f < F; ++f)
                    feat(l * F + f, i) += static_cast<Scalar>(w) * grid.value[base + f];
                if (corner_index) {
                    size_t slot = (static_cast<size_t>(i) * cfg_.levels + l) * 8 + c;
                    (*corner_index)[slot] = base;
                    (*corner_weight)[slot] = static_cast<Scalar>(w);
                }
            }
        }
    }
}

template <typename Scalar>
typename FieldT<Scalar>::VecX FieldT<Scalar>::encode_position(const Vec3& x) const {
    Eigen::Matrix<double, 3, Eigen::Dynamic> p(3, 1);
    p.col(0) = x;
    MatX feat;
    gather_features(p, feat, nullptr, nullptr);
    return feat.col(0);
}

template <typename Scalar>
void FieldT<Scalar>::forward(const Eigen::Matrix<double, 3, Eigen::Dynamic>& positions,
                             const Eigen::Matrix<double, 3, Eigen::Dynamic>& dirs,
                             Cache& cache) const {
    const int B = static_cast<int>(positions.cols());
    cache.batch = B;
    gather_features(positions, cache.feat, &cache.corner_index, &cache.corner_weight);

    auto W = [&](int idx) {
        const Tensor& t = tensors_[idx];
        return Eigen::Map<const MatX>(t.value.data(), t.dims[0],
                                      t.dims.size() > 1 ? t.dims[1] : 1);
    };
    auto bvec = [&](int idx) { return tensors_[idx].value; };

    cache.h1 = ((W(w1_) * cache.feat).colwise() + bvec(b1_)).cwiseMax(Scalar(0));
    cache.h2 = ((W(w2_) * cache.h1).colwise() + bvec(b2_)).cwiseMax(Scalar(0));

    cache.sem = (W(wsem_) * cache.h2).colwise() + bvec(bsem_);
    cache.sigma_raw = (W(wsig_) * cache.h2).transpose().col(0) + VecX::Constant(B, bvec(bsig_)[0]);
    cache.sigma.resize(B);
    const Scalar ln_cap = static_cast<Scalar>(std::log(kSigmaCap));
    for (int i = 0; i < B; ++i) {
        Scalar r = cache.sigma_raw[i];
        cache.sigma[i] = r < ln_cap ? std::exp(r) : static_cast<Scalar>(kSigmaCap);
    }

    cache.sh.resize(cfg_.sh_dim(), B);
    double shbuf[16];
    for (int i = 0; i < B; ++i) {
        sh_basis(dirs.col(i), cfg_.sh_degree, shbuf);
        for (int k = 0; k < cfg_.sh_dim(); ++k) cache.sh(k, i) = static_cast<Scalar>(shbuf[k]);
    }

    const int hd = cfg_.hidden_dim;
    const int sh = cfg_.sh_dim();
    cache.h3 = ((W(w3_).leftCols(hd) * cache.h2 + W(w3_).rightCols(sh) * cache.sh).colwise() +
                bvec(b3_))
                   .cwiseMax(Scalar(0));
    MatX craw = (W(w4_) * cache.h3).colwise() + bvec(b4_);
    cache.color = craw.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
}

template <typename Scalar>
FieldOutputD FieldT<Scalar>::query(const Vec3& x, const Vec3& d) const {
    Eigen::Matrix<double, 3, Eigen::Dynamic> p(3, 1), dd(3, 1);
    p.col(0) = x;
    dd.col(0) = d;
    Cache cache;
    forward(p, dd, cache);
    FieldOutputD out;
    out.sigma = static_cast<double>(cache.sigma[0]);
    out.color = cache.color.col(0).template cast<double>();
    out.semantic = cache.sem.col(0).template cast<double>();
    return out;
}

template <typename Scalar>
void FieldT<Scalar>::density_only(const Eigen::Matrix<double, 3, Eigen::Dynamic>& positions,
                                  std::vector<float>& out) const {
    const int B = static_cast<int>(positions.cols());
    MatX feat;
    gather_features(positions, feat, nullptr, nullptr);
    auto W = [&](int idx) {
        const Tensor& t = tensors_[idx];
        return Eigen::Map<const MatX>(t.value.data(), t.dims[0],
                                      t.dims.size() > 1 ? t.dims[1] : 1);
    };
    MatX h1 = ((W(w1_) * feat).colwise() + tensors_[b1_].value).cwiseMax(Scalar(0));
    MatX h2 = ((W(w2_) * h1).colwise() + tensors_[b2_].value).cwiseMax(Scalar(0));
    VecX raw = (W(wsig_) * h2).transpose().col(0) +
               VecX::Constant(B, tensors_[bsig_].value[0]);
    out.resize(B);
    const Scalar ln_cap = static_cast<Scalar>(std::log(kSigmaCap));
    for (int i = 0; i < B; ++i)
        out[i] = static_cast<float>(raw[i] < ln_cap ? std::exp(raw[i]) : Scalar(kSigmaCap));
}

template <typename Scalar>
typename FieldT<Scalar>::GradTable FieldT<Scalar>::make_grad_table() const {
    GradTable table;
    table.grads.reserve(tensors_.size());
    for (const auto& t : tensors_) table.grads.push_back(VecX::Zero(t.size()));
    return table;
}

template <typename Scalar>
void FieldT<Scalar>::accumulate_grads(const std::vector<const GradTable*>& tables) {
    for (size_t i = 0; i < tensors_.size(); ++i)
        for (const GradTable* t : tables) tensors_[i].grad += t->grads[i];
}

template <typename Scalar>
void FieldT<Scalar>::backward(const Cache& cache, const VecX& d_sigma, const MatX& d_color,
                              const MatX& d_sem) {
    GradTable table = make_grad_table();
    backward_into(cache, d_sigma, d_color, d_sem, table);
    accumulate_grads({&table});
}

template <typename Scalar>
void FieldT<Scalar>::backward_into(const Cache& cache, const VecX& d_sigma, const MatX& d_color,
                                   const MatX& d_sem, GradTable& table) const {
    const int B = cache.batch;
    const int hd = cfg_.hidden_dim;
    const int sh = cfg_.sh_dim();
    if (d_sigma.size() != B || d_color.cols() != B || d_sem.cols() != B)
        throw std::invalid_argument("FieldT::backward: gradient shape mismatch");
    if (table.grads.size() != tensors_.size())
        throw std::invalid_argument("FieldT::backward: bad grad table");

    auto W = [&](int idx) {
        const Tensor& t = tensors_[idx];
        return Eigen::Map<const MatX>(t.value.data(), t.dims[0],
                                      t.dims.size() > 1 ? t.dims[1] : 1);
    };
    auto G = [&](int idx) {
        const Tensor& t = tensors_[idx];
        return Eigen::Map<MatX>(table.grads[idx].data(), t.dims[0],
                                t.dims.size() > 1 ? t.dims[1] : 1);
    };
    auto relu_mask = [](const MatX& h, const MatX& dh) {
        return (h.array() > Scalar(0)).template cast<Scalar>() * dh.array();
    };

    // Color branch.
    MatX dcraw = (d_color.array() * cache.color.array() * (Scalar(1) - cache.color.array()))
                     .matrix();
    G(w4_) += dcraw * cache.h3.transpose();
    table.grads[b4_] += dcraw.rowwise().sum();
    MatX dz3 = relu_mask(cache.h3, W(w4_).transpose() * dcraw).matrix();
    G(w3_).leftCols(hd) += dz3 * cache.h2.transpose();
    G(w3_).rightCols(sh) += dz3 * cache.sh.transpose();
    table.grads[b3_] += dz3.rowwise().sum();
    MatX dh2 = W(w3_).leftCols(hd).transpose() * dz3;

    // Semantic head.
    G(wsem_) += d_sem * cache.h2.transpose();
    table.grads[bsem_] += d_sem.rowwise().sum();
    dh2 += W(wsem_).transpose() * d_sem;

    // Density head through the exp activation (zero past the cap).
    const Scalar ln_cap = static_cast<Scalar>(std::log(kSigmaCap));
    VecX dsraw(B);
    for (int i = 0; i < B; ++i)
        dsraw[i] = cache.sigma_raw[i] < ln_cap ? d_sigma[i] * cache.sigma[i] : Scalar(0);
    G(wsig_) += dsraw.transpose() * cache.h2.transpose();
    table.grads[bsig_][0] += dsraw.sum();
    dh2 += W(wsig_).transpose() * dsraw.transpose();

    // Shared density trunk.
    MatX dz2 = relu_mask(cache.h2, dh2).matrix();
    G(w2_) += dz2 * cache.h1.transpose();
    table.grads[b2_] += dz2.rowwise().sum();
    MatX dz1 = relu_mask(cache.h1, W(w2_).transpose() * dz2).matrix();
    G(w1_) += dz1 * cache.feat.transpose();
    table.grads[b1_] += dz1.rowwise().sum();
    MatX dfeat = W(w1_).transpose() * dz1;

    // Scatter feature gradients back into the grids.
    const int F = cfg_.features_per_level;
    for (int i = 0; i < B; ++i) {
        for (int l = 0; l < cfg_.levels; ++l) {
            auto& grid = table.grads[grid_tensor_[l]];
            for (int c = 0; c < 8; ++c) {
                size_t slot = (static_cast<size_t>(i) * cfg_.levels + l) * 8 + c;
                std::int64_t base = cache.corner_index[slot];
                Scalar w = cache.corner_weight[slot];
                for (int f = 0; f < F; ++f) grid[base + f] += w * dfeat(l * F + f, i);
            }
        }
    }
}

template <typename Scalar>
void FieldT<Scalar>::zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
}

template <typename Scalar>
void FieldT<Scalar>::adam_step(double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.99, eps = 1e-15;
    ++adam_t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
    for (auto& t : tensors_) {
        auto g = t.grad.array();
        t.adam_m = (beta1 * t.adam_m.array() + (1.0 - beta1) * g).matrix();
        t.adam_v = (beta2 * t.adam_v.array() + (1.0 - beta2) * g.square()).matrix();
        auto mhat = t.adam_m.array() / static_cast<Scalar>(bc1);
        auto vhat = t.adam_v.array() / static_cast<Scalar>(bc2);
        t.value -=
            (static_cast<Scalar>(lr) * mhat / (vhat.sqrt() + static_cast<Scalar>(eps))).matrix();
    }
}

template <typename Scalar>
void FieldT<Scalar>::save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write field checkpoint: " + path);
    const char magic[8] = {'P', 'A', 'R', 'F', 'F', 'P', '1', '\0'};
    os.write(magic, 8);
    auto write_tensor = [&](const std::string& name, const std::vector<int>& dims,
                            const float* data, std::int64_t n) {
        std::uint32_t len = static_cast<std::uint32_t>(name.size());
        os.write(reinterpret_cast<const char*>(&len), 4);
        os.write(name.data(), len);
        std::uint32_t nd = static_cast<std::uint32_t>(dims.size());
        os.write(reinterpret_cast<const char*>(&nd), 4);
        for (int d : dims) {
            std::uint32_t v = static_cast<std::uint32_t>(d);
            os.write(reinterpret_cast<const char*>(&v), 4);
        }
        os.write(reinterpret_cast<const char*>(data), n * 4);
    };

    std::vector<float> meta = {static_cast<float>(cfg_.levels),
                               static_cast<float>(cfg_.base_resolution),
                               static_cast<float>(cfg_.per_level_scale),
                               static_cast<float>(cfg_.features_per_level),
                               static_cast<float>(cfg_.sh_degree),
                               static_cast<float>(cfg_.hidden_dim),
                               static_cast<float>(bbox_min_.x()),
                               static_cast<float>(bbox_min_.y()),
                               static_cast<float>(bbox_min_.z()),
                               static_cast<float>(bbox_max_.x()),
                               static_cast<float>(bbox_max_.y()),
                               static_cast<float>(bbox_max_.z())};
    write_tensor("meta", {static_cast<int>(meta.size())}, meta.data(), meta.size());

    std::vector<float> buf;
    for (const auto& t : tensors_) {
        buf.resize(t.size());
        for (std::int64_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t.value[i]);
        write_tensor(t.name, t.dims, buf.data(), t.size());
    }
    if (!os) throw std::runtime_error("short write on field checkpoint: " + path);
}

template <typename Scalar>
FieldT<Scalar> FieldT<Scalar>::load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read field checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "PARFFP1\0", 8) != 0)
        throw std::runtime_error("bad field checkpoint magic in " + path);

    auto read_tensor = [&](std::string& name, std::vector<int>& dims, std::vector<float>& data) {
        std::uint32_t len = 0;
        if (!is.read(reinterpret_cast<char*>(&len), 4)) return false;
        name.resize(len);
        is.read(name.data(), len);
        std::uint32_t nd = 0;
        is.read(reinterpret_cast<char*>(&nd), 4);
        dims.resize(nd);
        std::int64_t n = 1;
        for (auto& d : dims) {
            std::uint32_t v = 0;
            is.read(reinterpret_cast<char*>(&v), 4);
            d = static_cast<int>(v);
            n *= d;
        }
        data.resize(n);
        is.read(reinterpret_cast<char*>(data.data()), n * 4);
        return static_cast<bool>(is);
    };

    std::string name;
    std::vector<int> dims;
    std::vector<float> data;
    if (!read_tensor(name, dims, data) || name != "meta" || data.size() < 12)
        throw std::runtime_error("field checkpoint missing meta tensor: " + path);
    EncodingConfig cfg;
    cfg.levels = static_cast<int>(data[0]);
    cfg.base_resolution = static_cast<int>(data[1]);
    cfg.per_level_scale = data[2];
    cfg.features_per_level = static_cast<int>(data[3]);
    cfg.sh_degree = static_cast<int>(data[4]);
    cfg.hidden_dim = static_cast<int>(data[5]);
    Vec3 bmin(data[6], data[7], data[8]), bmax(data[9], data[10], data[11]);
    FieldT field(cfg, bmin, bmax, 0);

    while (read_tensor(name, dims, data)) {
        Tensor& t = field.tensor(name);
        if (t.size() != static_cast<std::int64_t>(data.size()))
            throw std::runtime_error("field checkpoint tensor size mismatch: " + name);
        for (std::int64_t i = 0; i < t.size(); ++i) t.value[i] = static_cast<Scalar>(data[i]);
    }
    return field;
}

}  // namespace primfuse
