#pragma once

#include <Eigen/Core>
#include <cmath>

#include "organgen/grid.hpp"

namespace organgen::nn {

template <class Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
template <class Real>
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

// Feature maps are (channels x voxels) matrices; voxel columns follow the
// grid's x-fastest order.

template <class Real>
Real stable_logistic(Real x) {
    if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
    const Real e = std::exp(x);
    return e / (Real(1) + e);
}

template <class Real>
Real silu(Real x) {
    return x * stable_logistic(x);
}

template <class Real>
Real silu_grad(Real x) {
    const Real s = stable_logistic(x);
    return s * (Real(1) + x * (Real(1) - s));
}

struct Level {
    int nx, ny, nz;
    std::size_t voxels() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }
};

// 3x3x3 neighborhood offsets in fixed order o = (dz+1)*9 + (dy+1)*3 + (dx+1).
inline void offset_of(int o, int& dx, int& dy, int& dz) {
    dz = o / 9 - 1;
    dy = (o / 3) % 3 - 1;
    dx = o % 3 - 1;
}

// Gathers the 27 shifted copies of X (C x N) into K (27C x N), zero-padded
// at the borders. Contiguous x-runs are copied as blocks.
template <class Real>
void im2col_3x3x3(const Mat<Real>& X, const Level& lv, Mat<Real>& K) {
    const int C = static_cast<int>(X.rows());
    const auto N = static_cast<Eigen::Index>(lv.voxels());
    K.resize(27 * C, N);
    K.setZero();
    for (int o = 0; o < 27; ++o) {
        int dx, dy, dz;
        offset_of(o, dx, dy, dz);
        const int x0 = dx < 0 ? -dx : 0;
        const int x1 = dx > 0 ? lv.nx - dx : lv.nx;
        const int run = x1 - x0;
        if (run <= 0) continue;
        const int y0 = dy < 0 ? -dy : 0;
        const int y1 = dy > 0 ? lv.ny - dy : lv.ny;
        const int z0 = dz < 0 ? -dz : 0;
        const int z1 = dz > 0 ? lv.nz - dz : lv.nz;
        for (int z = z0; z < z1; ++z)
            for (int y = y0; y < y1; ++y) {
                const Eigen::Index col = x0 + static_cast<Eigen::Index>(lv.nx) * (y + static_cast<Eigen::Index>(lv.ny) * z);
                const Eigen::Index src =
                    (x0 + dx) + static_cast<Eigen::Index>(lv.nx) * ((y + dy) + static_cast<Eigen::Index>(lv.ny) * (z + dz));
                K.block(o * C, col, C, run) = X.middleCols(src, run);
            }
    }
}

// Scatter-add inverse of im2col_3x3x3: dX += runs of G (27C x N).
template <class Real>
void col2im_3x3x3(const Mat<Real>& G, const Level& lv, Mat<Real>& dX) {
    const int C = static_cast<int>(dX.rows());
    for (int o = 0; o < 27; ++o) {
        int dx, dy, dz;
        offset_of(o, dx, dy, dz);
        const int x0 = dx < 0 ? -dx : 0;
        const int x1 = dx > 0 ? lv.nx - dx : lv.nx;
        const int run = x1 - x0;
        if (run <= 0) continue;
        const int y0 = dy < 0 ? -dy : 0;
        const int y1 = dy > 0 ? lv.ny - dy : lv.ny;
        const int z0 = dz < 0 ? -dz : 0;
        const int z1 = dz > 0 ? lv.nz - dz : lv.nz;
        for (int z = z0; z < z1; ++z)
            for (int y = y0; y < y1; ++y) {
                const Eigen::Index col = x0 + static_cast<Eigen::Index>(lv.nx) * (y + static_cast<Eigen::Index>(lv.ny) * z);
                const Eigen::Index dst =
                    (x0 + dx) + static_cast<Eigen::Index>(lv.nx) * ((y + dy) + static_cast<Eigen::Index>(lv.ny) * (z + dz));
                dX.middleCols(dst, run) += G.block(o * C, col, C, run);
            }
    }
}

// 2x2x2 mean pooling; dims must be even.
template <class Real>
void avgpool2(const Mat<Real>& X, const Level& lv, Mat<Real>& Y) {
    const Level cl{lv.nx / 2, lv.ny / 2, lv.nz / 2};
    Y.resize(X.rows(), static_cast<Eigen::Index>(cl.voxels()));
    for (int z = 0; z < cl.nz; ++z)
        for (int y = 0; y < cl.ny; ++y)
            for (int x = 0; x < cl.nx; ++x) {
                const Eigen::Index cc = x + static_cast<Eigen::Index>(cl.nx) * (y + static_cast<Eigen::Index>(cl.ny) * z);
                auto child = [&](int i, int j, int k) {
                    return (2 * x + i) +
                           static_cast<Eigen::Index>(lv.nx) *
                               ((2 * y + j) + static_cast<Eigen::Index>(lv.ny) * (2 * z + k));
                };
                Y.col(cc) = (X.col(child(0, 0, 0)) + X.col(child(1, 0, 0)) + X.col(child(0, 1, 0)) +
                             X.col(child(1, 1, 0)) + X.col(child(0, 0, 1)) + X.col(child(1, 0, 1)) +
                             X.col(child(0, 1, 1)) + X.col(child(1, 1, 1))) *
                            Real(0.125);
            }
}

template <class Real>
void avgpool2_backward(const Mat<Real>& dY, const Level& lv, Mat<Real>& dX) {
    const Level cl{lv.nx / 2, lv.ny / 2, lv.nz / 2};
    dX.resize(dY.rows(), static_cast<Eigen::Index>(lv.voxels()));
    for (int z = 0; z < cl.nz; ++z)
        for (int y = 0; y < cl.ny; ++y)
            for (int x = 0; x < cl.nx; ++x) {
                const Eigen::Index cc = x + static_cast<Eigen::Index>(cl.nx) * (y + static_cast<Eigen::Index>(cl.ny) * z);
                for (int k = 0; k < 2; ++k)
                    for (int j = 0; j < 2; ++j)
                        for (int i = 0; i < 2; ++i) {
                            const Eigen::Index ch =
                                (2 * x + i) + static_cast<Eigen::Index>(lv.nx) *
                                                  ((2 * y + j) + static_cast<Eigen::Index>(lv.ny) * (2 * z + k));
                            dX.col(ch) = dY.col(cc) * Real(0.125);
                        }
            }
}

// Nearest-neighbor 2x upsampling from the coarse level cl to 2*cl.
template <class Real>
void upsample2(const Mat<Real>& X, const Level& cl, Mat<Real>& Y) {
    const Level lv{cl.nx * 2, cl.ny * 2, cl.nz * 2};
    Y.resize(X.rows(), static_cast<Eigen::Index>(lv.voxels()));
    for (int z = 0; z < cl.nz; ++z)
        for (int y = 0; y < cl.ny; ++y)
            for (int x = 0; x < cl.nx; ++x) {
                const Eigen::Index cc = x + static_cast<Eigen::Index>(cl.nx) * (y + static_cast<Eigen::Index>(cl.ny) * z);
                for (int k = 0; k < 2; ++k)
                    for (int j = 0; j < 2; ++j)
                        for (int i = 0; i < 2; ++i) {
                            const Eigen::Index ch =
                                (2 * x + i) + static_cast<Eigen::Index>(lv.nx) *
                                                  ((2 * y + j) + static_cast<Eigen::Index>(lv.ny) * (2 * z + k));
                            Y.col(ch) = X.col(cc);
                        }
            }
}

template <class Real>
void upsample2_backward(const Mat<Real>& dY, const Level& cl, Mat<Real>& dX) {
    const Level lv{cl.nx * 2, cl.ny * 2, cl.nz * 2};
    dX.resize(dY.rows(), static_cast<Eigen::Index>(cl.voxels()));
    for (int z = 0; z < cl.nz; ++z)
        for (int y = 0; y < cl.ny; ++y)
            for (int x = 0; x < cl.nx; ++x) {
                const Eigen::Index cc = x + static_cast<Eigen::Index>(cl.nx) * (y + static_cast<Eigen::Index>(cl.ny) * z);
                auto acc = dX.col(cc);
                acc.setZero();
                for (int k = 0; k < 2; ++k)
                    for (int j = 0; j < 2; ++j)
                        for (int i = 0; i < 2; ++i) {
                            const Eigen::Index ch =
                                (2 * x + i) + static_cast<Eigen::Index>(lv.nx) *
                                                  ((2 * y + j) + static_cast<Eigen::Index>(lv.ny) * (2 * z + k));
                            acc += dY.col(ch);
                        }
            }
}

}  // namespace organgen::nn
