#include "dastm/kernels.hpp"

#include <atomic>
#include <vector>

namespace dastm::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::parallel};

inline void gemm_row(int i, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    double* __restrict crow = c + static_cast<std::ptrdiff_t>(i) * n;
    if (!accumulate)
        for (int j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + static_cast<std::ptrdiff_t>(i) * k;
    int p = 0;
    for (; p + 4 <= k; p += 4) {
        const double a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2], a3 = arow[p + 3];
        const double* __restrict b0 = b + static_cast<std::ptrdiff_t>(p) * n;
        const double* __restrict b1 = b0 + n;
        const double* __restrict b2 = b1 + n;
        const double* __restrict b3 = b2 + n;
        for (int j = 0; j < n; ++j) crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; p < k; ++p) {
        const double av = arow[p];
        const double* __restrict brow = b + static_cast<std::ptrdiff_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline void transpose_row(int r, int rows, int cols, const double* in, double* out) {
    const double* src = in + static_cast<std::ptrdiff_t>(r) * cols;
    for (int j = 0; j < cols; ++j) out[static_cast<std::ptrdiff_t>(j) * rows + r] = src[j];
}

// One (channel, ky, kx) row of the column matrix.
inline void im2col_row(const ConvGeometry& g, int row, const double* image, double* cols) {
    const int kx = row % g.k;
    const int ky = (row / g.k) % g.k;
    const int ch = row / (g.k * g.k);
    const double* plane = image + static_cast<std::ptrdiff_t>(ch) * g.h * g.w;
    double* dst = cols + static_cast<std::ptrdiff_t>(row) * g.out_pixels();
    for (int oy = 0; oy < g.hout; ++oy) {
        const int iy = oy * g.stride - g.pad + ky;
        for (int ox = 0; ox < g.wout; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            *dst++ = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? plane[iy * g.w + ix] : 0.0;
        }
    }
}

// All rows of one input channel land in that channel's plane only.
inline void col2im_channel(const ConvGeometry& g, int ch, const double* cols, double* image) {
    double* plane = image + static_cast<std::ptrdiff_t>(ch) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx) {
            const int row = (ch * g.k + ky) * g.k + kx;
            const double* src = cols + static_cast<std::ptrdiff_t>(row) * g.out_pixels();
            for (int oy = 0; oy < g.hout; ++oy) {
                const int iy = oy * g.stride - g.pad + ky;
                for (int ox = 0; ox < g.wout; ++ox, ++src) {
                    const int ix = ox * g.stride - g.pad + kx;
                    if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) plane[iy * g.w + ix] += *src;
                }
            }
        }
    }
}

inline void add_bias_row(int co, int pixels, const double* bias, double* out) {
    double* row = out + static_cast<std::ptrdiff_t>(co) * pixels;
    const double b = bias[co];
    for (int p = 0; p < pixels; ++p) row[p] += b;
}

inline void bias_grad_row(int co, int pixels, const double* grad_out, double* grad_bias) {
    const double* row = grad_out + static_cast<std::ptrdiff_t>(co) * pixels;
    double s = 0.0;
    for (int p = 0; p < pixels; ++p) s += row[p];
    grad_bias[co] += s;
}

template <bool Parallel>
void gemm_impl(int m, int n, int k, std::span<const double> a, std::span<const double> b, std::span<double> c,
               bool accumulate) {
    if constexpr (Parallel) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) gemm_row(i, n, k, a.data(), b.data(), c.data(), accumulate);
    } else {
        for (int i = 0; i < m; ++i) gemm_row(i, n, k, a.data(), b.data(), c.data(), accumulate);
    }
}

template <bool Parallel>
void transpose_impl(int rows, int cols, std::span<const double> in, std::span<double> out) {
    if constexpr (Parallel) {
#pragma omp parallel for schedule(static)
        for (int r = 0; r < rows; ++r) transpose_row(r, rows, cols, in.data(), out.data());
    } else {
        for (int r = 0; r < rows; ++r) transpose_row(r, rows, cols, in.data(), out.data());
    }
}

template <bool Parallel>
void im2col_impl(const ConvGeometry& g, std::span<const double> image, std::span<double> cols) {
    const int rows = g.patch();
    if constexpr (Parallel) {
#pragma omp parallel for schedule(static)
        for (int r = 0; r < rows; ++r) im2col_row(g, r, image.data(), cols.data());
    } else {
        for (int r = 0; r < rows; ++r) im2col_row(g, r, image.data(), cols.data());
    }
}

template <bool Parallel>
void col2im_impl(const ConvGeometry& g, std::span<const double> cols, std::span<double> image) {
    if constexpr (Parallel) {
#pragma omp parallel for schedule(static)
        for (int ch = 0; ch < g.cin; ++ch) col2im_channel(g, ch, cols.data(), image.data());
    } else {
        for (int ch = 0; ch < g.cin; ++ch) col2im_channel(g, ch, cols.data(), image.data());
    }
}

template <bool Parallel>
void conv_forward_impl(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                       std::span<const double> bias, std::span<double> out) {
    const int pixels = g.out_pixels();
    std::vector<double> scratch;
    std::span<const double> cols = in;
    if (!g.is_pointwise()) {
        scratch.resize(static_cast<std::size_t>(g.patch()) * pixels);
        im2col_impl<Parallel>(g, in, scratch);
        cols = scratch;
    }
    gemm_impl<Parallel>(g.cout, pixels, g.patch(), weight, cols, out, false);
    if (!bias.empty()) {
        if constexpr (Parallel) {
#pragma omp parallel for schedule(static)
            for (int co = 0; co < g.cout; ++co) add_bias_row(co, pixels, bias.data(), out.data());
        } else {
            for (int co = 0; co < g.cout; ++co) add_bias_row(co, pixels, bias.data(), out.data());
        }
    }
}

template <bool Parallel>
void conv_backward_impl(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                        std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                        std::span<double> grad_bias) {
    const int pixels = g.out_pixels();
    const int patch = g.patch();

    if (!grad_bias.empty()) {
        if constexpr (Parallel) {
#pragma omp parallel for schedule(static)
            for (int co = 0; co < g.cout; ++co) bias_grad_row(co, pixels, grad_out.data(), grad_bias.data());
        } else {
            for (int co = 0; co < g.cout; ++co) bias_grad_row(co, pixels, grad_out.data(), grad_bias.data());
        }
    }

    if (!grad_weight.empty()) {
        std::vector<double> cols;
        std::span<const double> colsv = in;
        if (!g.is_pointwise()) {
            cols.resize(static_cast<std::size_t>(patch) * pixels);
            im2col_impl<Parallel>(g, in, cols);
            colsv = cols;
        }
        std::vector<double> cols_t(static_cast<std::size_t>(patch) * pixels);
        transpose_impl<Parallel>(patch, pixels, colsv, cols_t);
        gemm_impl<Parallel>(g.cout, patch, pixels, grad_out, cols_t, grad_weight, true);
    }

    if (!grad_in.empty()) {
        std::vector<double> w_t(static_cast<std::size_t>(patch) * g.cout);
        transpose_impl<Parallel>(g.cout, patch, weight, w_t);
        if (g.is_pointwise()) {
            gemm_impl<Parallel>(patch, pixels, g.cout, w_t, grad_out, grad_in, true);
        } else {
            std::vector<double> dcols(static_cast<std::size_t>(patch) * pixels);
            gemm_impl<Parallel>(patch, pixels, g.cout, w_t, grad_out, dcols, false);
            col2im_impl<Parallel>(g, dcols, grad_in);
        }
    }
}

}  // namespace

Backend backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

namespace serial {

void gemm(int m, int n, int k, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
    gemm_impl<false>(m, n, k, a, b, c, accumulate);
}
void transpose(int rows, int cols, std::span<const double> in, std::span<double> out) {
    transpose_impl<false>(rows, cols, in, out);
}
void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols) {
    im2col_impl<false>(g, image, cols);
}
void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image) {
    col2im_impl<false>(g, cols, image);
}
void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
    conv_forward_impl<false>(g, in, weight, bias, out);
}
void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                     std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
    conv_backward_impl<false>(g, in, weight, grad_out, grad_in, grad_weight, grad_bias);
}

}  // namespace serial

namespace parallel {

void gemm(int m, int n, int k, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
    gemm_impl<true>(m, n, k, a, b, c, accumulate);
}
void transpose(int rows, int cols, std::span<const double> in, std::span<double> out) {
    transpose_impl<true>(rows, cols, in, out);
}
void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols) {
    im2col_impl<true>(g, image, cols);
}
void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image) {
    col2im_impl<true>(g, cols, image);
}
void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
    conv_forward_impl<true>(g, in, weight, bias, out);
}
void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                     std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
    conv_backward_impl<true>(g, in, weight, grad_out, grad_in, grad_weight, grad_bias);
}

}  // namespace parallel

}  // namespace dastm::kernels
