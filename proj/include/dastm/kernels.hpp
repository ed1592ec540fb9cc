#pragma once

#include <span>

// Dense inner loops behind the differentiable ops. Each routine exists in a
// serial reference form and an OpenMP form. The parallel forms split work over
// independent output rows/planes and run the exact same per-row arithmetic, so
// both produce bitwise-identical results for any thread count.

namespace dastm::kernels {

struct ConvGeometry {
    int cin = 0, h = 0, w = 0;
    int cout = 0, k = 1, stride = 1, pad = 0;
    int hout = 0, wout = 0;

    int patch() const { return cin * k * k; }
    int out_pixels() const { return hout * wout; }
    bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

namespace serial {

// C(MxN) = A(MxK) * B(KxN), or C += A*B when accumulate is set.
void gemm(int m, int n, int k, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);
void transpose(int rows, int cols, std::span<const double> in, std::span<double> out);
void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols);
// Scatter-adds columns back into an image plane set (image is accumulated into).
void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image);

// Single-sample convolution: out(cout x hout x wout) = weight * im2col(in) + bias.
void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
// Accumulates gradients; any of grad_in / grad_weight / grad_bias may be empty to skip.
void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                     std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias);

}  // namespace serial

namespace parallel {

void gemm(int m, int n, int k, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);
void transpose(int rows, int cols, std::span<const double> in, std::span<double> out);
void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> cols);
void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> image);
void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                     std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias);

}  // namespace parallel

enum class Backend { serial, parallel };

// Backend used by the ops layer. Defaults to parallel.
Backend backend();
void set_backend(Backend b);

}  // namespace dastm::kernels
