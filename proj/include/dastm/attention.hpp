#pragma once

#include <functional>
#include <string>

#include "dastm/rng.hpp"
#include "dastm/tensor.hpp"

// Feature-enhancement branches applied to memory-frame features. Each maps a
// (n, c, h, w) feature to an equally shaped one by multiplying it with gates
// in (0, 1).

namespace dastm {

using ParamVisitor = std::function<void(const std::string&, Tensor4&)>;

/// Squeeze-and-excitation: channel gate from the global average.
struct SEParams {
    int channels = 0;
    int reduction = 1;
    Tensor4 w1, b1;  // (c/r, c, 1, 1), (1, c/r, 1, 1)
    Tensor4 w2, b2;  // (c, c/r, 1, 1), (1, c, 1, 1)

    static SEParams zeros(int channels, int reduction);
    static SEParams random(int channels, int reduction, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Coordinate attention: separate gates along h and w from directional pools.
struct CAParams {
    int channels = 0;
    int reduction = 1;
    Tensor4 shared_w, shared_b;  // (c/r, c, 1, 1)
    Tensor4 h_w, h_b;            // (c, c/r, 1, 1)
    Tensor4 w_w, w_b;            // (c, c/r, 1, 1)

    static CAParams zeros(int channels, int reduction);
    static CAParams random(int channels, int reduction, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// CBAM: channel gate from avg+max pooled MLP, then a 7x7 spatial gate.
struct CBAMParams {
    static constexpr int kSpatialKernel = 7;

    int channels = 0;
    int reduction = 1;
    Tensor4 w1, b1, w2, b2;              // shared channel MLP
    Tensor4 spatial_w, spatial_b;        // (1, 2, 7, 7), (1, 1, 1, 1)

    static CBAMParams zeros(int channels, int reduction);
    static CBAMParams random(int channels, int reduction, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

Tensor4 se_forward(const Tensor4& x, const SEParams& p);
Tensor4 ca_forward(const Tensor4& x, const CAParams& p);
Tensor4 cbam_forward(const Tensor4& x, const CBAMParams& p);

// He-style random tensor used by every parameter initializer.
Tensor4 random_weight(Shape shape, double fan_in, Rng& rng);

}  // namespace dastm
