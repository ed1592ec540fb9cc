#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dastm/rng.hpp"
#include "dastm/tensor.hpp"

namespace dastm::test {

inline bool same_values(const Tensor4& a, const Tensor4& b) {
    return a.shape() == b.shape() && std::ranges::equal(a.data(), b.data());
}

inline Tensor4 random_tensor(Shape s, Rng& rng, bool requires_grad = false, double scale = 1.0) {
    std::vector<double> v(s.numel());
    for (double& x : v) x = scale * rng.uniform(-1.0, 1.0);
    return Tensor4(s, std::move(v), requires_grad);
}

inline double max_abs_diff(const Tensor4& a, const Tensor4& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Random linear functional so grad checks see every output coordinate.
inline Tensor4 probe(Shape s, Rng& rng) { return random_tensor(s, rng); }

}  // namespace dastm::test
