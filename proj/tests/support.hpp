#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "weakpair/random.hpp"
#include "weakpair/tensor.hpp"

namespace weakpair::test {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    Tensor t(rows, cols);
    for (double& v : t.data()) v = scale * standard_normal(rng);
    return t;
}

inline Tensor unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t = random_tensor(rows, cols, rng);
    for (std::size_t r = 0; r < rows; ++r) {
        const double n = norm(t.row_span(r));
        for (double& v : t.row_span(r)) v /= n;
    }
    return t;
}

inline double row_norm(const Tensor& t, std::size_t r) { return norm(t.row_span(r)); }

}  // namespace weakpair::test
