#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "autodiff.hpp"
#include "tensor.hpp"

namespace vdc {

/// Linear encoder/decoder pair: E(x) = A x with orthonormal rows, D(z) = A^T z.
/// With d_z < d_x the codec loses the component of x orthogonal to the rows,
/// which is exactly what makes the pixel-space loss non-redundant.
struct ToyCodec {
    std::size_t d_z = 0;
    std::size_t d_x = 0;
    Tensor A;   // (d_z, d_x)
    Tensor At;  // (d_x, d_z)
};

inline ToyCodec make_codec(std::size_t d_z, std::size_t d_x, unsigned long seed) {
    if (d_z == 0 || d_x == 0 || d_z > d_x)
        throw ValueError("make_codec: need 0 < d_z <= d_x");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    ToyCodec c;
    c.d_z = d_z;
    c.d_x = d_x;
    c.A = Tensor(Shape{d_z, d_x});
    for (auto& v : c.A.data) v = g(rng);
    // Gram-Schmidt over rows
    for (std::size_t r = 0; r < d_z; ++r) {
        double* row = c.A.data.data() + r * d_x;
        for (std::size_t p = 0; p < r; ++p) {
            const double* prev = c.A.data.data() + p * d_x;
            double dot = 0.0;
            for (std::size_t i = 0; i < d_x; ++i) dot += row[i] * prev[i];
            for (std::size_t i = 0; i < d_x; ++i) row[i] -= dot * prev[i];
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < d_x; ++i) norm += row[i] * row[i];
        norm = std::sqrt(norm);
        if (norm < 1e-10) throw ValueError("make_codec: degenerate random rows");
        for (std::size_t i = 0; i < d_x; ++i) row[i] /= norm;
    }
    c.At = Tensor(Shape{d_x, d_z});
    for (std::size_t i = 0; i < d_x; ++i)
        for (std::size_t j = 0; j < d_z; ++j) c.At.data[i * d_z + j] = c.A.data[j * d_x + i];
    return c;
}

inline Tensor encode(const Tensor& x, const ToyCodec& codec) {
    if (x.shape != Shape{codec.d_x})
        throw ShapeError("encode: input " + shape_str(x.shape) + " vs pixel dim " +
                         std::to_string(codec.d_x));
    return matmul(codec.A, x);
}

inline Tensor decode(const Tensor& z, const ToyCodec& codec) {
    if (z.shape != Shape{codec.d_z})
        throw ShapeError("decode: input " + shape_str(z.shape) + " vs latent dim " +
                         std::to_string(codec.d_z));
    return matmul(codec.At, z);
}

}  // namespace vdc
