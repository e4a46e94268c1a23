#pragma once

#include <vector>

#include "stackbundle/tensor.hpp"

namespace stackbundle {

/// Isotropic undecimated (a-trous) wavelet transform with the B3-spline
/// kernel [1,4,6,4,1]/16 and mirror boundary handling.
struct StarletCoeffs {
    std::vector<Tensor> details;  // fine -> coarse, J planes of h x w
    Tensor coarse;                // h x w
};

std::size_t starlet_max_scales(std::size_t h, std::size_t w);

StarletCoeffs starlet_decompose(const Tensor& image, std::size_t scales);

/// coarse + sum of details; exact inverse of starlet_decompose.
Tensor starlet_reconstruct(const StarletCoeffs& c);

/// Exact adjoint of the details-only forward map (the transform without the
/// coarse scale, as the sparsity prior uses it).
Tensor starlet_adjoint_details(const std::vector<Tensor>& details);

/// One B3-spline smoothing pass at scale j (taps spaced 2^j apart) and its
/// adjoint. Exposed for weight computation and tests.
Tensor starlet_smooth(const Tensor& image, std::size_t scale);
Tensor starlet_smooth_adjoint(const Tensor& image, std::size_t scale);

} // namespace stackbundle
